"""fractal spectrum lab: random fractal models, covering exponents, and the
scale-threshold experiments that separate bulk from extremal behaviour."""

__version__ = "0.1.0"
