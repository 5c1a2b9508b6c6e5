"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, ModelError and its
subclasses -> 3, OSError -> 4.
"""


class FslError(Exception):
    """Base class for all package errors."""


class ConfigError(FslError):
    """Invalid configuration file, CLI argument, or spec string."""


class ModelError(FslError):
    """A model could not be built or evaluated."""


class DomainError(ModelError):
    """Argument outside the mathematically valid domain."""


class GapOverflowError(ModelError):
    """Scale-gap computation exceeded the configured level cap."""


class CapExceededError(ModelError):
    """Simulated tree grew beyond the node cap; the partial tree is discarded."""


class ExtinctionPersistentError(ModelError):
    """No surviving tree was found within the retry budget."""


class SubcriticalError(ModelError):
    """Mean offspring is <= 1 where a supercritical process is required."""


class NoAdmissiblePairError(ModelError):
    """No scale pair (k, l) is admissible for the requested estimate."""


class AllExtinctError(ModelError):
    """Every admissible subtree was extinct at the target level."""


class OutOfDepthError(ModelError):
    """Requested scale lies beyond the end of the sampled sequence."""


class AffinityBandError(ModelError):
    """Scale function exceeds the band where the covering estimate applies."""


class TemplateError(ModelError):
    """Invalid carpet template (duplicate or out-of-grid cells)."""
