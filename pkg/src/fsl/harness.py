"""Reproducible experiment runner.

Configs are JSON; results are CSV rows plus per-phi aggregates.  Every trial
is a pure function of (config, trial index): the trial seed comes from a
64-bit mixing of the master seed, so parallel and serial executions produce
byte-identical output files.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Optional

from . import __version__
from . import carpet as carpet_mod
from . import gwtree
from . import onevar
from .dimfunc import (
    DimensionFunction,
    Summability,
    classify_summability,
    parse_phi,
    validate_monotone,
)
from .errors import ConfigError, FslError, ModelError

__all__ = [
    "SCHEMA_VERSION",
    "ExperimentConfig",
    "SweepResult",
    "SweepRow",
    "PhiAggregate",
    "classify_phi_report",
    "derive_seed",
    "emit_csv",
    "format_number",
    "load_config",
    "packaged_config_names",
    "run_sweep",
]

SCHEMA_VERSION = 1

SWEEP_COLUMNS = (
    "schema_version",
    "config_hash",
    "model",
    "phi",
    "trial",
    "seed",
    "status",
    "k",
    "l",
    "s_hat",
    "events",
)

_MASK64 = (1 << 64) - 1
_MODES = ("exact_gap", "at_least_gap", "runs")


def _splitmix64(z: int) -> int:
    """Finaliser of the splitmix64 generator; a bijection on 64-bit words."""
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, trial_index: int, stream_tag: str) -> int:
    """Avalanche-quality 64-bit seed for (master, trial, stream).

    The tag is hashed to 64 bits, mixed with the master through the
    splitmix64 finaliser, and the trial index is added before a second
    finaliser pass.  Both passes are bijections, so for a fixed master and
    tag distinct trial indices always produce distinct seeds, and the value
    is identical on every platform (pure integer arithmetic).
    """
    tag = int.from_bytes(
        hashlib.blake2b(stream_tag.encode(), digest_size=8).digest(), "big"
    )
    stream = _splitmix64((master & _MASK64) ^ tag)
    return _splitmix64((stream + (trial_index & _MASK64)) & _MASK64)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated sweep description.

    model: {"kind": "gw"|"percolation"|"selfsimilar"|"carpet", ...}
    phi_specs: scale function specs, e.g. ["loglog:0.25", "const:0.05"]
    depth_or_length: tree depth (gw/percolation) or coding length
    mode: "exact_gap" | "at_least_gap" | "runs"
    """

    model: dict
    phi_specs: tuple[str, ...]
    depth_or_length: int
    trials: int
    master_seed: int
    mode: str
    k_range: Optional[tuple[int, int]] = None
    eps: float = 0.0
    survive: bool = False
    max_retries: int = 64
    name: str = ""
    out: Optional[str] = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        data = dict(raw)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        try:
            model = dict(data.pop("model"))
            phi_specs = tuple(data.pop("phi"))
            trials = int(data.pop("trials"))
            master_seed = int(data.pop("master_seed"))
        except KeyError as missing:
            raise ConfigError(f"config missing required field {missing}") from None
        if "depth" in data and "length" in data:
            raise ConfigError("config must set exactly one of depth/length")
        if "depth" in data:
            depth_or_length = int(data.pop("depth"))
        elif "length" in data:
            depth_or_length = int(data.pop("length"))
        else:
            raise ConfigError("config must set depth (trees) or length (codings)")
        mode = data.pop("mode", "exact_gap")
        k_range = data.pop("k_range", None)
        if k_range is not None:
            k_range = (int(k_range[0]), int(k_range[1]))
        config = cls(
            model=model,
            phi_specs=phi_specs,
            depth_or_length=depth_or_length,
            trials=trials,
            master_seed=master_seed,
            mode=mode,
            k_range=k_range,
            eps=float(data.pop("eps", 0.0)),
            survive=bool(data.pop("survive", False)),
            max_retries=int(data.pop("max_retries", 64)),
            name=str(data.pop("name", "")),
            out=data.pop("out", None),
        )
        if data:
            raise ConfigError(f"unknown config fields: {sorted(data)}")
        config.validate()
        return config

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if not self.phi_specs:
            raise ConfigError("phi list must be non-empty")
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.depth_or_length < 1:
            raise ConfigError(f"depth/length must be >= 1, got {self.depth_or_length}")
        for spec in self.phi_specs:
            parse_phi(spec)
        kind = self.model.get("kind")
        try:
            build_model(self.model)
        except (ModelError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model spec ({kind}): {exc}") from exc
        if self.mode == "runs" and kind in ("gw", "percolation"):
            raise ConfigError("runs mode applies to coding models only")
        if self.mode != "runs" and self.k_range is None:
            raise ConfigError("spectrum modes need a k_range")

    def semantic_dict(self) -> dict:
        """Fields that define the experiment (output path excluded)."""
        return {
            "schema_version": SCHEMA_VERSION,
            "model": self.model,
            "phi": list(self.phi_specs),
            "depth_or_length": self.depth_or_length,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "mode": self.mode,
            "k_range": list(self.k_range) if self.k_range else None,
            "eps": self.eps,
            "survive": self.survive,
            "max_retries": self.max_retries,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.semantic_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def packaged_config_names() -> list[str]:
    files = resources.files("fsl").joinpath("configs")
    return sorted(p.name[: -len(".json")] for p in files.iterdir() if p.name.endswith(".json"))


def load_config(path_or_name: str) -> ExperimentConfig:
    """Load a config from a path, or by packaged name (e.g. "gw-transition")."""
    if os.path.exists(path_or_name):
        with open(path_or_name, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    else:
        candidate = resources.files("fsl").joinpath("configs", f"{path_or_name}.json")
        if not candidate.is_file():
            raise ConfigError(
                f"no such config file or packaged config: {path_or_name!r} "
                f"(packaged: {', '.join(packaged_config_names())})"
            )
        raw = json.loads(candidate.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return ExperimentConfig.from_dict(raw)


def build_model(model: dict):
    """Instantiate the model named by a config's model block."""
    kind = model.get("kind")
    if kind == "gw":
        return gwtree.OffspringDistribution(
            probs=tuple(model["probs"]),
            metric_base=float(model.get("metric_base", 2.0)),
        )
    if kind == "percolation":
        return gwtree.percolation_offspring(
            n=int(model["n"]), d=int(model["d"]), p=float(model["p"])
        )
    if kind == "selfsimilar":
        entries = tuple(
            onevar.HomogeneousIFS(branch_count=int(e["N"]), ratio=float(e["c"]))
            for e in model["entries"]
        )
        weights = tuple(float(e["p"]) for e in model["entries"])
        return onevar.IFSFamily(
            entries=entries,
            weights=weights,
            allow_degenerate=bool(model.get("allow_degenerate", False)),
        )
    if kind == "carpet":
        templates = tuple(
            carpet_mod.CarpetTemplate(
                m=int(e["m"]),
                n=int(e["n"]),
                cells=tuple((int(a), int(b)) for a, b in e["cells"]),
            )
            for e in model["entries"]
        )
        weights = tuple(float(e["p"]) for e in model["entries"])
        return carpet_mod.CarpetFamily(templates=templates, weights=weights)
    raise ConfigError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class SweepRow:
    model: str
    phi: str
    trial: int
    seed: int
    status: str
    k: Optional[int] = None
    l: Optional[int] = None
    s_hat: Optional[float] = None
    events: Optional[int] = None


@dataclass(frozen=True)
class PhiAggregate:
    ok_count: int
    mean: Optional[float]
    max: Optional[float]
    q10: Optional[float]
    q50: Optional[float]
    q90: Optional[float]
    events_total: int


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    aggregates: dict[str, PhiAggregate]
    provenance: dict[str, Any]


def _trial_rows(payload: tuple[dict, int]) -> list[SweepRow]:
    """All rows for one trial; pure in (config dict, trial index)."""
    raw, trial = payload
    config = ExperimentConfig.from_dict(raw)
    kind = config.model["kind"]
    seed = derive_seed(config.master_seed, trial, kind)
    model = build_model(config.model)
    model_label = config.name or kind
    rows: list[SweepRow] = []

    sample = None
    sample_error: Optional[str] = None
    try:
        if kind in ("gw", "percolation"):
            if config.survive:
                sample = gwtree.condition_on_survival(
                    model, config.depth_or_length, seed, config.max_retries
                )
            else:
                sample = gwtree.simulate(model, config.depth_or_length, seed)
        elif kind == "selfsimilar":
            sample = onevar.sample_coding(model, config.depth_or_length, seed)
        else:
            sample = carpet_mod.sample_carpet_coding(model, config.depth_or_length, seed)
    except ModelError as exc:
        sample_error = _status_of(exc)

    for spec in config.phi_specs:
        if sample_error is not None:
            rows.append(
                SweepRow(model=model_label, phi=spec, trial=trial, seed=seed, status=sample_error)
            )
            continue
        phi = parse_phi(spec)
        try:
            rows.append(
                _evaluate_phi(config, kind, model_label, sample, phi, spec, trial, seed)
            )
        except ModelError as exc:
            rows.append(
                SweepRow(
                    model=model_label, phi=spec, trial=trial, seed=seed, status=_status_of(exc)
                )
            )
    return rows


def _evaluate_phi(config, kind, model_label, sample, phi, spec, trial, seed) -> SweepRow:
    if config.mode == "runs":
        if kind == "selfsimilar":
            found = onevar.detect_runs(sample, phi, config.eps)
        else:
            found = carpet_mod.detect_two_block_runs(sample, phi)
        return SweepRow(
            model=model_label,
            phi=spec,
            trial=trial,
            seed=seed,
            status="ok",
            events=len(found),
        )
    if kind in ("gw", "percolation"):
        s_hat, witness = gwtree.phi_assouad_estimate(
            sample, phi, config.k_range, mode=config.mode
        )
        return SweepRow(
            model=model_label,
            phi=spec,
            trial=trial,
            seed=seed,
            status="ok",
            k=witness.k,
            l=witness.level,
            s_hat=s_hat,
        )
    if kind == "selfsimilar":
        s_hat, witness = onevar.phi_assouad_estimate(sample, phi, config.k_range)
        return SweepRow(
            model=model_label,
            phi=spec,
            trial=trial,
            seed=seed,
            status="ok",
            k=witness.k,
            l=witness.level,
            s_hat=s_hat,
        )
    s_hat, witness = carpet_mod.phi_assouad_estimate(sample, phi, config.k_range)
    return SweepRow(
        model=model_label,
        phi=spec,
        trial=trial,
        seed=seed,
        status="ok",
        k=witness.k,
        l=witness.base_level,
        s_hat=s_hat,
    )


def _status_of(exc: ModelError) -> str:
    names = {
        "ExtinctionPersistentError": "extinct",
        "CapExceededError": "cap_exceeded",
        "NoAdmissiblePairError": "no_admissible_pair",
        "AllExtinctError": "all_extinct",
        "AffinityBandError": "phi_exceeds_affinity_band",
        "OutOfDepthError": "out_of_depth",
    }
    return names.get(type(exc).__name__, "model_error")


def run_sweep(config: ExperimentConfig, threads: int = 1) -> SweepResult:
    """Execute all (phi, trial) cells; identical output for any thread count.

    Rows are computed per trial (one model sample shared by every phi), then
    sorted canonically by (phi, trial).  When config.out is set the row CSV
    is written there.
    """
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    raw = {**config.semantic_dict(), "name": config.name}
    raw["depth" if config.model["kind"] in ("gw", "percolation") else "length"] = raw.pop(
        "depth_or_length"
    )
    payloads = [(raw, trial) for trial in range(config.trials)]
    if threads == 1 or config.trials == 1:
        chunks = [_trial_rows(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_trial_rows, payloads, chunksize=max(1, len(payloads) // (4 * threads))))
    rows = [row for chunk in chunks for row in chunk]
    order = {spec: i for i, spec in enumerate(config.phi_specs)}
    rows.sort(key=lambda r: (order[r.phi], r.trial))
    aggregates = {
        spec: _aggregate([r for r in rows if r.phi == spec]) for spec in config.phi_specs
    }
    result = SweepResult(
        rows=tuple(rows),
        aggregates=aggregates,
        provenance={
            "config_hash": config.config_hash(),
            "master_seed": config.master_seed,
            "build": __version__,
        },
    )
    if config.out:
        emit_csv(result, config.out)
    return result


def _aggregate(rows: list[SweepRow]) -> PhiAggregate:
    values = sorted(r.s_hat for r in rows if r.status == "ok" and r.s_hat is not None)
    events_total = sum(r.events or 0 for r in rows if r.status == "ok")
    ok_count = sum(1 for r in rows if r.status == "ok")
    if not values:
        return PhiAggregate(ok_count, None, None, None, None, None, events_total)

    def quantile(q: float) -> float:
        idx = min(len(values) - 1, max(0, math.ceil(q * len(values)) - 1))
        return values[idx]

    return PhiAggregate(
        ok_count=ok_count,
        mean=math.fsum(values) / len(values),
        max=values[-1],
        q10=quantile(0.10),
        q50=quantile(0.50),
        q90=quantile(0.90),
        events_total=events_total,
    )


def format_number(x) -> str:
    """Canonical CSV cell: 12 significant digits, empty for missing."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    return f"{x:.12g}"


def write_csv(path: str, header: tuple[str, ...], rows: list[tuple]) -> None:
    """RFC-4180-style CSV with LF line endings and a stable column order."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_number(cell) if not isinstance(cell, str) else cell for cell in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_csv(result: SweepResult, path: str) -> None:
    """Write the sweep rows; re-emitting the same result is byte-identical."""
    config_hash = result.provenance["config_hash"]
    rows = [
        (
            str(SCHEMA_VERSION),
            config_hash,
            r.model,
            r.phi,
            r.trial,
            r.seed,
            r.status,
            r.k,
            r.l,
            r.s_hat,
            r.events,
        )
        for r in result.rows
    ]
    write_csv(path, SWEEP_COLUMNS, rows)


def classify_phi_report(spec: str) -> str:
    """Human-readable regime report for one scale function spec."""
    phi = parse_phi(spec)
    classification = classify_summability(phi)
    violation = validate_monotone(phi)
    lines = [f"phi = {phi.label}"]
    if violation is None:
        lines.append("monotonicity: ok (phi and phi*|log x| monotone on the check grid)")
    else:
        lines.append(
            f"monotonicity: VIOLATION of {violation.quantity} between "
            f"x={violation.x_left:.6g} and x={violation.x_right:.6g}"
        )
    verdict = classification.verdict
    tagged = f"{verdict.value}{' (heuristic)' if classification.heuristic else ''}"
    lines.append(f"summability of exp(-phi(e^-k) k): {tagged}")
    if verdict is Summability.CONVERGENT:
        lines.append("predicted regime: quasi-Assouad (covering exponents stay at the bulk value)")
    else:
        lines.append(
            "predicted regime: Assouad, up to a model-dependent constant factor on phi"
        )
    if phi.label == "zero":
        lines.append("note: pair the zero function with the at_least_gap estimator mode")
    return "\n".join(lines)
