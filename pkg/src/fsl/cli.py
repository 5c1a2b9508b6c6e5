"""Batch command line interface (`fsl <subcommand>`).

Exit codes: 0 ok, 2 config error, 3 model error, 4 io error.  The master
seed is taken from --seed, then the FSL_SEED environment variable, then the
config file (sweep) or 0.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Optional

from . import __version__, carpet, gwtree, harness, ldp, onevar
from .dimfunc import parse_phi
from .errors import ConfigError, ModelError

GW_COLUMNS = ("model", "seed", "trial", "k", "gap", "count", "s_hat", "box_dim", "assouad_dim")
SS_COLUMNS = ("family_hash", "seed", "L", "phi", "k", "l", "s_hat", "runs_found")
CARPET_COLUMNS = ("family_hash", "seed", "L", "phi", "theta", "value", "s_hat", "events")
LDP_COLUMNS = ("a", "I", "upper_bound", "p_hat")


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args) or 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (fallback: FSL_SEED)")
    common.add_argument("--threads", type=int, default=1, help="worker count; never changes results")
    common.add_argument("--out", default=None, help="CSV output path")
    common.add_argument("--config", default=None, help="JSON config path or packaged name")

    parser = argparse.ArgumentParser(
        prog="fsl",
        description="random fractal models: covering exponents and dimension formulas",
    )
    parser.add_argument("--version", action="version", version=f"fsl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, handler, help_text, **kwargs):
        p = sub.add_parser(name, parents=[common], help=help_text, **kwargs)
        p.set_defaults(handler=handler)
        return p

    p = cmd("gw-sim", _cmd_gw_sim, "simulate branching trees and report populations")
    _gw_model_flags(p)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--survive", action="store_true", help="retry seeds until alive at depth")

    p = cmd("gw-spectrum", _cmd_gw_spectrum, "covering exponent estimates on tree boundaries")
    _gw_model_flags(p)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--survive", action="store_true")
    p.add_argument("--phi", required=True, help='scale function, e.g. "loglog:1.0"')
    p.add_argument("--mode", choices=gwtree.ESTIMATE_MODES, default="exact_gap")
    p.add_argument("--k-range", default=None, help='start levels "lo:hi"')

    p = cmd("gw-tail", _cmd_gw_tail, "Monte Carlo check of the population tail decay")
    _gw_model_flags(p)
    p.add_argument("--eps", type=float, default=0.2)
    p.add_argument("--k", default="5,10,15", help="comma-separated levels")
    p.add_argument("--trials", type=int, default=100_000)

    p = cmd("ss-dims", _cmd_ss_dims, "closed-form dimensions of a self-similar family")
    p.add_argument("--family", required=True, help="JSON file with entries [{N, c, p}, ...]")

    p = cmd("ss-spectrum", _cmd_ss_spectrum, "covering exponent estimates on random codings")
    p.add_argument("--family", required=True)
    p.add_argument("--length", type=int, default=10_000)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--phi", required=True)
    p.add_argument("--k-range", default=None)

    p = cmd("ss-runs", _cmd_ss_runs, "detect near-extremal letter runs in codings")
    p.add_argument("--family", required=True)
    p.add_argument("--length", type=int, default=100_000)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--phi", required=True)
    p.add_argument("--eps", type=float, default=0.0)

    p = cmd("carpet-dims", _cmd_carpet_dims, "closed-form dimensions of a carpet family")
    p.add_argument("--family", required=True, help="JSON file with entries [{m, n, cells, p}, ...]")
    p.add_argument("--theta", default=None, help="comma-separated spectrum parameters")

    p = cmd("carpet-spectrum", _cmd_carpet_spectrum, "covering exponent estimates on carpet codings")
    p.add_argument("--family", required=True)
    p.add_argument("--length", type=int, default=10_000)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--phi", required=True)
    p.add_argument("--k-range", default=None)

    p = cmd("carpet-runs", _cmd_carpet_runs, "detect two-block extremal events in carpet codings")
    p.add_argument("--family", required=True)
    p.add_argument("--length", type=int, default=100_000)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--phi", required=True)

    p = cmd("ldp-rate", _cmd_ldp_rate, "rate function values and tail bounds")
    p.add_argument("--atoms", required=True, help='atoms as "v:p,v:p,..."')
    p.add_argument("--a", required=True, help="comma-separated thresholds")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=100_000)

    p = cmd("classify-phi", _cmd_classify_phi, "summability and regime report for scale functions")
    p.add_argument("--phi", required=True, help="comma-separated specs")

    cmd("sweep", _cmd_sweep, "run a packaged or file-based experiment config")

    return parser


def _gw_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--probs", required=True, help='offspring law, e.g. "0,0.5,0.5"')
    p.add_argument("--base", type=float, default=2.0, help="boundary metric base")
    p.add_argument("--depth", type=int, default=20)


def _master_seed(args, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("FSL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"FSL_SEED={env!r} is not an integer") from None
    return default


def _parse_probs(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse probability vector {text!r}") from None


def _parse_k_range(text: Optional[str], depth: int) -> tuple[int, int]:
    if text is None:
        return max(1, depth // 4), max(1, depth // 2)
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise ConfigError(f'k range must look like "lo:hi", got {text!r}') from None


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _ss_family(path: str) -> onevar.IFSFamily:
    raw = _load_json(path)
    model = {"kind": "selfsimilar", **raw}
    try:
        return harness.build_model(model)
    except (KeyError, TypeError, ValueError, ModelError) as exc:
        raise ConfigError(f"{path}: invalid family spec ({exc})") from exc


def _carpet_family(path: str) -> carpet.CarpetFamily:
    raw = _load_json(path)
    model = {"kind": "carpet", **raw}
    try:
        return harness.build_model(model)
    except (KeyError, TypeError, ValueError, ModelError) as exc:
        raise ConfigError(f"{path}: invalid family spec ({exc})") from exc


def _write(args, columns, rows) -> None:
    if args.out:
        harness.write_csv(args.out, columns, rows)
        print(f"wrote {len(rows)} rows to {args.out}")


def _cmd_gw_sim(args) -> int:
    dist = gwtree.OffspringDistribution(_parse_probs(args.probs), metric_base=args.base)
    dims = _gw_dims(dist)
    master = _master_seed(args)
    rows = []
    for trial in range(args.trials):
        seed = harness.derive_seed(master, trial, "gw")
        tree = _gw_tree(dist, args, seed)
        leaf = tree.population(tree.depth)
        rows.append(("gw", seed, trial, tree.depth, None, leaf, None, *dims))
        status = f"extinct at level {tree.extinct_at}" if tree.is_extinct else "alive"
        print(f"trial {trial}: Z_{tree.depth} = {leaf} ({status})")
    _write(args, GW_COLUMNS, rows)
    return 0


def _gw_tree(dist, args, seed):
    if getattr(args, "survive", False):
        return gwtree.condition_on_survival(dist, args.depth, seed)
    return gwtree.simulate(dist, args.depth, seed)


def _gw_dims(dist):
    try:
        dims = gwtree.theoretical_dims(dist)
        return dims.box, dims.assouad
    except ModelError:
        return None, None


def _cmd_gw_spectrum(args) -> int:
    dist = gwtree.OffspringDistribution(_parse_probs(args.probs), metric_base=args.base)
    phi = parse_phi(args.phi)
    k_range = _parse_k_range(args.k_range, args.depth)
    dims = _gw_dims(dist)
    master = _master_seed(args)
    rows = []
    values = []
    for trial in range(args.trials):
        seed = harness.derive_seed(master, trial, "gw")
        tree = _gw_tree(dist, args, seed)
        s_hat, witness = gwtree.phi_assouad_estimate(tree, phi, k_range, mode=args.mode)
        values.append(s_hat)
        rows.append(
            ("gw", seed, trial, witness.k, witness.level - witness.k, witness.count, s_hat, *dims)
        )
    print(f"phi={phi.label} mode={args.mode} trials={args.trials}")
    print(f"mean s_hat = {math.fsum(values) / len(values):.6f}, max = {max(values):.6f}")
    _write(args, GW_COLUMNS, rows)
    return 0


def _cmd_gw_tail(args) -> int:
    dist = gwtree.OffspringDistribution(_parse_probs(args.probs), metric_base=args.base)
    dims = _gw_dims(dist)
    master = _master_seed(args)
    try:
        levels = [int(part) for part in args.k.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse level list {args.k!r}") from None
    rows = []
    for k in levels:
        seed = harness.derive_seed(master, k, "gw-tail")
        check = gwtree.chernoff_tail_empirical(dist, k, args.eps, args.trials, seed)
        rows.append(("gw", seed, check.trials, k, None, check.exceedances, None, *dims))
        print(
            f"k={k}: p_hat = {check.p_hat:.6g} ({check.exceedances}/{check.trials}), "
            f"decay profile exp(-m^(eps k)) = {check.bound_shape:.6g}"
        )
    _write(args, GW_COLUMNS, rows)
    return 0


def _cmd_ss_dims(args) -> int:
    family = _ss_family(args.family)
    box = onevar.box_dim(family)
    bisect = onevar.box_dim_bisect(family)
    assouad = onevar.assouad_dim(family)
    print(f"family {family.family_hash()} with {len(family.entries)} entries")
    print(f"box dimension        = {box:.12g} (bisection cross-check {bisect:.12g})")
    print(f"two-scale extremal   = {assouad:.12g}")
    if args.out:
        harness.write_csv(
            args.out,
            ("family_hash", "box_dim", "box_dim_bisect", "assouad_dim"),
            [(family.family_hash(), box, bisect, assouad)],
        )
    return 0


def _cmd_ss_spectrum(args) -> int:
    family = _ss_family(args.family)
    phi = parse_phi(args.phi)
    k_range = _parse_k_range(args.k_range, args.length)
    master = _master_seed(args)
    rows = []
    values = []
    for trial in range(args.trials):
        seed = harness.derive_seed(master, trial, "ss")
        coding = onevar.sample_coding(family, args.length, seed)
        s_hat, witness = onevar.phi_assouad_estimate(coding, phi, k_range)
        values.append(s_hat)
        rows.append(
            (family.family_hash(), seed, args.length, phi.label, witness.k, witness.level, s_hat, None)
        )
    print(f"phi={phi.label} trials={args.trials}")
    print(f"mean s_hat = {math.fsum(values) / len(values):.6f}, max = {max(values):.6f}")
    _write(args, SS_COLUMNS, rows)
    return 0


def _cmd_ss_runs(args) -> int:
    family = _ss_family(args.family)
    phi = parse_phi(args.phi)
    master = _master_seed(args)
    rows = []
    total = 0
    for trial in range(args.trials):
        seed = harness.derive_seed(master, trial, "ss")
        coding = onevar.sample_coding(family, args.length, seed)
        found = onevar.detect_runs(coding, phi, args.eps)
        total += len(found)
        rows.append(
            (family.family_hash(), seed, args.length, phi.label, None, None, None, len(found))
        )
    print(f"phi={phi.label} eps={args.eps}: {total} runs across {args.trials} codings")
    _write(args, SS_COLUMNS, rows)
    return 0


def _cmd_carpet_dims(args) -> int:
    family = _carpet_family(args.family)
    for i, t in enumerate(family.templates):
        n_maps, b, c = carpet.derive_stats(t)
        print(f"template {i}: {t.m}x{t.n} grid, N={n_maps}, B={b}, C={c}")
    box = carpet.box_dim(family)
    qa = carpet.quasi_assouad(family)
    a = carpet.assouad_dim(family)
    print(f"box dimension        = {box:.12g}")
    print(f"bulk two-scale value = {qa:.12g}")
    print(f"two-scale extremal   = {a:.12g}")
    thetas = (
        [float(part) for part in args.theta.split(",")]
        if args.theta
        else [round(0.01 * j, 2) for j in range(1, 100)]
    )
    rows = [
        (family.family_hash(), None, None, None, theta, carpet.assouad_spectrum(family, theta), None, None)
        for theta in thetas
    ]
    _write(args, CARPET_COLUMNS, rows)
    return 0


def _cmd_carpet_spectrum(args) -> int:
    family = _carpet_family(args.family)
    phi = parse_phi(args.phi)
    k_range = _parse_k_range(args.k_range, args.length)
    master = _master_seed(args)
    rows = []
    values = []
    for trial in range(args.trials):
        seed = harness.derive_seed(master, trial, "carpet")
        coding = carpet.sample_carpet_coding(family, args.length, seed)
        s_hat, _ = carpet.phi_assouad_estimate(coding, phi, k_range)
        values.append(s_hat)
        rows.append((family.family_hash(), seed, args.length, phi.label, None, None, s_hat, None))
    print(f"phi={phi.label} trials={args.trials}")
    print(f"mean s_hat = {math.fsum(values) / len(values):.6f}, max = {max(values):.6f}")
    _write(args, CARPET_COLUMNS, rows)
    return 0


def _cmd_carpet_runs(args) -> int:
    family = _carpet_family(args.family)
    phi = parse_phi(args.phi)
    master = _master_seed(args)
    rows = []
    total = 0
    for trial in range(args.trials):
        seed = harness.derive_seed(master, trial, "carpet")
        coding = carpet.sample_carpet_coding(family, args.length, seed)
        events = carpet.detect_two_block_runs(coding, phi)
        total += len(events)
        rows.append((family.family_hash(), seed, args.length, phi.label, None, None, None, len(events)))
    print(f"phi={phi.label}: {total} two-block events across {args.trials} codings")
    _write(args, CARPET_COLUMNS, rows)
    return 0


def _parse_atoms(text: str) -> ldp.BoundedDiscreteRV:
    atoms = []
    try:
        for part in text.split(","):
            value, prob = part.split(":")
            atoms.append((float(value), float(prob)))
    except ValueError:
        raise ConfigError(f'atoms must look like "v:p,v:p,...", got {text!r}') from None
    return ldp.BoundedDiscreteRV(tuple(atoms))


def _cmd_ldp_rate(args) -> int:
    rv = _parse_atoms(args.atoms)
    master = _master_seed(args)
    try:
        thresholds = [float(part) for part in args.a.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse threshold list {args.a!r}") from None
    rows = []
    for a in thresholds:
        rate_value = ldp.rate(rv, a)
        upper = math.exp(-rate_value * args.n) if math.isfinite(rate_value) else 0.0
        p_hat = None
        if args.trials > 0:
            seed = harness.derive_seed(master, 0, f"ldp:{a!r}")
            p_hat = ldp.empirical_tail(rv, a, args.n, args.trials, seed)
        rows.append((a, rate_value, upper, p_hat))
        shown = "skipped" if p_hat is None else f"{p_hat:.6g}"
        print(f"a={a}: I(a) = {rate_value:.10g}, exp(-n I) = {upper:.6g}, p_hat = {shown}")
    _write(args, LDP_COLUMNS, rows)
    return 0


def _cmd_classify_phi(args) -> int:
    for spec in args.phi.split(","):
        print(harness.classify_phi_report(spec))
        print()
    return 0


def _cmd_sweep(args) -> int:
    if not args.config:
        raise ConfigError("sweep needs --config (path or packaged name)")
    config = harness.load_config(args.config)
    overrides = {}
    if args.seed is not None or os.environ.get("FSL_SEED"):
        overrides["master_seed"] = _master_seed(args, default=config.master_seed)
    if args.out:
        overrides["out"] = args.out
    if overrides:
        config = _replace_config(config, overrides)
    result = harness.run_sweep(config, threads=args.threads)
    print(f"config {config.name or args.config} ({result.provenance['config_hash']})")
    for spec, agg in result.aggregates.items():
        if agg.mean is not None:
            print(
                f"  {spec}: ok={agg.ok_count} mean={agg.mean:.6f} max={agg.max:.6f} "
                f"q10={agg.q10:.6f} q50={agg.q50:.6f} q90={agg.q90:.6f}"
            )
        else:
            print(f"  {spec}: ok={agg.ok_count} events_total={agg.events_total}")
    if config.out:
        print(f"rows written to {config.out}")
    return 0


def _replace_config(config, overrides: dict):
    import dataclasses

    return dataclasses.replace(config, **overrides)


if __name__ == "__main__":
    sys.exit(main())
