from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from cascade_lab.analysis import load_suite_config, run_suite, sandwich_report
from cascade_lab.errors import CascadeError, ConfigError
from cascade_lab.monte_carlo import CSV_HEADER, DEFAULT_BATCHES, DEFAULT_NODE_CAP, McConfig
from cascade_lab.monte_carlo import csv_row, estimate_moment
from cascade_lab.moments import cascade_moments, theta_moments
from cascade_lab.oracle import DEFAULT_OUTCOME_CAP, EnumeratedSpace, check_identities
from cascade_lab.oracle import random_instance
from cascade_lab.reduction import evaluate_bounds, reduce, reduction_pipeline
from cascade_lab.tree import LevelProfile, Weights, alpha_n, read_weights, write_weights
from cascade_lab.utils import (
    dump_json,
    log_error,
    log_info,
    log_warn,
    parse_scalar,
    read_json_file,
)
from cascade_lab.weights import (
    DEFAULT_Q_MAX,
    TOTALLY_CRITICAL,
    StructureFunction,
    WeightDistribution,
    distribution_from_json,
    distribution_to_json,
    find_critical_exponent,
    kahane_peyriere_diagnostic,
    parse_distribution,
    phi,
)

DEFAULT_PHI_GRID = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved invocation; `params` is what gets echoed into outputs."""

    command: str
    threads: int
    params: dict[str, Any]
    out_path: Path | None
    dist: WeightDistribution | None = None
    weights: Weights | None = None
    extras: dict[str, Any] = field(default_factory=dict)


def _int_list(text: str) -> list[int]:
    """`8,9,10` or the inclusive range `8:16`."""
    text = text.strip()
    if ":" in text:
        lo, _, hi = text.partition(":")
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _add_dist(p: argparse.ArgumentParser, *, relaxed: bool = False) -> None:
    p.add_argument(
        "--dist",
        required=True,
        help="Law literal like 'atoms=0,2;probs=1/2,1/2', or @file.json",
    )
    if relaxed:
        p.add_argument(
            "--relaxed",
            action="store_true",
            help="Accept a law whose mean is not 1 (a general X rather than W)",
        )


def _add_weights(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--weights", type=Path, help="File of 'path<TAB>weight' lines")
    g.add_argument("--profile", help="Per-depth coefficients a0,a1,... on the b-adic tree")


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="cascade-lab",
        formatter_class=argparse.RawTextHelpFormatter,
        description=(
            "Moments of Mandelbrot cascades and weighted tree sums.\n\n"
            "Exit codes: 0 ok, 1 failed verdict or precondition, 2 config error,\n"
            "3 resource limit."
        ),
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="Worker threads (never changes results)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("critical-q", help="Structure function and its critical exponent")
    _add_dist(p)
    p.add_argument("-b", "--base", type=int, default=2)
    p.add_argument("--q-max", type=float, default=DEFAULT_Q_MAX)
    p.add_argument("--grid", help="Comma separated q values for the phi table")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("exact-moments", help="E[Y_n^k] table as CSV")
    _add_dist(p)
    p.add_argument("-b", "--base", type=int, default=2)
    p.add_argument("--q-max", type=int, required=True)
    p.add_argument("-N", "--depth", type=int, required=True)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("theta-moments", help="E[Theta(X, alpha)^k] for a weight")
    _add_dist(p, relaxed=True)
    p.add_argument("-b", "--base", type=int, default=2)
    p.add_argument("-n", "--depth", type=int, help="Use alpha_n (default when no weights)")
    _add_weights(p)
    p.add_argument("--q-max", type=int, required=True)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("simulate", help="Monte Carlo E[Y_n^q] as CSV rows")
    _add_dist(p)
    p.add_argument("-b", "--base", type=int, default=2)
    p.add_argument("-n", "--depths", required=True, help="'8,9,10' or '8:16'")
    p.add_argument("-q", type=float, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--batches", type=int, default=DEFAULT_BATCHES)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--node-cap", type=int, default=DEFAULT_NODE_CAP)
    p.add_argument("--profile", help="Simulate Theta for this profile instead of Y_n")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("reduce", help="One reduction of a weight, or the q -> q/2 pipeline")
    _add_dist(p, relaxed=True)
    p.add_argument("-b", "--base", type=int, default=2)
    p.add_argument("-n", "--depth", type=int, help="Pipeline depth (starts from alpha_n)")
    p.add_argument("-q", type=float, help="Pipeline exponent")
    p.add_argument("--steps", type=int)
    _add_weights(p)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("bounds", help="Lower bound and upper core sum of E[Theta^q]")
    _add_dist(p, relaxed=True)
    p.add_argument("-b", "--base", type=int, default=2)
    p.add_argument("-q", type=float, required=True)
    p.add_argument("-n", "--depth", type=int, help="Use alpha_n (default when no weights)")
    _add_weights(p)
    p.add_argument("--sandwich", help="Depths for a per-n report on alpha_n, e.g. '64,128'")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("verify-theorems", help="Run the acceptance suite")
    p.add_argument("--config", type=Path, help="Suite JSON (default: configs/acceptance.json)")
    p.add_argument("--tolerance", type=float, help="Override every experiment's tolerance")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("oracle-check", help="Exact identity suite on random small instances")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--float", dest="float_mode", action="store_true")
    p.add_argument("--cap", type=int, default=DEFAULT_OUTCOME_CAP)
    p.add_argument("--out", type=Path)

    return parser.parse_args(list(argv))


def _load_dist(text: str, *, unit_mean: bool) -> WeightDistribution:
    if text.startswith("@"):
        return distribution_from_json(read_json_file(Path(text[1:])), unit_mean=unit_mean)
    return parse_distribution(text, unit_mean=unit_mean)


def _load_weights(args: argparse.Namespace) -> Weights | None:
    if getattr(args, "weights", None) is not None:
        try:
            text = args.weights.read_text(encoding="utf-8")
        except FileNotFoundError as e:
            raise ConfigError(f"Weights file not found: {args.weights}") from e
        return read_weights(text)
    if getattr(args, "profile", None):
        try:
            coeffs = tuple(parse_scalar(t) for t in args.profile.split(","))
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"invalid profile {args.profile!r}: {e}") from e
        return LevelProfile(args.base, coeffs)
    if getattr(args, "depth", None) is not None:
        return alpha_n(args.base, args.depth)
    return None


def _weights_json(weights: Weights) -> Any:
    if isinstance(weights, LevelProfile):
        return {"b": weights.base, "profile": [str(c) for c in weights.coeffs]}
    return {"weights": write_weights(weights)}


def compute_config(args: argparse.Namespace) -> RunConfig:
    if args.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {args.threads}")
    command = args.command
    params: dict[str, Any] = {"command": command}
    dist = None
    if hasattr(args, "dist"):
        dist = _load_dist(args.dist, unit_mean=not getattr(args, "relaxed", False))
        params["dist"] = distribution_to_json(dist)
    if hasattr(args, "base"):
        params["b"] = args.base
    weights = _load_weights(args) if command in ("theta-moments", "bounds") else None
    extras: dict[str, Any] = {}

    if command == "critical-q":
        grid = _float_list(args.grid) if args.grid else list(DEFAULT_PHI_GRID)
        extras["grid"] = grid
        params.update({"q_max": args.q_max, "grid": grid})
    elif command == "exact-moments":
        params.update({"q_max": args.q_max, "N": args.depth})
    elif command == "theta-moments":
        if weights is None:
            raise ConfigError("theta-moments needs --weights, --profile or -n")
        params.update({"q_max": args.q_max, "weights": _weights_json(weights)})
    elif command == "simulate":
        depths = _int_list(args.depths)
        if not depths:
            raise ConfigError("simulate needs at least one depth")
        profile = None
        if args.profile:
            profile = _load_weights(args)
        extras["configs"] = [
            McConfig(
                seed=args.seed,
                samples=args.samples,
                n=n,
                q=args.q,
                b=args.base,
                dist=dist,
                batches=args.batches,
                profile=profile,
                node_cap=args.node_cap,
            )
            for n in depths
        ]
        params.update(
            {
                "depths": depths,
                "q": args.q,
                "samples": args.samples,
                "batches": args.batches,
                "seed": args.seed,
                "node_cap": args.node_cap,
            }
        )
        if profile is not None:
            params["profile"] = [str(c) for c in profile.coeffs]
    elif command == "reduce":
        explicit = args.weights is not None or args.profile
        if explicit:
            weights = _load_weights(args)
            params["weights"] = _weights_json(weights)
        else:
            if args.depth is None or args.q is None:
                raise ConfigError("reduce needs --weights/--profile, or -n and -q for the pipeline")
            if getattr(args, "relaxed", False):
                raise ConfigError("the pipeline starts from the cascade weight W (no --relaxed)")
            params.update({"n": args.depth, "q": args.q, "steps": args.steps})
    elif command == "bounds":
        if weights is None:
            raise ConfigError("bounds needs --weights, --profile or -n")
        sandwich = _int_list(args.sandwich) if args.sandwich else []
        extras["sandwich"] = sandwich
        params.update({"q": args.q, "weights": _weights_json(weights), "sandwich": sandwich})
    elif command == "verify-theorems":
        extras["suite"] = load_suite_config(args.config)
        params.update({"tolerance": args.tolerance})
    elif command == "oracle-check":
        if args.instances < 1:
            raise ConfigError(f"--instances must be >= 1, got {args.instances}")
        params.update(
            {
                "instances": args.instances,
                "seed": args.seed,
                "float": bool(args.float_mode),
                "cap": args.cap,
            }
        )

    return RunConfig(
        command=command,
        threads=args.threads,
        params=params,
        out_path=getattr(args, "out", None),
        dist=dist,
        weights=weights,
        extras=extras,
    )


# --- output helpers -------------------------------------------------------------------


def _emit_json(cfg: RunConfig, payload: dict[str, Any], *, out, err) -> None:
    text = dump_json({"config": cfg.params, **payload})
    if cfg.out_path is None:
        out.write(text)
        return
    cfg.out_path.write_text(text, encoding="utf-8")
    log_info(f"wrote {cfg.out_path}", out=err)


def _emit_csv(cfg: RunConfig, text: str, *, out, err) -> None:
    if cfg.out_path is None:
        out.write(text)
        return
    cfg.out_path.write_text(text, encoding="utf-8")
    sidecar = cfg.out_path.with_name(cfg.out_path.name + ".config.json")
    sidecar.write_text(dump_json(cfg.params), encoding="utf-8")
    log_info(f"wrote {cfg.out_path} (config in {sidecar.name})", out=err)


# --- subcommands ----------------------------------------------------------------------


def run_critical_q(cfg: RunConfig, *, out, err) -> int:
    b = cfg.params["b"]
    sf = StructureFunction(b, cfg.dist)
    root = find_critical_exponent(sf, q_max=cfg.params["q_max"])
    if root is TOTALLY_CRITICAL:
        summary = "totally critical"
    elif root is None:
        summary = f"no critical exponent <= {cfg.params['q_max']:g}"
    else:
        summary = f"q_crit = {root:.10g}"
    log_info(summary, out=err)
    grid = []
    for q in cfg.extras["grid"]:
        try:
            grid.append([q, phi(sf, q)])
        except CascadeError as e:
            grid.append([q, None])
            log_warn(f"phi({q}): {e}", err=err)
    _emit_json(
        cfg,
        {
            "result": summary,
            "q_crit": root if isinstance(root, float) else None,
            "totally_critical": root is TOTALLY_CRITICAL,
            "phi_grid": grid,
            "kahane_peyriere": kahane_peyriere_diagnostic(sf),
        },
        out=out,
        err=err,
    )
    return 0


def run_exact_moments(cfg: RunConfig, *, out, err) -> int:
    table = cascade_moments(cfg.params["b"], cfg.dist, cfg.params["q_max"], cfg.params["N"])
    if table.first_log_row is not None:
        log_warn(f"rows from n={table.first_log_row} on are in the log domain", err=err)
    _emit_csv(cfg, table.to_csv(), out=out, err=err)
    return 0


def run_theta_moments(cfg: RunConfig, *, out, err) -> int:
    mv = theta_moments(cfg.weights, cfg.dist, cfg.params["q_max"])
    _emit_json(cfg, {"moments": mv.to_json()}, out=out, err=err)
    return 0


def run_simulate(cfg: RunConfig, *, out, err) -> int:
    lines = [CSV_HEADER]
    for mc in cfg.extras["configs"]:
        est = estimate_moment(mc, workers=cfg.threads, err=err)
        lines.append(csv_row(mc, est))
    _emit_csv(cfg, "\n".join(lines) + "\n", out=out, err=err)
    return 0


def run_reduce(cfg: RunConfig, *, out, err) -> int:
    if cfg.weights is None:
        stages = reduction_pipeline(
            cfg.params["b"],
            cfg.dist,
            cfg.params["n"],
            cfg.params["q"],
            steps=cfg.params["steps"],
        )
        _emit_json(cfg, {"stages": [s.to_json() for s in stages]}, out=out, err=err)
        return 0
    res = reduce(cfg.weights, cfg.dist)
    _emit_json(
        cfg,
        {
            "beta": _weights_json(res.beta),
            "mean_x": res.mean_x,
            "var_x": res.var_x,
            "squared_law": distribution_to_json(res.squared_dist),
        },
        out=out,
        err=err,
    )
    return 0


def run_bounds(cfg: RunConfig, *, out, err) -> int:
    q = cfg.params["q"]
    rep = evaluate_bounds(cfg.weights, cfg.dist, q)
    payload: dict[str, Any] = {"bounds": rep.to_json()}
    if q > 2:
        log_info("q > 2: only the lower bound applies", out=err)
    if cfg.extras["sandwich"]:
        rows = sandwich_report(cfg.params["b"], cfg.dist, q, cfg.extras["sandwich"])
        payload["sandwich"] = [r.to_json() for r in rows]
    _emit_json(cfg, payload, out=out, err=err)
    return 0


def run_verify_theorems(cfg: RunConfig, *, out, err) -> int:
    suite = cfg.extras["suite"]
    override = cfg.params["tolerance"]
    if override is not None:
        suite = {
            **suite,
            "experiments": [{**e, "tolerance": override} for e in suite["experiments"]],
        }
    bundle = run_suite(suite, workers=cfg.threads, err=err)
    params = {**cfg.params, "suite": suite}
    _emit_json(RunConfig(cfg.command, cfg.threads, params, cfg.out_path), bundle, out=out, err=err)
    if not bundle["passed"]:
        log_error(f"failed verdicts: {', '.join(bundle['failed'])}", err=err)
        return 1
    log_info(f"all {len(bundle['verdicts'])} verdicts passed", out=err)
    return 0


def run_oracle_check(cfg: RunConfig, *, out, err) -> int:
    p = cfg.params
    rng = np.random.default_rng(p["seed"])
    reports = []
    for _ in range(p["instances"]):
        tree, dist, weights = random_instance(rng, rational=not p["float"])
        space = EnumeratedSpace(tree, dist, cap=p["cap"])
        reports.append(check_identities(space, weights).to_json())
    failed = [i for i, r in enumerate(reports) if not r["passed"]]
    summary = {
        "instances": len(reports),
        "failed": failed,
        "passed": not failed,
        "max_square_function_gap": max(r["square_function_gap"] for r in reports),
        "max_increment_gap": max(r["increment_gap"] for r in reports),
        "max_mean_increment": max(r["mean_increment"] for r in reports),
        "max_orthogonality": max(r["orthogonality"] for r in reports),
    }
    _emit_json(cfg, {"summary": summary, "reports": reports}, out=out, err=err)
    if failed:
        log_error(f"identity checks failed on instances {failed}", err=err)
        return 1
    return 0


RUNNERS = {
    "critical-q": run_critical_q,
    "exact-moments": run_exact_moments,
    "theta-moments": run_theta_moments,
    "simulate": run_simulate,
    "reduce": run_reduce,
    "bounds": run_bounds,
    "verify-theorems": run_verify_theorems,
    "oracle-check": run_oracle_check,
}


def main(argv: Sequence[str] | None = None, *, out=None, err=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    if out is None:
        out = sys.stdout
    if err is None:
        err = sys.stderr

    try:
        args = parse_args(argv)
        cfg = compute_config(args)
        log_info(f"config {json.dumps(cfg.params, sort_keys=True, default=str)}", out=err)
        return RUNNERS[cfg.command](cfg, out=out, err=err)
    except SystemExit:
        raise
    except CascadeError as e:
        log_error(str(e), err=err)
        return e.exit_code
    except Exception as e:
        log_error(f"{type(e).__name__}: {e}", err=err)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
