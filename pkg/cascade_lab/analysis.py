"""Growth fits and pass/fail verdicts for the moment growth laws.

| regime                    | series                 | fit        | target                |
|---------------------------|------------------------|------------|-----------------------|
| totally critical          | log m_n(q) vs log n    | log-log    | q - 1                 |
| critical, q >= 2          | log m_n(q) vs log n    | log-log    | 1                     |
| critical, 1 < q < 2       | log m_n(q) vs log n    | log-log    | none (exploratory)    |
| subcritical               | sup_n m_n(q)           | bound      | 0 (sup <= stationary) |
| supercritical             | log m_n(q) vs n        | log-linear | log(E[W^q] / b^(q-1)) |

For q > 2 the supercritical target is only a lower bound on the slope.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.stats import linregress

from cascade_lab.errors import (
    ConfigError,
    DegenerateWindowError,
    EngineMismatchError,
    PreconditionError,
)
from cascade_lab.monte_carlo import DEFAULT_BATCHES, McConfig, estimate_moment
from cascade_lab.moments import (
    cascade_moments,
    growth_series,
    second_moment_closed_form,
    stationary_moments,
)
from cascade_lab.reduction import evaluate_bounds
from cascade_lab.tree import alpha_n
from cascade_lab.utils import default_config_path, log_info, read_json_file
from cascade_lab.weights import (
    CLASSIFICATION_TOL,
    StructureFunction,
    WeightDistribution,
    distribution_from_json,
    distribution_to_json,
    is_totally_critical,
    log_moment,
    phi,
    regime_of,
    verify_strict_subcritical_interior,
)

MIN_FIT_POINTS = 4
WINDOW_FRACTION = 16
CLOSED_FORM_RTOL = 1e-10
BOUND_SLACK = 1e-9

DEFAULT_TOLERANCES = {
    ("totally-critical-growth", "exact"): 0.2,
    ("totally-critical-growth", "mc"): 0.3,
    ("critical-growth", "exact"): 0.1,
    ("critical-growth", "mc"): 0.25,
    ("subcritical-bounded", "exact"): BOUND_SLACK,
    ("subcritical-bounded", "mc"): 0.05,
    ("supercritical-growth", "exact"): 1e-3,
    ("supercritical-growth", "mc"): 0.25,
}

Series = Sequence[tuple[float, float]]


@dataclass(frozen=True)
class GrowthFit:
    slope: float
    intercept: float
    r_squared: float
    target: float | None
    abs_error: float | None
    window: tuple[float, float]
    mode: str


def fit_growth(
    series: Series,
    mode: str,
    target: float | None,
    window: tuple[float, float] | None = None,
) -> GrowthFit:
    """Least squares of log m against log n ("log-log") or n ("log-linear")."""
    if mode not in ("log-log", "log-linear"):
        raise ConfigError(f"unknown fit mode {mode!r}")
    points = [(float(n), float(y)) for n, y in series]
    if window is not None:
        lo, hi = window
        points = [(n, y) for n, y in points if lo <= n <= hi]
    points = [(n, y) for n, y in points if math.isfinite(y)]
    if len(points) < MIN_FIT_POINTS:
        raise DegenerateWindowError(
            f"fit window {window} holds {len(points)} usable points, need {MIN_FIT_POINTS}"
        )
    ns = np.array([n for n, _ in points])
    ys = np.array([y for _, y in points])
    if mode == "log-log":
        if ns.min() < 1:
            raise DegenerateWindowError("log-log fits need n >= 1")
        xs = np.log(ns)
    else:
        xs = ns
    res = linregress(xs, ys)
    slope = float(res.slope)
    return GrowthFit(
        slope=slope,
        intercept=float(res.intercept),
        r_squared=min(1.0, float(res.rvalue) ** 2),
        target=target,
        abs_error=None if target is None else abs(slope - target),
        window=(float(ns.min()), float(ns.max())),
        mode=mode,
    )


# --- verdicts ---------------------------------------------------------------------


@dataclass(frozen=True)
class McSettings:
    seed: int
    samples: int
    n_values: tuple[int, ...]
    batches: int = DEFAULT_BATCHES


@dataclass(frozen=True)
class Verdict:
    name: str
    theorem: str
    regime: str
    engine: str
    target: float | None
    slope: float | None
    tolerance: float
    passed: bool | None
    window: tuple[float, float] | None
    series: tuple[tuple[float, float], ...] = ()
    details: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "theorem": self.theorem,
            "regime": self.regime,
            "engine": self.engine,
            "target": self.target,
            "slope": self.slope,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "window": None if self.window is None else list(self.window),
            "series": [[n, y] for n, y in self.series],
            "details": self.details,
        }


def _theorem_for(tc: bool, regime: str) -> str:
    if tc:
        return "totally-critical-growth"
    return {
        "critical": "critical-growth",
        "subcritical": "subcritical-bounded",
        "supercritical": "supercritical-growth",
    }[regime]


def _closed_form_error(b: int, dist: WeightDistribution, table) -> float:
    closed = second_moment_closed_form(b, dist, table.n_max)
    worst = 0.0
    for n in range(table.n_max + 1):
        if table.domain(n) != "linear" or not math.isfinite(closed[n]):
            continue
        worst = max(worst, abs(table.value(n, 2) - closed[n]) / abs(closed[n]))
    return worst


def _mc_series(
    b: int,
    dist: WeightDistribution,
    q: float,
    mc: McSettings,
    *,
    workers: int,
    err,
) -> tuple[list[tuple[float, float]], dict[str, Any]]:
    series, shares = [], {}
    for n in mc.n_values:
        cfg = McConfig(
            seed=mc.seed, samples=mc.samples, n=n, q=q, b=b, dist=dist, batches=mc.batches
        )
        est = estimate_moment(cfg, workers=workers, err=err)
        series.append((float(n), math.log(est.mean) if est.mean > 0 else -math.inf))
        shares[str(n)] = est.max_share
    return series, {"max_share": shares, "max_share_peak": max(shares.values())}


def theorem_report(
    b: int,
    dist: WeightDistribution,
    q: float,
    n_max: int,
    engine: str,
    *,
    name: str = "",
    window: tuple[float, float] | None = None,
    tolerance: float | None = None,
    mc: McSettings | None = None,
    workers: int = 1,
    tol: float = CLASSIFICATION_TOL,
    err=None,
) -> Verdict:
    """Classify (b, W, q), build the moment series with `engine` and judge it."""
    err = sys.stderr if err is None else err
    if engine not in ("exact", "mc"):
        raise ConfigError(f"unknown engine {engine!r}")
    if engine == "exact" and not float(q).is_integer():
        raise EngineMismatchError(f"the exact engine needs an integer q, got {q}")
    if engine == "mc" and mc is None:
        raise ConfigError("the mc engine needs seed, samples and n_values")
    if q <= 1:
        raise ConfigError(f"growth verdicts need q > 1, got {q}")

    sf = StructureFunction(b, dist)
    tc = is_totally_critical(dist, b)
    regime = "critical" if tc else regime_of(phi(sf, q), tol=tol)
    theorem = _theorem_for(tc, regime)
    tolerance = DEFAULT_TOLERANCES[(theorem, engine)] if tolerance is None else tolerance
    details: dict[str, Any] = {"phi": phi(sf, q)}

    table = None
    if engine == "exact":
        k = int(q)
        table = cascade_moments(b, dist, k, n_max)
        ns, logs = growth_series(table, k)
        series = list(zip(ns.astype(float).tolist(), logs.tolist()))
        details["first_log_row"] = table.first_log_row
        if k == 2:
            details["closed_form_max_rel_error"] = _closed_form_error(b, dist, table)
    else:
        series, extra = _mc_series(b, dist, q, mc, workers=workers, err=err)
        details.update(extra)
        n_max = max(mc.n_values)

    if window is None:
        window = (max(1, n_max // WINDOW_FRACTION), n_max) if engine == "exact" else (
            min(mc.n_values),
            max(mc.n_values),
        )

    checks: list[bool] = []
    if engine == "exact" and "closed_form_max_rel_error" in details:
        checks.append(details["closed_form_max_rel_error"] <= CLOSED_FORM_RTOL)

    target: float | None
    slope: float | None
    if theorem in ("totally-critical-growth", "critical-growth"):
        target = q - 1 if tc else (1.0 if q >= 2 else None)
        fit = fit_growth(series, "log-log", target, window)
        slope = fit.slope
        details["r_squared"] = fit.r_squared
        if not tc and q >= 2:
            grid = [p for p in np.arange(1.25, q, 0.25).tolist() if 1 < p < q]
            interior = verify_strict_subcritical_interior(sf, q, grid, tol=tol) if grid else True
            details["interior_strictly_subcritical"] = interior
            checks.append(interior)
        if target is None:
            details["note"] = "growth for 1 < q < 2 at criticality is exploratory"
            log_info(f"{name or theorem}: exploratory slope {slope:.4f}", out=err)
            passed: bool | None = None
        else:
            passed = fit.abs_error <= tolerance and all(checks)
    elif theorem == "subcritical-bounded":
        fit = fit_growth(series, "log-linear", 0.0, window)
        slope = fit.slope
        if engine == "exact":
            bound = float(stationary_moments(b, dist, int(q))[int(q)])
            sup = max(math.exp(y) for _, y in series)
            target = 0.0
            details.update({"sup": sup, "stationary_bound": bound})
            passed = sup <= bound + tolerance and all(checks)
        else:
            target = 0.0
            passed = slope <= tolerance
    else:
        target = phi(sf, q) * math.log(b)
        fit = fit_growth(series, "log-linear", target, window)
        slope = fit.slope
        lower_only = q > 2
        details["lower_bound_only"] = lower_only
        if engine == "exact":
            lm = log_moment(dist, q)
            worst = -math.inf
            for n, y in series:
                lower = evaluate_bounds(alpha_n(b, int(n)), dist, q, upper=False).log_lower
                worst = max(worst, lower - y)
            details["lower_bound_max_log_gap"] = worst
            details["log_e_w_q"] = lm
            checks.append(worst <= BOUND_SLACK)
        if lower_only:
            passed = slope >= target - tolerance and all(checks)
        else:
            passed = fit.abs_error <= tolerance and all(checks)

    return Verdict(
        name=name or theorem,
        theorem=theorem,
        regime=regime,
        engine=engine,
        target=target,
        slope=slope,
        tolerance=tolerance,
        passed=passed,
        window=(float(window[0]), float(window[1])),
        series=tuple(series),
        details=details,
    )


@dataclass(frozen=True)
class SandwichRow:
    n: int
    log_lower: float
    log_upper_core: float | None
    upper_core_per_n: float | None

    def to_json(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "log_lower": self.log_lower,
            "log_upper_core": self.log_upper_core,
            "upper_core_per_n": self.upper_core_per_n,
        }


def sandwich_report(
    b: int, dist: WeightDistribution, q: float, ns: Sequence[int]
) -> list[SandwichRow]:
    """Both sides of the moment bound for Y_n; at criticality upper_core grows like n."""
    rows = []
    for n in ns:
        rep = evaluate_bounds(alpha_n(b, n), dist, q)
        per_n = None
        if rep.log_upper_core is not None and n > 0:
            per_n = math.exp(rep.log_upper_core - math.log(n))
        rows.append(SandwichRow(n, rep.log_lower, rep.log_upper_core, per_n))
    return rows


# --- acceptance suite -------------------------------------------------------------

DEFAULT_SUITE: dict[str, Any] = {
    "experiments": [
        {
            "name": "totally-critical-q2",
            "b": 2,
            "dist": "atoms=0,2;probs=1/2,1/2",
            "q": 2,
            "N": 4096,
            "engine": "exact",
            "window": [256, 4096],
            "tolerance": 0.01,
            "expect_totally_critical": True,
        },
        {
            "name": "totally-critical-q3",
            "b": 2,
            "dist": "atoms=0,2;probs=1/2,1/2",
            "q": 3,
            "N": 4096,
            "engine": "exact",
            "window": [256, 4096],
            "tolerance": 0.2,
            "expect_totally_critical": True,
        },
        {
            "name": "totally-critical-q4",
            "b": 2,
            "dist": "atoms=0,2;probs=1/2,1/2",
            "q": 4,
            "N": 4096,
            "engine": "exact",
            "window": [256, 4096],
            "tolerance": 0.2,
            "expect_totally_critical": True,
        },
        {
            "name": "totally-critical-q2.5-mc",
            "b": 2,
            "dist": "atoms=0,2;probs=1/2,1/2",
            "q": 2.5,
            "engine": "mc",
            "n_values": [8, 9, 10, 11, 12, 13, 14, 15, 16],
            "samples": 10000,
            "seed": 20240601,
            "tolerance": 0.3,
            "expect_totally_critical": True,
        },
        {
            "name": "critical-sqrt3-q2",
            "b": 2,
            "dist": {"atoms": [2.732050807568877, 0.42264973081037416], "probs": [0.25, 0.75]},
            "q": 2,
            "N": 4096,
            "engine": "exact",
            "window": [256, 4096],
            "tolerance": 0.01,
            "expect_totally_critical": False,
            "expect_regime": "critical",
        },
        {
            "name": "critical-two-point-q4",
            "b": 2,
            "dist": {"critical_two_point": {"b": 2, "q": 4, "low_atom": 0.5}},
            "q": 4,
            "N": 4096,
            "engine": "exact",
            "window": [256, 4096],
            "tolerance": 0.15,
            "expect_totally_critical": False,
            "expect_regime": "critical",
        },
        {
            "name": "subcritical-q2",
            "b": 2,
            "dist": "atoms=1/2,3/2;probs=1/2,1/2",
            "q": 2,
            "N": 200,
            "engine": "exact",
            "window": [12, 200],
            "expect_regime": "subcritical",
        },
        {
            "name": "subcritical-q1.7-mc",
            "b": 2,
            "dist": "atoms=1/2,3/2;probs=1/2,1/2",
            "q": 1.7,
            "engine": "mc",
            "n_values": [4, 6, 8, 10, 12, 14, 16],
            "samples": 2000,
            "seed": 20240602,
            "tolerance": 0.05,
            "expect_regime": "subcritical",
        },
        {
            "name": "subcritical-q2-mc",
            "b": 2,
            "dist": "atoms=1/2,3/2;probs=1/2,1/2",
            "q": 2,
            "engine": "mc",
            "n_values": [4, 6, 8, 10, 12, 14, 16],
            "samples": 2000,
            "seed": 20240604,
            "tolerance": 0.05,
            "expect_regime": "subcritical",
        },
        {
            "name": "supercritical-q2",
            "b": 2,
            "dist": "atoms=0,3;probs=2/3,1/3",
            "q": 2,
            "N": 1024,
            "engine": "exact",
            "window": [64, 1024],
            "tolerance": 0.001,
            "expect_regime": "supercritical",
        },
        {
            "name": "supercritical-q2-mc",
            "b": 2,
            "dist": "atoms=0,3;probs=2/3,1/3",
            "q": 2,
            "engine": "mc",
            "n_values": [2, 3, 4, 5, 6, 7, 8],
            "samples": 20000,
            "seed": 20240603,
            "tolerance": 0.15,
            "expect_regime": "supercritical",
        },
    ]
}


@dataclass(frozen=True)
class Experiment:
    name: str
    b: int
    dist: WeightDistribution
    q: float
    engine: str
    n_max: int
    window: tuple[float, float] | None
    tolerance: float | None
    mc: McSettings | None
    expect_totally_critical: bool | None
    expect_regime: str | None


def _experiment(raw: Any, index: int) -> Experiment:
    if not isinstance(raw, dict):
        raise ConfigError(f"experiment #{index} must be an object")
    name = str(raw.get("name", f"experiment-{index}"))
    try:
        b = int(raw["b"])
        q = float(raw["q"])
        engine = str(raw.get("engine", "exact"))
        dist = distribution_from_json(raw["dist"])
        mc = None
        if engine == "mc":
            n_values = tuple(int(n) for n in raw["n_values"])
            mc = McSettings(
                seed=int(raw["seed"]),
                samples=int(raw["samples"]),
                n_values=n_values,
                batches=int(raw.get("batches", DEFAULT_BATCHES)),
            )
            n_max = max(n_values)
        else:
            n_max = int(raw["N"])
        window = raw.get("window")
        tolerance = raw.get("tolerance")
    except KeyError as e:
        raise ConfigError(f"experiment {name!r} is missing {e}") from e
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"experiment {name!r}: {e}") from e
    if window is not None and len(window) != 2:
        raise ConfigError(f"experiment {name!r}: window must be [n_min, n_max]")
    return Experiment(
        name=name,
        b=b,
        dist=dist,
        q=q,
        engine=engine,
        n_max=n_max,
        window=None if window is None else (float(window[0]), float(window[1])),
        tolerance=None if tolerance is None else float(tolerance),
        mc=mc,
        expect_totally_critical=raw.get("expect_totally_critical"),
        expect_regime=raw.get("expect_regime"),
    )


def load_suite_config(path: Path | None = None) -> dict[str, Any]:
    """The suite at `path`, else the committed configs/acceptance.json, else the built-in one."""
    if path is None:
        path = default_config_path()
        if path is None:
            return DEFAULT_SUITE
    data = read_json_file(path)
    if not isinstance(data, dict) or not isinstance(data.get("experiments"), list):
        raise ConfigError(f"{path}: expected an object with an 'experiments' list")
    return data


def _precondition_failure(exp: Experiment, tol: float) -> str | None:
    sf = StructureFunction(exp.b, exp.dist)
    tc = is_totally_critical(exp.dist, exp.b)
    if exp.expect_totally_critical is not None and exp.expect_totally_critical != tc:
        return f"expected totally_critical={exp.expect_totally_critical}, found {tc}"
    if exp.expect_regime is not None:
        regime = "critical" if tc else regime_of(phi(sf, exp.q), tol=tol)
        if regime != exp.expect_regime:
            return f"expected regime {exp.expect_regime!r}, found {regime!r}"
    return None


def run_experiment(exp: Experiment, *, workers: int = 1, err=None) -> Verdict:
    failure = _precondition_failure(exp, CLASSIFICATION_TOL)
    if failure is not None:
        return Verdict(
            name=exp.name,
            theorem="precondition",
            regime="unknown",
            engine=exp.engine,
            target=None,
            slope=None,
            tolerance=0.0,
            passed=False,
            window=None,
            details={"precondition": failure, "dist": distribution_to_json(exp.dist)},
        )
    try:
        verdict = theorem_report(
            exp.b,
            exp.dist,
            exp.q,
            exp.n_max,
            exp.engine,
            name=exp.name,
            window=exp.window,
            tolerance=exp.tolerance,
            mc=exp.mc,
            workers=workers,
            err=err,
        )
    except PreconditionError as e:
        return Verdict(
            name=exp.name,
            theorem="precondition",
            regime="unknown",
            engine=exp.engine,
            target=None,
            slope=None,
            tolerance=0.0,
            passed=False,
            window=None,
            details={"precondition": str(e)},
        )
    verdict.details["dist"] = distribution_to_json(exp.dist)
    return verdict


def run_suite(config: dict[str, Any], *, workers: int = 1, err=None) -> dict[str, Any]:
    """Run every experiment; the bundle passes when no verdict failed."""
    err = sys.stderr if err is None else err
    raw = config.get("experiments")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("suite config needs a non-empty 'experiments' list")
    experiments = [_experiment(item, i) for i, item in enumerate(raw)]
    verdicts = []
    for exp in experiments:
        log_info(f"running {exp.name} ({exp.engine}, q={exp.q})", out=err)
        verdicts.append(run_experiment(exp, workers=workers, err=err))
    failed = [v.name for v in verdicts if v.passed is False]
    return {
        "passed": not failed,
        "failed": failed,
        "verdicts": [v.to_json() for v in verdicts],
    }
