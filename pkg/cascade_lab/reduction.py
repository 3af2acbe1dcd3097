from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

from scipy.special import logsumexp

from cascade_lab.errors import ConfigError, PreconditionError, TotallyCriticalError
from cascade_lab.tree import (
    ROOT,
    LevelProfile,
    SparseWeights,
    Weights,
    alpha_ln,
    alpha_n,
    kappa,
)
from cascade_lab.utils import log_scalar
from cascade_lab.weights import (
    CLASSIFICATION_TOL,
    Scalar,
    StructureFunction,
    WeightDistribution,
    distribution_to_json,
    is_totally_critical,
    log_moment,
    phi,
    regime_of,
)


@dataclass(frozen=True, eq=False)
class ReductionOutput:
    """The new weight beta for (X^2, beta), with the moments of X that built it."""

    beta: Weights
    mean_x: Scalar
    var_x: Scalar
    squared_dist: WeightDistribution


def reduce(weights: Weights, dist: WeightDistribution) -> ReductionOutput:
    """Turn (X, alpha) into (X^2, beta) so that s(M)^2 = Theta(X^2, beta).

    beta(root) = kappa(root)^2 + Var(X) * sum of kappa(c)^2 over children c,
    beta(v)    = Var(X) * sum of kappa(c)^2 over children c of v.
    """
    mean, var = dist.mean, dist.variance
    k = kappa(weights, mean)

    if isinstance(weights, LevelProfile):
        b = weights.base
        kc = k.coeffs

        def at(j: int) -> Scalar:
            return kc[j] if j < len(kc) else 0

        beta = [at(0) ** 2 + var * b * at(1) ** 2]
        beta += [var * b * at(m + 1) ** 2 for m in range(1, weights.depth + 1)]
        while len(beta) > 1 and beta[-1] == 0:
            beta.pop()
        return ReductionOutput(LevelProfile(b, tuple(beta)), mean, var, dist.squared())

    tree = weights.tree
    out: dict[tuple[int, ...], Scalar] = {}
    for v in tree:
        value = var * sum((k[c] ** 2 for c in tree.children[v]), 0)
        if v == ROOT:
            value = k[ROOT] ** 2 + value
        out[v] = value
    return ReductionOutput(SparseWeights(tree, out), mean, var, dist.squared())


@dataclass(frozen=True)
class BoundsReport:
    lower: float
    upper_core: float | None
    q: float
    log_lower: float
    log_upper_core: float | None

    def to_json(self) -> dict[str, Any]:
        return {
            "q": self.q,
            "lower": self.lower,
            "log_lower": self.log_lower,
            "upper_core": self.upper_core,
            "log_upper_core": self.log_upper_core,
        }


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def _depth_sum(values: Weights, log_moment_q: float, q: float) -> float:
    """log of sum_v E[X^q]^d(v) * values(v)^q, accumulated in the log domain."""

    def depth_term(d: int) -> float:
        return 0.0 if d == 0 else d * log_moment_q

    terms: list[float] = []
    if isinstance(values, LevelProfile):
        log_b = math.log(values.base)
        for m, a in enumerate(values.coeffs):
            if a == 0:
                continue
            terms.append(m * log_b + depth_term(m) + q * log_scalar(a))
    else:
        for v in values.tree:
            a = values[v]
            if a == 0:
                continue
            terms.append(depth_term(len(v)) + q * log_scalar(a))
    if not terms:
        return -math.inf
    return float(logsumexp(terms))


def evaluate_bounds(
    weights: Weights, dist: WeightDistribution, q: float, *, upper: bool = True
) -> BoundsReport:
    """The two sides of the 1 <= q <= 2 moment estimate for Theta(X, alpha).

    lower      = sum_v E[X^q]^d(v) alpha(v)^q   (a lower bound for every q >= 1)
    upper_core = sum_v E[X^q]^d(v) kappa(v)^q   (the upper bound without its constant)

    For q > 2, or with upper=False, only the lower bound is reported.
    """
    if q < 1:
        raise ValueError(f"bounds need q >= 1, got {q}")
    lmq = log_moment(dist, q)
    log_lower = _depth_sum(weights, lmq, q)
    log_upper = None
    if upper and q <= 2:
        log_upper = _depth_sum(kappa(weights, dist.mean), lmq, q)
    return BoundsReport(
        lower=_exp(log_lower),
        upper_core=None if log_upper is None else _exp(log_upper),
        q=float(q),
        log_lower=log_lower,
        log_upper_core=log_upper,
    )


# --- iterated reduction ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PipelineStage:
    stage: int
    exponent: float
    profile: LevelProfile
    law: WeightDistribution
    ideal: LevelProfile | None
    ratio_to_ideal: tuple[float, ...]

    def to_json(self) -> dict[str, Any]:
        law = distribution_to_json(self.law)
        return {
            "stage": self.stage,
            "exponent": self.exponent,
            "profile": [float(c) for c in self.profile.coeffs],
            "log_profile": [log_scalar(c) for c in self.profile.coeffs],
            "atoms": law["atoms"],
            "probs": law["probs"],
            "ideal_profile": (
                None if self.ideal is None else [float(c) for c in self.ideal.coeffs]
            ),
            "ratio_to_ideal": list(self.ratio_to_ideal),
        }


def max_steps(q: float) -> int:
    """Number of halvings performed while the current exponent is >= 2."""
    steps, e = 0, q
    while e >= 2:
        e /= 2
        steps += 1
    return steps


def _ratios(beta: LevelProfile, ideal: LevelProfile) -> tuple[float, ...]:
    out = []
    for m, target in enumerate(ideal.coeffs):
        value = beta.at(m)
        out.append(0.0 if value == 0 else _exp(log_scalar(value) - log_scalar(target)))
    return tuple(out)


def reduction_pipeline(
    b: int,
    dist: WeightDistribution,
    n: int,
    q: float,
    *,
    steps: int | None = None,
    tol: float = CLASSIFICATION_TOL,
) -> list[PipelineStage]:
    """Iterate the q -> q/2 reduction starting from (alpha_n, W, q).

    Stage ell holds the exact profile, the law W^(2^ell) and the exponent
    q / 2^ell, plus the comparison weight b^(-2^ell k) on depths k <= n - ell
    and the per-depth ratio against it. Reducing stage ell >= 1 requires
    E[W^(2^ell)] < b^(2^ell - 1).
    """
    if q < 2:
        raise ConfigError(f"the reduction needs q >= 2, got {q}")
    limit = max_steps(q)
    if steps is None:
        steps = limit
    if not 1 <= steps <= limit:
        raise ConfigError(f"steps must lie in [1, {limit}] for q={q}, got {steps}")
    if n < steps:
        raise ConfigError(f"depth n={n} is too small for {steps} reduction steps")

    sf = StructureFunction(b, dist)
    profile = alpha_n(b, n)
    law = dist
    stages = [PipelineStage(0, float(q), profile, law, None, ())]
    for ell in range(steps):
        if ell >= 1:
            p = 2**ell
            if is_totally_critical(dist, b):
                raise TotallyCriticalError(
                    f"stage {ell} needs E[W^{p}] < b^{p - 1}, but W is totally critical"
                )
            value = phi(sf, p)
            if value >= -tol:
                raise PreconditionError(
                    f"stage {ell} needs E[W^{p}] < b^{p - 1}; phi({p}) = {value:.6g} "
                    f"({regime_of(value, tol=tol)} at {p}, "
                    f"{regime_of(phi(sf, q), tol=tol)} at q={q})"
                )
        out = reduce(profile, law)
        profile, law = out.beta, out.squared_dist
        ideal = alpha_ln(b, ell + 1, n - ell - 1)
        stages.append(
            PipelineStage(
                stage=ell + 1,
                exponent=q / 2 ** (ell + 1),
                profile=profile,
                law=law,
                ideal=ideal,
                ratio_to_ideal=_ratios(profile, ideal),
            )
        )
    return stages
