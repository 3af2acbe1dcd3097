"""The law of the cascade weight W and its structure function.

Distributions are finite and discrete. When every atom and probability is an
integer or a `Fraction` the law stays rational, so downstream tree arithmetic
(kappa, reduction, enumeration) is exact.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence, Union

from scipy.optimize import root_scalar
from scipy.special import logsumexp

from cascade_lab.errors import (
    ConfigError,
    DistributionParseError,
    DomainError,
    PreconditionError,
    TotallyCriticalError,
)
from cascade_lab.utils import parse_scalar

Scalar = Union[float, Fraction]

NORMALIZATION_TOL = 1e-12
CLASSIFICATION_TOL = 1e-9
ROOT_XTOL = 1e-10
DEFAULT_Q_MAX = 128.0


class CriticalSentinel(enum.Enum):
    TOTALLY_CRITICAL = "totally-critical"


TOTALLY_CRITICAL = CriticalSentinel.TOTALLY_CRITICAL


def _is_exact(x: Any) -> bool:
    return isinstance(x, (int, Fraction)) and not isinstance(x, bool)


def _coerce(values: Sequence[Any], *, exact: bool) -> tuple[Scalar, ...]:
    if exact:
        return tuple(Fraction(v) for v in values)
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class WeightDistribution:
    """A finite discrete law: `atoms[i]` with probability `probs[i]`.

    Atoms are merged and sorted at construction. With `unit_mean=True` (the
    default, the cascade weight W) a law whose mean is not 1 is rejected; the
    relaxed form is used for a general driving variable X.
    """

    atoms: tuple[Scalar, ...]
    probs: tuple[Scalar, ...]
    unit_mean: bool = True
    exact: bool = field(init=False)

    def __post_init__(self) -> None:
        atoms, probs = list(self.atoms), list(self.probs)
        if not atoms:
            raise ConfigError("distribution needs at least one atom")
        if len(atoms) != len(probs):
            raise ConfigError(
                f"atoms and probs differ in length ({len(atoms)} vs {len(probs)})"
            )
        exact = all(_is_exact(v) for v in atoms + probs)
        atoms_c = _coerce(atoms, exact=exact)
        probs_c = _coerce(probs, exact=exact)

        merged: dict[Scalar, Scalar] = {}
        for a, p in zip(atoms_c, probs_c):
            if a < 0:
                raise ConfigError(f"atoms must be non-negative, got {a}")
            if not 0 < p <= 1:
                raise ConfigError(f"probabilities must lie in (0, 1], got {p}")
            merged[a] = merged.get(a, 0) + p
        keys = sorted(merged)

        object.__setattr__(self, "atoms", tuple(keys))
        object.__setattr__(self, "probs", tuple(merged[k] for k in keys))
        object.__setattr__(self, "exact", exact)

        total = sum(self.probs)
        if not _close(total, 1):
            raise ConfigError(f"probabilities sum to {float(total)!r}, expected 1")
        if self.unit_mean and not _close(self.mean, 1):
            raise ConfigError(
                f"E[W] = {float(self.mean)!r}; the cascade weight must have mean 1 "
                "(rescale the atoms explicitly)"
            )

    @classmethod
    def relaxed(cls, atoms: Sequence[Any], probs: Sequence[Any]) -> WeightDistribution:
        return cls(tuple(atoms), tuple(probs), unit_mean=False)

    @property
    def mean(self) -> Scalar:
        return sum(a * p for a, p in zip(self.atoms, self.probs))

    @property
    def variance(self) -> Scalar:
        m = self.mean
        return sum(p * (a - m) ** 2 for a, p in zip(self.atoms, self.probs))

    def moment_exact(self, k: int) -> Scalar:
        """E[X^k] for integer k in the law's own arithmetic."""
        return sum(p * a**k for a, p in zip(self.atoms, self.probs))

    def power(self, p: int) -> WeightDistribution:
        """The law of X^p (relaxed: the mean is generally not 1)."""
        return WeightDistribution.relaxed([a**p for a in self.atoms], self.probs)

    def squared(self) -> WeightDistribution:
        return self.power(2)

    def as_float(self) -> WeightDistribution:
        return WeightDistribution(
            tuple(float(a) for a in self.atoms),
            tuple(float(p) for p in self.probs),
            unit_mean=self.unit_mean,
        )


def _close(x: Scalar, target: Scalar) -> bool:
    if isinstance(x, Fraction) and isinstance(target, (int, Fraction)):
        return x == target
    return abs(float(x) - float(target)) <= NORMALIZATION_TOL


def totally_critical(b: int) -> WeightDistribution:
    """W_TC: b with probability 1/b, else 0."""
    return WeightDistribution((0, b), (1 - Fraction(1, b), Fraction(1, b)))


def log_moment(dist: WeightDistribution, q: float) -> float:
    """log E[X^q], accumulated in the log domain."""
    if q < 0:
        raise ValueError(f"moment order must be >= 0, got {q}")
    if q == 0:
        return 0.0
    terms = [
        math.log(float(p)) + q * math.log(float(a))
        for a, p in zip(dist.atoms, dist.probs)
        if a > 0
    ]
    if not terms:
        return -math.inf
    return float(logsumexp(terms))


def moment(dist: WeightDistribution, q: float) -> float:
    """E[X^q] as a float; switches to log-domain accumulation on overflow."""
    if q < 0:
        raise ValueError(f"moment order must be >= 0, got {q}")
    if q == 0:
        return 1.0
    try:
        total = math.fsum(float(p) * float(a) ** q for a, p in zip(dist.atoms, dist.probs))
    except OverflowError:
        total = math.inf
    if math.isfinite(total):
        return total
    lm = log_moment(dist, q)
    return math.exp(lm) if lm < 709.0 else math.inf


@dataclass(frozen=True)
class StructureFunction:
    base: int
    dist: WeightDistribution

    def __post_init__(self) -> None:
        if self.base < 2:
            raise ConfigError(f"branching number must be >= 2, got {self.base}")

    def __call__(self, q: float) -> float:
        return phi(self, q)


def phi(sf: StructureFunction, q: float) -> float:
    """phi_W(q) = log_b E[W^q] - (q - 1)."""
    if q <= 0:
        raise ValueError(f"phi is evaluated at q > 0, got {q}")
    lm = log_moment(sf.dist, q)
    if lm == -math.inf:
        raise DomainError(f"E[W^{q}] evaluates to 0")
    return lm / math.log(sf.base) - (q - 1)


def phi_derivative_at_one(sf: StructureFunction) -> float:
    """phi_W'(1) = E[W log W] / log b - 1 (with 0 log 0 = 0)."""
    ewlogw = math.fsum(
        float(p) * float(a) * math.log(float(a))
        for a, p in zip(sf.dist.atoms, sf.dist.probs)
        if a > 0
    )
    return ewlogw / math.log(sf.base) - 1.0


def kahane_peyriere_diagnostic(sf: StructureFunction) -> dict[str, Any]:
    """E[W log W] against log b; the limit measure is non-degenerate iff smaller."""
    ewlogw = (phi_derivative_at_one(sf) + 1.0) * math.log(sf.base)
    return {
        "e_w_log_w": ewlogw,
        "log_b": math.log(sf.base),
        "nondegenerate": ewlogw < math.log(sf.base),
    }


def is_totally_critical(dist: WeightDistribution, b: int) -> bool:
    if len(dist.atoms) != 2:
        return False
    (a0, a1), (_p0, p1) = dist.atoms, dist.probs
    tol = NORMALIZATION_TOL
    return (
        abs(float(a0)) <= tol
        and abs(float(a1) - b) <= tol
        and abs(float(p1) - 1.0 / b) <= tol
    )


def find_critical_exponent(
    sf: StructureFunction,
    *,
    q_max: float = DEFAULT_Q_MAX,
) -> float | CriticalSentinel | None:
    """The root q_crit > 1 of phi_W, TOTALLY_CRITICAL for W_TC, or None.

    phi is convex with phi(1) = 0, so a second zero exists only when
    phi'(1) < 0; the bracket doubles from 2 up to q_max and is then bisected.
    """
    if is_totally_critical(sf.dist, sf.base):
        return TOTALLY_CRITICAL
    if phi_derivative_at_one(sf) >= 0:
        return None

    lo, hi = 1.0, 2.0
    while hi <= q_max:
        if phi(sf, hi) > 0:
            break
        lo, hi = hi, hi * 2
    else:
        return None

    if lo == 1.0:
        h = (hi - 1.0) / 2
        for _ in range(60):
            if phi(sf, 1.0 + h) < 0:
                break
            h /= 2
        else:
            return None
        lo = 1.0 + h

    sol = root_scalar(lambda q: phi(sf, q), bracket=(lo, hi), method="bisect", xtol=ROOT_XTOL)
    return float(sol.root)


@dataclass(frozen=True)
class CriticalityReport:
    regime: str
    q: float
    phi_value: float
    q_crit: float | None
    is_totally_critical: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "regime": self.regime,
            "q": self.q,
            "phi": self.phi_value,
            "q_crit": self.q_crit,
            "totally_critical": self.is_totally_critical,
        }


def regime_of(phi_value: float, *, tol: float = CLASSIFICATION_TOL) -> str:
    if phi_value < -tol:
        return "subcritical"
    if phi_value > tol:
        return "supercritical"
    return "critical"


def classify(
    sf: StructureFunction,
    q: float,
    *,
    tol: float = CLASSIFICATION_TOL,
    q_max: float = DEFAULT_Q_MAX,
) -> CriticalityReport:
    tc = is_totally_critical(sf.dist, sf.base)
    value = phi(sf, q)
    root = None if tc else find_critical_exponent(sf, q_max=q_max)
    return CriticalityReport(
        regime=regime_of(value, tol=tol),
        q=float(q),
        phi_value=value,
        q_crit=root if isinstance(root, float) else None,
        is_totally_critical=tc,
    )


def verify_strict_subcritical_interior(
    sf: StructureFunction,
    q: float,
    grid: Sequence[float],
    *,
    tol: float = CLASSIFICATION_TOL,
) -> bool:
    """True iff E[W^p] < b^(p-1) with margin tol at every grid point p in (1, q)."""
    if q <= 1:
        raise ValueError(f"q must exceed 1, got {q}")
    if is_totally_critical(sf.dist, sf.base):
        raise TotallyCriticalError("W is totally critical: every exponent is critical")
    if phi(sf, q) > tol:
        raise PreconditionError(
            f"E[W^{q}] exceeds b^{q - 1} (phi = {phi(sf, q):.3e}); the interior check needs "
            "a critical or subcritical exponent"
        )
    for p in grid:
        if not 1 < p < q:
            raise ValueError(f"grid point {p} is outside (1, {q})")
    return all(phi(sf, p) < -tol for p in grid)


def solve_critical_two_point(b: int, q: float, low_atom: float) -> WeightDistribution:
    """The two-point law {low_atom, a} with E[W] = 1 and E[W^q] = b^(q-1).

    For low_atom > 0 the result is not totally critical, so q is its q_crit.
    """
    if q <= 1:
        raise ConfigError(f"critical exponent must exceed 1, got {q}")
    c = float(low_atom)
    if not 0 <= c < 1:
        raise ConfigError(f"low atom must lie in [0, 1), got {low_atom}")
    target = (q - 1) * math.log(b)

    def gap(a: float) -> float:
        p = (1 - c) / (a - c)
        return math.log(p * a**q + (1 - p) * c**q) - target

    lo, hi = 1.0 + 1e-9, 2.0
    while gap(hi) <= 0:
        lo, hi = hi, hi * 2
        if hi > 1e12:
            raise DomainError("no two-point critical law found")
    a = float(root_scalar(gap, bracket=(lo, hi), method="brentq", xtol=1e-15, rtol=1e-15).root)
    p = (1 - c) / (a - c)
    return WeightDistribution((c, a), (1 - p, p))


# --- literal and JSON formats -------------------------------------------------


def _parse_number(token: str, *, position: int) -> int | float | Fraction:
    tok = token.strip()
    lead = len(token) - len(token.lstrip())
    if not tok:
        raise DistributionParseError("empty number", position=position + lead)
    try:
        return parse_scalar(tok)
    except (ValueError, ZeroDivisionError):
        raise DistributionParseError(f"invalid number {tok!r}", position=position + lead) from None


def parse_distribution(text: str, *, unit_mean: bool = True) -> WeightDistribution:
    """Parse `atoms=0,2;probs=1/2,1/2`.

    Integer and `p/q` tokens keep the law rational; any decimal token makes the
    whole law floating point.
    """
    fields: dict[str, list[int | float | Fraction]] = {}
    pos = 0
    for part in text.split(";"):
        start = pos
        pos += len(part) + 1
        if not part.strip():
            raise DistributionParseError("empty field", position=start)
        key, eq, body = part.partition("=")
        if not eq:
            raise DistributionParseError("expected 'name=values'", position=start)
        name = key.strip()
        if name not in ("atoms", "probs"):
            raise DistributionParseError(f"unknown field {name!r}", position=start)
        if name in fields:
            raise DistributionParseError(f"duplicate field {name!r}", position=start)
        offset = start + len(key) + 1
        values = []
        for tok in body.split(","):
            values.append(_parse_number(tok, position=offset))
            offset += len(tok) + 1
        fields[name] = values

    for name in ("atoms", "probs"):
        if name not in fields:
            raise DistributionParseError(f"missing field {name!r}", position=len(text))
    if len(fields["atoms"]) != len(fields["probs"]):
        raise DistributionParseError("atoms and probs differ in length", position=len(text))
    return WeightDistribution(tuple(fields["atoms"]), tuple(fields["probs"]), unit_mean=unit_mean)


def _format_scalar(x: Scalar) -> str:
    if isinstance(x, Fraction):
        return str(x)
    return repr(float(x))


def format_distribution(dist: WeightDistribution) -> str:
    atoms = ",".join(_format_scalar(a) for a in dist.atoms)
    probs = ",".join(_format_scalar(p) for p in dist.probs)
    return f"atoms={atoms};probs={probs}"


def _json_scalar(value: Any, *, where: str) -> int | float | Fraction:
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        return _parse_number(value, position=0)
    raise ConfigError(f"{where}: expected a number, got {value!r}")


def distribution_from_json(obj: Any, *, unit_mean: bool = True) -> WeightDistribution:
    """Accepts a literal string, {"atoms", "probs"}, or {"critical_two_point": {...}}."""
    if isinstance(obj, str):
        return parse_distribution(obj, unit_mean=unit_mean)
    if not isinstance(obj, dict):
        raise ConfigError(f"distribution must be a string or object, got {type(obj).__name__}")
    if "critical_two_point" in obj:
        params = obj["critical_two_point"]
        try:
            return solve_critical_two_point(
                int(params["b"]), float(params["q"]), params["low_atom"]
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"critical_two_point needs b, q and low_atom: {e}") from e
    try:
        atoms = [_json_scalar(v, where="atoms") for v in obj["atoms"]]
        probs = [_json_scalar(v, where="probs") for v in obj["probs"]]
    except KeyError as e:
        raise ConfigError(f"distribution object is missing {e}") from e
    return WeightDistribution(tuple(atoms), tuple(probs), unit_mean=unit_mean)


def distribution_to_json(dist: WeightDistribution) -> dict[str, list[Any]]:
    def enc(x: Scalar) -> Any:
        return str(x) if isinstance(x, Fraction) else float(x)

    return {"atoms": [enc(a) for a in dist.atoms], "probs": [enc(p) for p in dist.probs]}
