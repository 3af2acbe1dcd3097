"""Exact integer moments by truncated exponential generating functions.

For a sum of independent terms the EGF of the sum is the product of the
EGFs, so E[Z^k] = k! [t^k] prod_i f_i(t). Every series is truncated at
degree q_max. Rows switch from linear to log arithmetic once an entry
passes LINEAR_LIMIT; the switch is recorded per row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from cascade_lab.errors import ConfigError, PreconditionError, ResourceLimitError
from cascade_lab.tree import LevelProfile, Weights
from cascade_lab.utils import format_float, log_scalar
from cascade_lab.weights import Scalar, WeightDistribution, log_moment, moment

LINEAR_LIMIT = 1e300
MAX_LEVELS = 10_000
MAX_ORDER = 64


# --- series arithmetic -------------------------------------------------------------


class _FloatSeries:
    """Coefficient arrays of doubles."""

    def __init__(self, order: int, dist: WeightDistribution) -> None:
        self.order = order
        self.fact = np.array([math.factorial(k) for k in range(order + 1)], dtype=float)
        self.mx = np.array([moment(dist, j) for j in range(order + 1)])

    def one(self) -> np.ndarray:
        out = np.zeros(self.order + 1)
        out[0] = 1.0
        return out

    def mul(self, a: np.ndarray, c: np.ndarray) -> np.ndarray:
        return np.convolve(a, c)[: self.order + 1]

    def exp_egf(self, alpha: Scalar) -> np.ndarray:
        return np.power(float(alpha), np.arange(self.order + 1)) / self.fact

    def child_egf(self, moments: np.ndarray) -> np.ndarray:
        return self.mx * moments / self.fact

    def to_moments(self, egf: np.ndarray) -> np.ndarray:
        return self.fact * egf

    def rescale(self, moments: np.ndarray, b: int) -> np.ndarray:
        return moments * float(b) ** -np.arange(self.order + 1)

    def ok(self, moments: np.ndarray) -> bool:
        return bool(np.all(np.isfinite(moments)) and moments.max() <= LINEAR_LIMIT)


class _LogSeries:
    """Coefficient arrays stored as natural logs (-inf for zero)."""

    def __init__(self, order: int, dist: WeightDistribution) -> None:
        self.order = order
        self.log_fact = gammaln(np.arange(order + 1) + 1.0)
        self.mx = np.array([log_moment(dist, j) for j in range(order + 1)])

    def one(self) -> np.ndarray:
        out = np.full(self.order + 1, -np.inf)
        out[0] = 0.0
        return out

    def mul(self, a: np.ndarray, c: np.ndarray) -> np.ndarray:
        out = np.full(self.order + 1, -np.inf)
        for k in range(self.order + 1):
            terms = a[: k + 1] + c[k::-1]
            finite = terms[np.isfinite(terms)]
            if finite.size:
                out[k] = logsumexp(finite)
        return out

    def exp_egf(self, alpha: Scalar) -> np.ndarray:
        if alpha == 0:
            return self.one()
        return np.arange(self.order + 1) * log_scalar(alpha) - self.log_fact

    def child_egf(self, moments: np.ndarray) -> np.ndarray:
        return self.mx + moments - self.log_fact

    def to_moments(self, egf: np.ndarray) -> np.ndarray:
        return self.log_fact + egf

    def rescale(self, moments: np.ndarray, b: int) -> np.ndarray:
        return moments - np.arange(self.order + 1) * math.log(b)


class _ExactSeries:
    """Lists of Fractions; used when the law and every weight are rational."""

    def __init__(self, order: int, dist: WeightDistribution) -> None:
        self.order = order
        self.fact = [math.factorial(k) for k in range(order + 1)]
        self.mx = [dist.moment_exact(j) for j in range(order + 1)]

    def one(self) -> list[Fraction]:
        return [Fraction(1)] + [Fraction(0)] * self.order

    def mul(self, a: list[Fraction], c: list[Fraction]) -> list[Fraction]:
        return [
            sum((a[i] * c[k - i] for i in range(k + 1)), Fraction(0))
            for k in range(self.order + 1)
        ]

    def exp_egf(self, alpha: Scalar) -> list[Fraction]:
        a = Fraction(alpha)
        return [a**j / self.fact[j] for j in range(self.order + 1)]

    def child_egf(self, moments: list[Fraction]) -> list[Fraction]:
        return [self.mx[j] * moments[j] / self.fact[j] for j in range(self.order + 1)]

    def to_moments(self, egf: list[Fraction]) -> list[Fraction]:
        return [self.fact[k] * egf[k] for k in range(self.order + 1)]

    def rescale(self, moments: list[Fraction], b: int) -> list[Fraction]:
        return [m / b**k for k, m in enumerate(moments)]


def _power(series, a, e: int):
    """a^e by repeated squaring, truncated at the series order."""
    result = series.one()
    base = a
    while e:
        if e & 1:
            result = series.mul(result, base)
        e >>= 1
        if e:
            base = series.mul(base, base)
    return result


def _check_order(q_max: int) -> None:
    if q_max < 1:
        raise ConfigError(f"q_max must be >= 1, got {q_max}")
    if q_max > MAX_ORDER:
        raise ResourceLimitError(f"q_max={q_max} exceeds the supported order {MAX_ORDER}")


# --- the cascade Y_n ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MomentTable:
    """m_n(k) = E[Y_n^k] for 0 <= n <= N and 0 <= k <= q_max.

    `log_rows[n]` always holds log m_n(k); `linear_rows[n]` holds the values
    themselves while row n was computed in linear arithmetic, else None.
    """

    base: int
    q_max: int
    log_rows: tuple[np.ndarray, ...]
    linear_rows: tuple[np.ndarray | None, ...]

    @property
    def n_max(self) -> int:
        return len(self.log_rows) - 1

    def domain(self, n: int) -> str:
        return "linear" if self.linear_rows[n] is not None else "log"

    @property
    def first_log_row(self) -> int | None:
        for n, row in enumerate(self.linear_rows):
            if row is None:
                return n
        return None

    def log_value(self, n: int, k: int) -> float:
        return float(self.log_rows[n][k])

    def value(self, n: int, k: int) -> float:
        row = self.linear_rows[n]
        if row is not None:
            return float(row[k])
        lv = self.log_value(n, k)
        return math.exp(lv) if lv < 709.0 else math.inf

    def to_csv(self) -> str:
        lines = ["n,k,value,log_value,domain"]
        for n in range(self.n_max + 1):
            dom = self.domain(n)
            for k in range(self.q_max + 1):
                value_txt = format_float(self.value(n, k)) if dom == "linear" else ""
                lines.append(f"{n},{k},{value_txt},{format_float(self.log_value(n, k))},{dom}")
        return "\n".join(lines) + "\n"


def _log(row: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(row)


def cascade_moments(b: int, dist: WeightDistribution, q_max: int, n_max: int) -> MomentTable:
    """E[Y_n^k] by iterating m_n(k) = k!/b^k [t^k] (sum_j E[W^j] m_{n-1}(j) t^j/j!)^b."""
    _check_order(q_max)
    if b < 2:
        raise ConfigError(f"branching number must be >= 2, got {b}")
    if n_max < 0:
        raise ConfigError(f"N must be >= 0, got {n_max}")
    if n_max > MAX_LEVELS:
        raise ResourceLimitError(f"N={n_max} exceeds the supported depth {MAX_LEVELS}")

    w = dist.as_float()
    lin, lg = _FloatSeries(q_max, w), _LogSeries(q_max, w)
    row: np.ndarray | None = np.ones(q_max + 1)
    log_row = np.zeros(q_max + 1)
    log_rows, linear_rows = [log_row], [row]

    for _ in range(n_max):
        if row is not None:
            with np.errstate(over="ignore", invalid="ignore"):
                nxt = lin.rescale(lin.to_moments(_power(lin, lin.child_egf(row), b)), b)
            if lin.ok(nxt):
                row, log_row = nxt, _log(nxt)
                log_rows.append(log_row)
                linear_rows.append(row)
                continue
            row = None
        log_row = lg.rescale(lg.to_moments(_power(lg, lg.child_egf(log_row), b)), b)
        log_rows.append(log_row)
        linear_rows.append(None)

    return MomentTable(b, q_max, tuple(log_rows), tuple(linear_rows))


def growth_series(table: MomentTable, k: int, *, start: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """(n, log m_n(k)) for start <= n <= N."""
    if not 0 <= k <= table.q_max:
        raise ConfigError(f"moment order {k} is outside [0, {table.q_max}]")
    ns = np.arange(start, table.n_max + 1)
    return ns, np.array([table.log_value(int(n), k) for n in ns])


def stationary_moments(b: int, dist: WeightDistribution, q_max: int) -> np.ndarray:
    """Limits of m_n(k) for k <= q_max; needs E[W^k] < b^(k-1) for 2 <= k <= q_max.

    m_n(k) increases in n, so the limit is also its supremum.
    """
    _check_order(q_max)
    series = _FloatSeries(q_max, dist.as_float())
    m = np.zeros(q_max + 1)
    m[0] = 1.0
    m[1] = 1.0
    for k in range(2, q_max + 1):
        contraction = series.mx[k] / float(b) ** (k - 1)
        if contraction >= 1.0:
            raise PreconditionError(
                f"E[W^{k}] = {series.mx[k]:.6g} >= b^{k - 1}; the moment of order {k} "
                "has no finite limit"
            )
        # terms with one factor of degree k carry m[k] itself, and m[k] is still 0 here
        g = _power(series, series.child_egf(m), b)
        rest = series.fact[k] * g[k] / float(b) ** k
        m[k] = rest / (1.0 - contraction)
    return m


def second_moment_closed_form(b: int, dist: WeightDistribution, n_max: int) -> np.ndarray:
    """m_n(2) from m_n = A m_{n-1} + (b-1)/b with A = E[W^2]/b, for n <= N."""
    a = moment(dist, 2) / b
    c = (b - 1) / b
    ns = np.arange(n_max + 1, dtype=float)
    if abs(a - 1.0) <= 1e-12:
        return 1.0 + c * ns
    with np.errstate(over="ignore"):
        an = np.power(a, ns)
    return an + c * (1.0 - an) / (1.0 - a)


# --- weighted sums Theta(X, alpha) -------------------------------------------------


@dataclass(frozen=True)
class MomentVector:
    """E[Theta^k] for 0 <= k <= q_max, in the arithmetic that produced them."""

    values: tuple[Scalar, ...]
    log_values: tuple[float, ...]
    domain: str

    def to_json(self) -> dict[str, Any]:
        return {
            "domain": self.domain,
            "values": [float(v) for v in self.values],
            "log_values": list(self.log_values),
        }


def _is_exact_weight(a: Scalar) -> bool:
    return isinstance(a, (int, Fraction)) and not isinstance(a, bool)


def _weight_values(weights: Weights) -> Sequence[Scalar]:
    if isinstance(weights, LevelProfile):
        return weights.coeffs
    return weights.values()


def _fits_double(weights: Weights) -> bool:
    for a in _weight_values(weights):
        if a == 0:
            continue
        f = float(a)
        if f == 0.0 or not math.isfinite(f):
            return False
    return True


def _theta_series(weights: Weights, series):
    """Moments of Theta at the root, folded bottom-up."""
    if isinstance(weights, LevelProfile):
        b = weights.base
        moments = None
        for m in range(weights.depth, -1, -1):
            egf = series.exp_egf(weights.coeffs[m])
            if moments is not None:
                egf = series.mul(egf, _power(series, series.child_egf(moments), b))
            moments = series.to_moments(egf)
        return moments

    tree = weights.tree
    per_vertex: dict[tuple[int, ...], Any] = {}
    for v in reversed(tree.paths):
        egf = series.exp_egf(weights[v])
        for c in tree.children[v]:
            egf = series.mul(egf, series.child_egf(per_vertex.pop(c)))
        per_vertex[v] = series.to_moments(egf)
    return per_vertex[tree.root]


def theta_moments(weights: Weights, dist: WeightDistribution, q_max: int) -> MomentVector:
    """E[Theta(X, alpha)^k] for k <= q_max.

    Rational inputs give exact Fractions. Otherwise the fold runs on doubles
    and is redone on logs when a weight or a moment leaves the double range.
    """
    _check_order(q_max)
    if dist.exact and all(_is_exact_weight(a) for a in _weight_values(weights)):
        values = _theta_series(weights, _ExactSeries(q_max, dist))
        return MomentVector(tuple(values), tuple(log_scalar(v) for v in values), "exact")

    fdist = dist.as_float()
    if _fits_double(weights):
        lin = _FloatSeries(q_max, fdist)
        with np.errstate(over="ignore", invalid="ignore"):
            values = _theta_series(weights, lin)
        if lin.ok(values):
            return MomentVector(
                tuple(float(v) for v in values), tuple(float(x) for x in _log(values)), "linear"
            )

    logs = _theta_series(weights, _LogSeries(q_max, fdist))
    values = tuple(math.exp(x) if x < 709.0 else math.inf for x in logs)
    return MomentVector(values, tuple(float(x) for x in logs), "log")

