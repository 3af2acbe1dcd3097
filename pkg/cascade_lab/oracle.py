"""Brute-force ground truth by enumerating the whole sample space.

Every non-root vertex draws one atom of X; the root carries X(root) = 1.
With a rational law and rational weights all sums are exact `Fraction`s, so
the martingale identities are checked for equality rather than to a
tolerance.
"""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterator, Sequence, TypeVar

import numpy as np

from cascade_lab.errors import ResourceLimitError
from cascade_lab.reduction import reduce
from cascade_lab.tree import ROOT, SparseTree, SparseWeights, VertexPath, Weights, as_sparse, kappa
from cascade_lab.weights import Scalar, WeightDistribution

DEFAULT_OUTCOME_CAP = 2_000_000
DEFAULT_REL_TOL = 1e-10

Outcome = tuple[int, ...]
T = TypeVar("T")


@dataclass(frozen=True, eq=False)
class EnumeratedSpace:
    """The product space of one atom choice per non-root vertex."""

    tree: SparseTree
    dist: WeightDistribution
    cap: int = DEFAULT_OUTCOME_CAP
    vertices: tuple[VertexPath, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", self.tree.paths[1:])
        if self.outcome_count > self.cap:
            raise ResourceLimitError(
                f"{len(self.dist.atoms)}^{len(self.vertices)} = {self.outcome_count} outcomes "
                f"exceed the enumeration cap {self.cap}"
            )

    @property
    def outcome_count(self) -> int:
        return len(self.dist.atoms) ** len(self.vertices)

    @property
    def exact(self) -> bool:
        return self.dist.exact

    def outcome_at(self, index: int) -> Outcome:
        """Decode an outcome index; the last vertex varies fastest."""
        radix = len(self.dist.atoms)
        digits = [0] * len(self.vertices)
        for pos in range(len(self.vertices) - 1, -1, -1):
            index, digits[pos] = divmod(index, radix)
        return tuple(digits)

    def probability(self, outcome: Outcome) -> Scalar:
        probs = self.dist.probs
        return math.prod((probs[i] for i in outcome), start=Fraction(1) if self.exact else 1.0)

    def values(self, outcome: Outcome) -> dict[VertexPath, Scalar]:
        atoms = self.dist.atoms
        x: dict[VertexPath, Scalar] = {ROOT: 1}
        for v, i in zip(self.vertices, outcome):
            x[v] = atoms[i]
        return x

    def outcomes(self) -> Iterator[tuple[Outcome, Scalar]]:
        for index in range(self.outcome_count):
            outcome = self.outcome_at(index)
            yield outcome, self.probability(outcome)


def _path_products(
    tree: SparseTree, x: dict[VertexPath, Scalar], power: int
) -> dict[VertexPath, Scalar]:
    """prod over u <= v of X(u)^power, for every vertex v."""
    prods: dict[VertexPath, Scalar] = {ROOT: 1}
    for v in tree.paths[1:]:
        prods[v] = prods[v[:-1]] * x[v] ** power
    return prods


def _theta(tree: SparseTree, weights: SparseWeights, x: dict[VertexPath, Scalar], power: int):
    prods = _path_products(tree, x, power)
    return sum((weights[v] * prods[v] for v in tree), 0)


def theta_value(
    space: EnumeratedSpace, weights: Weights, outcome: Outcome, *, power: int = 1
) -> Scalar:
    """Theta(X^power, alpha) for one realization."""
    w = as_sparse(weights, space.tree)
    return _theta(space.tree, w, space.values(outcome), power)


def _map_outcomes(space: EnumeratedSpace, fn: Callable[[Outcome], T], workers: int) -> list[T]:
    """fn over every outcome, in outcome order, whatever the number of workers."""

    def run(bounds: tuple[int, int]) -> list[T]:
        return [fn(space.outcome_at(i)) for i in range(*bounds)]

    total = space.outcome_count
    if workers <= 1 or total < 2 * workers:
        return run((0, total))
    edges = np.linspace(0, total, workers + 1, dtype=np.int64)
    chunks = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, chunks))
    return [item for part in parts for item in part]


def exact_moment_by_enumeration(
    space: EnumeratedSpace, weights: Weights, q: float, *, workers: int = 1
) -> Scalar:
    """E[Theta^q] summed over every outcome; exact for rational inputs and integer q."""
    if q <= 0:
        raise ValueError(f"moment order must be > 0, got {q}")
    w = as_sparse(weights, space.tree)
    exact = space.exact and float(q).is_integer() and all(
        isinstance(a, (int, Fraction)) for a in w.values()
    )

    def term(outcome: Outcome) -> Scalar:
        theta = _theta(space.tree, w, space.values(outcome), 1)
        p = space.probability(outcome)
        if exact:
            return p * theta ** int(q)
        return float(p) * float(theta) ** q

    terms = _map_outcomes(space, term, workers)
    if exact:
        return sum(terms, Fraction(0))
    return math.fsum(terms)


@dataclass(frozen=True, eq=False)
class MartingaleDecomposition:
    """Per-outcome M_m = E[M | F_m], increments D_m and s(M)^2.

    `martingale[m][i]` is M_m on outcome i; `increments[m][i]` is D_m for
    m >= 1 (index 0 holds M_0); `closed_increments` is the rearranged
    closed form of D_m evaluated directly from the realization.
    """

    outcomes: tuple[Outcome, ...]
    probs: tuple[Scalar, ...]
    final: tuple[Scalar, ...]
    martingale: tuple[tuple[Scalar, ...], ...]
    increments: tuple[tuple[Scalar, ...], ...]
    closed_increments: tuple[tuple[Scalar, ...], ...]
    square_function: tuple[Scalar, ...]

    @property
    def depth(self) -> int:
        return len(self.martingale) - 1


def _conditional(
    keys: Sequence[tuple[int, ...]], probs: Sequence[Scalar], values: Sequence[Scalar]
) -> list[Scalar]:
    """E[values | key] evaluated on every outcome."""
    mass: dict[tuple[int, ...], Any] = defaultdict(int)
    acc: dict[tuple[int, ...], Any] = defaultdict(int)
    for key, p, v in zip(keys, probs, values):
        mass[key] += p
        acc[key] += p * v
    return [acc[key] / mass[key] for key in keys]


def martingale_decomposition(
    space: EnumeratedSpace, weights: Weights, *, extra_levels: int = 1
) -> MartingaleDecomposition:
    """Level-filtration martingale of M = Theta(X, alpha) by exact conditioning.

    F_m is generated by X on depths <= m; its atoms are found by keying each
    outcome on its restriction to those vertices. `extra_levels` appends
    levels past the tree depth, where every increment is 0.
    """
    tree = space.tree
    w = as_sparse(weights, tree)
    outcomes = tuple(space.outcome_at(i) for i in range(space.outcome_count))
    probs = tuple(space.probability(o) for o in outcomes)
    xs = [space.values(o) for o in outcomes]
    final = [_theta(tree, w, x, 1) for x in xs]

    depth = tree.max_depth + extra_levels
    positions = {v: i for i, v in enumerate(space.vertices)}

    def key_at(m: int) -> list[tuple[int, ...]]:
        idx = [positions[v] for v in space.vertices if len(v) <= m]
        return [tuple(o[i] for i in idx) for o in outcomes]

    keys = [key_at(m) for m in range(depth + 1)]
    martingale = [_conditional(keys[m], probs, final) for m in range(depth + 1)]

    increments: list[list[Scalar]] = [list(martingale[0])]
    square = [m0 * m0 for m0 in martingale[0]]
    for m in range(1, depth + 1):
        d = [a - b for a, b in zip(martingale[m], martingale[m - 1])]
        increments.append(d)
        cond = _conditional(keys[m - 1], probs, [x * x for x in d])
        square = [s + c for s, c in zip(square, cond)]

    k = kappa(w, space.dist.mean)
    mean = space.dist.mean
    closed: list[list[Scalar]] = [list(martingale[0])]
    for m in range(1, depth + 1):
        level = tree.level(m)
        row = []
        for x in xs:
            prods = _path_products(tree, x, 1)
            row.append(sum(((x[v] - mean) * prods[v[:-1]] * k[v] for v in level), 0))
        closed.append(row)

    def freeze(rows: list[list[Scalar]]) -> tuple[tuple[Scalar, ...], ...]:
        return tuple(tuple(r) for r in rows)

    return MartingaleDecomposition(
        outcomes=outcomes,
        probs=probs,
        final=tuple(final),
        martingale=freeze(martingale),
        increments=freeze(increments),
        closed_increments=freeze(closed),
        square_function=tuple(square),
    )


# --- identity suite --------------------------------------------------------------


def _gap(a: Scalar, b: Scalar, *, exact: bool) -> float:
    """0 for equal values; otherwise |a - b| / max(1, |a|, |b|)."""
    if exact:
        if a == b:
            return 0.0
        gap = float(abs(a - b)) / max(1.0, abs(float(a)), abs(float(b)))
        return max(gap, math.ulp(0.0))
    return abs(float(a) - float(b)) / max(1.0, abs(float(a)), abs(float(b)))


@dataclass(frozen=True)
class IdentityReport:
    exact: bool
    outcomes: int
    square_function_gap: float
    increment_gap: float
    telescoping_gap: float
    mean_increment: float
    orthogonality: float
    passed: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "exact": self.exact,
            "outcomes": self.outcomes,
            "square_function_gap": self.square_function_gap,
            "increment_gap": self.increment_gap,
            "telescoping_gap": self.telescoping_gap,
            "mean_increment": self.mean_increment,
            "orthogonality": self.orthogonality,
            "passed": self.passed,
        }


def check_identities(
    space: EnumeratedSpace, weights: Weights, *, rel_tol: float = DEFAULT_REL_TOL
) -> IdentityReport:
    """Conditional-square, increment, telescoping and orthogonality checks."""
    w = as_sparse(weights, space.tree)
    exact = space.exact and all(isinstance(a, (int, Fraction)) for a in w.values())
    dec = martingale_decomposition(space, w)
    beta = reduce(w, space.dist).beta

    sq_gap = max(
        _gap(s, theta_value(space, beta, o, power=2), exact=exact)
        for o, s in zip(dec.outcomes, dec.square_function)
    )
    inc_gap = max(
        _gap(a, b, exact=exact)
        for m in range(1, dec.depth + 1)
        for a, b in zip(dec.increments[m], dec.closed_increments[m])
    )
    tel_gap = max(
        _gap(final, sum((dec.increments[m][i] for m in range(dec.depth + 1)), 0), exact=exact)
        for i, final in enumerate(dec.final)
    )

    def expect(values: Sequence[Scalar]) -> float:
        return abs(float(sum((p * v for p, v in zip(dec.probs, values)), 0)))

    mean_inc = max(expect(dec.increments[m]) for m in range(1, dec.depth + 1))
    ortho = 0.0
    for m in range(1, dec.depth + 1):
        for m2 in range(m + 1, dec.depth + 1):
            cross = [a * b for a, b in zip(dec.increments[m], dec.increments[m2])]
            ortho = max(ortho, expect(cross))

    limit = 0.0 if exact else rel_tol
    passed = max(sq_gap, inc_gap, tel_gap, mean_inc, ortho) <= limit
    return IdentityReport(
        exact=exact,
        outcomes=len(dec.outcomes),
        square_function_gap=sq_gap,
        increment_gap=inc_gap,
        telescoping_gap=tel_gap,
        mean_increment=mean_inc,
        orthogonality=ortho,
        passed=passed,
    )


def random_instance(
    rng: np.random.Generator,
    *,
    rational: bool = True,
    bases: Sequence[int] = (2, 3),
    max_depth: int = 3,
    max_vertices: int = 8,
    max_atoms: int = 3,
) -> tuple[SparseTree, WeightDistribution, SparseWeights]:
    """A small random (tree, law of X, weight) triple for the identity suites.

    The law of X is not normalised: the identities hold for any non-negative X.
    """
    b = int(rng.choice(bases))
    paths: list[VertexPath] = [ROOT]
    frontier = [ROOT]
    while frontier and len(paths) < max_vertices:
        nxt = []
        for v in frontier:
            if len(v) >= max_depth:
                continue
            n_children = int(rng.integers(0 if v else 1, b + 1))
            for j in range(n_children):
                if len(paths) >= max_vertices:
                    break
                paths.append(v + (j,))
                nxt.append(v + (j,))
        frontier = nxt
    tree = SparseTree.from_paths(paths)

    n_atoms = int(rng.integers(1, max_atoms + 1))
    if rational:
        atoms = sorted(
            {Fraction(int(rng.integers(0, 9)), int(rng.integers(1, 4))) for _ in range(n_atoms)}
        )
        raw = [int(rng.integers(1, 5)) for _ in atoms]
        probs = [Fraction(r, sum(raw)) for r in raw]
        alpha = {v: Fraction(int(rng.integers(0, 9)), 4) for v in tree}
    else:
        atoms = sorted({float(rng.uniform(0.0, 3.0)) for _ in range(n_atoms)})
        raw_f = rng.uniform(0.1, 1.0, size=len(atoms))
        probs = list(raw_f / raw_f.sum())
        # renormalise the last entry so the probabilities sum to 1 to rounding
        probs[-1] = 1.0 - math.fsum(probs[:-1])
        alpha = {v: float(rng.uniform(0.0, 2.0)) for v in tree}
    dist = WeightDistribution.relaxed(atoms, probs)
    return tree, dist, SparseWeights(tree, alpha)
