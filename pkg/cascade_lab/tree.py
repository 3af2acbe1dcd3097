"""Finite rooted trees and weights on them.

A vertex is identified by its path of child indices from the root (the root
is the empty path). Canonical order is lexicographic by path, so every
vertex comes after its ancestors.

Weights come in two forms sharing the operations below: `LevelProfile`
(one coefficient per depth on the regular b-adic tree) and `SparseWeights`
(an explicit value per vertex of a `SparseTree`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Union

from cascade_lab.errors import ConfigError, ResourceLimitError
from cascade_lab.utils import parse_scalar
from cascade_lab.weights import Scalar

VertexPath = tuple[int, ...]

ROOT: VertexPath = ()
EXPANSION_CAP = 2**24


@dataclass(frozen=True)
class SparseTree:
    paths: tuple[VertexPath, ...]
    children: Mapping[VertexPath, tuple[VertexPath, ...]] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        ordered = tuple(sorted(set(self.paths)))
        if not ordered or ordered[0] != ROOT:
            raise ConfigError("a tree needs a root (the empty path)")
        known = set(ordered)
        children: dict[VertexPath, list[VertexPath]] = {v: [] for v in ordered}
        for v in ordered[1:]:
            if any(i < 0 for i in v):
                raise ConfigError(f"negative child index in {format_path(v)!r}")
            parent = v[:-1]
            if parent not in known:
                raise ConfigError(f"vertex {format_path(v)!r} has no parent in the tree")
            children[parent].append(v)
        object.__setattr__(self, "paths", ordered)
        object.__setattr__(self, "children", {v: tuple(c) for v, c in children.items()})

    @classmethod
    def from_paths(cls, paths: Iterable[VertexPath]) -> SparseTree:
        return cls(tuple(tuple(p) for p in paths))

    @classmethod
    def regular(cls, b: int, depth: int, *, cap: int = EXPANSION_CAP) -> SparseTree:
        if b < 1 or depth < 0:
            raise ConfigError(f"invalid regular tree b={b}, depth={depth}")
        if b**depth > cap:
            raise ResourceLimitError(
                f"regular tree b={b}, depth={depth} exceeds the vertex cap {cap}"
            )
        paths: list[VertexPath] = [ROOT]
        frontier: list[VertexPath] = [ROOT]
        for _ in range(depth):
            frontier = [v + (j,) for v in frontier for j in range(b)]
            paths.extend(frontier)
        return cls(tuple(paths))

    @property
    def root(self) -> VertexPath:
        return ROOT

    @property
    def max_depth(self) -> int:
        return max(len(v) for v in self.paths)

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self) -> Iterator[VertexPath]:
        return iter(self.paths)

    def __contains__(self, v: object) -> bool:
        return v in self.children

    def level(self, n: int) -> tuple[VertexPath, ...]:
        return tuple(v for v in self.paths if len(v) == n)

    def subtree(self, v: VertexPath) -> tuple[VertexPath, ...]:
        return tuple(u for u in self.paths if u[: len(v)] == v)


def ancestor(v: VertexPath, m: int) -> VertexPath:
    """v_m, the ancestor of v at depth m (m <= len(v))."""
    return v[:m]


def level_sizes(tree: SparseTree) -> list[int]:
    sizes = [0] * (tree.max_depth + 1)
    for v in tree:
        sizes[len(v)] += 1
    return sizes


@dataclass(frozen=True)
class LevelProfile:
    """alpha(v) = coeffs[d(v, root)] on the b-adic tree, zero below depth N."""

    base: int
    coeffs: tuple[Scalar, ...]

    def __post_init__(self) -> None:
        if self.base < 2:
            raise ConfigError(f"branching number must be >= 2, got {self.base}")
        if not self.coeffs:
            raise ConfigError("a level profile needs at least the root coefficient")
        if any(c < 0 for c in self.coeffs):
            raise ConfigError("profile coefficients must be non-negative")
        object.__setattr__(self, "coeffs", tuple(self.coeffs))

    @property
    def depth(self) -> int:
        return len(self.coeffs) - 1

    def at(self, m: int) -> Scalar:
        return self.coeffs[m] if 0 <= m < len(self.coeffs) else 0


@dataclass(frozen=True, eq=False)
class SparseWeights:
    tree: SparseTree
    alpha: Mapping[VertexPath, Scalar]

    def __post_init__(self) -> None:
        for v, a in self.alpha.items():
            if v not in self.tree:
                raise ConfigError(f"weight on {format_path(v)!r}, which is not in the tree")
            if a < 0:
                raise ConfigError(f"negative weight {a} on {format_path(v)!r}")
        object.__setattr__(self, "alpha", dict(self.alpha))

    def __getitem__(self, v: VertexPath) -> Scalar:
        return self.alpha.get(v, 0)

    def values(self) -> list[Scalar]:
        """Weights in canonical vertex order."""
        return [self[v] for v in self.tree]

    def total(self) -> Scalar:
        return sum(self.values())


Weights = Union[SparseWeights, LevelProfile]


def kappa(weights: Weights, mean_x: Scalar) -> Weights:
    """kappa(v) = sum over y in the subtree of v of mean_x^d(v,y) alpha(y)."""
    if isinstance(weights, LevelProfile):
        b = weights.base
        out: list[Scalar] = [0] * len(weights.coeffs)
        acc: Scalar = 0
        for m in range(weights.depth, -1, -1):
            acc = weights.coeffs[m] + b * mean_x * acc
            out[m] = acc
        return LevelProfile(b, tuple(out))

    tree = weights.tree
    k: dict[VertexPath, Scalar] = {}
    for v in reversed(tree.paths):
        k[v] = weights[v] + mean_x * sum((k[c] for c in tree.children[v]), 0)
    return SparseWeights(tree, k)


def expand_profile(p: LevelProfile, depth: int, *, cap: int = EXPANSION_CAP) -> SparseWeights:
    if depth < p.depth:
        raise ConfigError(f"expansion depth {depth} is below the profile depth {p.depth}")
    tree = SparseTree.regular(p.base, depth, cap=cap)
    return SparseWeights(tree, {v: p.at(len(v)) for v in tree})


def profile_on_tree(p: LevelProfile, tree: SparseTree) -> SparseWeights:
    """alpha(v) = a_{d(v)} on an arbitrary tree."""
    return SparseWeights(tree, {v: p.at(len(v)) for v in tree})


def as_sparse(weights: Weights, tree: SparseTree | None = None) -> SparseWeights:
    if isinstance(weights, SparseWeights):
        return weights
    if tree is None:
        return expand_profile(weights, weights.depth)
    return profile_on_tree(weights, tree)


# --- the weights of the growth arguments ---------------------------------------


def alpha_n(b: int, n: int) -> LevelProfile:
    """b^-n on level n, zero elsewhere: Y_n as a weighted sum."""
    return LevelProfile(b, tuple([Fraction(0)] * n + [Fraction(1, b**n)]))


def alpha_ln(b: int, ell: int, n: int) -> LevelProfile:
    """b^(-2^ell k) on every level k <= n."""
    e = 2**ell
    return LevelProfile(b, tuple(Fraction(1, b ** (e * k)) for k in range(n + 1)))


def s_profile(b: int, n: int) -> LevelProfile:
    """b^-k on every level k <= n (the sum S_n of the totally critical argument)."""
    return alpha_ln(b, 0, n)


# --- text format: one `path<TAB>weight` line per vertex -------------------------


def format_path(v: VertexPath) -> str:
    return "/".join(str(i) for i in v)


def parse_path(text: str) -> VertexPath:
    text = text.strip()
    if not text:
        return ROOT
    return tuple(int(part) for part in text.split("/"))


def write_weights(weights: SparseWeights) -> str:
    lines = []
    for v in weights.tree:
        a = weights[v]
        value = str(a) if isinstance(a, Fraction) else repr(float(a))
        lines.append(f"{format_path(v)}\t{value}")
    return "\n".join(lines) + "\n"


def read_weights(text: str) -> SparseWeights:
    alpha: dict[VertexPath, Scalar] = {}
    raw: dict[VertexPath, int | float | Fraction] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        path_txt, tab, value_txt = line.partition("\t")
        if not tab:
            raise ConfigError(f"line {lineno}: expected 'path<TAB>weight'")
        try:
            v = parse_path(path_txt)
            raw[v] = parse_scalar(value_txt)
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"line {lineno}: {e}") from e
    if not raw:
        raise ConfigError("weights file lists no vertices")
    exact = all(isinstance(x, (int, Fraction)) for x in raw.values())
    for v, x in raw.items():
        alpha[v] = Fraction(x) if exact else float(x)
    return SparseWeights(SparseTree.from_paths(raw), alpha)
