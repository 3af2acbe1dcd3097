"""Monte Carlo estimates of E[Y_n^q] and E[Theta^q] at any q > 0.

Sample i draws from its own Philox stream keyed by (seed, i), so an
estimate depends only on (seed, samples, batches) and never on how samples
are spread over threads. Within a sample, weights are drawn level by level
in canonical order; only vertices with a non-zero running product are
expanded, since everything below a zero contributes nothing.
"""

from __future__ import annotations

import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.stats import t as student_t

from cascade_lab.errors import ConfigError, ResourceLimitError
from cascade_lab.tree import LevelProfile, alpha_n
from cascade_lab.utils import format_float, log_warn
from cascade_lab.weights import WeightDistribution, distribution_to_json

DEFAULT_BATCHES = 32
DEFAULT_NODE_CAP = 2**20
HEAVY_TAIL_SHARE = 0.1

CSV_HEADER = "n,q,mean,stderr,ci_lo,ci_hi,max_share,samples,seed"


@dataclass(frozen=True)
class McConfig:
    """One estimation run. `profile` replaces alpha_n when a general Theta is wanted."""

    seed: int
    samples: int
    n: int
    q: float
    b: int
    dist: WeightDistribution
    batches: int = DEFAULT_BATCHES
    profile: LevelProfile | None = None
    node_cap: int = DEFAULT_NODE_CAP

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.batches < 2:
            raise ConfigError(f"batches must be >= 2, got {self.batches}")
        if self.samples < self.batches:
            raise ConfigError(f"samples ({self.samples}) must be at least batches ({self.batches})")
        if self.q <= 0:
            raise ConfigError(f"q must be > 0, got {self.q}")
        if self.n < 0:
            raise ConfigError(f"n must be >= 0, got {self.n}")
        if self.b < 2:
            raise ConfigError(f"branching number must be >= 2, got {self.b}")
        depth = self.weights.depth
        if self.weights.base**depth > self.node_cap:
            raise ResourceLimitError(
                f"b^n = {self.weights.base}^{depth} nodes per sample exceed the cap {self.node_cap}"
            )

    @property
    def weights(self) -> LevelProfile:
        return self.profile if self.profile is not None else alpha_n(self.b, self.n)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "seed": self.seed,
            "samples": self.samples,
            "batches": self.batches,
            "n": self.n,
            "q": self.q,
            "b": self.b,
            "dist": distribution_to_json(self.dist),
            "node_cap": self.node_cap,
        }
        if self.profile is not None:
            out["profile"] = [float(c) for c in self.profile.coeffs]
        return out


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    ci95: tuple[float, float]
    max_share: float
    samples_used: int

    def to_json(self) -> dict[str, Any]:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "ci95": list(self.ci95),
            "max_share": self.max_share,
            "samples": self.samples_used,
        }


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """The counter-based stream of sample `index`."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


class _Sampler:
    def __init__(self, dist: WeightDistribution) -> None:
        fdist = dist.as_float() if dist.exact else dist
        self.atoms = np.asarray(fdist.atoms, dtype=float)
        cum = np.cumsum(np.asarray(fdist.probs, dtype=float))
        cum[-1] = 1.0
        self.cum = cum

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = np.searchsorted(self.cum, rng.random(size), side="right")
        return self.atoms[np.minimum(idx, len(self.atoms) - 1)]


def _sample(profile: LevelProfile, sampler: _Sampler, rng: np.random.Generator) -> float:
    b = profile.base
    prods = np.ones(1)
    parts = [float(profile.coeffs[0])]
    for m in range(1, profile.depth + 1):
        if prods.size == 0:
            break
        prods = np.repeat(prods, b) * sampler.draw(rng, prods.size * b)
        prods = prods[prods != 0.0]
        a = profile.coeffs[m]
        if a != 0:
            parts.append(float(a) * math.fsum(prods))
    return math.fsum(parts)


def sample_theta(
    profile: LevelProfile, dist: WeightDistribution, rng: np.random.Generator
) -> float:
    """One realization of Theta(W, profile) on the b-adic tree."""
    return _sample(profile, _Sampler(dist), rng)


def sample_Yn(b: int, dist: WeightDistribution, n: int, rng: np.random.Generator) -> float:
    """One realization of Y_n = b^-n * sum over level n of the path products."""
    return sample_theta(alpha_n(b, n), dist, rng)


def _batch_means(values: np.ndarray, batches: int) -> np.ndarray:
    return np.array([math.fsum(chunk) / chunk.size for chunk in np.array_split(values, batches)])


def estimate_moment(cfg: McConfig, *, workers: int = 1, err=None) -> McEstimate:
    """Sample mean of Theta^q with a batch-means 95% interval."""
    err = sys.stderr if err is None else err
    profile = cfg.weights
    sampler = _Sampler(cfg.dist)
    values = np.empty(cfg.samples)

    def run(indices: np.ndarray) -> None:
        for i in indices:
            values[i] = _sample(profile, sampler, sample_stream(cfg.seed, int(i))) ** cfg.q

    chunks = np.array_split(np.arange(cfg.samples), max(1, workers))
    if workers <= 1:
        run(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, chunks))

    total = math.fsum(values)
    mean = total / cfg.samples
    means = _batch_means(values, cfg.batches)
    stderr = float(np.std(means, ddof=1) / math.sqrt(cfg.batches))
    half = float(student_t.ppf(0.975, df=cfg.batches - 1)) * stderr
    max_share = float(values.max() / total) if total > 0 else 0.0
    if max_share > HEAVY_TAIL_SHARE:
        log_warn(
            f"n={cfg.n} q={cfg.q}: one sample carries {max_share:.1%} of the total; "
            "the interval is unreliable (heavy tail)",
            err=err,
        )
    return McEstimate(
        mean=mean,
        stderr=stderr,
        ci95=(mean - half, mean + half),
        max_share=max_share,
        samples_used=cfg.samples,
    )


def csv_row(cfg: McConfig, est: McEstimate) -> str:
    fields = [
        str(cfg.n),
        format_float(cfg.q),
        format_float(est.mean),
        format_float(est.stderr),
        format_float(est.ci95[0]),
        format_float(est.ci95[1]),
        format_float(est.max_share),
        str(est.samples_used),
        str(cfg.seed),
    ]
    return ",".join(fields)
