from __future__ import annotations

import math
import unittest
from fractions import Fraction

import numpy as np
import pytest

from cascade_lab.errors import ConfigError, PreconditionError, TotallyCriticalError
from cascade_lab.moments import theta_moments
from cascade_lab.oracle import EnumeratedSpace, exact_moment_by_enumeration, random_instance
from cascade_lab.reduction import evaluate_bounds, max_steps, reduce, reduction_pipeline
from cascade_lab.tree import ROOT, LevelProfile, SparseTree, SparseWeights, alpha_n, expand_profile
from cascade_lab.weights import WeightDistribution, parse_distribution, totally_critical

HALVES = parse_distribution("atoms=1/2,3/2;probs=1/2,1/2")
SQRT3 = math.sqrt(3.0)
SQRT3_LAW = WeightDistribution((1 + SQRT3, 1 - 1 / SQRT3), (0.25, 0.75))


class TestReduce(unittest.TestCase):
    def test_alpha_n_profile(self):
        w = HALVES
        n = 4
        out = reduce(alpha_n(2, n), w)
        var = w.variance
        self.assertEqual(out.beta.at(0), 1 + var / 2)
        for m in range(1, n):
            self.assertEqual(out.beta.at(m), var * Fraction(1, 2 ** (1 + 2 * m)))
        # support shrinks by one level
        self.assertEqual(out.beta.depth, n - 1)

    def test_two_point_depth_one_example(self):
        out = reduce(LevelProfile(2, (1, 1)), totally_critical(2))
        self.assertEqual(out.beta.coeffs, (11,))
        self.assertEqual(out.squared_dist.atoms, (0, 4))

    def test_deterministic_x_leaves_only_root(self):
        x = WeightDistribution.relaxed((Fraction(3, 2),), (1,))
        t = SparseTree.regular(2, 2)
        w = SparseWeights(t, {v: Fraction(1, 1 + len(v)) for v in t})
        out = reduce(w, x)
        expected_root = sum(w[v] * Fraction(3, 2) ** len(v) for v in t) ** 2
        self.assertEqual(out.beta[ROOT], expected_root)
        self.assertTrue(all(out.beta[v] == 0 for v in t if v != ROOT))

    def test_profile_and_sparse_paths_agree(self):
        p = LevelProfile(3, (Fraction(1), Fraction(2, 3), Fraction(1, 5)))
        x = WeightDistribution.relaxed((0, 1, 3), (Fraction(1, 2), Fraction(1, 4), Fraction(1, 4)))
        by_profile = reduce(p, x).beta
        by_tree = reduce(expand_profile(p, 2), x).beta
        for v in by_tree.tree:
            assert by_tree[v] == by_profile.at(len(v))


def test_pipeline_exponents_and_ideal_ratios():
    stages = reduction_pipeline(2, HALVES, 6, 4.0)
    assert [s.exponent for s in stages] == [4.0, 2.0, 1.0]
    assert max_steps(4.0) == 2
    one = reduction_pipeline(2, HALVES, 6, 4.0, steps=1)
    assert [s.exponent for s in one] == [4.0, 2.0]
    for s in stages[1:]:
        assert all(0 < r < 100 for r in s.ratio_to_ideal[:-1])
    payload = stages[1].to_json()
    assert set(payload) >= {"stage", "exponent", "profile", "atoms", "probs", "ratio_to_ideal"}
    # stage 1 is compared against b^(-2k) on depths k <= n - 1
    assert payload["ideal_profile"] == [4.0**-k for k in range(6)]
    assert stages[0].to_json()["ideal_profile"] is None
    assert stages[2].to_json()["ideal_profile"] == [16.0**-k for k in range(5)]


def test_pipeline_refuses_totally_critical():
    with pytest.raises(TotallyCriticalError):
        reduction_pipeline(2, totally_critical(2), 6, 4.0)
    # a single step only needs the q=4 -> 2 reduction, which always applies
    assert len(reduction_pipeline(2, totally_critical(2), 6, 4.0, steps=1)) == 2


def test_pipeline_reports_regime_when_fourth_moment_is_too_large():
    # E[W^2] = 2 = b: the second stage needs E[W^2] < 2 and fails
    with pytest.raises(PreconditionError, match="critical"):
        reduction_pipeline(2, SQRT3_LAW, 6, 4.0)


def test_pipeline_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        reduction_pipeline(2, HALVES, 6, 1.5)
    with pytest.raises(ConfigError):
        reduction_pipeline(2, HALVES, 6, 4.0, steps=3)


def test_bounds_critical_profile():
    w = totally_critical(2)
    n = 10
    rep = evaluate_bounds(alpha_n(2, n), w, 1.5)
    assert rep.lower == pytest.approx(1.0, rel=1e-12)
    assert rep.upper_core == pytest.approx(n + 1, rel=1e-12)


def test_bounds_subcritical_lower_is_geometric():
    n = 5
    rep = evaluate_bounds(alpha_n(2, n), HALVES, 2.0)
    assert rep.lower == pytest.approx((1.25 / 2) ** n, rel=1e-12)


def test_bounds_root_only_deterministic():
    x = WeightDistribution.relaxed((1,), (1,))
    t = SparseTree.regular(2, 1)
    rep = evaluate_bounds(SparseWeights(t, {ROOT: 3}), x, 1.5)
    assert rep.lower == pytest.approx(3**1.5)
    assert rep.upper_core == pytest.approx(3**1.5)


def test_bounds_lower_only_above_two():
    rep = evaluate_bounds(alpha_n(2, 3), HALVES, 3.0)
    assert rep.upper_core is None
    with pytest.raises(ValueError):
        evaluate_bounds(alpha_n(2, 3), HALVES, 0.5)


@pytest.mark.parametrize("q", [2, 3, 4])
def test_lower_bound_below_exact_moment(q):
    for n in range(0, 6):
        exact = theta_moments(alpha_n(2, n), HALVES, q).values[q]
        lower = evaluate_bounds(alpha_n(2, n), HALVES, float(q)).lower
        assert lower <= float(exact) * (1 + 1e-10)


def test_reduction_ratio_stays_in_a_band():
    # E[Theta(W, alpha_n)^4] against E[Theta(W^2, beta_n)^2]; the band is an empirical check
    ratios = []
    for n in range(2, 9):
        out = reduce(alpha_n(2, n), HALVES)
        top = theta_moments(alpha_n(2, n), HALVES, 4).values[4]
        reduced = theta_moments(out.beta, out.squared_dist, 2).values[2]
        ratios.append(float(top / reduced))
    assert max(ratios) / min(ratios) < 10


if __name__ == "__main__":
    unittest.main()


@pytest.mark.parametrize("q", [1.25, 1.5, 2.0])
def test_lower_bound_below_enumerated_moment_on_random_instances(q):
    rng = np.random.default_rng(20240607)
    for _ in range(12):
        tree, dist, weights = random_instance(rng)
        space = EnumeratedSpace(tree, dist)
        brute = float(exact_moment_by_enumeration(space, weights, q))
        lower = evaluate_bounds(weights, dist, q).lower
        assert lower <= brute * (1 + 1e-12)
