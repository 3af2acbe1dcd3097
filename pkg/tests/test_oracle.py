from __future__ import annotations

import math
import unittest
from fractions import Fraction

import numpy as np
import pytest

from cascade_lab.errors import ResourceLimitError
from cascade_lab.moments import theta_moments
from cascade_lab.oracle import (
    EnumeratedSpace,
    check_identities,
    exact_moment_by_enumeration,
    martingale_decomposition,
    random_instance,
    theta_value,
)
from cascade_lab.reduction import reduce
from cascade_lab.tree import (
    ROOT,
    LevelProfile,
    SparseTree,
    SparseWeights,
    alpha_n,
    as_sparse,
    kappa,
)
from cascade_lab.weights import WeightDistribution, totally_critical

TC2 = totally_critical(2)


def _y1_space() -> EnumeratedSpace:
    return EnumeratedSpace(SparseTree.regular(2, 1), TC2)


class TestEnumeratedSpace(unittest.TestCase):
    def test_outcome_count_and_probabilities(self):
        space = EnumeratedSpace(SparseTree.regular(2, 2), TC2)
        self.assertEqual(space.outcome_count, 2**6)
        total = sum(p for _, p in space.outcomes())
        self.assertEqual(total, 1)

    def test_outcome_decoding_is_mixed_radix(self):
        space = _y1_space()
        self.assertEqual(space.outcome_at(0), (0, 0))
        self.assertEqual(space.outcome_at(1), (0, 1))
        self.assertEqual(space.outcome_at(3), (1, 1))

    def test_cap(self):
        with self.assertRaises(ResourceLimitError):
            EnumeratedSpace(SparseTree.regular(2, 3), TC2, cap=100)


def test_theta_value_examples():
    t = SparseTree.regular(2, 2)
    ones = WeightDistribution((1,), (1,))
    space = EnumeratedSpace(t, ones)
    w = SparseWeights(t, {v: 1 for v in t})
    assert theta_value(space, w, space.outcome_at(0)) == 7
    root_only = SparseWeights(t, {ROOT: Fraction(5, 2)})
    assert theta_value(space, root_only, space.outcome_at(0)) == Fraction(5, 2)

    depth1 = EnumeratedSpace(SparseTree.regular(2, 1), TC2)
    w1 = SparseWeights(depth1.tree, {v: 1 for v in depth1.tree})
    # atoms are (0, 2): outcome (1, 0) puts X = 2 on the first leaf
    assert theta_value(depth1, w1, (1, 0)) == 3


def test_y1_moments_by_enumeration():
    space = _y1_space()
    y1 = alpha_n(2, 1)
    assert exact_moment_by_enumeration(space, y1, 1) == 1
    assert exact_moment_by_enumeration(space, y1, 2) == Fraction(3, 2)
    assert exact_moment_by_enumeration(space, y1, 2.5) == pytest.approx(0.5 + 0.25 * 2**2.5)


def test_first_moment_is_kappa_at_root():
    rng = np.random.default_rng(7)
    for _ in range(10):
        tree, dist, w = random_instance(rng)
        space = EnumeratedSpace(tree, dist)
        assert exact_moment_by_enumeration(space, w, 1) == kappa(w, dist.mean)[ROOT]


def test_enumeration_is_partition_invariant():
    space = EnumeratedSpace(SparseTree.regular(2, 2), TC2.as_float())
    w = as_sparse(LevelProfile(2, (0.5, 0.25, 0.125)), space.tree)
    one = exact_moment_by_enumeration(space, w, 1.7, workers=1)
    many = exact_moment_by_enumeration(space, w, 1.7, workers=4)
    assert one == many


def test_martingale_structure():
    space = EnumeratedSpace(SparseTree.regular(2, 2), TC2)
    w = as_sparse(LevelProfile(2, (1, 1, 1)), space.tree)
    dec = martingale_decomposition(space, w, extra_levels=2)
    expected_m0 = sum(w[v] * TC2.mean ** len(v) for v in space.tree)
    assert all(m0 == expected_m0 for m0 in dec.martingale[0])
    for m in (3, 4):
        assert all(d == 0 for d in dec.increments[m])
    for i, final in enumerate(dec.final):
        assert sum(dec.increments[m][i] for m in range(dec.depth + 1)) == final


def test_conditional_square_on_the_worked_example():
    # b=2 depth 1, alpha = 1 everywhere, X = W_TC: E[s(M)^2] = E[Theta(X^2, beta)] with beta0 = 11
    space = _y1_space()
    w = as_sparse(LevelProfile(2, (1, 1)), space.tree)
    beta = reduce(w, TC2).beta
    assert beta[ROOT] == 11
    dec = martingale_decomposition(space, w)
    for outcome, s2 in zip(dec.outcomes, dec.square_function):
        assert s2 == theta_value(space, beta, outcome, power=2)
    second = exact_moment_by_enumeration(space, w, 2)
    assert second == 11


def test_identity_suite_exact():
    rng = np.random.default_rng(20240601)
    for _ in range(50):
        tree, dist, w = random_instance(rng, rational=True)
        report = check_identities(EnumeratedSpace(tree, dist), w)
        assert report.exact
        assert report.passed, report.to_json()
        assert report.square_function_gap == 0.0
        assert report.increment_gap == 0.0
        assert report.orthogonality == 0.0


def test_identity_suite_float():
    rng = np.random.default_rng(11)
    for _ in range(20):
        tree, dist, w = random_instance(rng, rational=False)
        report = check_identities(EnumeratedSpace(tree, dist), w)
        assert not report.exact
        assert report.passed, report.to_json()


def test_enumeration_agrees_with_moment_recursion():
    rng = np.random.default_rng(3)
    for _ in range(20):
        tree, dist, w = random_instance(rng, rational=True)
        space = EnumeratedSpace(tree, dist)
        mv = theta_moments(w, dist, 4)
        for k in range(1, 5):
            assert exact_moment_by_enumeration(space, w, k) == mv.values[k]


def test_float_relative_agreement_with_recursion():
    rng = np.random.default_rng(5)
    for _ in range(10):
        tree, dist, w = random_instance(rng, rational=False)
        space = EnumeratedSpace(tree, dist)
        mv = theta_moments(w, dist, 3)
        for k in range(1, 4):
            brute = exact_moment_by_enumeration(space, w, k)
            assert math.isclose(brute, mv.values[k], rel_tol=1e-10, abs_tol=1e-12)


if __name__ == "__main__":
    unittest.main()
