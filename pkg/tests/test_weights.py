from __future__ import annotations

import math
import unittest
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade_lab.errors import (
    ConfigError,
    DistributionParseError,
    PreconditionError,
    TotallyCriticalError,
)
from cascade_lab.weights import (
    TOTALLY_CRITICAL,
    StructureFunction,
    WeightDistribution,
    classify,
    distribution_from_json,
    distribution_to_json,
    find_critical_exponent,
    format_distribution,
    is_totally_critical,
    kahane_peyriere_diagnostic,
    moment,
    parse_distribution,
    phi,
    phi_derivative_at_one,
    solve_critical_two_point,
    totally_critical,
    verify_strict_subcritical_interior,
)

SQRT3 = math.sqrt(3.0)
SQRT3_LAW = WeightDistribution((1 + SQRT3, 1 - 1 / SQRT3), (0.25, 0.75))
HALVES = parse_distribution("atoms=1/2,3/2;probs=1/2,1/2")
THREE_OR_ZERO = parse_distribution("atoms=0,3;probs=2/3,1/3")


class TestWeightDistribution(unittest.TestCase):
    def test_rational_law_stays_exact(self):
        d = parse_distribution("atoms=0,2;probs=1/2,1/2")
        self.assertTrue(d.exact)
        self.assertEqual(d.mean, 1)
        self.assertEqual(d.variance, 1)
        self.assertEqual(d.moment_exact(2), 2)

    def test_duplicate_atoms_are_merged(self):
        d = WeightDistribution((2, 0, 0), (Fraction(1, 2), Fraction(1, 4), Fraction(1, 4)))
        self.assertEqual(d.atoms, (0, 2))
        self.assertEqual(d.probs, (Fraction(1, 2), Fraction(1, 2)))

    def test_rejects_bad_laws(self):
        with self.assertRaises(ConfigError):
            WeightDistribution((0, 2), (Fraction(1, 2), Fraction(1, 3)))
        with self.assertRaises(ConfigError):
            WeightDistribution((-1, 3), (Fraction(1, 2), Fraction(1, 2)))
        with self.assertRaises(ConfigError):
            WeightDistribution((1, 2), (Fraction(1, 2), Fraction(1, 2)))

    def test_relaxed_allows_any_mean(self):
        d = WeightDistribution.relaxed((1, 2), (Fraction(1, 2), Fraction(1, 2)))
        self.assertEqual(d.mean, Fraction(3, 2))

    def test_power_is_law_of_x_to_the_p(self):
        d = totally_critical(2).power(2)
        self.assertEqual(d.atoms, (0, 4))
        self.assertEqual(d.mean, 2)


def test_totally_critical_phi_vanishes():
    sf = StructureFunction(2, totally_critical(2))
    for q in (1.5, 2.0, 3.7):
        assert phi(sf, q) == pytest.approx(0.0, abs=1e-12)
    assert find_critical_exponent(sf) is TOTALLY_CRITICAL


def test_sqrt3_law_is_critical_at_two():
    sf = StructureFunction(2, SQRT3_LAW)
    assert moment(SQRT3_LAW, 2) == pytest.approx(2.0, rel=1e-12)
    assert not is_totally_critical(SQRT3_LAW, 2)
    assert find_critical_exponent(sf) == pytest.approx(2.0, abs=1e-8)


def test_halves_law_has_no_critical_exponent():
    sf = StructureFunction(2, HALVES)
    assert phi(sf, 2) == pytest.approx(math.log2(1.25) - 1)
    assert find_critical_exponent(sf) is None
    report = classify(sf, 2)
    assert report.regime == "subcritical"
    assert report.q_crit is None


def test_two_atom_law_with_zero_has_linear_phi():
    # {3 w.p. 1/3, 0}: phi(q) = (q - 1)(log2 3 - 1) > 0 for every q > 1
    sf = StructureFunction(2, THREE_OR_ZERO)
    assert phi(sf, 2) == pytest.approx(math.log2(3) - 1)
    assert phi_derivative_at_one(sf) > 0
    assert find_critical_exponent(sf) is None
    assert classify(sf, 2).regime == "supercritical"


def test_kahane_peyriere_diagnostic():
    assert kahane_peyriere_diagnostic(StructureFunction(2, HALVES))["nondegenerate"]
    assert not kahane_peyriere_diagnostic(StructureFunction(2, THREE_OR_ZERO))["nondegenerate"]


def test_solve_critical_two_point_q4():
    d = solve_critical_two_point(2, 4.0, 0.5)
    assert float(d.mean) == pytest.approx(1.0, abs=1e-12)
    assert moment(d, 4) == pytest.approx(8.0, rel=1e-9)
    assert moment(d, 2) < 2.0
    assert not is_totally_critical(d, 2)
    assert find_critical_exponent(StructureFunction(2, d)) == pytest.approx(4.0, abs=1e-6)


def test_strict_interior_check():
    sf = StructureFunction(2, SQRT3_LAW)
    assert verify_strict_subcritical_interior(sf, 2.0, [1.25, 1.5, 1.75])
    with pytest.raises(TotallyCriticalError):
        verify_strict_subcritical_interior(StructureFunction(2, totally_critical(2)), 2.0, [1.5])
    with pytest.raises(PreconditionError):
        verify_strict_subcritical_interior(StructureFunction(2, THREE_OR_ZERO), 2.0, [1.5])


def test_parse_errors_carry_position():
    with pytest.raises(DistributionParseError) as exc:
        parse_distribution("atoms=0,x;probs=1/2,1/2")
    assert exc.value.position == 8
    with pytest.raises(DistributionParseError):
        parse_distribution("atoms=0,2")
    with pytest.raises(DistributionParseError):
        parse_distribution("atoms=0,2;probs=1/2")


def test_json_forms():
    d = distribution_from_json({"atoms": [0, 2], "probs": ["1/2", "1/2"]})
    assert d == totally_critical(2)
    assert distribution_to_json(d) == {"atoms": ["0", "2"], "probs": ["1/2", "1/2"]}
    w = distribution_from_json({"critical_two_point": {"b": 2, "q": 4, "low_atom": 0.5}})
    assert moment(w, 4) == pytest.approx(8.0, rel=1e-9)
    with pytest.raises(ConfigError):
        distribution_from_json(["atoms"])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.integers(min_value=0, max_value=6), min_size=1, max_size=4),
    st.lists(st.integers(min_value=1, max_value=5), min_size=4, max_size=4),
)
def test_format_then_parse_preserves_rational_laws(atoms, weights):
    raw = weights[: len(atoms)]
    probs = [Fraction(w, sum(raw)) for w in raw]
    d = WeightDistribution.relaxed(atoms, probs)
    assert parse_distribution(format_distribution(d), unit_mean=False) == d


def _two_point(low: float, high: float) -> WeightDistribution:
    p = (1 - low) / (high - low)
    return WeightDistribution((low, high), (1 - p, p))


@settings(max_examples=50, deadline=None)
@given(
    st.floats(min_value=0.05, max_value=0.95),
    st.floats(min_value=0.1, max_value=6.0),
    st.floats(min_value=0.1, max_value=6.0),
)
def test_phi_is_convex_and_zero_at_one(low, q1, q2):
    sf = StructureFunction(2, _two_point(low, 2.0))
    assert phi(sf, 1.0) == pytest.approx(0.0, abs=1e-12)
    for lam in (0.25, 0.5, 0.75):
        mid = lam * q1 + (1 - lam) * q2
        assert phi(sf, mid) <= lam * phi(sf, q1) + (1 - lam) * phi(sf, q2) + 1e-10


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([2, 3]), st.integers(0, 95), st.integers(105, 400))
def test_only_totally_critical_laws_have_two_roots(b, low_pct, high_pct):
    d = _two_point(low_pct / 100, high_pct / 100)
    sf = StructureFunction(b, d)
    values = [phi(sf, 1 + k / 4) for k in range(1, 29)]
    zeros = sum(abs(v) <= 1e-9 for v in values)
    signs = [v > 0 for v in values if abs(v) > 1e-9]
    changes = sum(a != c for a, c in zip(signs, signs[1:]))
    if is_totally_critical(d, b):
        assert zeros == len(values)
    else:
        assert zeros <= 1
        assert changes <= 1


@pytest.mark.parametrize("b", [2, 3])
@pytest.mark.parametrize("q", [1.5, 2, 3, 4.7, 8])
def test_totally_critical_moments_are_powers_of_b(b, q):
    assert moment(totally_critical(b), q) == pytest.approx(b ** (q - 1), rel=1e-12)


if __name__ == "__main__":
    unittest.main()
