import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

import dharm
from dharm import families, measures
from dharm.errors import ConvergenceUndecided, DomainError, InconsistentSpec

from helpers import random_tabulated_spec, rng_from

INF = float("inf")


def lebesgue_spec(bounds=(0.0, 2.0), e=1.0, density=None):
    density = density or (lambda x: np.ones_like(np.asarray(x, dtype=float)))
    scale = dharm.ScaleFunction.from_callable(
        lambda x: np.asarray(x, dtype=float),
        lambda x: np.ones_like(np.asarray(x, dtype=float)))
    speed = dharm.SpeedMeasure.from_density(density)
    return dharm.DiffusionSpec(dharm.Interval(*bounds), scale, speed, e)


class TestInterval:
    def test_order_enforced(self):
        with pytest.raises(InconsistentSpec):
            dharm.Interval(1.0, 1.0)

    def test_infinite_endpoint_cannot_be_included(self):
        with pytest.raises(InconsistentSpec):
            dharm.Interval(0.0, INF, includes_r=True)

    def test_contains(self):
        iv = dharm.Interval(0.0, 1.0, includes_l=True)
        assert iv.contains(0.0) and not iv.contains(1.0)
        assert iv.contains(0.5)


class TestSpecValidation:
    def test_atom_at_reference_rejected(self):
        with pytest.raises(InconsistentSpec):
            families.brownian((0.0, 1.0), (True, True), e=0.25,
                              atoms=[(0.25, 0.5)])

    def test_atom_outside_state_space_rejected(self):
        with pytest.raises(InconsistentSpec):
            families.brownian((0.0, 1.0), (False, True), e=0.5,
                              atoms=[(0.0, 0.5)])

    def test_scale_table_must_increase(self):
        with pytest.raises(InconsistentSpec):
            dharm.ScaleFunction.from_table([0, 1, 2], [0, 1, 0.5])


class TestStieltjesIntegral:
    def test_constant_against_lebesgue(self):
        spec = families.brownian((0.0, INF), e=1.0)
        val = measures.stieltjes_integral(spec, 1.0, "m", 0.25, 1.0)
        assert val == pytest.approx(0.75, abs=1e-12)

    def test_empty_interval(self):
        spec = families.brownian((0.0, INF), e=1.0)
        assert measures.stieltjes_integral(spec, 1.0, "ds", 0.5, 0.5) == 0.0

    def test_linear_against_quadratic_density(self):
        spec = lebesgue_spec(density=lambda x: np.asarray(x, dtype=float) ** 2)
        val = measures.stieltjes_integral(
            spec, lambda x: np.asarray(x, dtype=float), "m", 0.0, 1.0)
        # oracle: exact antiderivative x^4/4
        assert val == pytest.approx(0.25, abs=1e-10)

    def test_reversed_bounds_negate(self):
        spec = families.brownian((0.0, INF), e=1.0)
        a = measures.stieltjes_integral(spec, 1.0, "m", 0.25, 1.0)
        b = measures.stieltjes_integral(spec, 1.0, "m", 1.0, 0.25)
        assert a == -b

    def test_out_of_interval_rejected(self):
        spec = families.brownian((0.0, 1.0), e=0.5)
        with pytest.raises(DomainError):
            measures.stieltjes_integral(spec, 1.0, "m", -0.5, 0.5)

    def test_divergent_raises_nonfinite(self):
        spec = lebesgue_spec(density=lambda x: np.asarray(x, dtype=float) ** -2.0)
        with pytest.raises(measures.NonFinite):
            measures.stieltjes_integral(spec, 1.0, "m", 0.0, 1.0)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1),
           pts=st.tuples(st.floats(0.02, 0.98), st.floats(0.02, 0.98),
                         st.floats(0.02, 0.98)))
    def test_additivity(self, seed, pts):
        spec = random_tabulated_spec(rng_from(seed))
        a, b, c = sorted(pts)
        whole = measures.stieltjes_integral(spec, 1.0, "m", a, c)
        parts = (measures.stieltjes_integral(spec, 1.0, "m", a, b)
                 + measures.stieltjes_integral(spec, 1.0, "m", b, c))
        assert whole == pytest.approx(parts, rel=1e-12, abs=1e-12)

    def test_atom_mass_recovered_in_limit(self):
        spec = families.brownian((0.0, 1.0), (True, True), e=0.4,
                                 atoms=[(0.7, 0.3)])
        full = measures.stieltjes_integral(spec, 1.0, "m", 0.2, 0.7)
        for eps in (1e-3, 1e-6, 1e-9):
            trimmed = measures.stieltjes_integral(spec, 1.0, "m", 0.2, 0.7 - eps)
            assert full - trimmed == pytest.approx(0.3 + eps, abs=1e-11)


class TestSigmaMu:
    def test_brownian_half_line(self):
        spec = families.brownian((0.0, INF), e=1.0)
        # oracle: integral of (1 - xi) over (0, 1] = 1/2
        assert measures.sigma(spec, 0.0) == pytest.approx(0.5, abs=1e-9)
        assert measures.mu(spec, 0.0) == pytest.approx(0.5, abs=1e-9)
        assert measures.sigma(spec, 1.0) == 0.0
        assert measures.mu(spec, 1.0) == 0.0
        assert measures.sigma(spec, INF) == INF
        assert measures.mu(spec, INF) == INF

    def test_radial_dimension_three(self):
        spec = families.bessel(3.0)
        # oracle: integral of (xi - xi^2) over (0, 1] = 1/6
        assert measures.mu(spec, 0.0) == pytest.approx(1 / 6, abs=1e-9)
        assert measures.sigma(spec, 0.0) == INF

    def test_sign_and_monotonicity(self):
        spec = random_tabulated_spec(rng_from(7))
        xs = np.linspace(0.05, 0.95, 17)
        vals = [measures.sigma(spec, float(x)) for x in xs]
        assert all(v >= 0 for v in vals)
        left = [v for x, v in zip(xs, vals) if x < spec.e]
        right = [v for x, v in zip(xs, vals) if x > spec.e]
        assert all(a >= b - 1e-12 for a, b in zip(left, left[1:]))
        assert all(a <= b + 1e-12 for a, b in zip(right, right[1:]))

    def test_interior_atom_enters_iterated_integrals(self):
        spec = families.brownian((0.0, 1.0), (True, True), e=0.4,
                                 atoms=[(0.7, 0.3)])
        # hand integration: sigma adds mass-to-the-right weight, mu the
        # scale distance of the atom
        assert measures.sigma(spec, 0.9) == pytest.approx(
            0.5 * 0.5 ** 2 + 0.3 * (0.9 - 0.7), abs=1e-10)
        assert measures.mu(spec, 0.9) == pytest.approx(
            0.5 * 0.5 ** 2 + 0.3 * (0.7 - 0.4), abs=1e-10)


class TestLimitCertification:
    def test_continuous_extension(self):
        lim = measures.limit_at_boundary(lambda x: x, "r",
                                         dharm.Interval(0.0, 1.0))
        assert lim.finite and lim.value == pytest.approx(1.0, abs=1e-8)

    def test_tangent_scale_diverges(self):
        lim = measures.limit_at_boundary(
            lambda x: math.tan(math.pi * x / 2), "r", dharm.Interval(-1.0, 1.0))
        assert not lim.finite

    def test_inverse_square_mass_diverges(self):
        spec = lebesgue_spec(density=lambda x: np.asarray(x, dtype=float) ** -2.0)
        lim = measures.limit_at_boundary(
            lambda x: spec.m_mass(x, 1.0), "l", spec.interval)
        assert not lim.finite

    def test_logarithmic_divergence_detected(self):
        spec = lebesgue_spec(density=lambda x: np.asarray(x, dtype=float) ** -1.0)
        lim = measures.limit_at_boundary(
            lambda x: spec.m_mass(x, 1.0), "l", spec.interval)
        assert not lim.finite

    def test_near_critical_tail_stays_undecided(self):
        # the tail closes like x^0.06 per step: neither certificate fires
        spec = lebesgue_spec(density=lambda x: np.asarray(x, dtype=float) ** -1.94)
        with pytest.raises(ConvergenceUndecided):
            measures.sigma(spec, 0.0)

    def test_scale_limits_for_drift(self):
        up = families.brownian_drift(1.0)
        assert measures.scale_limit(up, "l") == -INF
        assert measures.scale_limit(up, "r") == pytest.approx(0.5)
        down = families.brownian_drift(-1.0)
        assert measures.scale_limit(down, "l") == pytest.approx(-0.5)
        assert measures.scale_limit(down, "r") == INF


class TestScaleInverse:
    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_tabulated_roundtrip(self, seed):
        spec = random_tabulated_spec(rng_from(seed))
        xs = np.linspace(0.01, 0.99, 37)
        s_vals = np.asarray(spec.s(xs))
        back = spec.scale.inverse(s_vals, 0.0, 1.0)
        assert np.max(np.abs(back - xs)) < 1e-10

    def test_newton_fallback_roundtrip(self):
        from helpers import random_smooth_spec
        spec = random_smooth_spec(rng_from(3))
        xs = np.linspace(0.01, 0.99, 211)
        back = spec.scale.inverse(np.asarray(spec.s(xs)), 0.0, 1.0)
        assert np.max(np.abs(back - xs)) < 1e-9
