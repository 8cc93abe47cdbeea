import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

import dharm
from dharm import boundary, families, measures
from dharm.boundary import BoundaryClass, Role
from dharm.errors import InconsistentSpec

from helpers import (expected_class_at_zero, power_law_spec,
                     random_tabulated_spec, rng_from)

INF = float("inf")

FAMILY_MATRIX = [
    # spec factory, expected class/role at l, expected class/role at r
    (lambda: families.brownian((0.0, INF), e=1.0),
     ("regular", "absorbing"), ("natural", "none")),
    (lambda: families.brownian((0.0, 1.0), (True, True)),
     ("regular", "reflecting"), ("regular", "reflecting")),
    (lambda: families.brownian((0.0, 1.0)),
     ("regular", "absorbing"), ("regular", "absorbing")),
    (lambda: families.bessel(1.5),
     ("regular", "absorbing"), ("natural", "none")),
    (lambda: families.bessel(2.0),
     ("entrance", "none"), ("natural", "none")),
    (lambda: families.bessel(3.0),
     ("entrance", "none"), ("natural", "none")),
    (lambda: families.ou(1.0),
     ("natural", "none"), ("natural", "none")),
    (lambda: families.brownian_drift(1.0),
     ("natural", "none"), ("natural", "none")),
    (lambda: families.brownian_drift(-1.0),
     ("natural", "none"), ("natural", "none")),
]


class TestClassification:
    @pytest.mark.parametrize("factory,exp_l,exp_r", FAMILY_MATRIX)
    def test_family_matrix(self, factory, exp_l, exp_r):
        spec = factory()
        rep = boundary.classify(spec)
        assert (rep.left.klass.value, rep.left.role.value) == exp_l
        assert (rep.right.klass.value, rep.right.role.value) == exp_r

    @pytest.mark.parametrize("p", [-2.5, -1.5, -1.0, -0.5, 0.0, 1.0])
    @pytest.mark.parametrize("q", [-2.5, -1.5, -1.0, -0.5, 0.0, 1.0])
    def test_power_law_against_exponent_arithmetic(self, p, q):
        spec = power_law_spec(p, q)
        got = boundary.classify_endpoint(spec, "l")
        assert got.value == expected_class_at_zero(p, q)

    def test_classification_cross_checked_by_quadrature(self):
        # independent oracle for the half-line family: exact antiderivatives
        spec = families.brownian((0.0, INF), e=1.0)
        from scipy.integrate import quad
        sig, _ = quad(lambda xi: (1.0 - xi), 0.0, 1.0)
        assert measures.sigma(spec, 0.0) == pytest.approx(sig, abs=1e-8)
        assert boundary.classify_endpoint(spec, "l") is BoundaryClass.REGULAR


class TestRoles:
    def test_absorbing_when_excluded(self):
        spec = families.brownian((0.0, INF), e=1.0)
        assert boundary.endpoint_role(spec, "l") is Role.ABSORBING

    def test_reflecting_when_included(self):
        spec = families.brownian((0.0, INF), (True, False), e=1.0)
        assert boundary.endpoint_role(spec, "l") is Role.REFLECTING

    def test_none_for_natural(self):
        spec = families.brownian((0.0, INF), e=1.0)
        assert boundary.endpoint_role(spec, "r") is Role.NONE


class TestEffectiveInterval:
    def test_both_reflecting(self):
        ie = boundary.effective_interval(families.brownian((0.0, 1.0), (True, True)))
        assert ie.includes_l and ie.includes_r

    def test_both_absorbing(self):
        ie = boundary.effective_interval(families.brownian((0.0, 1.0)))
        assert not ie.includes_l and not ie.includes_r

    def test_natural_pair(self):
        ie = boundary.effective_interval(families.ou(1.0))
        assert not ie.includes_l and not ie.includes_r
        assert ie.l == -INF and ie.r == INF

    def test_contains_interior_always(self):
        spec = random_tabulated_spec(rng_from(11))
        ie = boundary.effective_interval(spec)
        assert (ie.l, ie.r) == (spec.interval.l, spec.interval.r)


class TestApproachability:
    def test_identity_scale(self):
        assert boundary.is_approachable(families.brownian((0.0, 1.0)), "r")

    def test_tangent_scale(self):
        scale = dharm.ScaleFunction.from_callable(
            lambda x: np.tan(np.pi * np.asarray(x, dtype=float) / 2),
            lambda x: (np.pi / 2) / np.cos(np.pi * np.asarray(x, dtype=float) / 2) ** 2)
        speed = dharm.SpeedMeasure.from_density(
            lambda x: np.ones_like(np.asarray(x, dtype=float)),
            cumulative=lambda x: x)
        spec = dharm.DiffusionSpec(dharm.Interval(-1.0, 1.0), scale, speed, 0.0)
        assert not boundary.is_approachable(spec, "r")

    def test_radial_origin(self):
        assert not boundary.is_approachable(families.bessel(3.0), "l")


class TestValidation:
    def test_boundary_atom_with_finite_scale_passes(self):
        spec = families.brownian((0.0, 1.0), (True, True), e=0.5,
                                 atoms=[(1.0, 0.3)])
        assert boundary.validate_spec(spec).ok

    def test_admissibility_violation_detected(self):
        # scale diverging at an included endpoint that carries mass
        scale = dharm.ScaleFunction.from_callable(
            lambda x: np.tan(np.pi * np.asarray(x, dtype=float) / 2),
            lambda x: (np.pi / 2) / np.cos(np.pi * np.asarray(x, dtype=float) / 2) ** 2)
        speed = dharm.SpeedMeasure.from_density(
            lambda x: np.ones_like(np.asarray(x, dtype=float)),
            cumulative=lambda x: x, atoms=[(1.0, 0.4)])
        spec = dharm.DiffusionSpec(
            dharm.Interval(-1.0, 1.0, includes_r=True), scale, speed, 0.0)
        report = boundary.validate_spec(spec)
        assert not report.ok
        assert report.first_failure == "scale-admissibility"

    def test_support_gap_detected(self):
        with pytest.raises(InconsistentSpec):
            dharm.SpeedMeasure.from_table([0.0, 0.5, 1.0], [0.0, 0.5, 0.5])

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_random_tabulated_specs_validate_and_classify(self, seed):
        spec = random_tabulated_spec(rng_from(seed))
        assert boundary.validate_spec(spec).ok
        rep = boundary.classify(spec)
        # bounded tables keep both iterated integrals finite
        assert rep.left.klass is BoundaryClass.REGULAR
        assert rep.right.klass is BoundaryClass.REGULAR
        for ep, side in ((rep.left, "l"), (rep.right, "r")):
            included = spec.interval.includes(side)
            assert ep.role is (Role.REFLECTING if included else Role.ABSORBING)


class TestRemarkConsistency:
    @pytest.mark.parametrize("factory,_l,_r", FAMILY_MATRIX)
    def test_class_implies_scale_and_mass_finiteness(self, factory, _l, _r):
        spec = factory()
        rep = boundary.classify(spec)
        for ep in (rep.left, rep.right):
            if ep.klass is BoundaryClass.REGULAR:
                assert ep.approachable and ep.speed_finite_near
            elif ep.klass is BoundaryClass.EXIT:
                assert ep.approachable and not ep.speed_finite_near
            elif ep.klass is BoundaryClass.ENTRANCE:
                assert not ep.approachable and ep.speed_finite_near
            else:
                assert not (ep.approachable and ep.speed_finite_near)

    def test_report_serializes(self):
        rep = boundary.classify(families.brownian((0.0, INF), e=1.0))
        doc = rep.to_dict()
        sides = {d["side"]: d for d in doc["endpoints"]}
        assert sides["l"]["class"] == "regular"
        assert sides["r"]["sigma"] == "inf"
        assert sides["l"]["approachable"] is True
