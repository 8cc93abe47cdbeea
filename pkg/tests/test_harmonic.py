import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from dharm import families, harmonic, measures
from dharm.errors import DomainError
from dharm.gridfn import GridFunction
from dharm.grids import GridSettings, build_grid
from dharm.harmonic import (BumpTestFunction, _picard_columns, basis_header,
                            basis_to_csv, energy_norm, energy_product,
                            harmonic_space, harmonic_space_zero,
                            in_form_domain, orthogonality_residual,
                            picard_series, residual_weak_identity,
                            stieltjes_ivp_march, u_pair)

from helpers import brownian_u, random_smooth_spec, random_tabulated_spec, rng_from

INF = float("inf")


@pytest.fixture(scope="module")
def cosh_setup():
    spec = families.brownian((0.0, 1.0), (False, True), e=0.5)
    basis = harmonic_space(spec, 0.5)
    return spec, basis


class TestFundamentalSolution:
    def test_normalization_at_reference(self, cosh_setup):
        spec, basis = cosh_setup
        g = basis.grid
        assert basis.u.values[g.i_e] == 1.0
        assert basis.u.ds_derivative[g.i_e] == 0.0

    def test_cosh_closed_form(self, cosh_setup):
        spec, basis = cosh_setup
        # independent oracle: initial-value integration of the closed ODE
        from scipy.integrate import solve_ivp
        sol = solve_ivp(lambda t, y: [y[1], 2 * 0.5 * y[0]], (0.5, 1.0),
                        [1.0, 0.0], rtol=1e-11, atol=1e-12)
        assert sol.y[0, -1] == pytest.approx(math.cosh(0.5), abs=1e-8)
        assert basis.u.values[-1] == pytest.approx(math.cosh(0.5), abs=1e-9)
        u_cf, _ = brownian_u(0.5, 0.5)
        err = np.max(np.abs(basis.u.values - u_cf(basis.grid.x)))
        assert err < 1e-9

    def test_series_rejects_zero_alpha(self):
        spec = families.brownian((0.0, 1.0), (False, True), e=0.5)
        with pytest.raises(DomainError):
            picard_series(spec, 0.0)

    def test_march_agrees_with_series(self, cosh_setup):
        spec, basis = cosh_setup
        vals, _ = stieltjes_ivp_march(spec, 0.5, grid=basis.grid)
        rel = np.max(np.abs(vals - basis.u.values)
                     / np.maximum(1.0, np.abs(basis.u.values)))
        assert rel < 1e-6

    @settings(max_examples=12, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1),
           alpha=st.sampled_from([0.1, 1.0, 5.0]))
    def test_envelope_on_random_tabulated(self, seed, alpha):
        spec = random_tabulated_spec(rng_from(seed))
        grid = build_grid(spec, alpha)
        u, vR, vL, sig, _ = _picard_columns(grid, alpha)
        lower = 1.0 + 2.0 * alpha * sig
        upper = np.exp(2.0 * alpha * sig)
        assert np.max(lower - u) <= 1e-9 * np.max(upper)
        assert np.max(u - upper) <= 1e-9 * np.max(upper)

    def test_grid_refinement_second_order(self):
        spec = families.brownian((0.0, 1.0), (False, True), e=0.5)
        u_cf, _ = brownian_u(0.5, 0.5)
        errs = []
        for n in (256, 512):
            basis = harmonic_space(spec, 0.5, settings=GridSettings(n_core=n))
            errs.append(np.max(np.abs(basis.u.values - u_cf(basis.grid.x))))
        # halving the spacing must improve at least quadratically
        assert errs[1] <= errs[0] / 3.5 + 1e-14


class TestFundamentalPair:
    def test_tanh_values(self, cosh_setup):
        spec, basis = cosh_setup
        ie = basis.grid.i_e
        assert basis.u_plus.values[ie] == pytest.approx(math.tanh(0.5), abs=1e-9)
        assert basis.C == pytest.approx(2 * math.tanh(0.5), abs=1e-9)
        # quadrature oracle for the same integral
        from scipy.integrate import quad
        val, _ = quad(lambda y: math.cosh(y - 0.5) ** -2, 0.0, 1.0)
        assert basis.C == pytest.approx(val, abs=1e-9)

    def test_vanishing_limits(self, cosh_setup):
        _, basis = cosh_setup
        assert basis.u_plus.boundary_value("r") == 0.0
        assert basis.u_minus.values[0] == pytest.approx(0.0, abs=1e-12)

    def test_monotonicity(self, cosh_setup):
        _, basis = cosh_setup
        assert np.all(np.diff(basis.u_plus.values) <= 1e-12)
        assert np.all(np.diff(basis.u_minus.values) >= -1e-12)
        assert np.all(np.diff(basis.u_plus.ds_derivative) >= -1e-10)
        assert np.all(np.diff(basis.u_minus.ds_derivative) >= -1e-10)

    def test_wronskian_equals_total_integral(self, cosh_setup):
        _, basis = cosh_setup
        for idx in (100, basis.grid.i_e, -50):
            w = (basis.u_plus.values[idx] * basis.u_minus.ds_derivative[idx]
                 - basis.u_minus.values[idx] * basis.u_plus.ds_derivative[idx])
            assert w == pytest.approx(basis.C, rel=1e-8)

    def test_entrance_side_keeps_positive_limit(self):
        spec = families.bessel(3.0, (0.0, 2.0), (False, True), e=1.0)
        basis = harmonic_space(spec, 0.5)
        um_l = basis.u_minus.boundary_value("l")
        assert um_l is not None and um_l > 0
        assert basis.u_minus.boundary_derivative("l") == 0.0


class TestHarmonicSpaceStructure:
    @pytest.mark.parametrize("includes,dim", [
        ((False, False), 0), ((False, True), 1), ((True, False), 1),
        ((True, True), 2)])
    def test_dimension_counts_reflecting_endpoints(self, includes, dim):
        spec = families.brownian((0.0, 1.0), includes, e=0.5)
        basis = harmonic_space(spec, 0.5)
        assert basis.dim == dim

    def test_normalized_member_values(self, cosh_setup):
        spec, basis = cosh_setup
        assert basis.u_r_norm.values[-1] == 1.0
        assert basis.u_r_norm.values[0] == pytest.approx(0.0, abs=1e-12)
        ie = basis.grid.i_e
        assert basis.u_r_norm.values[ie] == pytest.approx(
            math.sinh(0.5) / math.sinh(1.0), abs=1e-9)

    def test_trivial_space_on_open_interval(self):
        basis = harmonic_space(families.brownian((0.0, 1.0), e=0.5), 0.5)
        assert basis.dim == 0 and basis.span_desc == "{0}"
        assert basis.u_l_norm is None and basis.u_r_norm is None

    def test_natural_pair_trivial(self):
        basis = harmonic_space(families.ou(1.0), 1.0)
        assert basis.dim == 0


class TestZeroAlpha:
    def test_partition_of_unity(self):
        basis = harmonic_space_zero(families.brownian((0.0, 1.0), (True, True)))
        assert basis.dim == 2
        total = basis.u_l_norm.values + basis.u_r_norm.values
        assert np.max(np.abs(total - 1.0)) == 0.0

    def test_scale_linear_members(self):
        basis = harmonic_space_zero(families.brownian((0.0, 1.0), (True, False)))
        assert basis.span_desc == "span{u0_l}"
        assert basis.u_l_norm.values[0] == pytest.approx(1.0)
        assert basis.u_l_norm.values[-1] == pytest.approx(0.0, abs=1e-10)

    def test_recurrent_branch_constants(self):
        basis = harmonic_space_zero(families.ou(1.0))
        assert basis.span_desc == "span{1}"
        assert np.all(basis.u.values == 1.0)
        one_sided = harmonic_space_zero(
            families.brownian((0.0, INF), (True, False), e=1.0))
        assert one_sided.span_desc == "span{1}"

    def test_transient_open_interval_trivial(self):
        basis = harmonic_space_zero(families.brownian((0.0, 1.0)))
        assert basis.dim == 0 and basis.span_desc == "{0}"
        half_line = harmonic_space_zero(families.brownian((0.0, INF), e=1.0))
        assert half_line.span_desc == "{0}"

    def test_route_through_harmonic_space(self):
        basis = harmonic_space(families.brownian((0.0, 1.0), (True, True)), 0.0)
        assert basis.alpha == 0.0 and basis.dim == 2


class TestWeakIdentity:
    def test_emitted_solution_residual(self, cosh_setup):
        spec, basis = cosh_setup
        g = basis.grid
        rng = rng_from(5)
        idx = rng.choice(np.arange(5, g.n - 5), size=30, replace=False)
        for fn in (basis.u, basis.u_plus, basis.u_minus, basis.u_r_norm):
            for _ in range(5):
                i, j = sorted(rng.choice(idx, size=2, replace=False))
                if i == j:
                    continue
                r = residual_weak_identity(fn, spec, 0.5, g.x[i], g.x[j])
                scale = 1 + max(abs(fn.ds_derivative[i]), abs(fn.ds_derivative[j]))
                assert r / scale < 1e-7

    def test_zero_alpha_trivial(self):
        spec = families.brownian((0.0, 1.0), (True, True))
        g = build_grid(spec, 1.0)
        ones = GridFunction(x=g.x, s=g.s, values=np.ones(g.n),
                            ds_derivative=np.zeros(g.n), scale=spec.scale)
        assert residual_weak_identity(ones, spec, 0.0, 0.25, 0.75) == 0.0

    def test_detects_non_solution(self):
        spec = families.brownian((0.0, 1.0), (True, True))
        g = build_grid(spec, 1.0)
        ones = GridFunction(x=g.x, s=g.s, values=np.ones(g.n),
                            ds_derivative=np.zeros(g.n), scale=spec.scale)
        r = residual_weak_identity(ones, spec, 1.0, 0.25, 0.75)
        assert r == pytest.approx(1.0, abs=1e-10)

    def test_residual_across_atom(self):
        spec = families.brownian((0.0, 1.0), (True, True), e=0.5,
                                 atoms=[(0.75, 0.4)])
        basis = harmonic_space(spec, 1.0)
        g = basis.grid
        ja = int(np.argmin(np.abs(g.x - 0.75)))
        assert basis.u.ds_jumps[ja] == pytest.approx(
            2 * 1.0 * 0.4 * basis.u.values[ja], rel=1e-9)
        r = residual_weak_identity(basis.u, spec, 1.0, g.x[200], g.x[-7])
        assert r / (1 + abs(basis.u.ds_derivative[-7])) < 1e-7


class TestEnergy:
    def test_identity_with_boundary_term(self, cosh_setup):
        spec, basis = cosh_setup
        urn = basis.u_r_norm
        d, m2 = energy_norm(urn, spec, 0.5)
        boundary_term = ((urn.ds_derivative[-1] - urn.ds_jumps[-1])
                         * urn.values[-1]
                         - urn.ds_derivative[0] * urn.values[0])
        assert 2 * d + 2 * 0.5 * m2 == pytest.approx(boundary_term, rel=1e-5)

    def test_constant_has_no_dirichlet_energy(self):
        spec = families.brownian((0.0, 1.0))
        g = build_grid(spec, 1.0)
        ones = GridFunction(x=g.x, s=g.s, values=np.ones(g.n),
                            ds_derivative=np.zeros(g.n), scale=spec.scale)
        d, m2 = energy_norm(ones, spec, 0.0)
        assert d == 0.0
        assert m2 == pytest.approx(1.0, rel=1e-9)

    def test_membership_fails_at_absorbing_endpoint(self):
        spec = families.brownian((0.0, 1.0), e=0.5)
        g = build_grid(spec, 0.5)
        u, vR, vL, _, _ = _picard_columns(g, 0.5)
        u_fn = GridFunction(x=g.x, s=g.s, values=u, ds_derivative=vR,
                            ds_jumps=vR - vL, scale=spec.scale)
        u_plus, u_minus, _ = u_pair(spec, 0.5, u_fn, g)
        flag, reason = in_form_domain(u_plus, spec, 0.5)
        assert not flag and "absorbing endpoint l" in reason

    def test_divergent_energy_detected(self):
        # the fundamental solution explodes toward a natural boundary
        spec = families.brownian((0.0, INF), e=1.0)
        basis = harmonic_space(spec, 0.5)
        with pytest.raises(measures.NonFinite):
            energy_norm(basis.u, spec, 0.5)


class TestOrthogonality:
    def test_harmonic_member_annihilates_bumps(self, cosh_setup):
        spec, basis = cosh_setup
        rng = rng_from(21)
        for _ in range(20):
            lo = rng.uniform(-0.45, 0.2)
            hi = lo + rng.uniform(0.1, 0.45 - max(lo, 0))
            bump = BumpTestFunction(float(lo), float(hi))
            res = orthogonality_residual(basis.u_r_norm, spec, 0.5, bump)
            nrm = harmonic.bump_norm(bump, basis.grid, spec, 0.5)
            assert res < 1e-6 * nrm

    def test_bump_self_energy_positive(self, cosh_setup):
        spec, basis = cosh_setup
        bump = BumpTestFunction(-0.2, 0.25)
        f = bump.as_gridfunction(basis.grid)
        assert energy_product(f, bump, spec, 0.5) > 0.1

    def test_scale_function_not_harmonic(self, cosh_setup):
        spec, basis = cosh_setup
        g = basis.grid
        hs = GridFunction(x=g.x, s=g.s, values=g.s.copy(),
                          ds_derivative=np.ones(g.n), scale=spec.scale)
        bump = BumpTestFunction(-0.35, 0.15)
        res = orthogonality_residual(hs, spec, 0.5, bump)
        # direct quadrature of alpha * int s(x) phi(s(x)) m(dx)
        from scipy.integrate import quad
        direct, _ = quad(lambda x: (x - 0.5) * float(bump.phi(x - 0.5)),
                         0.15, 0.65, limit=200)
        assert res == pytest.approx(abs(0.5 * direct), rel=1e-5)
        assert res > 1e-4


class TestSmoothRandomSpecs:
    @settings(max_examples=8, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_pipeline_on_smooth_specs(self, seed):
        spec = random_smooth_spec(rng_from(seed))
        basis = harmonic_space(spec, 1.0, settings=GridSettings(n_core=512))
        g = basis.grid
        assert basis.dim == 2
        assert basis.u_l_norm.values[0] == 1.0
        assert basis.u_r_norm.values[-1] == 1.0
        assert basis.c_l > 0 and basis.c_r > 0
        r = residual_weak_identity(basis.u, spec, 1.0,
                                   g.x[g.n // 4], g.x[3 * g.n // 4])
        assert r / (1 + abs(basis.u.ds_derivative[3 * g.n // 4])) < 1e-7


class TestSerialization:
    def test_csv_columns(self, cosh_setup):
        _, basis = cosh_setup
        text = basis_to_csv(basis)
        lines = text.strip().split("\n")
        assert lines[0] == "x,s(x),u,du_ds,u_plus,u_minus,u_l_norm,u_r_norm"
        assert len(lines) == basis.grid.n + 1
        first = lines[1].split(",")
        assert first[6] == ""  # left member undefined on this spec

    def test_csv_header_only_when_trivial(self):
        basis = harmonic_space(families.brownian((0.0, 1.0), e=0.5), 0.5)
        text = basis_to_csv(basis)
        assert text.strip().split("\n") == [
            "x,s(x),u,du_ds,u_plus,u_minus,u_l_norm,u_r_norm"]

    def test_header_fields(self, cosh_setup):
        _, basis = cosh_setup
        doc = basis_header(basis)
        assert set(doc) == {"alpha", "C", "c_l", "c_r", "dim", "span_desc"}
        assert doc["c_l"] is None and doc["c_r"] is not None
