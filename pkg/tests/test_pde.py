import math

import numpy as np
import pytest

from bbmlab.errors import DomainError, ResourceError
from bbmlab.pde import (
    BarrierPair,
    PdeGrids,
    PiecewiseQ,
    build_barriers,
    check_c0_stability,
    cross_validate_galerkin,
    default_epsilons,
    dirac_convergence_report,
    evolve_coefficients,
    fundamental_solution_g,
    galerkin_matrices,
    gaussian_on_grid,
    initial_coefficients,
    integral_inv_pow,
    kernel_G_from_g,
    rho_for_kernel,
    solve_pde,
)

from oracles import hermite_mixing_entry

FAST = PdeGrids(x_max=8.0, dx=1.0 / 128.0, cfl_pot=0.02)


class TestTimeCoefficient:
    def test_integral_helper(self):
        # closed form (1 - (1-T)^{1-kappa}) / (1-kappa)
        T, kap = 0.5, 2.0 / 3.0
        assert integral_inv_pow(T, kap) == pytest.approx(3.0 * (1 - 0.5 ** (1 / 3)), rel=1e-14)

    def test_piecewise_integral_matches_quadrature(self):
        pair = build_barriers(0.5, 0.03, 0.02, 1.3)
        from scipy.integrate import quad

        for qq in (pair.q_star, pair.q_upper):
            val = qq.integral_pow(0.6, 0.0, 0.5)
            ref, _ = quad(lambda t: qq.value(t) ** 0.6, 0.0, 0.5, limit=200,
                          points=qq.breakpoints())
            assert val == pytest.approx(ref, rel=1e-9)

    def test_log_deriv(self):
        q = PiecewiseQ.singular(1.5, 0.6)
        t = 0.3
        assert q.log_deriv(t) == pytest.approx(1.5 / (1 - t), rel=1e-14)
        assert PiecewiseQ.constant(3.0, 0.5).log_deriv(0.2) == 0.0

    def test_time_steps_bound_singular_coefficient(self):
        # q(t) dt stays below cfl/rho all the way to T
        from bbmlab.pde import _time_steps

        q = PiecewiseQ.singular(1.0, 0.9)
        grids = PdeGrids(cfl_pot=0.05, dt_max=0.1)
        steps = _time_steps(50.0, 0.9, q, grids)
        t = np.concatenate([[0.0], np.cumsum(steps)])[:-1]
        assert np.all(q.value(t) * steps <= 0.05 / 50.0 + 1e-12)
        assert abs(t[-1] + steps[-1] - 0.9) < 1e-12


class TestBarriers:
    def test_constraint_violations_named(self):
        with pytest.raises(DomainError, match="eps1"):
            build_barriers(0.5, 0.08, 0.02, 1.0)
        with pytest.raises(DomainError, match="eps2 <= \\(1-T\\)/10"):
            build_barriers(0.8, 0.01, 0.03, 1.0)

    def test_endpoint_values(self):
        pair = build_barriers(0.5, 0.03, 0.02, 1.0)
        assert pair.q_star.value(0.0) == 1.0
        assert pair.q_upper.value(0.5) == pytest.approx(2.0, rel=1e-14)
        # equal to the singular coefficient in the middle
        assert pair.q_star.value(0.25) == pytest.approx(4.0 / 3.0, rel=1e-14)
        assert pair.q_upper.value(0.25) == pytest.approx(4.0 / 3.0, rel=1e-14)

    def test_sandwich_on_grid(self):
        pair = build_barriers(0.5, 0.03, 0.02, 1.0)
        lo, hi = pair.sandwich_margins(10_000)
        assert lo <= 1e-12 and hi <= 1e-12

    def test_constant_plateaus(self):
        pair = build_barriers(0.5, 0.03, 0.02, 1.0)
        for qq in (pair.q_star, pair.q_upper):
            assert qq.value(0.005) == qq.value(0.025)
            assert qq.value(0.485) == qq.value(0.499)

    def test_ratio_bounds(self):
        T, e1, e2, a = 0.5, 0.03, 0.02, 1.0
        pair = build_barriers(T, e1, e2, a)
        t = np.linspace(0.0, T, 10_000)
        target = (1 - t) ** (-a)
        rs = pair.q_star.value(t) / target
        ru = pair.q_upper.value(t) / target
        early = t <= 2 * e1
        late = t >= T - 2 * e2
        assert np.all(rs[early] >= 1 - 4 * e1 - 1e-12)
        assert np.all(ru[early] <= 1 + 3 * e1 + 1e-12)
        assert np.all(rs[late] >= 1 - 2 * e2 / (1 - T) - 1e-12)
        assert np.all(ru[late] <= 1 + 5 * e2 / (1 - T) + 1e-12)
        assert np.all(rs >= 0.5) and np.all(ru <= 2.0)


class TestSolver:
    def test_pure_diffusion_conserves_mass(self):
        fld = solve_pde(lambda x: gaussian_on_grid(x, 0.0, 0.3), rho=2.0, alpha=1.0,
                        T=0.3, grids=PdeGrids(x_max=10.0, dx=1 / 64), potential_off=True)
        m = fld.mass()
        assert abs(m[-1] - m[0]) / m[0] < 1e-10

    def test_positivity_and_mass_decrease(self):
        fld = solve_pde(lambda x: gaussian_on_grid(x, 0.5, 0.1), rho=10.0, alpha=1.0,
                        T=0.4, grids=FAST)
        m = fld.mass()
        assert np.all(np.diff(m) <= 1e-12 * m[0])
        assert fld.values.min() >= -fld.diagnostics["positivity_floor"] * fld.values.max()

    def test_resource_error(self):
        tiny = PdeGrids(x_max=4.0, dx=1 / 32, max_steps=50)
        with pytest.raises(ResourceError, match="reduce T"):
            solve_pde(lambda x: gaussian_on_grid(x, 0.0, 0.2), rho=500.0, alpha=1.0,
                      T=0.9, grids=tiny)

    def test_domain_validation(self):
        with pytest.raises(DomainError):
            solve_pde(lambda x: gaussian_on_grid(x, 0.0, 0.2), 1.0, 1.0, T=1.2, grids=FAST)

    def test_product_form_small(self, sys_a1_small):
        # scaled-down version of the headline check: rho=100, T=0.5
        g = fundamental_solution_g(0.0, 0.5, 100.0, 1.0, FAST, gauge_lambda0="discrete")
        kap = 2.0 / 3.0
        pred = float(sys_a1_small.phi(0, 0.0)) * 0.5 ** (-kap / 4) * float(sys_a1_small.phi(0, 0.0))
        assert g.renormalized(0.0) == pytest.approx(pred, rel=5e-3)

    def test_grid_convergence(self):
        # halving both steps moves g(0) by less than 10x the claimed accuracy
        vals = []
        for dx, cfl in ((1 / 64, 0.04), (1 / 128, 0.02)):
            grids = PdeGrids(x_max=8.0, dx=dx, cfl_pot=cfl)
            vals.append(fundamental_solution_g(0.3, 0.4, 30.0, 1.0, grids)(0.0))
        assert abs(vals[1] - vals[0]) / vals[1] < 10 * FAST.claimed_accuracy

    def test_dirac_convergence_report(self):
        rep = dirac_convergence_report(0.2, 0.3, 20.0, 1.0, FAST)
        assert rep["last_change"] / rep["values"][-1] < 5e-3


class TestFundamentalSolution:
    def test_mass_at_most_one(self):
        g = fundamental_solution_g(0.3, 0.4, 50.0, 1.0, FAST)
        assert g.integral() <= 1.0 + 1e-9

    def test_even_symmetry_for_centered_source(self):
        g = fundamental_solution_g(0.0, 0.4, 30.0, 1.0, FAST)
        f = g.field.final()
        assert np.abs(f - f[::-1]).max() <= 1e-12 * f.max()

    def test_comparison_sandwich(self):
        pair = build_barriers(0.4, 0.02, 0.015, 1.0)
        out = {}
        for name, qq in (("true", None), ("star", pair.q_star), ("upper", pair.q_upper)):
            out[name] = fundamental_solution_g(0.3, 0.4, 50.0, 1.0, FAST, q=qq).field.final()
        slack = 1e-8 * out["true"].max()
        assert np.all(out["upper"] <= out["true"] + slack)
        assert np.all(out["true"] <= out["star"] + slack)


class TestKernelScaling:
    def test_rho_formula(self):
        # rho = beta^{2/(2+a)} 2^{-2a/(2+a)} t^{1-kappa}
        assert rho_for_kernel(16.0, 1.0, 1.0) == pytest.approx(2.0 ** (2.0 / 3.0), rel=1e-14)

    def test_beta_zero_limit_gaussian(self):
        G0 = kernel_G_from_g(4.0, 0.0, 16.0, 0.5, 1.0, 1.0, grids=FAST, potential_off=True)
        gauss = math.exp(-0.25 / 24.0) / math.sqrt(2 * math.pi * 12.0)
        assert G0 == pytest.approx(gauss, rel=2e-4)

    def test_sign_symmetry(self):
        Ga = kernel_G_from_g(4.0, 0.3, 16.0, 0.5, 1.0, 1.0, grids=FAST)
        Gb = kernel_G_from_g(4.0, -0.3, 16.0, -0.5, 1.0, 1.0, grids=FAST)
        assert Ga == pytest.approx(Gb, rel=1e-12)

    def test_validates_order(self):
        with pytest.raises(DomainError):
            kernel_G_from_g(16.0, 0.0, 4.0, 0.0, 1.0, 1.0, grids=FAST)


class TestGalerkin:
    def test_matrices_alpha2(self, sys_a2):
        d_mat, a_mat, defect = galerkin_matrices(sys_a2, 5)
        assert defect < 1e-8
        assert d_mat[0, 0] == 0.0
        assert np.allclose(np.diag(d_mat), 2.0 * np.arange(5), atol=1e-5)
        # opposite parity entries vanish identically
        assert a_mat[0, 1] == 0.0 and a_mat[1, 2] == 0.0
        # same-parity entry against the analytic Hermite oracle
        assert a_mat[0, 2] == pytest.approx(-math.sqrt(2.0) / 8.0, abs=1e-7)
        assert a_mat[0, 2] == pytest.approx(hermite_mixing_entry(0, 2), abs=1e-6)
        # antisymmetry
        assert np.abs(a_mat + a_mat.T).max() < 1e-15

    def test_constant_q_closed_form(self, sys_a1):
        n = 6
        d_mat, a_mat, _ = galerkin_matrices(sys_a1, n)
        q = PiecewiseQ.constant(1.0, 0.3)
        c0 = initial_coefficients(sys_a1, 1.0, 0.5, n)
        path = evolve_coefficients(c0, q, 10.0, d_mat, a_mat, 1.0)
        lam = sys_a1.eigenvalues
        assert path.coefficients[-1, 0] == c0[0]  # exactly constant
        expect = c0[1] * math.exp(-10.0 * (lam[1] - lam[0]) * 0.3)
        assert path.coefficients[-1, 1] == pytest.approx(expect, rel=1e-8)

    def test_mixing_off_scalar_decay(self, sys_a1):
        # with A zeroed every mode decays by exp(-rho (lam_n - lam_0) int q^{2/3})
        n = 5
        d_mat, a_mat, _ = galerkin_matrices(sys_a1, n)
        pair = build_barriers(0.4, 0.02, 0.015, 1.0)
        c0 = initial_coefficients(sys_a1, 1.0, 0.4, n)
        path = evolve_coefficients(c0, pair.q_star, 15.0, d_mat, a_mat, 1.0, mixing_off=True)
        from scipy.integrate import quad

        integral, _ = quad(lambda t: pair.q_star.value(t) ** (2.0 / 3.0), 0.0, 0.4,
                           points=pair.q_star.breakpoints(), limit=200)
        lam = sys_a1.eigenvalues
        for n_i in range(n):
            expect = c0[n_i] * math.exp(-15.0 * (lam[n_i] - lam[0]) * integral)
            assert path.coefficients[-1, n_i] == pytest.approx(expect, rel=1e-7)

    def test_norm_monotone(self, sys_a1):
        n = 8
        d_mat, a_mat, _ = galerkin_matrices(sys_a1, n)
        pair = build_barriers(0.5, 0.03, 0.02, 1.0)
        for qq in (pair.q_star, pair.q_upper):
            c0 = initial_coefficients(sys_a1, qq.value(0.0), 0.7, n)
            path = evolve_coefficients(c0, qq, 30.0, d_mat, a_mat, 1.0)
            norms = path.norms()
            assert np.all(np.diff(norms) <= 1e-10 * norms[0])

    def test_cross_validation_fast(self, sys_a1):
        res = cross_validate_galerkin(sys_a1, 60.0, 0.4, 1.0, xi=0.0, n_modes=16,
                                      grids=FAST)
        assert res["rel_l2"] < 0.02

    def test_needs_enough_levels(self, sys_a1_small):
        with pytest.raises(DomainError):
            galerkin_matrices(sys_a1_small, 10)


class TestC0Stability:
    def test_ladder(self, sys_a1):
        rep = check_c0_stability([50.0, 100.0, 200.0], 0.5, 1.0, sys_a1,
                                 xi=0.5, n_modes=12)
        rows = rep["rows"]
        for a, b in zip(rows, rows[1:]):
            ratio = b["q_star"] / a["q_star"]
            assert 0.3 <= ratio <= 0.8
        assert rep["fitted_exponent"] == pytest.approx(-1.0, abs=0.25)

    def test_epsilon_algebra(self):
        rho, T, kap = 100.0, 0.5, 2.0 / 3.0
        delta, eps1, eps2 = default_epsilons(rho, T, kap)
        assert rho * eps1 ** 2 == pytest.approx(delta, rel=1e-12)
        assert eps2 == pytest.approx((1 - T) * math.sqrt(delta / (rho * (1 - T) ** (1 - kap))), rel=1e-12)

    def test_constant_q_zero_deviation(self, sys_a1):
        n = 6
        d_mat, a_mat, _ = galerkin_matrices(sys_a1, n)
        q = PiecewiseQ.constant(2.0, 0.4)
        c0 = initial_coefficients(sys_a1, 2.0, 0.3, n)
        path = evolve_coefficients(c0, q, 80.0, d_mat, a_mat, 1.0)
        assert path.coefficients[-1, 0] == c0[0]

    def test_preconditions(self, sys_a1):
        with pytest.raises(DomainError):
            check_c0_stability([10.0], 0.5, 1.0, sys_a1)  # T < 20/rho


class TestExports:
    def test_field_round_trip(self, tmp_path):
        fld = solve_pde(lambda x: gaussian_on_grid(x, 0.0, 0.2), 5.0, 1.0, 0.3,
                        grids=PdeGrids(x_max=4.0, dx=1 / 32))
        fld.export_csv(tmp_path / "f.csv")
        fld.export_json(tmp_path / "f.json")
        lines = (tmp_path / "f.csv").read_text().splitlines()
        assert lines[0].startswith("t,u_0")
        assert len(lines) == len(fld.time_grid) + 1

    def test_path_export(self, sys_a1, tmp_path):
        n = 4
        d_mat, a_mat, _ = galerkin_matrices(sys_a1, n)
        path = evolve_coefficients(np.ones(n), PiecewiseQ.constant(1.0, 0.2), 5.0,
                                   d_mat, a_mat, 1.0)
        path.export_csv(tmp_path / "c.csv")
        path.export_json(tmp_path / "c.json")
        assert (tmp_path / "c.csv").read_text().splitlines()[0] == "t,c_0,c_1,c_2,c_3"
