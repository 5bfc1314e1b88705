"""Kernel moments, equivalent kernels, and closed-form bias/variance.

Oracles: analytic Epanechnikov moments, sympy series for the correction
target, and a small Monte Carlo for the bias formula.
"""

import math

import numpy as np
import pytest
import sympy

from guidedqlik import (
    CapabilityError,
    Dataset,
    DomainError,
    GuideSpec,
    GuideZeroError,
    KernelRegion,
    SingularMomentError,
    asymptotic_sigma2,
    asymptotic_variance,
    constant_guide,
    correction_derivs,
    epanechnikov,
    equivalent_kernel,
    fit_guide,
    get_family,
    kernel_moment,
    kernel_product_moment,
    make_asymptotic_report,
    nu_moment,
    theoretical_bias,
)


class TestRawKernel:
    def test_shape_and_support(self):
        z = np.array([-1.5, -1.0, 0.0, 0.5, 1.0, 2.0])
        k = epanechnikov(z)
        assert k[0] == 0.0 and k[-1] == 0.0
        assert k[2] == pytest.approx(0.75)
        assert k[3] == pytest.approx(0.75 * (1 - 0.25))

    def test_integrates_to_one(self):
        assert nu_moment(0) == pytest.approx(1.0, abs=1e-12)

    def test_frozen_moments(self):
        # int z^2 K = 1/5, int z^4 K = 3/35, odd moments vanish
        assert nu_moment(2) == pytest.approx(0.2, abs=1e-12)
        assert nu_moment(4) == pytest.approx(3.0 / 35.0, abs=1e-12)
        assert nu_moment(1) == pytest.approx(0.0, abs=1e-12)
        assert nu_moment(3) == pytest.approx(0.0, abs=1e-12)

    def test_left_boundary_first_moment(self):
        # int_{-1}^{0} z 0.75(1-z^2) dz = -3/16
        assert nu_moment(1, KernelRegion(-1.0, 0.0)) == pytest.approx(-0.1875, abs=1e-12)

    def test_squared_integral(self):
        # int K^2 = 3/5; the (0,0,0) equivalent-kernel product reduces to it
        assert kernel_product_moment(0, 0, 0) == pytest.approx(0.6, abs=1e-12)


class TestKernelRegion:
    def test_defaults_interior(self):
        r = KernelRegion()
        assert r.lo == -1.0 and r.hi == 1.0
        assert r.is_interior

    def test_for_point_interior(self):
        r = KernelRegion.for_point(0.0, 0.3, (-2.0, 2.0))
        assert r.is_interior

    def test_for_point_left_boundary(self):
        # z = (X - x0)/h, so a left-edge point only loses deep-negative z.
        r = KernelRegion.for_point(-1.9, 0.3, (-2.0, 2.0))
        assert r.lo == pytest.approx((-2.0 + 1.9) / 0.3)
        assert r.hi == 1.0

    def test_for_point_right_boundary(self):
        r = KernelRegion.for_point(1.9, 0.3, (-2.0, 2.0))
        assert r.lo == -1.0
        assert r.hi == pytest.approx((2.0 - 1.9) / 0.3)

    def test_for_point_bad_bandwidth(self):
        with pytest.raises(DomainError):
            KernelRegion.for_point(0.0, 0.0, (-1.0, 1.0))

    def test_bad_ordering(self):
        with pytest.raises(DomainError):
            KernelRegion(0.5, 0.5)
        with pytest.raises(DomainError):
            KernelRegion(-2.0, 1.0)


class TestEquivalentKernel:
    def test_degree_one_interior_components(self):
        # symmetric interior: K_{0,1} = K itself, K_{1,1}(z) = 5 z K(z)
        z = np.linspace(-1, 1, 21)
        assert np.allclose(equivalent_kernel(0, 1, z), epanechnikov(z), atol=1e-12)
        assert np.allclose(equivalent_kernel(1, 1, z), 5.0 * z * epanechnikov(z), atol=1e-12)
        assert equivalent_kernel(0, 1, 0.5) == pytest.approx(0.5625, abs=1e-12)

    def test_moment_identities_interior(self):
        # int z^q K_{r,p} = r! delta_{qr} for q, r <= p
        for p in range(4):
            for r in range(p + 1):
                for q in range(p + 1):
                    expected = math.factorial(r) if q == r else 0.0
                    assert kernel_moment(q, r, p) == pytest.approx(expected, abs=1e-8), (p, r, q)

    def test_moment_identities_boundary(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            lo = rng.uniform(-1.0, -0.05)
            hi = rng.uniform(0.05, 1.0)
            region = KernelRegion(lo, hi)
            for p in range(4):
                for r in range(p + 1):
                    for q in range(p + 1):
                        expected = math.factorial(r) if q == r else 0.0
                        got = kernel_moment(q, r, p, region)
                        assert got == pytest.approx(expected, abs=1e-8), (lo, hi, p, r, q)

    def test_invalid_r(self):
        with pytest.raises(DomainError):
            equivalent_kernel(2, 1, 0.0)
        with pytest.raises(DomainError):
            equivalent_kernel(-1, 1, 0.0)

    def test_degenerate_region_raises(self):
        with pytest.raises(SingularMomentError):
            equivalent_kernel(0, 3, 0.0, KernelRegion(-1.0, -1.0 + 1e-6))

    def test_scalar_input_returns_float(self):
        out = equivalent_kernel(0, 1, 0.25)
        assert isinstance(out, float)


class TestAsymptoticVariance:
    def test_frozen_gaussian_value(self):
        # gaussian: rho = 1, so sigma^2_{0,0,1} = int K^2 / f_X = 0.6 / 0.5
        fam = get_family("gaussian")
        assert asymptotic_sigma2(0, 0, 1, fam, eta0_x0=0.7, fX_x0=0.5) == pytest.approx(1.2, abs=1e-12)

    def test_symmetry_in_rs(self):
        fam = get_family("poisson")
        a = asymptotic_sigma2(0, 1, 2, fam, 1.0, 0.25)
        b = asymptotic_sigma2(1, 0, 2, fam, 1.0, 0.25)
        assert a == pytest.approx(b, rel=1e-12)

    def test_inverse_scaling_in_density(self):
        fam = get_family("poisson")
        a = asymptotic_sigma2(0, 0, 1, fam, 1.3, 0.2)
        b = asymptotic_sigma2(0, 0, 1, fam, 1.3, 0.4)
        assert a == pytest.approx(2.0 * b, rel=1e-12)

    def test_variance_decay_in_n_and_h(self):
        fam = get_family("gaussian")
        v1 = asymptotic_variance(0, 1, 1000, 0.2, fam, 0.0, 0.5)
        v2 = asymptotic_variance(0, 1, 2000, 0.2, fam, 0.0, 0.5)
        v3 = asymptotic_variance(0, 1, 1000, 0.4, fam, 0.0, 0.5)
        assert v1 == pytest.approx(2.0 * v2, rel=1e-12)
        assert v1 == pytest.approx(2.0 * v3, rel=1e-12)
        # derivative estimate pays h^-3 instead of h^-1
        d1 = asymptotic_variance(1, 1, 1000, 0.2, fam, 0.0, 0.5)
        d3 = asymptotic_variance(1, 1, 1000, 0.4, fam, 0.0, 0.5)
        assert d1 == pytest.approx(8.0 * d3, rel=1e-12)

    def test_zero_density_rejected(self):
        with pytest.raises(DomainError):
            asymptotic_sigma2(0, 0, 1, get_family("gaussian"), 0.0, 0.0)


def quadratic_guide(a0, a1, a2):
    x = np.linspace(-2, 2, 50)
    y = a0 + a1 * x + a2 * x * x
    return fit_guide(Dataset(x, y), get_family("gaussian"), GuideSpec(kind="poly", degree=2))


class TestCorrectionDerivs:
    def test_sympy_oracle(self):
        sym_x = sympy.Symbol("x")
        a0, a1, a2 = 2.0, 0.5, 0.25
        g_expr = a0 + a1 * sym_x + a2 * sym_x**2
        eta_expr = 3 + sympy.sin(sym_x)
        guide = quadratic_guide(a0, a1, a2)
        x0 = 0.4
        eta0_derivs = [float(sympy.diff(eta_expr, sym_x, k).subs(sym_x, x0)) for k in range(7)]
        for gamma in (0.0, 0.5, 1.0, 2.0, 3.2):
            phi_expr = (eta_expr - g_expr) / g_expr**gamma
            got = correction_derivs(guide, gamma, x0, eta0_derivs, 4)
            for k in range(5):
                want = float(sympy.diff(phi_expr, sym_x, k).subs(sym_x, x0))
                assert got[k] == pytest.approx(want, rel=1e-9, abs=1e-9), (gamma, k)

    def test_gamma_zero_is_plain_difference(self):
        guide = quadratic_guide(1.0, 0.2, -0.1)
        eta0_derivs = [2.0, 0.3, 0.4, 0.0, 0.0]
        got = correction_derivs(guide, 0.0, 0.5, eta0_derivs, 3)
        want = np.array(eta0_derivs[:4]) - guide.derivs_at(0.5, 3)
        assert np.allclose(got, want, atol=1e-10)

    def test_guide_zero_raises(self):
        guide = quadratic_guide(0.0, 1.0, 0.0)  # vanishes at x0 = 0
        with pytest.raises(GuideZeroError):
            correction_derivs(guide, 1.0, 0.0, [1.0, 0.0, 0.0, 0.0], 2)

    def test_short_deriv_list_raises(self):
        guide = quadratic_guide(2.0, 0.0, 0.0)
        with pytest.raises(CapabilityError):
            correction_derivs(guide, 1.0, 0.0, [1.0, 0.0], 3)


class TestTheoreticalBias:
    def test_frozen_interior_value(self):
        # constant guide 1, gamma free: phi = eta0 - 1; p=1, j=0, h=0.3,
        # eta0'' = 2 -> bias = (h^2/2) * 2 * nu_2 = 0.018
        guide = constant_guide(1.0)
        eta0_derivs = [1.5, 0.7, 2.0]
        got = theoretical_bias(0, 1, 0.3, 0.0, guide, 0.0, eta0_derivs)
        assert got == pytest.approx(0.018, abs=1e-12)

    def test_zero_when_guide_matches_truth(self):
        # guide == eta0 as functions: phi and all its derivatives vanish
        guide = quadratic_guide(2.0, 0.5, 0.25)
        eta0_derivs = guide.derivs_at(0.3, 2)
        got = theoretical_bias(0, 1, 0.4, 0.3, guide, 1.7, eta0_derivs)
        assert got == pytest.approx(0.0, abs=1e-12)

    def test_gamma_scaling_swaps_consistently(self):
        # sympy oracle for the odd branch at two gammas
        sym_x = sympy.Symbol("x")
        a0, a1, a2 = 2.0, 0.5, 0.25
        g_expr = a0 + a1 * sym_x + a2 * sym_x**2
        eta_expr = 3 + sympy.sin(sym_x)
        guide = quadratic_guide(a0, a1, a2)
        x0, h = 0.4, 0.25
        eta0_derivs = [float(sympy.diff(eta_expr, sym_x, k).subs(sym_x, x0)) for k in range(4)]
        for gamma in (0.0, 1.0):
            phi_expr = (eta_expr - g_expr) / g_expr**gamma
            phi2 = float(sympy.diff(phi_expr, sym_x, 2).subs(sym_x, x0))
            e0g = float(g_expr.subs(sym_x, x0)) ** gamma
            want = h**2 / 2.0 * phi2 * e0g * 0.2
            got = theoretical_bias(0, 1, h, x0, guide, gamma, eta0_derivs)
            assert got == pytest.approx(want, rel=1e-9)

    def test_even_branch_needs_density_info(self):
        guide = constant_guide(1.0)
        with pytest.raises(CapabilityError):
            theoretical_bias(0, 2, 0.3, 0.0, guide, 0.0, [1.0, 0.0, 1.0, 0.0, 0.0])

    def test_even_branch_sympy_oracle(self):
        # p=2, j=0, gaussian, uniform design: ratio reduces to (eta^2g)' / eta^g
        sym_x = sympy.Symbol("x")
        a0, a1, a2 = 2.0, 0.5, 0.25
        g_expr = a0 + a1 * sym_x + a2 * sym_x**2
        eta_expr = 3 + sympy.sin(sym_x)
        guide = quadratic_guide(a0, a1, a2)
        x0, h, gamma = 0.4, 0.25, 1.5
        eta0_derivs = [float(sympy.diff(eta_expr, sym_x, k).subs(sym_x, x0)) for k in range(5)]
        fam = get_family("gaussian")
        phi_expr = (eta_expr - g_expr) / g_expr**gamma
        phi3 = float(sympy.diff(phi_expr, sym_x, 3).subs(sym_x, x0))
        phi4 = float(sympy.diff(phi_expr, sym_x, 4).subs(sym_x, x0))
        e0 = float(g_expr.subs(sym_x, x0))
        e0p = float(sympy.diff(g_expr, sym_x).subs(sym_x, x0))
        ratio = 2.0 * gamma * e0 ** (gamma - 1.0) * e0p
        mom4 = kernel_moment(4, 0, 2)
        want = h**4 * (mom4 * e0**gamma / 24.0 * phi4 + mom4 / 6.0 * phi3 * ratio)
        got = theoretical_bias(0, 2, h, x0, guide, gamma, eta0_derivs, fam=fam, fx=0.25, fx_deriv=0.0)
        assert got == pytest.approx(want, rel=1e-9)

    def test_domain_errors(self):
        guide = constant_guide(1.0)
        with pytest.raises(DomainError):
            theoretical_bias(1, 1, 0.3, 0.0, guide, 0.0, [1.0, 0.0, 1.0])
        with pytest.raises(DomainError):
            theoretical_bias(0, 1, -0.3, 0.0, guide, 0.0, [1.0, 0.0, 1.0])


class TestReportAndEmpirics:
    def test_report_bundle(self):
        guide = constant_guide(1.0)
        rep = make_asymptotic_report(0, 1, 0.3, 0.0, guide, 0.0, [1.0, 0.0, 2.0],
                                     get_family("gaussian"), 0.5)
        assert rep.branch == "odd"
        assert rep.nu[0] == pytest.approx(1.0, abs=1e-12)
        assert rep.nu[2] == pytest.approx(0.2, abs=1e-12)
        assert rep.bias == pytest.approx(0.018, abs=1e-12)
        assert rep.sigma2 == pytest.approx(1.2, abs=1e-12)

    def test_small_monte_carlo_agrees_with_formulas(self):
        # gaussian local linear on quadratic truth: check empirical bias and
        # variance at an interior point against the closed forms
        from guidedqlik import LocalFitSpec, fit_local

        fam = get_family("gaussian")
        n, h, R = 1500, 0.25, 150
        x0 = 0.1
        rng = np.random.default_rng(99)
        est = np.empty(R)
        for r in range(R):
            x = rng.uniform(-1, 1, n)
            y = x**2 + rng.standard_normal(n)
            fit = fit_local(Dataset(x, y), fam, None, LocalFitSpec(1, h, 0.0, "vanilla"), x0)
            est[r] = fit.beta_hat[0]
        bias_emp = est.mean() - x0**2
        bias_th = theoretical_bias(0, 1, h, x0, constant_guide(1.0), 0.0, [x0**2, 2 * x0, 2.0])
        var_th = asymptotic_variance(0, 1, n, h, fam, x0**2, 0.5)
        se = est.std(ddof=1) / np.sqrt(R)
        assert abs(bias_emp - bias_th) < 3.0 * se + 0.2 * abs(bias_th)
        assert est.var(ddof=1) == pytest.approx(var_th, rel=0.35)
