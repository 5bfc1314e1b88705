"""Exponent and bandwidth selection: synthetic cases with known answers.

The roughness functional has closed forms for polynomial correction targets
(a local cubic smoother reproduces quadratics exactly), and the gaussian
bias/variance surrogates reduce to weighted-least-squares algebra that can
be written out independently.
"""

import numpy as np
import pytest

from guidedqlik import (
    Dataset,
    DomainError,
    GuideZeroError,
    LocalFitSpec,
    SelectionError,
    constant_guide,
    estimate_bias_variance,
    fit_guide,
    fit_local,
    get_family,
    parse_guide,
    pilot_bandwidth,
    select_bandwidth,
    select_gamma,
    theta_gamma_hat,
)
from guidedqlik.selection import PilotCurve, default_h_grid

POISSON = get_family("poisson")
GAUSSIAN = get_family("gaussian")

TRUE_SHAPE_GUIDE = "sin:omega=0.7853981633974483,phase=-1.5707963267948966"


def make_poisson_data(seed, n=100):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(-2.0, 2.0, n))
    eta = 3.0 * np.sin(np.pi * x / 4.0 - np.pi / 2.0) + 6.0
    y = rng.poisson(np.exp(eta)).astype(float)
    return Dataset(x, y)


def tiny_data():
    x = np.linspace(-1.0, 1.0, 12)
    return Dataset(x, np.ones_like(x))


class TestDefaultHGrid:
    def test_geometric_with_pinned_endpoints(self):
        x = np.array([-2.0, 0.0, 2.0])
        g = default_h_grid(x)
        assert len(g) == 20
        assert g[0] == pytest.approx(0.05 * 4.0)
        assert g[-1] == pytest.approx(1.0 * 4.0)
        ratios = g[1:] / g[:-1]
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)

    def test_zero_range_rejected(self):
        with pytest.raises(DomainError):
            default_h_grid(np.zeros(5))


class TestThetaGammaHat:
    def test_quadratic_target_closed_form(self):
        # pilot - guide = x^2 with unit guide: c'' = 2, integrand 4 on [-1, 1]
        grid = np.linspace(-1.0, 1.0, 101)
        pilot = PilotCurve(grid=grid, eta=1.0 + grid ** 2, h=0.2)
        for gamma in (0.0, 1.0, 2.7):
            val = theta_gamma_hat(tiny_data(), GAUSSIAN, constant_guide(1.0), gamma, pilot)
            assert val == pytest.approx(8.0, abs=1e-9)

    def test_guide_scale_enters_through_power(self):
        # with guide = 2 and gamma = 1: c = x^2 / 2, integrand (2 * 1)^2 = 4
        grid = np.linspace(-1.0, 1.0, 101)
        pilot = PilotCurve(grid=grid, eta=2.0 + grid ** 2, h=0.2)
        val = theta_gamma_hat(tiny_data(), GAUSSIAN, constant_guide(2.0), 1.0, pilot)
        assert val == pytest.approx(8.0, abs=1e-9)
        # gamma = 0 leaves c = x^2 alone: same closed form
        val0 = theta_gamma_hat(tiny_data(), GAUSSIAN, constant_guide(2.0), 0.0, pilot)
        assert val0 == pytest.approx(8.0, abs=1e-9)

    def test_exact_guide_scores_zero(self):
        grid = np.linspace(-1.0, 1.0, 80)
        pilot = PilotCurve(grid=grid, eta=np.full(80, 3.0), h=0.25)
        val = theta_gamma_hat(tiny_data(), GAUSSIAN, constant_guide(3.0), 1.0, pilot)
        assert val == 0.0

    def test_linear_residual_scores_zero(self):
        grid = np.linspace(-1.0, 1.0, 80)
        pilot = PilotCurve(grid=grid, eta=1.0 + (0.7 - 2.0 * grid), h=0.25)
        val = theta_gamma_hat(tiny_data(), GAUSSIAN, constant_guide(1.0), 0.0, pilot)
        assert val < 1e-12

    def test_nonnegative_on_real_data(self):
        data = make_poisson_data(8)
        guide = fit_guide(data, POISSON, parse_guide("poly:2"))
        grid = np.linspace(-1.8, 1.8, 60)
        eta = np.array([
            fit_local(data, POISSON, None, LocalFitSpec(1, 0.5, 0.0, "vanilla"), x).eta_hat
            for x in grid
        ])
        pilot = PilotCurve(grid=grid, eta=eta, h=0.5)
        for gamma in (0.0, 0.4, 1.0, 2.0, 3.6):
            assert theta_gamma_hat(data, POISSON, guide, gamma, pilot) >= 0.0

    def test_zero_crossing_guide_rejected_for_positive_gamma(self):
        rng = np.random.default_rng(2)
        x = np.sort(rng.uniform(-1.0, 1.0, 100))
        data = Dataset(x, x + 0.01 * rng.standard_normal(100))
        guide = fit_guide(data, GAUSSIAN, parse_guide("poly:1"))  # crosses zero
        root = -guide.alpha_hat[0] / guide.alpha_hat[1]
        grid = np.sort(np.append(np.linspace(-1.0, 1.0, 50), root))
        pilot = PilotCurve(grid=grid, eta=grid.copy(), h=0.3)
        with pytest.raises(GuideZeroError):
            theta_gamma_hat(data, GAUSSIAN, guide, 1.0, pilot)
        # additive correction tolerates the crossing
        val = theta_gamma_hat(data, GAUSSIAN, guide, 0.0, pilot)
        assert np.isfinite(val)

    def test_override_derivative_bandwidth(self):
        grid = np.linspace(-1.0, 1.0, 101)
        pilot = PilotCurve(grid=grid, eta=1.0 + grid ** 2, h=0.2)
        val = theta_gamma_hat(tiny_data(), GAUSSIAN, constant_guide(1.0), 0.0, pilot,
                              deriv_h=0.8)
        assert val == pytest.approx(8.0, abs=1e-9)


class TestPilotBandwidth:
    def test_interior_minimizer_for_curve_fit(self):
        data = make_poisson_data(42)
        grid = default_h_grid(data.x)
        h = pilot_bandwidth(data, POISSON, degree=1)
        assert grid[0] < h < grid[-1]

    def test_deterministic(self):
        data = make_poisson_data(42)
        assert pilot_bandwidth(data, POISSON, degree=1) == pilot_bandwidth(data, POISSON, degree=1)

    def test_duplicate_candidates_deduplicated(self):
        data = make_poisson_data(3)
        h = pilot_bandwidth(data, POISSON, degree=1, h_grid=[0.6, 0.6, 0.6])
        assert h == 0.6

    def test_too_few_observations(self):
        data = Dataset(np.linspace(0, 1, 5), np.ones(5))
        with pytest.raises(SelectionError):
            pilot_bandwidth(data, POISSON, degree=4)

    def test_empty_grid(self):
        data = make_poisson_data(3)
        with pytest.raises(SelectionError):
            pilot_bandwidth(data, POISSON, degree=1, h_grid=[])


class TestEstimateBiasVariance:
    def fit_pilot(self, data, fam, x0, degree=4, h=1.5):
        return fit_local(data, fam, None, LocalFitSpec(degree, h, 0.0, "vanilla"), x0)

    def test_gaussian_variance_matches_sandwich(self):
        rng = np.random.default_rng(14)
        x = np.sort(rng.uniform(-1.0, 1.0, 150))
        y = np.sin(2.0 * x) + 0.4 * rng.standard_normal(150)
        data = Dataset(x, y)
        x0, h, p = 0.1, 0.35, 1
        pilot = self.fit_pilot(data, GAUSSIAN, x0)
        _, v = estimate_bias_variance(data, GAUSSIAN, None,
                                      LocalFitSpec(p, h, 0.0, "vanilla"), x0, pilot)
        z = (x - x0) / h
        k = np.where(np.abs(z) <= 1.0, 0.75 * (1.0 - z * z), 0.0) / h
        m = k > 0
        X = np.vander(x[m] - x0, p + 1, increasing=True)
        A = X.T @ (X * k[m, None])
        B = X.T @ (X * (k[m] ** 2)[:, None])
        sandwich = np.linalg.solve(A, np.linalg.solve(A, B).T)
        assert v == pytest.approx(sandwich[0, 0], abs=1e-8)

    def test_noiseless_polynomial_has_zero_bias(self):
        x = np.linspace(-1.0, 1.0, 80)
        y = 0.5 - 1.2 * x  # exact degree-1 curve, gaussian noiseless
        data = Dataset(x, y)
        for x0 in (-0.5, 0.0, 0.4):
            pilot = self.fit_pilot(data, GAUSSIAN, x0)
            b, _ = estimate_bias_variance(data, GAUSSIAN, None,
                                          LocalFitSpec(1, 0.4, 0.0, "vanilla"), x0, pilot)
            assert abs(b) < 1e-8

    def test_variance_tracks_monte_carlo(self):
        # conditional-on-x variance of the gaussian local fit is exact WLS
        # algebra, so the estimate must track an empirical replication study
        rng = np.random.default_rng(77)
        x = np.sort(rng.uniform(-1.0, 1.0, 200))
        mean = np.sin(2.0 * x)
        x0, h = 0.0, 0.3
        spec = LocalFitSpec(1, h, 0.0, "vanilla")
        est = []
        for _ in range(300):
            y = mean + rng.standard_normal(200)
            est.append(fit_local(Dataset(x, y), GAUSSIAN, None, spec, x0).eta_hat)
        emp_var = float(np.var(est, ddof=1))
        data = Dataset(x, mean + rng.standard_normal(200))
        pilot = self.fit_pilot(data, GAUSSIAN, x0)
        _, v = estimate_bias_variance(data, GAUSSIAN, None, spec, x0, pilot)
        assert v == pytest.approx(emp_var, rel=0.25)

    def test_variance_shrinks_with_wider_window(self):
        data = make_poisson_data(4)
        x0 = 0.2
        pilot = self.fit_pilot(data, POISSON, x0)
        _, v_small = estimate_bias_variance(data, POISSON, None,
                                            LocalFitSpec(1, 0.3, 0.0, "vanilla"), x0, pilot)
        _, v_big = estimate_bias_variance(data, POISSON, None,
                                          LocalFitSpec(1, 1.2, 0.0, "vanilla"), x0, pilot)
        assert v_big < v_small

    def test_pilot_degree_too_low_rejected(self):
        data = make_poisson_data(4)
        x0 = 0.2
        shallow = fit_local(data, POISSON, None, LocalFitSpec(2, 1.0, 0.0, "vanilla"), x0)
        with pytest.raises(DomainError):
            estimate_bias_variance(data, POISSON, None,
                                   LocalFitSpec(1, 0.4, 0.0, "vanilla"), x0, shallow)

    def test_order_must_be_positive(self):
        data = make_poisson_data(4)
        x0 = 0.2
        pilot = self.fit_pilot(data, POISSON, x0)
        with pytest.raises(DomainError):
            estimate_bias_variance(data, POISSON, None,
                                   LocalFitSpec(1, 0.4, 0.0, "vanilla"), x0, pilot, a=0)


class TestSelectBandwidth:
    def test_chosen_is_argmin_of_reported_curve(self):
        data = make_poisson_data(42)
        xg = np.linspace(-1.8, 1.8, 15)
        sel = select_bandwidth(data, POISSON, None, LocalFitSpec(1, 1.0, 0.0, "vanilla"),
                               xg, h_grid=np.geomspace(0.25, 2.5, 8))
        assert sel.chosen_h == sel.h_grid[int(np.argmin(sel.imse_hat))]
        finite = sel.imse_hat[np.isfinite(sel.imse_hat)]
        assert np.all(finite > 0)

    def test_interior_minimum_on_wavy_curve(self):
        data = make_poisson_data(42)
        xg = np.linspace(-1.8, 1.8, 15)
        sel = select_bandwidth(data, POISSON, None, LocalFitSpec(1, 1.0, 0.0, "vanilla"), xg)
        assert sel.h_grid[0] < sel.chosen_h < sel.h_grid[-1]

    def test_single_candidate(self):
        data = make_poisson_data(5)
        sel = select_bandwidth(data, POISSON, None, LocalFitSpec(1, 1.0, 0.0, "vanilla"),
                               [0.0], h_grid=[0.5], pilot_h=1.5)
        assert sel.chosen_h == 0.5
        assert sel.imse_hat.shape == (1,)

    def test_duplicate_candidates_deduplicated(self):
        data = make_poisson_data(5)
        sel = select_bandwidth(data, POISSON, None, LocalFitSpec(1, 1.0, 0.0, "vanilla"),
                               [0.0, 0.5], h_grid=[0.5, 0.5, 0.8], pilot_h=1.5)
        assert len(sel.h_grid) == 2

    def test_x_grid_order_does_not_matter(self):
        data = make_poisson_data(5)
        xg = np.linspace(-1.5, 1.5, 9)
        perm = np.array([4, 0, 8, 2, 6, 1, 7, 3, 5])
        a = select_bandwidth(data, POISSON, None, LocalFitSpec(1, 1.0, 0.0, "vanilla"),
                             xg, h_grid=[0.4, 0.8], pilot_h=1.5)
        b = select_bandwidth(data, POISSON, None, LocalFitSpec(1, 1.0, 0.0, "vanilla"),
                             xg[perm], h_grid=[0.4, 0.8], pilot_h=1.5)
        np.testing.assert_array_equal(a.imse_hat, b.imse_hat)
        assert a.chosen_h == b.chosen_h

    def test_empty_x_grid(self):
        data = make_poisson_data(5)
        with pytest.raises(DomainError):
            select_bandwidth(data, POISSON, None, LocalFitSpec(1, 1.0, 0.0, "vanilla"),
                             [], h_grid=[0.5])

    def test_guided_mode_runs(self):
        data = make_poisson_data(42)
        guide = fit_guide(data, POISSON, parse_guide(TRUE_SHAPE_GUIDE))
        sel = select_bandwidth(data, POISSON, guide, LocalFitSpec(1, 1.0, 0.0, "unified"),
                               np.linspace(-1.5, 1.5, 9), h_grid=np.geomspace(0.3, 3.0, 6),
                               pilot_h=1.5)
        assert np.isfinite(sel.chosen_h)


class TestSelectGamma:
    def test_single_gamma_trivial(self):
        data = make_poisson_data(0)
        sel = select_gamma([data], POISSON, [parse_guide("poly:2")], grid=[1.3])
        assert sel.chosen_gamma == 1.3
        assert sel.chosen_guide == 0
        assert sel.theta_hat.shape == (1, 1)

    def test_theta_minimizer_reported_consistently(self):
        data = make_poisson_data(42)
        sel = select_gamma([data], POISSON, [parse_guide("poly:2")],
                           grid=[0.0, 0.5, 1.0, 2.0], method="theta")
        ji = int(np.argmin(sel.theta_hat[0]))
        assert sel.chosen_gamma == sel.grid[ji]
        assert sel.per_guide_gamma[0] == sel.grid[ji]
        assert np.all(sel.theta_hat[np.isfinite(sel.theta_hat)] >= 0)

    def test_two_guides_chosen_index_valid(self):
        data = make_poisson_data(42)
        sel = select_gamma([data], POISSON,
                           [parse_guide("poly:2"), parse_guide("poly:3")],
                           grid=[0.0, 1.0], method="theta")
        assert sel.chosen_guide in (0, 1)
        assert sel.theta_hat.shape == (2, 2)

    def test_cv_prefers_true_shape_guide(self):
        data = make_poisson_data(42)
        sel = select_gamma([data], POISSON, [parse_guide(TRUE_SHAPE_GUIDE)],
                           grid=[0.0, 1.0], method="cv", cv_h=0.5)
        assert sel.chosen_guide == 0
        assert np.min(sel.theta_hat) <= sel.vanilla_score

    def test_cv_falls_back_to_plain_fit_for_wild_guide(self):
        # a fast-oscillating guide makes the ratio correction erratic; the
        # plain fit must win and be reported as guide index -1
        data = make_poisson_data(42)
        sel = select_gamma([data], POISSON, [parse_guide("sin:omega=6,phase=0")],
                           grid=[2.0], method="cv", cv_h=0.5)
        assert sel.chosen_guide == -1
        assert sel.chosen_gamma == 0.0
        assert np.min(sel.theta_hat) > sel.vanilla_score

    def test_cv_never_beats_vanilla_and_picks_it(self):
        # the reported winner must carry a CV score no worse than the plain
        # fit's, whichever side wins
        data = make_poisson_data(11)
        for guide_text in ("poly:2", "sin:omega=6,phase=0"):
            sel = select_gamma([data], POISSON, [parse_guide(guide_text)],
                               grid=[0.0, 1.0, 2.0], method="cv", cv_h=0.5)
            if sel.chosen_guide >= 0:
                assert np.min(sel.theta_hat) <= sel.vanilla_score
            else:
                assert np.min(sel.theta_hat) > sel.vanilla_score

    def test_theta_method_has_no_vanilla_score(self):
        data = make_poisson_data(0)
        sel = select_gamma([data], POISSON, [parse_guide("poly:2")], grid=[1.0])
        assert np.isnan(sel.vanilla_score)

    def test_validation_errors(self):
        data = make_poisson_data(0)
        with pytest.raises(SelectionError):
            select_gamma([], POISSON, [parse_guide("poly:2")])
        with pytest.raises(SelectionError):
            select_gamma([data], POISSON, [])
        with pytest.raises(SelectionError):
            select_gamma([data], POISSON, [parse_guide("poly:2")], grid=[])
        with pytest.raises(DomainError):
            select_gamma([data], POISSON, [parse_guide("poly:2")], method="nope")
