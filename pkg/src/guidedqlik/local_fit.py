"""Locally weighted quasi-likelihood fits at a point, plain or guide-corrected.

The unified correction maximizes, over beta,

    sum_i Q(g_inv(eta(X_i) + (X_i^T beta - eta(x0)) * (eta(X_i)/eta(x0))^gamma), Y_i)
          * K_h(X_i - x0),

where eta(.) is the fitted guide. gamma = 0 is the additive correction,
gamma = 1 the multiplicative one, and a constant guide collapses everything
to the ordinary local polynomial fit ("vanilla"), which is also available
directly without any guide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceError,
    DomainError,
    EstimationError,
    GuideZeroError,
    SparseRegionError,
)
from .families import Dataset, QuasiFamily
from .guide import GuideFit
from .kernel_theory import epanechnikov
from .numerics import coeffs_to_derivs, derivs_to_coeffs, series_power, signed_power, solve_spd

MAX_ITER = 100
MAX_HALVINGS = 30
BETA_SUP_LIMIT = 1e4


@dataclass(frozen=True)
class LocalFitSpec:
    """Degree, bandwidth, and correction mode for one family of local fits."""

    p: int
    h: float
    gamma: float = 0.0
    mode: str = "unified"

    def __post_init__(self):
        if self.p < 0:
            raise DomainError("polynomial degree must be >= 0")
        if not self.h > 0:
            raise DomainError("bandwidth must be positive")
        if self.gamma < 0:
            raise DomainError("gamma must be >= 0")
        if self.mode not in ("vanilla", "unified"):
            raise DomainError(f"unknown local fit mode {self.mode!r}")

    def with_h(self, h: float) -> "LocalFitSpec":
        return LocalFitSpec(self.p, h, self.gamma, self.mode)

    def with_gamma(self, gamma: float) -> "LocalFitSpec":
        return LocalFitSpec(self.p, self.h, gamma, self.mode)


@dataclass(frozen=True)
class LocalFitResult:
    x0: float
    beta_hat: np.ndarray
    iterations: int
    converged: bool
    hessian: np.ndarray
    effective_n: int

    @property
    def eta_hat(self) -> float:
        return float(self.beta_hat[0])


@dataclass(frozen=True)
class DerivativeEstimates:
    """Estimates of the target curve's derivatives at x0, orders 0..p."""

    x0: float
    values: np.ndarray


def design_vector(x: float, x0: float, p: int) -> np.ndarray:
    """(1, x-x0, ..., (x-x0)^p)."""
    return (x - x0) ** np.arange(p + 1, dtype=float)


def guide_floor(guide: GuideFit, data: Dataset) -> float:
    """Threshold below which |eta(x0, alpha_hat)| counts as a guide zero."""
    return 1e-6 * (1.0 + float(np.max(np.abs(guide.eval(data.x)))))


def _safe_link(fam: QuasiFamily, ybar: float) -> float:
    if fam.name == "poisson-log":
        return float(fam.link(max(ybar, 1e-8)))
    if fam.name == "bernoulli-logit":
        return float(fam.link(min(max(ybar, 1e-6), 1.0 - 1e-6)))
    return float(fam.link(ybar))


@dataclass(frozen=True)
class LocalDesign:
    """The locally weighted system at x0: design, weights, and guide scaling.

    The working predictor for coefficients b is offset + (X @ b) * c;
    vanilla fits have c = 1 and offset = 0.
    """

    x0: float
    X: np.ndarray
    dx: np.ndarray
    y: np.ndarray
    k: np.ndarray
    c: np.ndarray
    offset: np.ndarray
    beta_init: np.ndarray

    @property
    def effective_n(self) -> int:
        return len(self.y)

    def predictor(self, beta: np.ndarray) -> np.ndarray:
        return self.offset + (self.X @ beta) * self.c


def local_design(
    data: Dataset,
    fam: QuasiFamily,
    guide: GuideFit,
    spec: LocalFitSpec,
    x0: float,
) -> LocalDesign:
    """Select the points with positive kernel weight and build the system.

    Fewer than p+1 such points, or fewer than p+1 distinct covariate values,
    is a SparseRegionError; a unified fit with the guide below its zero
    threshold at x0 is a GuideZeroError.
    """
    unified = spec.mode == "unified"
    if unified and guide is None:
        raise DomainError("unified mode requires a fitted guide")

    z = (data.x - x0) / spec.h
    k = epanechnikov(z) / spec.h
    mask = k > 0
    m = int(np.count_nonzero(mask))
    if m < spec.p + 1:
        raise SparseRegionError(f"only {m} points with positive weight near x0={x0}; need {spec.p + 1}")
    xl = data.x[mask]
    yl = data.y[mask]
    kl = k[mask]
    if len(np.unique(xl)) < spec.p + 1:
        raise SparseRegionError(f"fewer than {spec.p + 1} distinct covariate values near x0={x0}")

    dx = xl - x0
    X = np.vander(dx, spec.p + 1, increasing=True)
    beta = np.zeros(spec.p + 1)

    if unified:
        eta_l = guide.eval(xl)
        e0 = guide.eval(x0)
        # gamma = 0 needs no guide ratio, so a zero guide value is harmless there
        if spec.gamma != 0.0 and abs(e0) <= guide_floor(guide, data):
            raise GuideZeroError(f"guide value {e0:.3e} at x0={x0} is below the zero threshold")
        c = signed_power(eta_l, spec.gamma) / signed_power(e0, spec.gamma)
        offset = eta_l - e0 * c
        beta[0] = e0
    else:
        c = np.ones_like(xl)
        offset = np.zeros_like(xl)
        ybar = float(np.sum(kl * yl) / np.sum(kl))
        beta[0] = _safe_link(fam, ybar)

    return LocalDesign(x0=float(x0), X=X, dx=dx, y=yl, k=kl, c=c, offset=offset, beta_init=beta)


def fit_local(
    data: Dataset,
    fam: QuasiFamily,
    guide: GuideFit,
    spec: LocalFitSpec,
    x0: float,
) -> LocalFitResult:
    """Maximize the locally weighted quasi-likelihood at x0.

    Newton with step-halving on the (concave, for canonical families)
    objective.
    """
    data.validate_for(fam)
    d = local_design(data, fam, guide, spec, x0)
    X, yl, kl, c = d.X, d.y, d.k, d.c
    m = d.effective_n
    beta = d.beta_init

    def predictor(b):
        return d.predictor(b)

    def objective(b):
        return float(np.sum(kl * fam.quasi_loglik(fam.mean(predictor(b)), yl)))

    obj = objective(beta)
    neg_hess = None
    for it in range(1, MAX_ITER + 1):
        eta_work = predictor(beta)
        grad = X.T @ (kl * c * fam.score_q1(eta_work, yl))
        w2 = kl * c * c * (-fam.curvature_q2(eta_work, yl))
        neg_hess = (X * w2[:, None]).T @ X
        if np.max(np.abs(grad)) <= max(1e-10, 1e-8 * (1.0 + abs(obj))):
            return LocalFitResult(
                x0=float(x0),
                beta_hat=beta,
                iterations=it - 1,
                converged=True,
                hessian=-neg_hess,
                effective_n=m,
            )
        try:
            step = solve_spd(neg_hess, grad)
        except np.linalg.LinAlgError:
            raise ConvergenceError(
                f"singular local Hessian at x0={x0}", last_iterate=beta, n_iter=it
            ) from None
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            cand = beta + lam * step
            cand_obj = objective(cand)
            if cand_obj >= obj - 1e-12 * (1.0 + abs(obj)):
                break
            lam *= 0.5
        else:
            raise ConvergenceError(f"line search failed at x0={x0}", last_iterate=beta, n_iter=it)
        beta = beta + lam * step
        obj = cand_obj
        if np.max(np.abs(beta)) > BETA_SUP_LIMIT:
            raise ConvergenceError(
                f"local coefficients diverged at x0={x0} (separation?)", last_iterate=beta, n_iter=it
            )
    raise ConvergenceError(f"local fit did not converge at x0={x0}", last_iterate=beta, n_iter=MAX_ITER)


@dataclass(frozen=True)
class CurveFit:
    """Per-gridpoint local fit results; failed points hold None plus a note."""

    grid: np.ndarray
    results: tuple
    notes: tuple

    @property
    def eta_hat(self) -> np.ndarray:
        return np.array([r.eta_hat if r is not None else np.nan for r in self.results])

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.results if r is None)


def estimate_curve(
    data: Dataset,
    fam: QuasiFamily,
    guide: GuideFit,
    spec: LocalFitSpec,
    grid,
) -> CurveFit:
    """fit_local at each grid point; isolated failures are recorded, not fatal.

    A GuideZeroError at a point is retried with gamma = 0 there (the additive
    correction has no guide ratio), and the retry is noted.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if len(grid) == 0:
        raise DomainError("evaluation grid is empty")
    results = []
    notes = []
    for x0 in grid:
        try:
            results.append(fit_local(data, fam, guide, spec, x0))
        except GuideZeroError:
            if spec.mode == "unified" and spec.gamma != 0.0:
                try:
                    results.append(fit_local(data, fam, guide, spec.with_gamma(0.0), x0))
                    notes.append(f"x0={x0:g}: guide near zero, fell back to additive correction")
                    continue
                except Exception as exc:  # fallback failed too
                    results.append(None)
                    notes.append(f"x0={x0:g}: {exc}")
                    continue
            results.append(None)
            notes.append(f"x0={x0:g}: guide near zero")
        except (SparseRegionError, ConvergenceError) as exc:
            results.append(None)
            notes.append(f"x0={x0:g}: {exc}")
    if all(r is None for r in results):
        raise EstimationError("every grid point failed; " + "; ".join(notes[:3]))
    return CurveFit(grid=grid, results=tuple(results), notes=tuple(notes))


def _guide_power_derivs(guide: GuideFit, x0: float, power: float, order: int) -> np.ndarray:
    """Derivatives of eta(., alpha_hat)**power at x0, orders 0..order."""
    eta_coeffs = derivs_to_coeffs(guide.derivs_at(x0, order))
    return coeffs_to_derivs(series_power(eta_coeffs, power, order + 1))


def derivative_estimates(res: LocalFitResult, guide: GuideFit, gamma: float) -> DerivativeEstimates:
    """Map local coefficients to curve-derivative estimates.

    Recursion: values[0] = beta_0 and, for 1 <= j <= p,

        values[j] = j! beta_j
                    - eta(x0)^g * sum_{i<j} C(j,i) values[i] (eta^-g)^(j-i)(x0)
                    + eta(x0)^g * (eta^(1-g))^(j)(x0).

    A constant guide makes every correction term vanish, leaving j! beta_j.
    """
    p = len(res.beta_hat) - 1
    x0 = res.x0
    e0 = guide.eval(x0)
    vals = np.empty(p + 1)
    vals[0] = res.beta_hat[0]
    if p == 0:
        return DerivativeEstimates(x0=x0, values=vals)
    if gamma == 0.0:
        inv_pow = np.zeros(p + 1)
        inv_pow[0] = 1.0
        lin_pow = guide.derivs_at(x0, p)
        e0_gamma = 1.0
    else:
        if abs(e0) < 1e-12:
            raise GuideZeroError(f"guide vanishes at x0={x0}; derivative map undefined")
        inv_pow = _guide_power_derivs(guide, x0, -gamma, p)
        lin_pow = _guide_power_derivs(guide, x0, 1.0 - gamma, p)
        e0_gamma = signed_power(e0, gamma)
    for j in range(1, p + 1):
        acc = 0.0
        for i in range(j):
            acc += math.comb(j, i) * vals[i] * inv_pow[j - i]
        vals[j] = math.factorial(j) * res.beta_hat[j] - e0_gamma * acc + e0_gamma * lin_pow[j]
    return DerivativeEstimates(x0=x0, values=vals)


def derivative_transfer_matrix(guide: GuideFit, gamma: float, x0: float, p: int) -> np.ndarray:
    """The unit lower-triangular matrix L mapping coefficient-scale errors to
    derivative-scale errors in the recursion above; L = (I + W)^-1 with
    W[j, i] = C(j,i) (eta^-g)^(j-i)(x0) eta(x0)^g for i < j.
    """
    e0 = guide.eval(x0)
    if gamma == 0.0:
        inv_pow = np.zeros(p + 1)
        inv_pow[0] = 1.0
        e0_gamma = 1.0
    else:
        if abs(e0) < 1e-12:
            raise GuideZeroError(f"guide vanishes at x0={x0}")
        inv_pow = _guide_power_derivs(guide, x0, -gamma, p)
        e0_gamma = signed_power(e0, gamma)
    W = np.zeros((p + 1, p + 1))
    for j in range(1, p + 1):
        for i in range(j):
            W[j, i] = math.comb(j, i) * inv_pow[j - i] * e0_gamma
    return np.linalg.inv(np.eye(p + 1) + W)
