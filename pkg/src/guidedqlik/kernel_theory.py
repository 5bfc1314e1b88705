"""Kernel moments, equivalent kernels, and closed-form asymptotic bias/variance.

The kernel is Epanechnikov throughout, K(z) = 0.75 (1 - z^2) on [-1, 1].
Equivalent kernels K_{r,p}(z; A) = r! |M_{r,p}(z; A)| / |N_p(A)| K(z) come
from Cramer's rule on the moment matrix N_p(A) with entries nu_{i+j}(A).
All integrals use 64-node Gauss-Legendre on the region, which is exact for
every polynomial-times-kernel integrand formed here (degree <= 127).

Bias formulas return the leading order only; the {1 + O(h)} factor is
dropped. For the even-parity branch the caller must supply the family and
the design density value and derivative at x0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    CapabilityError,
    DomainError,
    GuideZeroError,
    SingularMomentError,
)
from .families import QuasiFamily
from .guide import GuideFit
from .numerics import (
    coeffs_to_derivs,
    derivs_to_coeffs,
    series_power,
    series_product,
    signed_power,
)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def epanechnikov(z):
    z = np.asarray(z, dtype=float)
    out = np.where(np.abs(z) <= 1.0, 0.75 * (1.0 - z * z), 0.0)
    if np.ndim(z) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class KernelRegion:
    """Integration region A for kernel moments, intersected with [-1, 1]."""

    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if not (-1.0 <= self.lo < self.hi <= 1.0):
            raise DomainError(f"kernel region must satisfy -1 <= lo < hi <= 1, got ({self.lo}, {self.hi})")

    @classmethod
    def interior(cls) -> "KernelRegion":
        return cls(-1.0, 1.0)

    @classmethod
    def for_point(cls, x0: float, h: float, support: tuple) -> "KernelRegion":
        """Region {z : x0 + h z in support} cap [-1, 1] for a point x0.

        z matches the local fit's kernel argument (X - x0)/h, so a point
        near the left support edge loses negative z. Interior points
        (farther than h from both edges) get the full region.
        """
        a, b = float(support[0]), float(support[1])
        if h <= 0:
            raise DomainError("bandwidth must be positive")
        lo = max(-1.0, (a - x0) / h)
        hi = min(1.0, (b - x0) / h)
        if not lo < hi:
            raise DomainError(f"point {x0} is outside the reachable support for h={h}")
        return cls(lo, hi)

    @property
    def is_interior(self) -> bool:
        return self.lo == -1.0 and self.hi == 1.0


@lru_cache(maxsize=256)
def _quadrature(lo: float, hi: float):
    z = 0.5 * (hi - lo) * _GL_NODES + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * _GL_WEIGHTS
    z.flags.writeable = False
    w.flags.writeable = False
    return z, w


def nu_moment(l: int, region: KernelRegion = KernelRegion()) -> float:
    """nu_l(A) = int_A z^l K(z) dz."""
    if l < 0:
        raise DomainError("moment order must be nonnegative")
    z, w = _quadrature(region.lo, region.hi)
    return float(np.sum(w * z**l * epanechnikov(z)))


@lru_cache(maxsize=256)
def _moment_matrix(p: int, lo: float, hi: float) -> np.ndarray:
    region = KernelRegion(lo, hi)
    N = np.empty((p + 1, p + 1))
    for i in range(p + 1):
        for j in range(p + 1):
            N[i, j] = nu_moment(i + j, region)
    N.flags.writeable = False
    return N


def equivalent_kernel(r: int, p: int, z, region: KernelRegion = KernelRegion()):
    """K_{r,p}(z; A), vectorized over z."""
    if not 0 <= r <= p:
        raise DomainError(f"need 0 <= r <= p, got r={r}, p={p}")
    N = _moment_matrix(p, region.lo, region.hi)
    det_n = np.linalg.det(N)
    # relative degeneracy test: narrow-but-valid regions reach ~1e-14 of the
    # nu_0^(p+1) scale, true slivers collapse to < 1e-40
    scale = max(abs(N[0, 0]), np.finfo(float).tiny) ** (p + 1)
    if not np.isfinite(det_n) or abs(det_n) < 1e-18 * scale:
        raise SingularMomentError(f"moment matrix N_{p} is singular on region ({region.lo}, {region.hi})")
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    powers = z_arr[:, None] ** np.arange(p + 1)
    M = np.broadcast_to(N, (len(z_arr), p + 1, p + 1)).copy()
    M[:, :, r] = powers
    out = math.factorial(r) * (np.linalg.det(M) / det_n) * epanechnikov(z_arr)
    if np.ndim(z) == 0:
        return float(out[0])
    return out


def kernel_moment(q: int, r: int, p: int, region: KernelRegion = KernelRegion()) -> float:
    """int_A z^q K_{r,p}(z; A) dz. Equals r! when q = r, 0 for other q <= p."""
    z, w = _quadrature(region.lo, region.hi)
    return float(np.sum(w * z**q * equivalent_kernel(r, p, z, region)))


def kernel_product_moment(r: int, s: int, p: int, region: KernelRegion = KernelRegion()) -> float:
    """int_A K_{r,p} K_{s,p} dz, the kernel constant in the asymptotic variance."""
    z, w = _quadrature(region.lo, region.hi)
    return float(np.sum(w * equivalent_kernel(r, p, z, region) * equivalent_kernel(s, p, z, region)))


def asymptotic_sigma2(
    r: int,
    s: int,
    p: int,
    fam: QuasiFamily,
    eta0_x0: float,
    fX_x0: float,
    region: KernelRegion = KernelRegion(),
) -> float:
    """sigma^2_{r,s,p}(x0) = var(Y|x0) g'(mu)^2 f_X(x0)^-1 int K_{r,p} K_{s,p}.

    var(Y|x0) g'(mu)^2 is 1/rho(x0), so only the family and eta0(x0) enter.
    """
    if fX_x0 <= 0:
        raise DomainError("design density must be positive at x0")
    rho0 = float(fam.rho(eta0_x0))
    return kernel_product_moment(r, s, p, region) / (rho0 * fX_x0)


def asymptotic_variance(
    j: int,
    p: int,
    n: int,
    h: float,
    fam: QuasiFamily,
    eta0_x0: float,
    fX_x0: float,
    region: KernelRegion = KernelRegion(),
) -> float:
    """Leading-order variance of the j-th derivative estimate: sigma^2_{j,j,p} / (n h^(2j+1))."""
    return asymptotic_sigma2(j, j, p, fam, eta0_x0, fX_x0, region) / (n * h ** (2 * j + 1))


def _deriv_lookup(eta0_derivs, order: int) -> float:
    if callable(eta0_derivs):
        try:
            return float(eta0_derivs(order))
        except Exception as exc:
            raise CapabilityError(f"target-curve derivative of order {order} unavailable: {exc}") from exc
    try:
        return float(eta0_derivs[order])
    except (IndexError, TypeError):
        raise CapabilityError(f"target-curve derivative of order {order} unavailable") from None


def correction_derivs(
    guide: GuideFit, gamma: float, x0: float, eta0_derivs, max_order: int
) -> np.ndarray:
    """Derivatives at x0 of (eta0 - eta(., alpha)) / eta(., alpha)^gamma, orders 0..max_order.

    Built from Taylor coefficients: the difference series times the
    (-gamma)-power series of the guide.
    """
    e0 = guide.eval(x0)
    if abs(e0) < 1e-10:
        raise GuideZeroError(f"guide vanishes at x0={x0}; correction ratio undefined")
    n = max_order + 1
    eta0_d = np.array([_deriv_lookup(eta0_derivs, k) for k in range(n)])
    guide_d = guide.derivs_at(x0, max_order)
    diff_coeffs = derivs_to_coeffs(eta0_d - guide_d)
    inv_gamma_coeffs = series_power(derivs_to_coeffs(guide_d), -gamma, n)
    phi_coeffs = series_product(diff_coeffs, inv_gamma_coeffs, n)
    return coeffs_to_derivs(phi_coeffs)


def theoretical_bias(
    j: int,
    p: int,
    h: float,
    x0: float,
    guide: GuideFit,
    gamma: float,
    eta0_derivs,
    fam: QuasiFamily = None,
    fx: float = None,
    fx_deriv: float = None,
    region: KernelRegion = KernelRegion(),
) -> float:
    """Leading-order bias of the j-th derivative estimate (before the j! map).

    Odd p - j:  h^(p-j+1)/(p+1)! phi^(p+1)(x0) eta(x0)^gamma int z^(p+1) K_{j,p};
    even p - j > 0 adds the design-density term and needs fam, fx, fx_deriv.
    phi is the correction target (eta0 - eta(., alpha)) / eta(., alpha)^gamma.
    """
    if p - j <= 0:
        raise DomainError(f"bias formula requires p - j > 0, got p={p}, j={j}")
    if h <= 0:
        raise DomainError("bandwidth must be positive")
    odd_branch = (p - j) % 2 == 1
    max_order = p + 1 if odd_branch else p + 2
    phi = correction_derivs(guide, gamma, x0, eta0_derivs, max_order)
    e0 = guide.eval(x0)
    e0_gamma = signed_power(e0, gamma)

    if odd_branch:
        mom = kernel_moment(p + 1, j, p, region)
        return h ** (p - j + 1) / math.factorial(p + 1) * phi[p + 1] * e0_gamma * mom

    if fam is None or fx is None or fx_deriv is None:
        raise CapabilityError(
            "even-parity bias branch needs the family plus design density value and derivative at x0"
        )
    eta0_0 = _deriv_lookup(eta0_derivs, 0)
    eta0_1 = _deriv_lookup(eta0_derivs, 1)
    rho_series = np.array([float(fam.rho(eta0_0)), float(fam.rho_deriv(eta0_0)) * eta0_1])
    f_series = np.array([float(fx), float(fx_deriv)])
    eta_series = derivs_to_coeffs(guide.derivs_at(x0, 1))
    # (rho eta^{2 gamma} f)'(x0) / (rho eta^gamma f)(x0) via first-order series
    num_series = series_product(series_product(rho_series, series_power(eta_series, 2.0 * gamma, 2), 2), f_series, 2)
    denom0 = rho_series[0] * e0_gamma * f_series[0]
    ratio = num_series[1] / denom0

    mom_a = kernel_moment(p + 2, j, p, region)
    mom_b = kernel_moment(p + 1, j - 1, p, region) if j >= 1 else 0.0
    term1 = mom_a * e0_gamma / math.factorial(p + 2) * phi[p + 2]
    term2 = (mom_a - j * mom_b) / math.factorial(p + 1) * phi[p + 1] * ratio
    return h ** (p - j + 2) * (term1 + term2)


@dataclass(frozen=True)
class AsymptoticReport:
    """Bundle of the closed-form quantities at one evaluation point."""

    nu: np.ndarray
    sigma2: float
    bias: float
    branch: str


def make_asymptotic_report(
    j: int,
    p: int,
    h: float,
    x0: float,
    guide: GuideFit,
    gamma: float,
    eta0_derivs,
    fam: QuasiFamily,
    fx: float,
    fx_deriv: float = 0.0,
    region: KernelRegion = KernelRegion(),
) -> AsymptoticReport:
    nu = np.array([nu_moment(l, region) for l in range(2 * p + 3)])
    eta0_0 = _deriv_lookup(eta0_derivs, 0)
    sigma2 = asymptotic_sigma2(j, j, p, fam, eta0_0, fx, region)
    bias = theoretical_bias(j, p, h, x0, guide, gamma, eta0_derivs, fam, fx, fx_deriv, region)
    branch = "odd" if (p - j) % 2 == 1 else "even"
    return AsymptoticReport(nu=nu, sigma2=sigma2, bias=bias, branch=branch)
