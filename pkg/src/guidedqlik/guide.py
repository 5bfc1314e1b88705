"""Parametric guide families eta(x, alpha), linear in alpha, fitted globally.

A guide is a small basis expansion (polynomial, sinusoid with fixed frequency
and phase, or constant) whose coefficients maximize the summed quasi-likelihood
over the data. Fitted guides expose analytic x-derivatives of any order the
rest of the pipeline needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, ConvergenceError, DomainError, SingularDesignError
from .families import Dataset, QuasiFamily
from .numerics import solve_spd

# Plenty for any supported local degree; requests beyond it are a caller bug.
MAX_DERIV_ORDER = 24
ALPHA_NORM_LIMIT = 1e4
MAX_ITER = 100
MAX_HALVINGS = 30


@dataclass(frozen=True)
class GuideSpec:
    """Basis family for the guide. kind is one of: const, poly, sin."""

    kind: str
    degree: int = 0
    omega: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("const", "poly", "sin"):
            raise DomainError(f"unknown guide kind {self.kind!r}")
        if self.kind == "poly" and self.degree < 0:
            raise DomainError("polynomial guide degree must be >= 0")

    @property
    def q(self) -> int:
        """Number of coefficients."""
        if self.kind == "poly":
            return self.degree + 1
        if self.kind == "sin":
            return 2
        return 1

    def basis_matrix(self, x, order: int = 0) -> np.ndarray:
        """n x q matrix of order-th x-derivatives of the basis functions."""
        if order < 0 or order > MAX_DERIV_ORDER:
            raise CapabilityError(f"basis derivative order {order} unsupported")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = len(x)
        if self.kind == "const":
            col = np.ones(n) if order == 0 else np.zeros(n)
            return col[:, None]
        if self.kind == "poly":
            cols = []
            for k in range(self.degree + 1):
                if order > k:
                    cols.append(np.zeros(n))
                else:
                    c = math.perm(k, order)
                    cols.append(c * x ** (k - order))
            return np.column_stack(cols)
        # sin basis: (1, sin(omega x + phase)); the m-th derivative of the
        # second column is omega^m sin(omega x + phase + m pi/2)
        const_col = np.ones(n) if order == 0 else np.zeros(n)
        sin_col = self.omega ** order * np.sin(self.omega * x + self.phase + order * np.pi / 2.0)
        return np.column_stack([const_col, sin_col])


def parse_guide(text: str) -> GuideSpec:
    """Parse a guide id like "const", "poly:2", "sin:omega=0.785,phase=-1.571"."""
    text = text.strip()
    if text == "const":
        return GuideSpec("const")
    head, sep, rest = text.partition(":")
    if head == "poly" and sep:
        try:
            return GuideSpec("poly", degree=int(rest))
        except ValueError:
            raise DomainError(f"bad polynomial degree in guide {text!r}") from None
    if head == "sin" and sep:
        kv = {}
        for part in rest.split(","):
            key, eq, val = part.partition("=")
            if not eq:
                raise DomainError(f"bad sinusoid parameter {part!r} in guide {text!r}")
            kv[key.strip()] = val.strip()
        if set(kv) != {"omega", "phase"}:
            raise DomainError(f"sinusoid guide needs omega= and phase=, got {text!r}")
        try:
            return GuideSpec("sin", omega=float(kv["omega"]), phase=float(kv["phase"]))
        except ValueError:
            raise DomainError(f"non-numeric sinusoid parameter in guide {text!r}") from None
    raise DomainError(f"cannot parse guide {text!r}; expected const, poly:K, or sin:omega=...,phase=...")


@dataclass(frozen=True)
class GuideFit:
    """A guide spec with fitted coefficients; eval is pure and vectorized."""

    spec: GuideSpec
    alpha_hat: np.ndarray
    converged: bool
    deviance: float
    iterations: int = 0

    def eval(self, x, order: int = 0):
        B = self.spec.basis_matrix(x, order)
        out = B @ self.alpha_hat
        if np.ndim(x) == 0:
            return float(out[0])
        return out

    def derivs_at(self, x0: float, max_order: int) -> np.ndarray:
        """Vector of eta^(j)(x0, alpha_hat) for j = 0..max_order."""
        return np.array([self.eval(x0, order=j) for j in range(max_order + 1)])


def eval_guide(fit: GuideFit, x, order: int = 0):
    return fit.eval(x, order)


def constant_guide(value: float = 1.0) -> GuideFit:
    """A ready-made constant guide, no fitting involved."""
    return GuideFit(GuideSpec("const"), np.array([float(value)]), True, float("nan"))


def fit_guide(data: Dataset, fam: QuasiFamily, spec: GuideSpec) -> GuideFit:
    """Maximize sum_i Q(g_inv(eta(X_i, alpha)), Y_i) over alpha.

    The guide is linear in alpha and q2 < 0, so the objective is concave;
    Newton with step-halving converges quickly. Gaussian reduces to least
    squares and is solved directly.
    """
    data.validate_for(fam)
    B = spec.basis_matrix(data.x)
    n, q = B.shape
    if n < q:
        raise SingularDesignError(f"need at least {q} observations to fit {q} coefficients")
    if np.linalg.matrix_rank(B) < q:
        raise SingularDesignError("guide basis matrix is rank-deficient on this data")

    y = data.y

    def objective(alpha):
        return float(np.sum(fam.quasi_loglik(fam.mean(B @ alpha), y)))

    if fam.name == "gaussian-identity":
        alpha, *_ = np.linalg.lstsq(B, y, rcond=None)
        dev = -2.0 * objective(alpha)
        return GuideFit(spec, alpha, True, dev, iterations=0)

    alpha = np.zeros(q)
    obj = objective(alpha)
    for it in range(1, MAX_ITER + 1):
        eta = B @ alpha
        grad = B.T @ fam.score_q1(eta, y)
        if np.max(np.abs(grad)) <= max(1e-10, 1e-8 * (1.0 + abs(obj))):
            dev = -2.0 * obj
            return GuideFit(spec, alpha, True, dev, iterations=it - 1)
        w = -fam.curvature_q2(eta, y)
        neg_hess = (B * w[:, None]).T @ B
        try:
            step = solve_spd(neg_hess, grad)
        except np.linalg.LinAlgError:
            raise SingularDesignError("singular Hessian in guide fit") from None
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            cand = alpha + lam * step
            cand_obj = objective(cand)
            if cand_obj >= obj - 1e-12 * (1.0 + abs(obj)):
                break
            lam *= 0.5
        else:
            raise ConvergenceError("guide fit line search failed", last_iterate=alpha, n_iter=it)
        alpha = alpha + lam * step
        obj = cand_obj
        if np.linalg.norm(alpha) > ALPHA_NORM_LIMIT:
            raise ConvergenceError(
                "guide coefficients diverged (separation or unbounded likelihood)",
                last_iterate=alpha,
                n_iter=it,
            )
    raise ConvergenceError("guide fit did not converge", last_iterate=alpha, n_iter=MAX_ITER)
