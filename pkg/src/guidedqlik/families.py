"""Response families defined by a variance function and a link.

Each family exposes the quasi-likelihood Q(mu, y) = int_y^mu (y - w)/V(w) dw
(with Q(y, y) = 0), its first two derivatives in the linear predictor eta,
and rho(eta) = 1 / (g'(mu)^2 V(mu)). All three built-ins use the canonical
link, so q1(eta, y) = y - g_inv(eta) and q2(eta, y) = -V(g_inv(eta)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DomainError

# Linear predictors are clamped to +-ETA_MAX before exp/logistic so Newton
# steps through extreme iterates cannot overflow; optima are unaffected.
ETA_MAX = 35.0
MEAN_EPS = 1e-12


def _clip_eta(eta):
    return np.clip(eta, -ETA_MAX, ETA_MAX)


class QuasiFamily:
    """Base class; subclasses fill in link, variance, and Q."""

    name = "abstract"
    canonical = True

    def mean(self, eta):
        """Inverse link g_inv(eta)."""
        raise NotImplementedError

    def mean_deriv(self, eta):
        """d/deta g_inv(eta)."""
        raise NotImplementedError

    def link(self, mu):
        raise NotImplementedError

    def variance(self, mu):
        """V(mu)."""
        raise NotImplementedError

    def quasi_loglik(self, mu, y):
        raise NotImplementedError

    def score_q1(self, eta, y):
        """dQ(g_inv(eta), y)/deta. Canonical: y - g_inv(eta)."""
        return np.asarray(y, dtype=float) - self.mean(eta)

    def curvature_q2(self, eta, y):
        """d2Q/deta2. Canonical: -V(g_inv(eta)), free of y."""
        out = -self.variance(self.mean(eta))
        return out + np.zeros_like(np.asarray(y, dtype=float))

    def rho(self, eta0):
        """1 / (g'(mu)^2 V(mu)) at mu = g_inv(eta0); V(mu) when canonical."""
        return self.variance(self.mean(eta0))

    def rho_deriv(self, eta0):
        """d rho / d eta at eta0 (analytic per family)."""
        raise NotImplementedError

    def validate_mu(self, mu) -> None:
        raise NotImplementedError

    def validate_y(self, y) -> None:
        raise NotImplementedError

    def __repr__(self):
        return f"<QuasiFamily {self.name}>"


class GaussianIdentity(QuasiFamily):
    """V(mu) = 1, identity link. Q(mu, y) = -(y - mu)^2 / 2."""

    name = "gaussian-identity"

    def mean(self, eta):
        return np.asarray(eta, dtype=float) + 0.0

    def mean_deriv(self, eta):
        return np.ones_like(np.asarray(eta, dtype=float))

    def link(self, mu):
        return np.asarray(mu, dtype=float) + 0.0

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def quasi_loglik(self, mu, y):
        r = np.asarray(y, dtype=float) - np.asarray(mu, dtype=float)
        return -0.5 * r * r

    def rho_deriv(self, eta0):
        return np.zeros_like(np.asarray(eta0, dtype=float))

    def validate_mu(self, mu) -> None:
        if not np.all(np.isfinite(mu)):
            raise DomainError("gaussian mean must be finite")

    def validate_y(self, y) -> None:
        if not np.all(np.isfinite(y)):
            raise DomainError("gaussian response must be finite")


class PoissonLog(QuasiFamily):
    """V(mu) = mu, log link. Q(mu, y) = y log(mu/y) - (mu - y), Q(mu, 0) = -mu."""

    name = "poisson-log"

    def mean(self, eta):
        return np.exp(_clip_eta(np.asarray(eta, dtype=float)))

    def mean_deriv(self, eta):
        return self.mean(eta)

    def link(self, mu):
        return np.log(np.asarray(mu, dtype=float))

    def variance(self, mu):
        return np.asarray(mu, dtype=float) + 0.0

    def quasi_loglik(self, mu, y):
        mu = np.asarray(mu, dtype=float)
        y = np.asarray(y, dtype=float)
        safe_y = np.where(y > 0, y, 1.0)
        return np.where(y > 0, y * np.log(mu / safe_y), 0.0) - (mu - y)

    def rho_deriv(self, eta0):
        return self.mean(eta0)

    def validate_mu(self, mu) -> None:
        if not np.all(np.asarray(mu) > 0):
            raise DomainError("poisson mean must be positive")

    def validate_y(self, y) -> None:
        y = np.asarray(y)
        if not (np.all(np.isfinite(y)) and np.all(y >= 0)):
            raise DomainError("poisson response must be finite and nonnegative")


class BernoulliLogit(QuasiFamily):
    """V(mu) = mu(1 - mu), logit link.

    Q(mu, y) = y log(mu) + (1-y) log(1-mu) minus the same expression at
    mu = y (the entropy term, zero for y in {0, 1} with 0 log 0 = 0), so
    Q(y, y) = 0 also for fractional responses.
    """

    name = "bernoulli-logit"

    def mean(self, eta):
        p = expit(_clip_eta(np.asarray(eta, dtype=float)))
        return np.clip(p, MEAN_EPS, 1.0 - MEAN_EPS)

    def mean_deriv(self, eta):
        p = self.mean(eta)
        return p * (1.0 - p)

    def link(self, mu):
        mu = np.asarray(mu, dtype=float)
        return np.log(mu) - np.log1p(-mu)

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        return mu * (1.0 - mu)

    @staticmethod
    def _xlogy(a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        safe_b = np.where(a != 0, b, 1.0)
        return np.where(a != 0, a * np.log(safe_b), 0.0)

    def quasi_loglik(self, mu, y):
        mu = np.clip(np.asarray(mu, dtype=float), MEAN_EPS, 1.0 - MEAN_EPS)
        y = np.asarray(y, dtype=float)
        ll = self._xlogy(y, mu) + self._xlogy(1.0 - y, 1.0 - mu)
        ent = self._xlogy(y, y) + self._xlogy(1.0 - y, 1.0 - y)
        return ll - ent

    def rho_deriv(self, eta0):
        p = self.mean(eta0)
        return p * (1.0 - p) * (1.0 - 2.0 * p)

    def validate_mu(self, mu) -> None:
        mu = np.asarray(mu)
        if not (np.all(mu > 0) and np.all(mu < 1)):
            raise DomainError("bernoulli mean must lie strictly in (0, 1)")

    def validate_y(self, y) -> None:
        y = np.asarray(y)
        if not (np.all(np.isfinite(y)) and np.all(y >= 0) and np.all(y <= 1)):
            raise DomainError("bernoulli response must lie in [0, 1]")


_FAMILIES = {
    "gaussian": GaussianIdentity(),
    "gaussian-identity": GaussianIdentity(),
    "poisson": PoissonLog(),
    "poisson-log": PoissonLog(),
    "bernoulli": BernoulliLogit(),
    "bernoulli-logit": BernoulliLogit(),
}


def get_family(name: str) -> QuasiFamily:
    """Look up a built-in family by id ("gaussian", "poisson", "bernoulli")."""
    try:
        return _FAMILIES[name.lower()]
    except KeyError:
        raise DomainError(f"unknown family {name!r}; choose from gaussian, poisson, bernoulli") from None


# Module-level wrappers matching the functional call style used elsewhere.

def quasi_loglik(fam: QuasiFamily, mu, y):
    return fam.quasi_loglik(mu, y)


def score_q1(fam: QuasiFamily, eta, y):
    return fam.score_q1(eta, y)


def curvature_q2(fam: QuasiFamily, eta, y):
    return fam.curvature_q2(eta, y)


def rho(fam: QuasiFamily, eta0):
    return fam.rho(eta0)


@dataclass(frozen=True)
class Dataset:
    """Paired covariates and responses, held as float arrays."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if x.ndim != 1 or y.ndim != 1:
            raise DomainError("dataset x and y must be one-dimensional")
        if len(x) != len(y):
            raise DomainError(f"x and y lengths differ: {len(x)} vs {len(y)}")
        if len(x) == 0:
            raise DomainError("dataset is empty")
        if not np.all(np.isfinite(x)):
            raise DomainError("covariates must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return len(self.x)

    def validate_for(self, fam: QuasiFamily) -> "Dataset":
        fam.validate_y(self.y)
        return self
