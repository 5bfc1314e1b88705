"""Small numerical helpers: signed powers, Taylor-series algebra, SPD solves."""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve


def signed_power(t, s: float):
    """Real power t**s extended to negative bases.

    Integer exponents use the exact power. For non-integer s and t < 0 the
    odd extension sign(t)*|t|**s is used, so expressions like the guide
    ratio (eta_i/eta_0)**gamma stay finite and continuous when a guide
    changes sign inside a kernel window. For s = 0 the result is 1.
    """
    if abs(s - round(s)) < 1e-12:
        k = int(round(s))
        if np.ndim(t) == 0:
            return float(t) ** k
        return np.power(np.asarray(t, dtype=float), k)
    t_arr = np.asarray(t, dtype=float)
    out = np.where(t_arr < 0, -np.power(np.abs(t_arr), s), np.power(np.abs(t_arr), s))
    if np.ndim(t) == 0:
        return float(out)
    return out


def derivs_to_coeffs(derivs) -> np.ndarray:
    """Derivatives f^(k)(x0) -> Taylor coefficients a_k = f^(k)(x0)/k!."""
    d = np.asarray(derivs, dtype=float)
    return d / np.array([math.factorial(k) for k in range(len(d))], dtype=float)


def coeffs_to_derivs(coeffs) -> np.ndarray:
    """Taylor coefficients a_k -> derivatives f^(k)(x0) = k! a_k."""
    a = np.asarray(coeffs, dtype=float)
    return a * np.array([math.factorial(k) for k in range(len(a))], dtype=float)


def series_power(coeffs, s: float, n: int) -> np.ndarray:
    """Taylor coefficients of f(t)**s from those of f, through order n-1.

    Standard recurrence for powers of a power series (J. C. P. Miller):
        k a_0 b_k = sum_{i=1..k} (i (s+1) - k) a_i b_{k-i},  b_0 = a_0**s.
    Requires a nonzero constant term.
    """
    a = np.asarray(coeffs, dtype=float)
    if a[0] == 0.0:
        raise ZeroDivisionError("series_power needs a nonzero constant term")
    a = np.concatenate([a, np.zeros(max(0, n - len(a)))])[:n]
    b = np.zeros(n)
    b[0] = signed_power(a[0], s)
    for k in range(1, n):
        acc = 0.0
        for i in range(1, k + 1):
            acc += (i * (s + 1.0) - k) * a[i] * b[k - i]
        b[k] = acc / (k * a[0])
    return b


def series_product(a, b, n: int) -> np.ndarray:
    """Truncated Cauchy product of two coefficient arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.zeros(n)
    for k in range(n):
        lo = max(0, k - len(b) + 1)
        hi = min(k, len(a) - 1)
        for i in range(lo, hi + 1):
            out[k] += a[i] * b[k - i]
    return out


def solve_spd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for symmetric positive definite A.

    Cholesky with escalating diagonal jitter (starting at 1e-12 relative to
    the mean diagonal) before giving up; raises LinAlgError if the matrix
    stays indefinite, which callers translate into their own error types.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.mean(np.diag(A)), np.finfo(float).tiny)
    jitter = 0.0
    for attempt in range(4):
        try:
            c, low = cho_factor(A + jitter * np.eye(A.shape[0]), lower=True)
            return cho_solve((c, low), b)
        except np.linalg.LinAlgError:
            jitter = 1e-12 * scale * (100.0 ** attempt) if attempt == 0 else jitter * 100.0
    raise np.linalg.LinAlgError("matrix not positive definite after jitter")
