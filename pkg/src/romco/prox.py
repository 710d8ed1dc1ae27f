r"""Closed-form proximal operators used by the online updates.

* :func:`prox_nuclear` -- singular value soft-thresholding,
  ``argmin_U 1/(2 eta) ||U - M||_F^2 + lam ||U||_*``.
* :func:`prox_group_lasso` -- column-wise block shrinkage for ``||V||_{2,1}``.
* :func:`prox_logdet` -- the log-determinant surrogate
  ``sum_i log(1 + sigma_i^2)``; each singular value is shrunk by minimising

  .. math::
     \Theta(\sigma) = \frac{1}{2\rho}(\sigma - \hat\sigma)^2 + \log(1 + \sigma^2),
     \quad \rho = \eta\lambda,

  whose stationary points are the real roots of the cubic
  ``a s^3 + b s^2 + c s + d`` with ``a = 1/rho, b = d = -sigma_hat/rho,
  c = 1/rho + 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np

from .core import ParameterError, StructuralError

SVD_ZERO_CUTOFF = 1e-10
DELTA_TOL = 1e-12
TIE_TOL = 1e-12


class SvdTriple(NamedTuple):
    P: np.ndarray
    sigma: np.ndarray
    Q: np.ndarray

    def reconstruct(self, sigma=None) -> np.ndarray:
        s = self.sigma if sigma is None else sigma
        return (self.P * s) @ self.Q.T


def _finite(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise StructuralError("non-finite entries in matrix")
    return M


def svd_thin(M) -> SvdTriple:
    """Thin SVD with ``r = min(d, m)``; tiny singular values are zeroed.

    Values below ``1e-10 * max(sigma)`` are reported as exactly 0.
    """
    M = _finite(M)
    if M.ndim != 2:
        raise StructuralError("svd_thin expects a matrix")
    P, s, Qt = np.linalg.svd(M, full_matrices=False)
    if s.size and s[0] > 0:
        s = np.where(s < SVD_ZERO_CUTOFF * s[0], 0.0, s)
    return SvdTriple(P, s, Qt.T)


def prox_nuclear(M_hat, threshold: float) -> np.ndarray:
    if threshold < 0:
        raise ParameterError("threshold must be nonnegative")
    if threshold == 0:
        return _finite(M_hat).copy()
    svd = svd_thin(M_hat)
    return svd.reconstruct(np.maximum(svd.sigma - threshold, 0.0))


def prox_group_lasso(M_hat, threshold: float) -> np.ndarray:
    """Shrink each column toward zero by ``threshold`` in Euclidean norm."""
    if threshold < 0:
        raise ParameterError("threshold must be nonnegative")
    M_hat = np.asarray(M_hat, dtype=np.float64)
    norms = np.linalg.norm(M_hat, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > threshold, 1.0 - threshold / norms, 0.0)
    return M_hat * scale


# -- regularizer values ---------------------------------------------------

def nuclear_norm(M) -> float:
    return float(np.sum(svd_thin(M).sigma))


def logdet_penalty(M) -> float:
    """``log det(I + M^T M)`` evaluated through the singular values."""
    return float(np.sum(np.log1p(svd_thin(M).sigma ** 2)))


def group_norm(M) -> float:
    """``||M||_{2,1}``: sum of column norms."""
    return float(np.sum(np.linalg.norm(np.asarray(M, dtype=np.float64), axis=0)))


# -- cubic roots ------------------------------------------------------------

@dataclass(frozen=True)
class CubicCoeffs:
    a: float
    b: float
    c: float
    d: float

    @classmethod
    def for_prox(cls, sigma_hat: float, rho: float) -> "CubicCoeffs":
        inv = 1.0 / rho
        return cls(inv, -sigma_hat * inv, inv + 2.0, -sigma_hat * inv)

    def __call__(self, x: float) -> float:
        return ((self.a * x + self.b) * x + self.c) * x + self.d

    def derivative(self, x: float) -> float:
        return (3.0 * self.a * x + 2.0 * self.b) * x + self.c

    def scale(self) -> float:
        return max(1.0, abs(self.a), abs(self.b), abs(self.c), abs(self.d))


class CardanoTerms(NamedTuple):
    alpha: float
    beta: float
    delta: float
    shift: float  # -b / 3a

    def delta_is_zero(self) -> bool:
        scale = max(self.alpha ** 2, abs(self.beta) ** 3, 1.0)
        return abs(self.delta) <= DELTA_TOL * scale


def cardano_terms(co: CubicCoeffs) -> CardanoTerms:
    a, b, c, d = co.a, co.b, co.c, co.d
    alpha = b * c / (6 * a * a) - b ** 3 / (27 * a ** 3) - d / (2 * a)
    beta = c / (3 * a) - b * b / (9 * a * a)
    return CardanoTerms(alpha, beta, alpha * alpha + beta ** 3, -b / (3 * a))


def _polish(co: CubicCoeffs, x: float, steps: int = 3) -> float:
    fx = abs(co(x))
    for _ in range(steps):
        dfx = co.derivative(x)
        if dfx == 0 or fx == 0:
            break
        y = x - co(x) / dfx
        fy = abs(co(y))
        if not fy < fx:
            break
        x, fx = y, fy
    return x


def solve_cubic(co: CubicCoeffs) -> List[float]:
    """All distinct real roots of ``a x^3 + b x^2 + c x + d``, ascending.

    The discriminant ``alpha^2 + beta^3`` selects between one real root
    (Cardano), a repeated root, or three real roots (trigonometric form).
    Each root gets a few guarded Newton steps.
    """
    if co.a == 0:
        raise ParameterError("leading coefficient must be nonzero")
    t = cardano_terms(co)
    alpha, beta, shift = t.alpha, t.beta, t.shift
    if t.delta_is_zero():
        if abs(beta) <= 1e-8 * max(1.0, shift * shift):
            roots = [shift]
        else:
            k = float(np.cbrt(alpha))
            roots = [shift + 2 * k, shift - k]
    elif t.delta > 0:
        sq = math.sqrt(t.delta)
        # the larger-magnitude cube root first; the other follows from u*v = -beta
        u = float(np.cbrt(alpha + math.copysign(sq, alpha)))
        v = -beta / u if u != 0 else 0.0
        roots = [shift + u + v]
    else:
        r = math.sqrt(-beta)
        cos_arg = max(-1.0, min(1.0, alpha / (r ** 3)))
        theta = math.acos(cos_arg)
        roots = [shift + 2 * r * math.cos((theta - 2 * math.pi * k) / 3) for k in range(3)]
    roots = sorted(float(_polish(co, x)) for x in roots)
    out: List[float] = []
    for x in roots:
        if not out or abs(x - out[-1]) > 1e-12 * max(1.0, abs(x)):
            out.append(x)
    return out


# -- log-det scalar prox ---------------------------------------------------

def theta(sigma: float, sigma_hat: float, rho: float) -> float:
    return (sigma - sigma_hat) ** 2 / (2 * rho) + math.log1p(sigma * sigma)


def theta_prime(sigma: float, sigma_hat: float, rho: float) -> float:
    return 2 * sigma / (1 + sigma * sigma) + (sigma - sigma_hat) / rho


def bisect_stationary(sigma_hat: float, rho: float, max_iter: int = 200) -> float:
    """Root of ``theta_prime`` in ``[0, sigma_hat]`` by bisection.

    ``theta_prime(0) < 0 < theta_prime(sigma_hat)`` whenever ``sigma_hat > 0``;
    the bracket is unique only for ``1/rho > 1/4``.
    """
    lo, hi = 0.0, float(sigma_hat)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if theta_prime(mid, sigma_hat, rho) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def logdet_scalar_prox(sigma_hat: float, rho: float) -> float:
    """Minimiser over ``sigma >= 0`` of ``theta(sigma; sigma_hat, rho)``."""
    if not rho > 0:
        raise ParameterError(f"rho must be positive, got {rho}")
    if sigma_hat < 0:
        raise ParameterError("sigma_hat must be nonnegative")
    if sigma_hat == 0:
        return 0.0
    co = CubicCoeffs.for_prox(sigma_hat, rho)
    convex = 1.0 / rho > 0.25
    terms = cardano_terms(co)
    if convex and terms.delta_is_zero():
        return bisect_stationary(sigma_hat, rho)
    roots = solve_cubic(co)
    slack = 1e-12 * sigma_hat
    inside = [min(max(r, 0.0), sigma_hat) for r in roots if -slack <= r <= sigma_hat + slack]
    if convex:
        if len(inside) == 1 and 0 < inside[0] < sigma_hat:
            return inside[0]
        return bisect_stationary(sigma_hat, rho)
    best, best_val = 0.0, theta(0.0, sigma_hat, rho)
    for r in sorted(x for x in inside if x > 0):
        val = theta(r, sigma_hat, rho)
        if val < best_val - TIE_TOL:
            best, best_val = r, val
    return best


def prox_logdet(M_hat, eta1: float, lambda1: float, rho: float | None = None) -> np.ndarray:
    """Log-det prox: shrink each singular value via :func:`logdet_scalar_prox`.

    ``rho`` defaults to ``eta1 * lambda1``; passing it explicitly overrides
    that product (used by the growing-``1/rho`` schedule).
    """
    if not eta1 > 0:
        raise ParameterError("eta1 must be positive")
    if lambda1 < 0:
        raise ParameterError("lambda1 must be nonnegative")
    M_hat = np.asarray(M_hat, dtype=np.float64)
    if rho is None:
        rho = eta1 * lambda1
    if rho == 0:
        return _finite(M_hat).copy()
    svd = svd_thin(M_hat)
    shrunk = np.array([logdet_scalar_prox(float(s), rho) for s in svd.sigma])
    return svd.reconstruct(shrunk)
