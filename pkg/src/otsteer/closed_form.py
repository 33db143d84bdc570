"""Transport maps with closed forms: 1-D monotone rearrangement and Gaussians."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, stats


@dataclass(frozen=True)
class Density1D:
    """A 1-D density on ``support = (lo, hi)`` (bounds may be infinite).

    ``cdf`` is optional; without it the CDF is obtained by quadrature.
    """

    pdf: object
    support: tuple = (-np.inf, np.inf)
    cdf: object = None

    def F(self, x):
        if self.cdf is not None:
            return float(self.cdf(x))
        lo, hi = self.support
        if x <= lo:
            return 0.0
        if x >= hi:
            return 1.0
        val, _ = integrate.quad(self.pdf, lo, x, limit=200)
        return val / self.total

    @cached_property
    def total(self):
        val, _ = integrate.quad(self.pdf, *self.support, limit=200)
        return val

    @classmethod
    def uniform(cls, a, b):
        return cls(pdf=lambda x: np.where((x >= a) & (x <= b), 1.0 / (b - a), 0.0),
                   support=(a, b),
                   cdf=lambda x: float(np.clip((x - a) / (b - a), 0.0, 1.0)))

    @classmethod
    def gaussian_mixture(cls, weights, means, sds):
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        mu = np.asarray(means, dtype=float)
        sd = np.asarray(sds, dtype=float)
        return cls(pdf=lambda x: np.sum(w * stats.norm.pdf(np.asarray(x)[..., None], mu, sd), axis=-1),
                   cdf=lambda x: float(np.sum(w * stats.norm.cdf(x, mu, sd))))


def solve_1d_cdf(rho0, rho1, x, tol=1e-12, max_iter=400):
    """Monotone transport of ``x``: find ``T`` with ``F1(T) = F0(x)`` by bisection.

    Raises ``ValueError`` if ``x`` is outside the support of ``rho0``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo0, hi0 = rho0.support
    if not lo0 <= x <= hi0:
        raise ValueError(f"x={x} outside the support {rho0.support}")
    target = rho0.F(x)
    lo, hi = rho1.support
    if not np.isfinite(lo):
        lo = -1.0 if not np.isfinite(hi) else hi - 1.0
        while rho1.F(lo) > target:
            lo = 2.0 * lo if lo < 0 else lo - 1.0
    if not np.isfinite(hi):
        hi = 1.0 if lo < 1.0 else 2.0 * lo
        while rho1.F(hi) < target:
            hi = 2.0 * hi if hi > 0 else hi + 1.0
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f = rho1.F(mid)
        if abs(f - target) <= tol or mid in (lo, hi):
            break
        if f < target:
            lo = mid
        else:
            hi = mid
    return mid


def _check_spd(S, name):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, atol=1e-12):
        raise ValueError(f"{name} must be a symmetric square matrix")
    if np.linalg.eigvalsh(S).min() <= 0:
        raise ValueError(f"{name} must be positive definite")
    return S


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        cov = _check_spd(self.cov, "covariance")
        if cov.shape[0] != self.mean.size:
            raise ValueError("mean and covariance dimensions differ")
        object.__setattr__(self, "cov", cov)

    def pdf(self, points):
        return stats.multivariate_normal(self.mean, self.cov).pdf(points)


def _sqrtm_psd(S):
    eig, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.clip(eig, 0.0, None))) @ V.T


def gaussian_map_matrix(g0, g1):
    """Symmetric PD ``A`` with ``A S0 A = S1`` (the optimal linear part)."""
    s0 = _sqrtm_psd(g0.cov)
    eig, V = np.linalg.eigh(g0.cov)
    s0_inv = (V / np.sqrt(eig)) @ V.T
    A = s0_inv @ _sqrtm_psd(s0 @ g1.cov @ s0) @ s0_inv
    return 0.5 * (A + A.T)


def gaussian_map(g0, g1, x):
    """Optimal quadratic-cost map ``A (x - m0) + m1`` between two Gaussians."""
    A = gaussian_map_matrix(g0, g1)
    return (np.asarray(x, dtype=float) - g0.mean) @ A.T + g1.mean
