"""Plug-in variance estimates and confidence regions for ``theta`` and ``beta``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimation import Dataset, ModelFit, jacobian, reduce
from .exceptions import DegenerateFitError, RankDeficiencyError
from .smoothing import Kernel, smooth_at

# --- chi-square quantiles from the regularized incomplete gamma -------------

_EPS = 1e-15
_TINY = 1e-300


def _gamma_p_series(a: float, x: float) -> float:
    term = total = 1.0 / a
    ap = a
    for _ in range(10000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = _TINY if abs(d) < _TINY else d
        c = b + an / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_p(a: float, x: float) -> float:
    """Lower regularized incomplete gamma ``P(a, x)``."""
    if a <= 0:
        raise ValueError("shape must be positive")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return min(1.0, _gamma_p_series(a, x))
    return max(0.0, 1.0 - _gamma_q_contfrac(a, x))


def chi2_cdf(x: float, dof: int) -> float:
    return regularized_gamma_p(0.5 * dof, 0.5 * x)


def chi2_quantile(dof: int, level: float) -> float:
    """``level``-quantile of the chi-square distribution, by bisection on the CDF."""
    if dof < 1:
        raise ValueError("dof must be at least 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie strictly between 0 and 1")
    lo, hi = 0.0, max(1.0, float(dof))
    while chi2_cdf(hi, dof) < level:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = chi2_cdf(mid, dof) - level
        if abs(f) <= 1e-10 * min(level, 1 - level) or hi - lo <= 1e-14 * max(1.0, hi):
            break
        if f < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def normal_quantile(level: float) -> float:
    """Two-sided normal critical value: ``z`` with ``P(|N(0,1)| <= z) = level``."""
    return math.sqrt(chi2_quantile(1, level))


# --- variance matrices -----------------------------------------------------


@dataclass
class VarianceEstimates:
    """``sigma_hat`` is ``q x q``; ``v_hat`` and ``q_hat`` are ``(p-1) x (p-1)``; ``jac`` is ``p x (p-1)``."""

    sigma_hat: np.ndarray
    v_hat: np.ndarray
    q_hat: np.ndarray
    jac: np.ndarray
    n: int


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def sigma_matrix_hat(z_tilde) -> np.ndarray:
    z_tilde = np.asarray(z_tilde, dtype=float)
    if z_tilde.ndim == 1:
        z_tilde = z_tilde[:, None]
    return _sym(z_tilde.T @ z_tilde / z_tilde.shape[0])


def vq_matrices(data: Dataset, fitres: ModelFit, kernel=Kernel.GAUSSIAN) -> VarianceEstimates:
    """Plug-in ``V`` and ``Q`` at the fitted index.

    ``E(X | index)`` is smoothed with the undersmoothed level bandwidth ``h``.
    """
    beta = fitres.beta
    jac = jacobian(reduce(beta.coords, beta.pivot))
    u = data.x @ beta.coords
    g3 = smooth_at(u, data.x, u, fitres.bandwidths.h, kernel)
    gp2 = np.asarray(fitres.gprime_at_design) ** 2
    xj = data.x @ jac
    cj = (data.x - g3) @ jac
    v = _sym((xj * gp2[:, None]).T @ xj / data.n)
    q = _sym((cj * gp2[:, None]).T @ cj / data.n)
    return VarianceEstimates(sigma_matrix_hat(fitres.z_tilde), v, q, jac, data.n)


def beta_covariance(ve: VarianceEstimates, sigma2: float) -> np.ndarray:
    """Estimated covariance of the index estimate, ``sigma2 J V^-1 Q V^-1 J^T / n``."""
    try:
        v_inv = np.linalg.inv(ve.v_hat)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError("V estimate is singular") from None
    return _sym(sigma2 * ve.jac @ v_inv @ ve.q_hat @ v_inv @ ve.jac.T / ve.n)


def efficiency_gap(ve: VarianceEstimates) -> float:
    """Smallest eigenvalue of ``J Q^-1 J^T - J V^-1 Q V^-1 J^T``."""
    try:
        q_inv = np.linalg.inv(ve.q_hat)
        v_inv = np.linalg.inv(ve.v_hat)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError("Q or V estimate is singular") from None
    j = ve.jac
    gap = j @ q_inv @ j.T - j @ v_inv @ ve.q_hat @ v_inv @ j.T
    return float(np.linalg.eigvalsh(_sym(gap))[0])


# --- regions ---------------------------------------------------------------


@dataclass
class ConfidenceRegion:
    """Ellipsoid ``{v : (v - center)^T shape (v - center) <= radius2}``."""

    center: np.ndarray
    shape: np.ndarray
    radius2: float
    dof: int
    level: float

    def distance2(self, v) -> float:
        d = np.atleast_1d(np.asarray(v, dtype=float)) - self.center
        return float(d @ self.shape @ d)

    def contains(self, v) -> bool:
        return self.distance2(v) <= self.radius2

    def interval(self, i: int = 0) -> tuple:
        """Projection of the ellipsoid on coordinate ``i``."""
        cov = np.linalg.inv(self.shape)
        half = math.sqrt(self.radius2 * cov[i, i])
        return float(self.center[i] - half), float(self.center[i] + half)

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "shape": self.shape.tolist(),
            "radius2": self.radius2,
            "dof": self.dof,
            "level": self.level,
            "intervals": [list(self.interval(i)) for i in range(self.center.size)],
        }


def theta_region(theta_hat, z_tilde, sigma2: float, level: float = 0.95) -> ConfidenceRegion:
    if not sigma2 > 0:
        raise DegenerateFitError("error variance estimate is zero")
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    z_tilde = np.asarray(z_tilde, dtype=float).reshape(-1, theta_hat.size)
    q = theta_hat.size
    return ConfidenceRegion(theta_hat, _sym(z_tilde.T @ z_tilde) / sigma2, chi2_quantile(q, level), q, level)


def beta_region(beta_hat, ve: VarianceEstimates, sigma2: float, contrast, level: float = 0.95) -> ConfidenceRegion:
    """Region for ``A^T beta`` where ``A`` is the ``p x l`` contrast matrix."""
    if not sigma2 > 0:
        raise DegenerateFitError("error variance estimate is zero")
    a = np.asarray(contrast, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    p, l = a.shape
    if l >= p or np.linalg.matrix_rank(a) < l:
        raise ValueError("contrast must have full column rank l < p")
    cov = a.T @ beta_covariance(ve, 1.0) @ a
    try:
        shape = np.linalg.inv(_sym(cov)) / sigma2
    except np.linalg.LinAlgError:
        raise RankDeficiencyError("contrast covariance is singular") from None
    center = a.T @ np.asarray(beta_hat, dtype=float)
    return ConfidenceRegion(center, _sym(shape), chi2_quantile(l, level), l, level)


def theta_test_statistic(theta_hat, z_tilde, sigma2: float) -> float:
    """Wald statistic for ``theta = 0``: signed root when ``q == 1``, quadratic form otherwise."""
    if not sigma2 > 0:
        raise DegenerateFitError("error variance estimate is zero")
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    z_tilde = np.asarray(z_tilde, dtype=float).reshape(-1, theta_hat.size)
    gram = z_tilde.T @ z_tilde
    if theta_hat.size == 1:
        return float(theta_hat[0] * math.sqrt(gram[0, 0] / sigma2))
    return float(theta_hat @ gram @ theta_hat / sigma2)


def sigma2_interval(residuals, level: float = 0.95) -> tuple:
    """Normal-approximation interval for the error variance using the residual fourth moment."""
    r = np.asarray(residuals, dtype=float).ravel()
    s2 = float(np.mean(r * r))
    var_e2 = max(float(np.mean(r**4)) - s2 * s2, 0.0)
    half = normal_quantile(level) * math.sqrt(var_e2 / r.size)
    return s2 - half, s2 + half
