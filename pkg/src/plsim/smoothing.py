"""Local-linear kernel smoothing.

Level and derivative weights of the local-linear estimator, the smoothing
matrix at the design points, and generalized cross-validation (GCV) for
bandwidth selection.

All weight formulas carry the ``1/n`` factor of the local moments, so level
weights sum to one and reproduce straight lines exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .exceptions import DegenerateFitError, DegenerateNeighborhood, NoValidBandwidthError

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# rows of the n x m weight block evaluated at once; bounds memory for large n
_CHUNK = 2048


class Kernel(enum.Enum):
    """Smoothing kernel family."""

    GAUSSIAN = "gaussian"

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return np.exp(-0.5 * u * u) / _SQRT_2PI

    @classmethod
    def coerce(cls, kernel: "Kernel | str") -> "Kernel":
        if isinstance(kernel, cls):
            return kernel
        try:
            return cls(str(kernel).lower())
        except ValueError:
            raise ValueError(f"unknown kernel {kernel!r}") from None


def kernel_eval(kernel: Kernel | str, u: float) -> float:
    """Evaluate ``K(u)``; non-finite ``u`` raises ``ValueError``."""
    if not math.isfinite(u):
        raise ValueError(f"kernel argument must be finite, got {u}")
    return float(Kernel.coerce(kernel)(u))


@dataclass(frozen=True)
class Bandwidths:
    """Smoothing scales.

    Attributes
    ----------
    b : float
        Stage-one bandwidth used to smooth the linear covariates on their own index.
    h : float
        Undersmoothed level bandwidth inside the estimating equation for the index.
    h1 : float
        Derivative bandwidth; equals the GCV-optimal bandwidth, which is also used
        for the profile estimate of the linear coefficients and the final link curve.
    """

    b: float
    h: float
    h1: float

    def __post_init__(self):
        for name in ("b", "h", "h1"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"bandwidth {name} must be positive and finite, got {value}")

    @property
    def h_opt(self) -> float:
        return self.h1


def derived_bandwidths(h_opt: float, n: int, b: float = 0.5) -> Bandwidths:
    """Two-bandwidth rule: ``h = h_opt * n**(-2/15)`` and ``h1 = h_opt``."""
    if not h_opt > 0:
        raise ValueError("h_opt must be positive")
    if n < 2:
        raise ValueError("n must be at least 2")
    return Bandwidths(b=b, h=h_opt * n ** (-2.0 / 15.0), h1=h_opt)


@dataclass(frozen=True)
class LocalMoments:
    s0: float
    s1: float
    s2: float

    @property
    def det(self) -> float:
        return self.s0 * self.s2 - self.s1 * self.s1


def _as_index(u) -> np.ndarray:
    u = np.asarray(u, dtype=float).ravel()
    if u.size == 0:
        raise ValueError("index vector is empty")
    return u


def _moments(d: np.ndarray, kh: np.ndarray, n: int):
    # d, kh: (m, n) blocks of offsets u_i - t and kernel values K_h(u_i - t)
    s0 = kh.sum(axis=1) / n
    s1 = (kh * d).sum(axis=1) / n
    s2 = (kh * d * d).sum(axis=1) / n
    return s0, s1, s2


def _degenerate(s0, s1, s2, spread: float) -> np.ndarray:
    det = s0 * s2 - s1 * s1
    return (s0 <= 1e-300) | (det <= 1e-12 * spread**2 * s0**2)


def local_moments(u, t: float, h: float, kernel: Kernel | str = Kernel.GAUSSIAN) -> LocalMoments:
    """Local moments ``s_l = n^-1 sum (u_i - t)^l K_h(u_i - t)`` for ``l = 0, 1, 2``."""
    u = _as_index(u)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    kern = Kernel.coerce(kernel)
    d = (u - t)[None, :]
    kh = kern(d / h) / h
    s0, s1, s2 = _moments(d, kh, u.size)
    return LocalMoments(float(s0[0]), float(s1[0]), float(s2[0]))


def _weight_block(u: np.ndarray, t: np.ndarray, h: float, kern: Kernel, derivative: bool):
    """Weights for evaluation points ``t`` (rows) over design ``u`` (columns).

    Returns the weight block and a boolean mask of degenerate rows.
    """
    n = u.size
    d = u[None, :] - t[:, None]
    kh = kern(d / h) / h
    s0, s1, s2 = _moments(d, kh, n)
    spread = float(np.ptp(u)) if n > 1 else 0.0
    bad = _degenerate(s0, s1, s2, spread)
    det = np.where(bad, 1.0, s0 * s2 - s1 * s1)
    if derivative:
        num = d * s0[:, None] - s1[:, None]
    else:
        num = s2[:, None] - d * s1[:, None]
    w = kh * num / (n * det[:, None])
    return w, bad


def weight_matrix(
    u,
    t,
    h: float,
    kernel: Kernel | str = Kernel.GAUSSIAN,
    derivative: bool = False,
    max_widen: int = 3,
) -> np.ndarray:
    """Stack of local-linear weight vectors, one row per evaluation point.

    Rows whose neighbourhood is degenerate are recomputed with the bandwidth
    widened by a factor 1.5, at most ``max_widen`` times, before
    :class:`DegenerateNeighborhood` is raised.
    """
    u = _as_index(u)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    kern = Kernel.coerce(kernel)
    w, bad = _weight_block(u, t, h, kern, derivative)
    width = h
    for _ in range(max_widen):
        if not bad.any():
            break
        width *= 1.5
        idx = np.flatnonzero(bad)
        w_new, bad_new = _weight_block(u, t[idx], width, kern, derivative)
        w[idx] = w_new
        bad[idx] = bad_new
    if bad.any():
        raise DegenerateNeighborhood(float(t[np.flatnonzero(bad)[0]]))
    return w


def level_weights(u, t: float, h: float, kernel: Kernel | str = Kernel.GAUSSIAN) -> np.ndarray:
    """Local-linear level weights at ``t``; they sum to one."""
    return weight_matrix(u, [t], h, kernel, derivative=False, max_widen=0)[0]


def derivative_weights(u, t: float, h1: float, kernel: Kernel | str = Kernel.GAUSSIAN) -> np.ndarray:
    """Local-linear slope weights at ``t``; they sum to zero."""
    return weight_matrix(u, [t], h1, kernel, derivative=True, max_widen=0)[0]


def smooth_at(
    u,
    targets,
    t,
    bw: float,
    kernel: Kernel | str = Kernel.GAUSSIAN,
    derivative: bool = False,
) -> np.ndarray:
    """Apply local-linear weights at many evaluation points.

    ``targets`` is a vector or an ``(n, m)`` matrix. Returns shape ``(len(t),)``
    or ``(len(t), m)`` accordingly. Memory is bounded by evaluating ``t`` in chunks.
    """
    u = _as_index(u)
    targets = np.asarray(targets, dtype=float)
    if targets.shape[0] != u.size:
        raise ValueError("targets must have one row per index value")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty((t.size,) + targets.shape[1:])
    for start in range(0, t.size, _CHUNK):
        sl = slice(start, start + _CHUNK)
        out[sl] = weight_matrix(u, t[sl], bw, kernel, derivative) @ targets
    return out


def smooth(u, targets, t: float, bw: float, kernel: Kernel | str = Kernel.GAUSSIAN) -> np.ndarray:
    """Smoothed value of every target column at a single point ``t``."""
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    return smooth_at(u, targets, [t], bw, kernel)[0]


def smoothing_matrix(u, bw: float, kernel: Kernel | str = Kernel.GAUSSIAN) -> np.ndarray:
    """``n x n`` matrix whose row ``j`` holds the level weights at ``u[j]``."""
    u = _as_index(u)
    return weight_matrix(u, u, bw, kernel)


def gcv_score(residuals, trace_s: float) -> float:
    """Generalized cross-validation score ``mean(r**2) / (1 - trace_s/n)**2``."""
    r = np.asarray(residuals, dtype=float).ravel()
    n = r.size
    if trace_s >= n:
        raise DegenerateFitError(f"smoother trace {trace_s:.6g} is not below n={n}")
    return float(np.mean(r * r) / ((n - trace_s) / n) ** 2)


def default_gcv_grid(u, size: int = 30) -> np.ndarray:
    """Log-spaced bandwidths between 0.05 and 2 index standard deviations."""
    sd = float(np.std(np.asarray(u, dtype=float), ddof=1))
    if not sd > 0:
        raise ValueError("index values have zero spread")
    return np.geomspace(0.05 * sd, 2.0 * sd, size)


def select_bandwidth_gcv(
    objective: Callable[[float], tuple],
    grid: Sequence[float],
    return_scores: bool = False,
):
    """Grid bandwidth minimizing the GCV score.

    ``objective(h)`` returns ``(residuals, trace_of_smoother)``. Grid points at
    which the objective raises a numerical failure are skipped; ties go to the
    smaller bandwidth.
    """
    grid = np.sort(np.asarray(grid, dtype=float).ravel())
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("bandwidth grid must be non-empty and positive")
    scores = np.full(grid.size, np.nan)
    for i, h in enumerate(grid):
        try:
            residuals, trace_s = objective(float(h))
            scores[i] = gcv_score(residuals, trace_s)
        except (DegenerateNeighborhood, DegenerateFitError, np.linalg.LinAlgError):
            continue
    if np.all(np.isnan(scores)):
        raise NoValidBandwidthError("every bandwidth in the grid is degenerate")
    best = int(np.nanargmin(scores))
    if return_scores:
        return float(grid[best]), grid, scores
    return float(grid[best])
