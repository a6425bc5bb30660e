"""Sliced inverse regression for a single index direction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .exceptions import RankDeficiencyError


def choose_pivot(coords) -> int:
    """Index (0-based) of the largest-magnitude coordinate; the first one wins ties."""
    coords = np.asarray(coords, dtype=float).ravel()
    if coords.size == 0 or not np.any(coords):
        raise ValueError("direction must be a non-zero vector")
    return int(np.argmax(np.abs(coords)))


@dataclass(frozen=True)
class Direction:
    """Unit vector with a positive pivot coordinate.

    ``pivot`` is 0-based.
    """

    coords: np.ndarray
    pivot: int

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).ravel()
        object.__setattr__(self, "coords", coords)
        if abs(np.linalg.norm(coords) - 1.0) > 1e-12:
            raise ValueError("direction must have unit norm")
        if not coords[self.pivot] > 0:
            raise ValueError("pivot coordinate must be positive")

    @classmethod
    def from_vector(cls, v, pivot: int | None = None) -> "Direction":
        """Normalize ``v`` and flip its sign so the pivot coordinate is positive.

        With ``pivot=None`` the largest-magnitude coordinate is used.
        """
        v = np.asarray(v, dtype=float).ravel()
        if pivot is None:
            pivot = choose_pivot(v)
        norm = np.linalg.norm(v)
        if not norm > 0:
            raise ValueError("direction must be a non-zero vector")
        v = v / norm
        if v[pivot] < 0:
            v = -v
        elif v[pivot] == 0:
            raise ValueError("pivot coordinate is zero")
        return cls(v, pivot)

    @property
    def p(self) -> int:
        return self.coords.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


def _inverse_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] <= 1e-12 * max(vals[-1], 0.0) or vals[-1] <= 0:
        raise RankDeficiencyError("sample covariance of the index covariates is singular")
    return (vecs / np.sqrt(vals)) @ vecs.T


def slice_labels(response, points_per_slice: int) -> np.ndarray:
    """Slice membership for each observation.

    Responses with at most ``n // points_per_slice`` distinct values get one slice
    per value; otherwise rows are ordered by response (ties by row order) and cut
    into contiguous slices of ``points_per_slice``, the last absorbing the remainder.
    """
    response = np.asarray(response, dtype=float).ravel()
    n = response.size
    n_slices = n // points_per_slice
    values, inverse = np.unique(response, return_inverse=True)
    if values.size <= n_slices:
        return inverse
    order = np.argsort(response, kind="stable")
    labels = np.empty(n, dtype=int)
    labels[order] = np.minimum(np.arange(n) // points_per_slice, n_slices - 1)
    return labels


def sir_direction(x, response, points_per_slice: int = 5) -> Direction:
    """First sliced-inverse-regression direction of ``response`` on ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    response = np.asarray(response, dtype=float).ravel()
    n, p = x.shape
    if response.size != n:
        raise ValueError("x and response have different numbers of rows")
    if points_per_slice < 2:
        raise ValueError("points_per_slice must be at least 2")
    if n < 2 * points_per_slice:
        raise ValueError(f"need at least {2 * points_per_slice} observations, got {n}")
    if p == 1:
        return Direction(np.ones(1), 0)

    xc = x - x.mean(axis=0)
    root_inv = _inverse_sqrt(np.cov(xc, rowvar=False))
    xs = xc @ root_inv

    labels = slice_labels(response, points_per_slice)
    counts = np.bincount(labels).astype(float)
    sums = np.zeros((counts.size, p))
    np.add.at(sums, labels, xs)
    keep = counts > 0
    means = sums[keep] / counts[keep, None]
    between = (means * (counts[keep, None] / n)).T @ means

    vals, vecs = np.linalg.eigh(between)
    candidates = [vecs[:, -1]]
    if np.isclose(vals[-1], vals[-2], rtol=1e-10, atol=1e-14):
        candidates.append(vecs[:, -2])
    dirs = [Direction.from_vector(root_inv @ c) for c in candidates]
    # lexicographically largest wins an eigenvalue tie
    return max(dirs, key=lambda d: tuple(d.coords))


class SlicedInverseRegression(TransformerMixin, BaseEstimator):
    """Estimate a single index direction by sliced inverse regression.

    Parameters
    ----------
    points_per_slice : int, default=5
        Number of observations per slice.

    Attributes
    ----------
    direction_ : ndarray of shape (n_features,)
        Unit-norm direction with its largest coordinate positive.
    """

    def __init__(self, points_per_slice=5):
        self.points_per_slice = points_per_slice

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        d = sir_direction(X, y, self.points_per_slice)
        self.direction_ = d.coords
        self.pivot_ = d.pivot
        return self

    def transform(self, X):
        check_is_fitted(self, "direction_")
        X = validate_data(self, X, reset=False)
        return (X @ self.direction_)[:, None]
