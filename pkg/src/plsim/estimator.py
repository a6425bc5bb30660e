"""scikit-learn style front end for the partial-linear single-index model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from . import inference
from .estimation import Dataset, FitConfig, fit
from .smoothing import Kernel, smooth_at


class PartialLinearSingleIndexRegressor(RegressorMixin, BaseEstimator):
    """Estimate ``y = Z @ theta + g(X @ beta) + e`` in two stages.

    The linear covariates ``Z`` are passed to :meth:`fit` and :meth:`predict`
    separately, or selected from the columns of ``X`` with ``linear_features``.

    Parameters
    ----------
    linear_features : sequence of int, optional
        Column positions of ``X`` holding the linear covariates. Used only when
        ``Z`` is not given.
    slice_size : int, default=5
        Observations per slice in sliced inverse regression.
    iterations : int, default=1
        Extra passes of the profile / estimating-equation updates.
    stage_one_bandwidth : float, default=0.5
        Bandwidth for residualizing ``Z`` on its own index, in index units.
    bandwidth : float, optional
        Fixed optimal bandwidth; GCV is used when omitted.
    gcv_grid : array-like, optional
        Candidate bandwidths for GCV.
    standardize : bool, default=True
        Center and scale the index covariates before fitting.
    tol, max_iter
        Stopping rules of the estimating-equation solver.

    Attributes
    ----------
    theta_ : ndarray of shape (q,)
    beta_ : ndarray of shape (p,)
        Unit index direction on the original covariate scale.
    beta_standardized_ : ndarray of shape (p,)
        Direction acting on the standardized covariates.
    sigma2_ : float
    bandwidths_ : Bandwidths
    fit_ : ModelFit
        Full result, including Stage-One estimates and solver diagnostics.
    """

    def __init__(
        self,
        linear_features=None,
        slice_size=5,
        iterations=1,
        stage_one_bandwidth=0.5,
        bandwidth=None,
        gcv_grid=None,
        gcv_grid_size=30,
        standardize=True,
        tol=1e-8,
        max_iter=50,
        kernel="gaussian",
    ):
        self.linear_features = linear_features
        self.slice_size = slice_size
        self.iterations = iterations
        self.stage_one_bandwidth = stage_one_bandwidth
        self.bandwidth = bandwidth
        self.gcv_grid = gcv_grid
        self.gcv_grid_size = gcv_grid_size
        self.standardize = standardize
        self.tol = tol
        self.max_iter = max_iter
        self.kernel = kernel

    def _split(self, X, Z):
        if Z is not None:
            Z = check_array(Z, ensure_2d=False)
            if Z.ndim == 1:
                Z = Z[:, None]
            if Z.shape[0] != X.shape[0]:
                raise ValueError("X and Z have different numbers of rows")
            return X, Z
        if self.linear_features is None:
            raise ValueError("pass Z or set linear_features")
        lin = np.atleast_1d(np.asarray(self.linear_features, dtype=int))
        mask = np.zeros(X.shape[1], dtype=bool)
        mask[lin] = True
        if mask.all():
            raise ValueError("at least one column must remain in the index")
        return X[:, ~mask], X[:, mask]

    def _config(self) -> FitConfig:
        return FitConfig(
            slice_size=self.slice_size,
            iterations=self.iterations,
            stage_one_bandwidth=self.stage_one_bandwidth,
            h_opt=self.bandwidth,
            gcv_grid=None if self.gcv_grid is None else tuple(self.gcv_grid),
            gcv_grid_size=self.gcv_grid_size,
            tol=self.tol,
            max_iter=self.max_iter,
            kernel=self.kernel,
        )

    def _scale(self, Xi):
        return (Xi - self.x_mean_) / self.x_scale_

    def fit(self, X, y, Z=None):
        X, y = validate_data(self, X, y, y_numeric=True)
        Xi, Zm = self._split(X, Z)
        if self.standardize:
            self.x_mean_ = Xi.mean(axis=0)
            self.x_scale_ = Xi.std(axis=0, ddof=1)
            if np.any(self.x_scale_ == 0):
                raise ValueError("an index covariate is constant")
        else:
            self.x_mean_ = np.zeros(Xi.shape[1])
            self.x_scale_ = np.ones(Xi.shape[1])
        self.data_ = Dataset(y=y, z=Zm, x=self._scale(Xi))
        res = fit(self.data_, self._config())
        self.fit_ = res
        self.theta_ = res.theta
        self.beta_standardized_ = res.beta.coords
        raw = res.beta.coords / self.x_scale_
        self.beta_ = raw / np.linalg.norm(raw)
        self.sigma2_ = res.sigma2
        self.bandwidths_ = res.bandwidths
        self.r_squared_ = res.r_squared
        self.converged_ = res.converged
        return self

    def transform(self, X):
        """Index values ``X @ beta`` on the standardized scale, shape ``(n, 1)``."""
        check_is_fitted(self, "fit_")
        X = validate_data(self, X, reset=False)
        Xi = X if self.linear_features is None else self._split(X, None)[0]
        return (self._scale(Xi) @ self.beta_standardized_)[:, None]

    def link(self, t):
        """Estimated link function at index values ``t``."""
        check_is_fitted(self, "fit_")
        d = self.data_
        partial = d.y - d.z @ self.theta_
        return smooth_at(self.fit_.index, partial, np.atleast_1d(t), self.bandwidths_.h_opt, Kernel.coerce(self.kernel))

    def predict(self, X, Z=None):
        check_is_fitted(self, "fit_")
        X = validate_data(self, X, reset=False)
        Xi, Zm = self._split(X, Z)
        t = self._scale(Xi) @ self.beta_standardized_
        return Zm @ self.theta_ + self.link(t)

    # inference on the standardized scale

    def variance_estimates(self):
        check_is_fitted(self, "fit_")
        return inference.vq_matrices(self.data_, self.fit_, Kernel.coerce(self.kernel))

    def theta_region(self, level=0.95):
        return inference.theta_region(self.theta_, self.fit_.z_tilde, self.sigma2_, level)

    def beta_region(self, contrast, level=0.95):
        return inference.beta_region(self.fit_.beta, self.variance_estimates(), self.sigma2_, contrast, level)

    def residual_dof(self, convention="n"):
        """Residual degrees of freedom: ``"n"`` or ``"trace"`` (``n - q - tr(S)``)."""
        n, q = self.data_.n, self.data_.q
        if convention == "n":
            return float(n)
        if convention == "trace":
            return n - q - self.fit_.trace_s
        raise ValueError(f"unknown convention {convention!r}")

    def test_statistic(self, convention="n"):
        """Wald statistic for ``theta = 0`` with the error variance scaled to the chosen dof."""
        n = self.data_.n
        s2 = self.sigma2_ * n / self.residual_dof(convention)
        return inference.theta_test_statistic(self.theta_, self.fit_.z_tilde, s2)
