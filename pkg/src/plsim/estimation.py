"""Two-stage estimation for the partial-linear single-index model

    Y = Z @ theta + g(X @ beta) + e.

Stage one builds root-n initial values from sliced inverse regression and a
residualized regression; stage two refines ``theta`` by profile least squares
and ``beta`` by solving a constrained estimating equation, then fits the link.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    CollinearityError,
    DegenerateNeighborhood,
    ConstraintViolation,
    PivotSignError,
    RankDeficiencyError,
)
from .sir import Direction, choose_pivot, sir_direction
from .smoothing import (
    Bandwidths,
    Kernel,
    default_gcv_grid,
    derived_bandwidths,
    select_bandwidth_gcv,
    smooth_at,
    smoothing_matrix,
    weight_matrix,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Response ``y`` (n,), linear covariates ``z`` (n, q), index covariates ``x`` (n, p)."""

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if x.ndim == 1:
            x = x[:, None]
        n = y.size
        if z.shape[0] != n or x.shape[0] != n:
            raise ValueError("y, z and x must have the same number of rows")
        if n < 10:
            raise ValueError(f"need at least 10 observations, got {n}")
        if z.shape[1] < 1 or x.shape[1] < 1:
            raise ValueError("z and x need at least one column each")
        if not (np.isfinite(y).all() and np.isfinite(z).all() and np.isfinite(x).all()):
            raise ValueError("data contain non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]


@dataclass
class FitConfig:
    """Tuning knobs for :func:`fit`.

    ``h_opt`` bypasses GCV when given; ``h`` and ``h1`` override the derived
    estimating-equation bandwidths individually.
    """

    slice_size: int = 5
    iterations: int = 1
    stage_one_bandwidth: float = 0.5
    h_opt: float | None = None
    h: float | None = None
    h1: float | None = None
    gcv_grid: tuple | None = None
    gcv_grid_size: int = 30
    tol: float = 1e-8
    step_tol: float = 1e-10
    max_iter: int = 50
    kernel: str = "gaussian"


@dataclass
class StageOneFit:
    beta_z: list
    phi_hat: np.ndarray
    eta_hat: np.ndarray
    theta_init: np.ndarray
    beta_init: Direction
    g_init: np.ndarray
    gprime_init: np.ndarray


@dataclass
class SolverResult:
    direction: Direction
    converged: bool
    iterations: int
    residual_norm: float


@dataclass
class ModelFit:
    """Result of the full two-stage fit.

    ``theta_path`` and ``beta_path`` hold the estimates after every profile / index
    pass; the first entries are the non-iterated estimates.
    """

    theta: np.ndarray
    beta: Direction
    sigma2: float
    g_at_design: np.ndarray
    gprime_at_design: np.ndarray
    bandwidths: Bandwidths
    iterations: int
    r_squared: float
    index: np.ndarray
    residuals: np.ndarray
    z_tilde: np.ndarray
    trace_s: float
    converged: bool
    stage_one: StageOneFit
    theta_path: list = field(default_factory=list)
    beta_path: list = field(default_factory=list)
    solver: list = field(default_factory=list)
    gcv_grid: np.ndarray | None = None
    gcv_scores: np.ndarray | None = None



def ols(y, design) -> np.ndarray:
    """Least-squares coefficients of ``y`` on the columns of ``design``."""
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    y = np.asarray(y, dtype=float).ravel()
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise RankDeficiencyError("design matrix is rank deficient")
    return coef


def sigma2_hat(residuals) -> float:
    r = np.asarray(residuals, dtype=float).ravel()
    return float(np.mean(r * r))


# --- remove-one-component parametrization ---------------------------------


@dataclass(frozen=True)
class EmbeddedIndex:
    """Free coordinates of a unit direction after dropping the pivot (0-based)."""

    reduced: np.ndarray
    pivot: int

    def __post_init__(self):
        object.__setattr__(self, "reduced", np.asarray(self.reduced, dtype=float).ravel())

    @property
    def p(self) -> int:
        return self.reduced.size + 1


def _pivot_value(reduced: np.ndarray) -> float:
    s = 1.0 - float(reduced @ reduced)
    if not s > 0:
        raise ConstraintViolation(f"reduced coordinates have norm {np.sqrt(1 - s):.6g} >= 1")
    return np.sqrt(s)


def embed(e: EmbeddedIndex) -> np.ndarray:
    """Unit vector with ``sqrt(1 - |reduced|^2)`` inserted at the pivot."""
    return np.insert(e.reduced, e.pivot, _pivot_value(e.reduced))


def reduce(coords, r: int) -> EmbeddedIndex:
    """Drop coordinate ``r`` of a unit vector whose ``r``-th entry is positive."""
    coords = np.asarray(coords, dtype=float).ravel()
    if not coords[r] > 0:
        raise PivotSignError(f"pivot coordinate {r} is not positive")
    if abs(np.linalg.norm(coords) - 1.0) > 1e-8:
        raise ValueError("coordinates must have unit norm")
    return EmbeddedIndex(np.delete(coords, r), r)


def jacobian(e: EmbeddedIndex) -> np.ndarray:
    """``p x (p-1)`` derivative of :func:`embed` with respect to the reduced coordinates."""
    top = _pivot_value(e.reduced)
    m = e.reduced.size
    return np.insert(np.eye(m), e.pivot, -e.reduced / top, axis=0)


# --- stage one -------------------------------------------------------------


def stage_one(data: Dataset, slice_size: int = 5, b: float = 0.5, kernel=Kernel.GAUSSIAN) -> StageOneFit:
    """Initial root-n estimates of ``theta`` and ``beta``.

    With several linear covariates each column gets its own SIR direction and
    is residualized on that index.
    """
    beta_z = []
    phi_hat = np.empty_like(data.z)
    for j in range(data.q):
        d = sir_direction(data.x, data.z[:, j], slice_size)
        beta_z.append(d)
        u = data.x @ d.coords
        phi_hat[:, j] = smooth_at(u, data.z[:, j], u, b, kernel)
    eta_hat = data.z - phi_hat

    design = np.column_stack([np.ones(data.n), eta_hat])
    theta_init = ols(data.y, design)[1:]

    partial = data.y - data.z @ theta_init
    beta_init = sir_direction(data.x, partial, slice_size)
    u = data.x @ beta_init.coords
    g_init = smooth_at(u, partial, u, b, kernel)
    gprime_init = smooth_at(u, partial, u, b, kernel, derivative=True)
    return StageOneFit(beta_z, phi_hat, eta_hat, theta_init, beta_init, g_init, gprime_init)


# --- stage two -------------------------------------------------------------


def _profile_from_matrix(s: np.ndarray, y: np.ndarray, z: np.ndarray):
    y_tilde = y - s @ y
    z_tilde = z - s @ z
    gram = z_tilde.T @ z_tilde
    cond = np.linalg.cond(gram) if gram.size else np.inf
    # residualized columns that vanish relative to the raw ones are collinear too
    shrink = np.diag(gram) / np.maximum(np.sum(z * z, axis=0), 1e-300)
    if not np.isfinite(cond) or cond > 1e12 or shrink.min() < 1e-12:
        raise CollinearityError("residualized linear covariates are collinear with the index")
    theta = np.linalg.solve(gram, z_tilde.T @ y_tilde)
    return theta, z_tilde, y_tilde


def profile_theta(data: Dataset, beta, h: float, kernel=Kernel.GAUSSIAN):
    """Profile (partial regression) estimate of ``theta`` for a fixed index.

    Returns ``(theta, z_tilde, y_tilde)``.
    """
    u = data.x @ np.asarray(beta, dtype=float)
    s = smoothing_matrix(u, h, kernel)
    return _profile_from_matrix(s, data.y, data.z)


def gcv_profile_objective(data: Dataset, beta, kernel=Kernel.GAUSSIAN, require_derived: bool = False):
    """Bandwidth -> (profile residuals, trace of smoothing matrix), for GCV.

    With ``require_derived`` a bandwidth is rejected when the undersmoothed
    bandwidth derived from it is degenerate at some design point.
    """
    u = data.x @ np.asarray(beta, dtype=float)

    def objective(h):
        if require_derived:
            weight_matrix(u, u, derived_bandwidths(h, data.n).h, kernel)
        s = smoothing_matrix(u, h, kernel)
        theta, z_tilde, y_tilde = _profile_from_matrix(s, data.y, data.z)
        return y_tilde - z_tilde @ theta, float(np.trace(s))

    return objective


def estimating_fn(data: Dataset, theta, e: EmbeddedIndex, bw: Bandwidths, kernel=Kernel.GAUSSIAN) -> np.ndarray:
    """Estimating function for the reduced index coordinates.

    ``sum_i [r_i - ghat(u_i)] * ghat'(u_i) * J^T x_i`` with ``r = y - z @ theta``,
    ``ghat`` smoothed with ``bw.h`` and ``ghat'`` with ``bw.h1``.
    """
    if e.reduced.size == 0:
        return np.zeros(0)
    beta = embed(e)
    u = data.x @ beta
    r = data.y - data.z @ np.asarray(theta, dtype=float)
    g = weight_matrix(u, u, bw.h, kernel) @ r
    gp = weight_matrix(u, u, bw.h1, kernel, derivative=True) @ r
    return jacobian(e).T @ (data.x.T @ ((r - g) * gp))


def _project_inside(reduced: np.ndarray, limit: float = 1.0 - 1e-8) -> np.ndarray:
    norm = np.linalg.norm(reduced)
    return reduced if norm <= limit else reduced * (limit / norm)


def solve_beta_detailed(
    data: Dataset,
    theta,
    init,
    bw: Bandwidths,
    kernel=Kernel.GAUSSIAN,
    tol: float = 1e-8,
    step_tol: float = 1e-10,
    max_iter: int = 50,
    pivot: int | None = None,
) -> SolverResult:
    """Damped Gauss-Newton root search for the estimating equation.

    The Jacobian of the estimating function is formed by forward differences;
    each step is halved (at most 20 times) until the residual norm decreases.
    """
    init = Direction.from_vector(init, pivot)
    if init.p == 1:
        return SolverResult(Direction(np.ones(1), 0), True, 0, 0.0)
    n = data.n

    def residual(red):
        return estimating_fn(data, theta, EmbeddedIndex(red, init.pivot), bw, kernel)

    x = _project_inside(reduce(init.coords, init.pivot).reduced)
    f = residual(x)
    fnorm = np.linalg.norm(f)
    best_x, best_norm = x, fnorm
    converged = fnorm / n <= tol
    it = 0
    while not converged and it < max_iter:
        it += 1
        m = x.size
        jac = np.empty((m, m))
        try:
            for k in range(m):
                delta = 1e-7 * max(1.0, abs(x[k]))
                xk = x.copy()
                xk[k] += delta
                jac[:, k] = (residual(_project_inside(xk)) - f) / delta
        except DegenerateNeighborhood:
            break
        step = np.linalg.lstsq(jac, -f, rcond=None)[0]
        lam = 1.0
        accepted = False
        for _ in range(21):
            trial = _project_inside(x + lam * step)
            try:
                f_trial = residual(trial)
            except (np.linalg.LinAlgError, DegenerateNeighborhood):
                f_trial = None
            if f_trial is not None and np.linalg.norm(f_trial) < fnorm:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            break
        moved = np.linalg.norm(trial - x)
        x, f = trial, f_trial
        fnorm = np.linalg.norm(f)
        if fnorm < best_norm:
            best_x, best_norm = x, fnorm
        converged = fnorm / n <= tol
        if moved <= step_tol:
            break
    coords = embed(EmbeddedIndex(best_x, init.pivot))
    direction = Direction.from_vector(coords, init.pivot)
    if not converged:
        log.debug("estimating equation not solved: |R|/n=%.3g after %d steps", best_norm / n, it)
    return SolverResult(direction, bool(best_norm / n <= tol), it, float(best_norm))


def solve_beta(data: Dataset, theta, init, bw: Bandwidths, kernel=Kernel.GAUSSIAN, **kwargs) -> Direction:
    """Root of the estimating equation started at ``init``; see :func:`solve_beta_detailed`."""
    return solve_beta_detailed(data, theta, init, bw, kernel, **kwargs).direction


def select_h_opt(data: Dataset, beta, kernel=Kernel.GAUSSIAN, grid=None, grid_size: int = 30,
                 require_derived: bool = False):
    """GCV bandwidth of the profile criterion at a fixed index; returns ``(h, grid, scores)``."""
    beta = np.asarray(beta, dtype=float)
    if grid is None:
        grid = default_gcv_grid(data.x @ beta, grid_size)
    objective = gcv_profile_objective(data, beta, kernel, require_derived)
    return select_bandwidth_gcv(objective, grid, return_scores=True)


def fit(data: Dataset, cfg: FitConfig | None = None) -> ModelFit:
    """Run both stages and the final link fit."""
    cfg = cfg or FitConfig()
    kernel = Kernel.coerce(cfg.kernel)
    s1 = stage_one(data, cfg.slice_size, cfg.stage_one_bandwidth, kernel)

    grid = scores = None
    if cfg.h_opt is None:
        h_opt, grid, scores = select_h_opt(
            data, s1.beta_init, kernel, cfg.gcv_grid, cfg.gcv_grid_size, require_derived=True
        )
    else:
        h_opt = float(cfg.h_opt)
    bw = derived_bandwidths(h_opt, data.n, cfg.stage_one_bandwidth)
    if cfg.h is not None or cfg.h1 is not None:
        bw = Bandwidths(bw.b, cfg.h if cfg.h is not None else bw.h, cfg.h1 if cfg.h1 is not None else bw.h1)

    pivot = choose_pivot(s1.beta_init.coords)
    beta = Direction.from_vector(s1.beta_init.coords, pivot)
    theta_path, beta_path, solver = [], [], []
    for _ in range(cfg.iterations + 1):
        theta, z_tilde, _ = profile_theta(data, beta, bw.h_opt, kernel)
        res = solve_beta_detailed(
            data, theta, beta, bw, kernel,
            tol=cfg.tol, step_tol=cfg.step_tol, max_iter=cfg.max_iter, pivot=pivot,
        )
        beta = res.direction
        theta_path.append(theta)
        beta_path.append(beta)
        solver.append(res)

    # link and error variance at the final (theta, beta)
    u = data.x @ beta.coords
    s = smoothing_matrix(u, bw.h_opt, kernel)
    partial = data.y - data.z @ theta
    g_star = s @ partial
    gprime = smooth_at(u, partial, u, bw.h1, kernel, derivative=True)
    resid = partial - g_star
    tss = float(np.sum((data.y - data.y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else 0.0

    return ModelFit(
        theta=theta,
        beta=beta,
        sigma2=sigma2_hat(resid),
        g_at_design=g_star,
        gprime_at_design=gprime,
        bandwidths=bw,
        iterations=cfg.iterations,
        r_squared=float(np.clip(r2, 0.0, 1.0)),
        index=u,
        residuals=resid,
        z_tilde=z_tilde,
        trace_s=float(np.trace(s)),
        converged=solver[-1].converged,
        stage_one=s1,
        theta_path=theta_path,
        beta_path=beta_path,
        solver=solver,
        gcv_grid=grid,
        gcv_scores=scores,
    )


def predict_link(fitres: ModelFit, data: Dataset, t, kernel=Kernel.GAUSSIAN) -> np.ndarray:
    """Final link estimate evaluated at arbitrary index values ``t``."""
    partial = data.y - data.z @ fitres.theta
    return smooth_at(fitres.index, partial, np.atleast_1d(t), fitres.bandwidths.h_opt, kernel)
