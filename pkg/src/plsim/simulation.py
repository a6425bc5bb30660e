"""Monte Carlo study of the quadratic partial-linear single-index model.

Data follow ``Y = (X @ beta0 - 0.5)**2 + Z * theta0 + noise_scale * e`` with
``X`` uniform on the unit cube, ``e`` standard normal and ``Z`` Bernoulli with
a logistic probability in ``X @ beta_z``.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .estimation import Dataset, FitConfig, ModelFit, fit, predict_link, profile_theta, select_h_opt
from .exceptions import PLSIMError, StudyError
from .smoothing import Kernel, smooth_at

log = logging.getLogger(__name__)

BETA0 = (0.75, 0.5, -0.25, -0.25, 0.25)
BETA_Z_ORTHOGONAL = (0.5, 0.0, 0.5, 0.5, -0.5)


def true_link(t):
    t = np.asarray(t, dtype=float)
    return (t - 0.5) ** 2


def true_link_derivative(t):
    return 2.0 * (np.asarray(t, dtype=float) - 0.5)


def angle(a, b) -> float:
    """Angle in ``[0, pi/2]`` between the lines spanned by ``a`` and ``b``."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("angle undefined for a zero vector")
    c = min(1.0, abs(float(a @ b)) / (na * nb))
    return math.acos(c)


@dataclass(frozen=True)
class SimDesign:
    n: int = 100
    reps: int = 2000
    theta0: float = 1.0
    beta0: tuple = BETA0
    beta_z: tuple = BETA0
    noise_scale: float = 0.2
    mode: str = "parallel"
    seed: int = 20100101

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be positive")
        if self.n < 10:
            raise ValueError("n must be at least 10")
        b0 = np.asarray(self.beta0, dtype=float)
        object.__setattr__(self, "beta0", tuple(b0 / np.linalg.norm(b0)))

    @classmethod
    def for_mode(cls, mode: str, **kwargs) -> "SimDesign":
        """Design with ``beta_z`` parallel or orthogonal to ``beta0``."""
        if mode == "parallel":
            beta_z = kwargs.pop("beta_z", BETA0)
        elif mode == "orthogonal":
            beta_z = kwargs.pop("beta_z", BETA_Z_ORTHOGONAL)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return cls(mode=mode, beta_z=tuple(beta_z), **kwargs)


def replicate_rng(seed: int, rep_index: int) -> np.random.Generator:
    """Counter-based stream keyed by ``(seed, rep_index)``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(rep_index,))
    return np.random.Generator(np.random.Philox(ss))


def generate(design: SimDesign, rep_index: int = 0) -> Dataset:
    rng = replicate_rng(design.seed, rep_index)
    n, p = design.n, len(design.beta0)
    x = rng.uniform(0.0, 1.0, size=(n, p))
    eta = x @ np.asarray(design.beta_z, dtype=float)
    prob = 1.0 / (1.0 + np.exp(-eta))
    z = (rng.uniform(size=n) < prob).astype(float)
    e = rng.standard_normal(n)
    y = true_link(x @ np.asarray(design.beta0)) + design.theta0 * z + design.noise_scale * e
    return Dataset(y=y, z=z[:, None], x=x)


@dataclass
class ReplicateResult:
    """Per-replicate errors; index ``k`` of each list is after ``k`` iterations."""

    theta_err: list
    angle: list
    sigma2_hat: float
    converged: bool
    oracle_theta_err: float
    h_opt: float
    rep_index: int = 0
    curve: np.ndarray | None = field(default=None, repr=False)
    fit: ModelFit | None = field(default=None, repr=False)


@dataclass
class SummaryRow:
    method: str
    bias: float
    sd: float
    mse: float

    @classmethod
    def from_errors(cls, method: str, errors) -> "SummaryRow":
        e = np.asarray(errors, dtype=float)
        m = e.size
        bias = math.fsum(e) / m
        sd = math.sqrt(math.fsum((e - bias) ** 2) / (m - 1)) if m > 1 else 0.0
        mse = bias * bias + sd * sd * (m - 1) / m
        return cls(method, bias, sd, mse)


@dataclass
class StudyResult:
    design: SimDesign
    rows: list
    angle_rows: list
    replicates: list
    failures: int
    curve_grid: np.ndarray | None = None

    @property
    def mean_curve(self) -> np.ndarray | None:
        if self.curve_grid is None:
            return None
        return np.mean([r.curve for r in self.replicates], axis=0)

    def row(self, method: str) -> SummaryRow:
        for r in self.rows + self.angle_rows:
            if r.method == method:
                return r
        raise KeyError(method)


def oracle_theta(data: Dataset, beta0, cfg: FitConfig) -> float:
    """Profile estimate of ``theta`` with the true index, GCV bandwidth."""
    kernel = Kernel.coerce(cfg.kernel)
    h, _, _ = select_h_opt(data, beta0, kernel, cfg.gcv_grid, cfg.gcv_grid_size)
    theta, _, _ = profile_theta(data, beta0, h, kernel)
    return float(theta[0])


def run_replicate(design: SimDesign, cfg: FitConfig, rep_index: int, keep_fit: bool = False,
                  curve_grid=None) -> ReplicateResult:
    data = generate(design, rep_index)
    res = fit(data, cfg)
    b0 = np.asarray(design.beta0)
    curve = None
    if curve_grid is not None:
        curve = predict_link(res, data, curve_grid, Kernel.coerce(cfg.kernel))
    return ReplicateResult(
        theta_err=[float(t[0]) - design.theta0 for t in res.theta_path],
        angle=[angle(b.coords, b0) for b in res.beta_path],
        sigma2_hat=res.sigma2,
        converged=res.converged,
        oracle_theta_err=oracle_theta(data, b0, cfg) - design.theta0,
        h_opt=res.bandwidths.h_opt,
        rep_index=rep_index,
        curve=curve,
        fit=res if keep_fit else None,
    )


def _safe_replicate(args):
    design, cfg, k, grid, keep = args
    try:
        return run_replicate(design, cfg, k, keep_fit=keep, curve_grid=grid)
    except (PLSIMError, np.linalg.LinAlgError, ValueError) as exc:
        log.warning("replicate %d failed: %s", k, exc)
        return None


def _label(cfg: FitConfig, k: int) -> str:
    base = f"SIR{cfg.slice_size}"
    return base if k == 0 else f"{base} iter{k}"


def run_study(design: SimDesign, cfg: FitConfig | None = None, n_jobs: int | None = 1,
              progress: bool = False, curve_grid=None, keep_fits: bool = False) -> StudyResult:
    """Fit every replicate and aggregate bias/SD/MSE of ``theta`` and index angles.

    Replicates that raise a numerical error are dropped; more than 5% dropped
    raises :class:`StudyError`. With ``curve_grid`` each replicate also records
    its link estimate on that grid, and with ``keep_fits`` its full :class:`ModelFit`.
    """
    cfg = cfg or FitConfig()
    if curve_grid is not None:
        curve_grid = np.asarray(curve_grid, dtype=float)
    tasks = [(design, cfg, k, curve_grid, keep_fits) for k in range(design.reps)]
    if n_jobs is None:
        n_jobs = os.cpu_count() or 1
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_safe_replicate, tasks, chunksize=max(1, len(tasks) // (8 * n_jobs))))
    else:
        results = []
        for i, t in enumerate(tasks):
            results.append(_safe_replicate(t))
            if progress and (i + 1) % 100 == 0:
                log.info("%d/%d replicates", i + 1, len(tasks))
    ok = [r for r in results if r is not None]
    failures = len(results) - len(ok)
    if failures > 0.05 * len(results):
        raise StudyError(f"{failures} of {len(results)} replicates failed")
    if not ok:
        raise StudyError("no replicate succeeded")

    rows, angle_rows = [], []
    for k in range(cfg.iterations + 1):
        rows.append(SummaryRow.from_errors(_label(cfg, k), [r.theta_err[k] for r in ok]))
        angle_rows.append(SummaryRow.from_errors(_label(cfg, k) + " angle", [r.angle[k] for r in ok]))
    rows.append(SummaryRow.from_errors("beta0 given", [r.oracle_theta_err for r in ok]))
    return StudyResult(design, rows, angle_rows, ok, failures, curve_grid)


def curve_export(fitres: ModelFit, data: Dataset, grid, g_true=None, kernel=Kernel.GAUSSIAN) -> dict:
    """Final link estimate on ``grid`` with the true curve when ``g_true`` is given.

    Grid points more than 0.05 outside the fitted index range are clipped.
    """
    grid = np.asarray(grid, dtype=float).ravel()
    lo, hi = fitres.index.min() - 0.05, fitres.index.max() + 0.05
    if np.any((grid < lo) | (grid > hi)):
        warnings.warn("curve grid extends beyond the fitted index range; clipping", stacklevel=2)
        grid = np.clip(grid, lo, hi)
    g_hat = predict_link(fitres, data, grid, kernel)
    table = {"t": grid, "g_hat": g_hat}
    if g_true is not None:
        table["g_true"] = np.asarray(g_true(grid), dtype=float)
    return table


def write_tables(result: StudyResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["table", "mode", "method", "bias_or_mean", "sd", "mse", "reps", "failures"])
        for table, rows in (("theta", result.rows), ("angle", result.angle_rows)):
            for r in rows:
                w.writerow([table, result.design.mode, r.method, f"{r.bias:.6f}", f"{r.sd:.6f}",
                            f"{r.mse:.6f}", len(result.replicates), result.failures])


def write_curve(table: dict, path) -> None:
    cols = [c for c, v in table.items() if v is not None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(table["t"])):
            w.writerow([f"{table[c][i]:.8g}" for c in cols])


def population_vq(design: SimDesign, n: int = 20000, rep_index: int = 0, bandwidth: float | None = None):
    """Large-sample Monte Carlo estimates of ``V`` and ``Q`` at the true index.

    Uses the true link derivative and a local-linear estimate of ``E(X | index)``.
    Returns ``(V, Q, J)``.
    """
    from .estimation import jacobian, reduce
    from .sir import Direction

    data = generate(replace(design, n=n), rep_index)
    beta0 = Direction.from_vector(design.beta0)
    u = data.x @ beta0.coords
    if bandwidth is None:
        bandwidth = 1.06 * np.std(u) * n ** (-0.2)
    g3 = smooth_at(u, data.x, u, bandwidth)
    gp2 = true_link_derivative(u) ** 2
    J = jacobian(reduce(beta0.coords, beta0.pivot))
    xj = data.x @ J
    cj = (data.x - g3) @ J
    V = (xj * gp2[:, None]).T @ xj / n
    Q = (cj * gp2[:, None]).T @ cj / n
    return V, Q, J
