"""Full-sample regularized ALS: objective, exact row updates, and the fit loop.

The factorization minimizes

    sum_{(i,j) observed} (r_ij - u_i . m_j)^2
      + lambda * (sum_i n_i ||u_i||^2 + sum_j n_j ||m_j||^2)

by alternating exact ridge solves for user rows and item rows, each penalty
weighted by that row's rating count. The alternating driver here is shared
with the subsampled estimators, which plug in their own per-row solvers.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .errors import ConfigError, NumericalError
from .serialize import read_matrix, write_matrix, write_matrix_csv

__all__ = [
    "FactorPair", "SolverConfig", "FitReport",
    "objective", "update_user_full", "update_item_full",
    "fit", "predict", "predict_entries", "predict_full",
    "init_factors", "save_factors", "save_factors_csv", "load_factors",
]

METHODS = ("full", "core", "fast_core", "unif", "blev")
INIT_SCHEMES = ("uniform", "normal")

#: relative diagonal jitter applied once when a Gram factorization fails
JITTER_SCALE = 1e-10


@dataclass
class FactorPair:
    """Dense user factors (n_users, n_f) and item factors (n_items, n_f)."""

    user_factors: np.ndarray
    item_factors: np.ndarray

    def __post_init__(self):
        self.user_factors = np.ascontiguousarray(self.user_factors, dtype=np.float64)
        self.item_factors = np.ascontiguousarray(self.item_factors, dtype=np.float64)
        if self.user_factors.ndim != 2 or self.item_factors.ndim != 2 \
                or self.user_factors.shape[1] != self.item_factors.shape[1]:
            raise ConfigError("factor matrices must be 2-d with a common rank")

    @property
    def n_f(self):
        return int(self.user_factors.shape[1])

    def copy(self):
        return FactorPair(self.user_factors.copy(), self.item_factors.copy())


@dataclass
class SolverConfig:
    """Method selection and hyperparameters for one fit.

    rate is the element-subsampling (or row-sampling) rate in (0, 1];
    tol is the relative objective-change threshold for convergence.
    """

    method: str = "full"
    n_f: int = 10
    lam: float = 0.1
    rate: float = 1.0
    max_iters: int = 50
    tol: float = 0.01
    seed: int = 0
    init_scheme: str = "uniform"
    diagnostics: bool = False

    def __post_init__(self):
        self.method = str(self.method).lower()
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.n_f < 1:
            raise ConfigError("n_f must be >= 1")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if not 0.0 < self.rate <= 1.0:
            raise ConfigError("rate must be in (0, 1]")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if not self.tol > 0:
            raise ConfigError("tol must be > 0")
        if self.init_scheme not in INIT_SCHEMES:
            raise ConfigError(f"unknown init_scheme {self.init_scheme!r}")


@dataclass
class FitReport:
    """Per-iteration traces, timings, and flags from one fit."""

    method: str
    objective_trace: np.ndarray
    rmse_trace: np.ndarray
    iters_run: int
    wall_clock_total: float
    sketch_time: float
    solve_time: float
    converged: bool
    skipped_users: int = 0
    skipped_items: int = 0
    diagnostics: list = field(default_factory=list)


# -- initialization and prediction --------------------------------------

def init_factors(R, cfg):
    """Seeded initial factors: item rows i.i.d., user rows zero.

    The first user sweep overwrites U entirely, so only M's distribution
    matters: uniform on (0, 1/sqrt(n_f)) keeps the initial spectral norm
    bounded, 'normal' draws N(0, 1/n_f) entries instead.
    """
    rng = np.random.default_rng(cfg.seed)
    scale = 1.0 / np.sqrt(cfg.n_f)
    if cfg.init_scheme == "uniform":
        M = rng.uniform(0.0, scale, size=(R.n_items, cfg.n_f))
    else:
        M = rng.normal(0.0, scale / np.sqrt(cfg.n_f), size=(R.n_items, cfg.n_f))
    U = np.zeros((R.n_users, cfg.n_f))
    return FactorPair(U, M)


def predict(F, i, j):
    """Predicted rating for one (user, item) cell."""
    if not 0 <= i < F.user_factors.shape[0]:
        raise IndexError(f"user index {i} out of range")
    if not 0 <= j < F.item_factors.shape[0]:
        raise IndexError(f"item index {j} out of range")
    return float(F.user_factors[i] @ F.item_factors[j])


def predict_entries(F, users, items, chunk=1 << 18):
    """Predicted ratings for parallel index arrays, evaluated in chunks."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    out = np.empty(users.size, dtype=np.float64)
    U, M = F.user_factors, F.item_factors
    for lo in range(0, users.size, chunk):
        hi = min(lo + chunk, users.size)
        out[lo:hi] = np.einsum("ef,ef->e", U[users[lo:hi]], M[items[lo:hi]])
    return out


def predict_full(F):
    """Dense reconstruction U @ M^T."""
    return F.user_factors @ F.item_factors.T


# -- objective -----------------------------------------------------------

def _penalty(R, U, M, lam):
    if lam == 0.0:
        return 0.0
    pu = R.row_counts @ np.einsum("if,if->i", U, U)
    pm = R.col_counts @ np.einsum("jf,jf->j", M, M)
    return lam * float(pu + pm)


def objective(R, F, lam):
    """Weighted-penalty squared loss over the observed entries."""
    U, M = F.user_factors, F.item_factors
    if U.shape[0] != R.n_users or M.shape[0] != R.n_items:
        raise ConfigError(
            f"factor shapes {U.shape[0]}x{M.shape[0]} do not match rating matrix "
            f"{R.n_users}x{R.n_items}")
    users, items, vals = R.entries()
    resid = vals - predict_entries(F, users, items)
    return float(resid @ resid) + _penalty(R, U, M, lam)


# -- exact per-row ridge solves ------------------------------------------

def _solve_spd(A, b, context=""):
    """SPD solve with a single diagonal-jitter retry for degenerate systems."""
    try:
        cf = sla.cho_factor(A, overwrite_a=False, check_finite=False)
        return sla.cho_solve(cf, b, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_SCALE * np.trace(A) / A.shape[0]
    A2 = A + jitter * np.eye(A.shape[0])
    try:
        cf = sla.cho_factor(A2, overwrite_a=True, check_finite=False)
        return sla.cho_solve(cf, b, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular Gram matrix after jitter retry {context}") from exc


def _full_row(source, idx, y, lam_count):
    """Exact ridge update for one row given its observed slice."""
    X = source[idx]
    A = X.T @ X
    A[np.diag_indices_from(A)] += lam_count
    return _solve_spd(A, X.T @ y)


def update_user_full(M, R, i, lam):
    """Exact user-row update from the current item factors.

    Returns None for users with no observed ratings (row left unchanged).
    """
    idx, y = R.user_slice(i)
    if idx.size == 0:
        return None
    return _full_row(np.ascontiguousarray(M, dtype=np.float64), idx, y, lam * idx.size)


def update_item_full(U, R, j, lam):
    """Exact item-row update, symmetric to :func:`update_user_full`."""
    idx, y = R.item_slice(j)
    if idx.size == 0:
        return None
    return _full_row(np.ascontiguousarray(U, dtype=np.float64), idx, y, lam * idx.size)


# -- alternating driver ----------------------------------------------------

class _FullSweeper:
    """Per-row exact solves; the reference estimator."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.sketch_time = 0.0

    def begin(self, side, source, iteration):
        pass

    def row(self, side, index, idx, y, source):
        return _full_row(source, idx, y, self.cfg.lam * idx.size)


def _alternate(R, cfg, sweeper, init_u=None, init_m=None, items_first=False):
    """Shared ALS loop: sweeps, fused residual traces, convergence, report."""
    start = time.perf_counter()
    F0 = init_factors(R, cfg)
    U = F0.user_factors if init_u is None else np.ascontiguousarray(init_u, dtype=np.float64).copy()
    M = F0.item_factors if init_m is None else np.ascontiguousarray(init_m, dtype=np.float64).copy()
    if U.shape != (R.n_users, cfg.n_f) or M.shape != (R.n_items, cfg.n_f):
        raise ConfigError("initial factor shapes do not match the rating matrix")

    active_u = np.flatnonzero(R.row_counts > 0)
    active_m = np.flatnonzero(R.col_counts > 0)
    skipped_u = R.n_users - active_u.size
    skipped_m = R.n_items - active_m.size
    if skipped_u or skipped_m:
        warnings.warn(
            f"{skipped_u} user(s) and {skipped_m} item(s) have no training ratings; "
            "their factor rows are left at initialization", stacklevel=3)
    if active_u.size and cfg.n_f > int(R.row_counts[active_u].min()):
        warnings.warn(
            f"n_f={cfg.n_f} exceeds the smallest user rating count; "
            "the penalty term is doing the disambiguation", stacklevel=3)

    ssq = float(R.row_vals @ R.row_vals)
    obj_trace, rmse_trace = [], []
    solve_time = 0.0
    converged = False
    iters = 0

    def sweep(side, it, want_rss):
        rss = 0.0
        if side == "user":
            source, target = M, U
            ptr, cols, vals = R.row_ptr, R.row_items, R.row_vals
            active = active_u
        else:
            source, target = U, M
            ptr, cols, vals = R.col_ptr, R.col_users, R.col_vals
            active = active_m
        sweeper.begin(side, source, it)
        for i in active:
            lo, hi = ptr[i], ptr[i + 1]
            idx, y = cols[lo:hi], vals[lo:hi]
            w = sweeper.row(side, i, idx, y, source)
            target[i] = w
            if want_rss:
                rss += _kernels.rss_rows(source, idx, y, target[i])
        return rss

    first, second = ("item", "user") if items_first else ("user", "item")
    prev_obj = None
    for it in range(cfg.max_iters):
        t0 = time.perf_counter()
        sk0 = sweeper.sketch_time
        sweep(first, it, want_rss=False)
        rss = sweep(second, it, want_rss=True)
        solve_time += (time.perf_counter() - t0) - (sweeper.sketch_time - sk0)
        obj = rss + _penalty(R, U, M, cfg.lam)
        obj_trace.append(obj)
        rmse_trace.append(np.sqrt(rss / ssq) if ssq > 0 else 0.0)
        iters = it + 1
        if prev_obj is not None:
            rel = abs(obj - prev_obj) / max(prev_obj, np.finfo(np.float64).tiny)
            if rel < cfg.tol:
                converged = True
                break
        prev_obj = obj

    report = FitReport(
        method=cfg.method,
        objective_trace=np.asarray(obj_trace),
        rmse_trace=np.asarray(rmse_trace),
        iters_run=iters,
        wall_clock_total=time.perf_counter() - start,
        sketch_time=sweeper.sketch_time,
        solve_time=solve_time,
        converged=converged,
        skipped_users=skipped_u,
        skipped_items=skipped_m,
        diagnostics=list(getattr(sweeper, "diagnostics", ())),
    )
    return FactorPair(U, M), report


def fit(R, cfg, *, init_u=None, init_m=None, items_first=False):
    """Fit with exact full-sample updates (method 'full').

    init_u/init_m override the seeded initialization; items_first mirrors the
    sweep order, which together with a mirrored init makes fitting R^T
    reproduce a fit of R with the factor roles exchanged.
    """
    if cfg.method != "full":
        raise ConfigError(f"als.fit handles method 'full', got {cfg.method!r}")
    return _alternate(R, cfg, _FullSweeper(cfg), init_u=init_u, init_m=init_m,
                      items_first=items_first)


# -- factor persistence -----------------------------------------------------

def save_factors(F, user_path, item_path):
    write_matrix(user_path, F.user_factors)
    write_matrix(item_path, F.item_factors)


def load_factors(user_path, item_path):
    return FactorPair(read_matrix(user_path), read_matrix(item_path))


def save_factors_csv(F, user_path, item_path):
    """Inspectable CSV alternative to the binary container."""
    write_matrix_csv(user_path, F.user_factors)
    write_matrix_csv(item_path, F.item_factors)
