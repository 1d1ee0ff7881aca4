"""Row-subsampled ALS baselines: uniform rows (unif) and leverage scores (blev).

Both replace each exact per-row ridge solve with a weighted solve on sampled
slice rows (weights 1/(s * p_i)); they share the alternating driver with the
exact solver. Per-regression random streams are derived by hashing
(seed, iteration, side, row) so results do not depend on sweep order.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .als import _alternate, _full_row, _solve_spd
from .errors import ConfigError, DataError

__all__ = [
    "RowSample", "sample_uniform", "leverage_scores",
    "update_row_sampled", "fit_sampled",
]


@dataclass(frozen=True)
class RowSample:
    """Sampled slice rows with their source probabilities and solve weights.

    indices may repeat (with-replacement sampling); probs covers every slice
    row and sums to 1; weights[k] = 1 / (len(indices) * probs[indices[k]]).
    """

    indices: np.ndarray
    probs: np.ndarray
    weights: np.ndarray


def _sample_size(n, rate, min_rows):
    # nudged so products like 10 * 0.7 do not floor below their real value
    return min(int(n), max(int(min_rows), int(np.floor(n * rate + 1e-9))))


def sample_uniform(n, rate, seed, min_rows=1):
    """Uniform sample of max(min_rows, floor(n*rate)) distinct rows of range(n).

    rate=1 returns all rows in natural order with unit weights.
    """
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"rate must be in (0, 1], got {rate}")
    if n < 1:
        raise DataError("cannot sample from an empty slice")
    s = _sample_size(n, rate, min_rows)
    if s == n:
        idx = np.arange(n, dtype=np.int32)
    else:
        idx = np.empty(s, dtype=np.int32)
        buf = np.empty(n, dtype=np.int32)
        _kernels.sample_distinct(n, s, _kernels.mix_key(seed), idx, buf)
    probs = np.full(n, 1.0 / n)
    weights = np.full(s, n / s)
    return RowSample(indices=idx, probs=probs, weights=weights)


def leverage_scores(X):
    """Sampling probabilities proportional to hat-matrix diagonals.

    h_i is the squared i-th row norm of an orthonormal basis of X's column
    space (pivoted thin QR); probabilities are h_i / rank. A rank-deficient
    slice is flagged with a warning and scored from the reduced basis.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DataError("leverage_scores expects a non-empty 2-d slice")
    Q, Rm, _ = sla.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(Rm))
    tol = max(X.shape) * np.finfo(np.float64).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.count_nonzero(diag > tol))
    if rank == 0:
        raise DataError("leverage_scores: zero matrix has no column space")
    if rank < min(X.shape):
        warnings.warn(f"rank-deficient slice (rank {rank} < {min(X.shape)}); "
                      "leverage scores use the reduced basis", stacklevel=2)
    Q = Q[:, :rank]
    h = np.einsum("ij,ij->i", Q, Q)
    return h / rank


def _sample_by_probs(probs, s, key):
    """s draws with replacement proportional to probs, keyed stream."""
    cum = np.cumsum(probs)
    idx = np.empty(s, dtype=np.int32)
    _kernels.sample_weighted(cum, s, key, idx)
    return idx


def _weighted_row(X_sub, y_sub, weights, lam_count):
    """Weighted ridge normal equations on the sampled rows."""
    Xw = X_sub * weights[:, None]
    A = Xw.T @ X_sub
    A[np.diag_indices_from(A)] += lam_count
    return _solve_spd(A, Xw.T @ y_sub)


def update_row_sampled(X_slice, y, sample, lam, n_count):
    """Solve the reweighted least squares of one row on its sampled subset.

    With every slice row sampled at unit weight this reduces exactly to the
    full-sample update.
    """
    X = np.ascontiguousarray(X_slice, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if sample.indices.size < 1:
        raise DataError("empty row sample")
    lam_count = lam * n_count
    if sample.indices.size == X.shape[0] and np.all(sample.weights == 1.0) \
            and np.array_equal(sample.indices, np.arange(X.shape[0])):
        return _full_row(X, np.arange(X.shape[0], dtype=np.int32), y, lam_count)
    return _weighted_row(X[sample.indices], y[sample.indices], sample.weights, lam_count)


class _SampledSweeper:
    """Per-row sampled solves; method 'unif' or 'blev'.

    rate=1 bypasses sampling entirely on both methods so they collapse to the
    exact estimator. Leverage scores are recomputed from the current slice at
    every regression (that recomputation is the dominant blev cost and lands
    in sketch_time).
    """

    def __init__(self, cfg, R):
        self.cfg = cfg
        self.sketch_time = 0.0
        dim = max(R.n_users, R.n_items)
        self._perm_buf = np.empty(dim, dtype=np.int32)
        self._take_buf = np.empty(dim, dtype=np.int32)
        self._it = 0
        self._side_code = 0

    def begin(self, side, source, iteration):
        self._it = iteration
        self._side_code = 0 if side == "user" else 1

    def row(self, side, index, idx, y, source):
        cfg = self.cfg
        n_i = idx.size
        s = _sample_size(n_i, cfg.rate, cfg.n_f)
        lam_n = cfg.lam * n_i
        if s == n_i:
            return _full_row(source, idx, y, lam_n)
        key = _kernels.mix_key(cfg.seed, self._it, self._side_code, index)
        t0 = time.perf_counter()
        if cfg.method == "unif":
            take = self._take_buf[:s]
            _kernels.sample_distinct(n_i, s, key, take, self._perm_buf)
            self.sketch_time += time.perf_counter() - t0
            X = source[idx[take]]
            w = n_i / s
            A = (X.T @ X) * w
            A[np.diag_indices_from(A)] += lam_n
            return _solve_spd(A, (X.T @ y[take]) * w)
        probs = leverage_scores(source[idx])
        take = _sample_by_probs(probs, s, key)
        self.sketch_time += time.perf_counter() - t0
        weights = 1.0 / (s * probs[take])
        return _weighted_row(source[idx[take]], y[take], weights, lam_n)


def fit_sampled(R, cfg, *, init_u=None, init_m=None, items_first=False):
    """Alternating fit with per-regression row subsampling (unif or blev)."""
    if cfg.method not in ("unif", "blev"):
        raise ConfigError(f"fit_sampled handles 'unif'/'blev', got {cfg.method!r}")
    return _alternate(R, cfg, _SampledSweeper(cfg, R), init_u=init_u, init_m=init_m,
                      items_first=items_first)
