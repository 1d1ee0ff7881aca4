"""Element-wise subsampling for the alternating solver.

Instead of sampling rows of a regression slice, keep its per-column
largest-|value| elements: per column of the slice X, retain the
s = max(1, floor(n * rate)) entries of biggest magnitude (ties to the
smallest row index) and zero the rest, giving a sparse sketch X*. The
sketched ridge update solves

    (X*^T X + lambda * n * I) w = X*^T y

where only one side of the Gram product is sketched, so the system is
generally non-symmetric and is solved by LU, never symmetrized. At rate 1
the sketch is complete and the update routes through the same SPD path as
the exact solver, making the two estimators coincide bit for bit.

The fit drivers amortize selection: the per-slice top-s sets are recovered
either by walking a per-sweep magnitude presort of the whole factor matrix
(dense slices) or by per-column quickselect on the slice (thin slices); both
reproduce exactly what `ces_sketch` selects.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .als import _alternate, _full_row, _solve_spd
from .errors import ConfigError, DataError, NumericalError

__all__ = [
    "SparseSketch", "ces_sketch",
    "update_user_core", "update_item_core",
    "fit_core", "fit_fast_core",
    "DiagnosticsRecord", "DiagnosticsSummary", "compute_diagnostics",
    "spectral_norm", "theorem_bound_spectral", "write_diagnostics_csv",
    "sketch_budget",
]

#: slice-height multiple below which the presort walk beats per-slice selection
_WALK_FACTOR = 4.0


def sketch_budget(n, rate):
    """Retained entries per column: max(1, floor(n * rate)), capped at n.

    The tiny nudge keeps products like 10 * 0.7 from flooring below their
    real-arithmetic value.
    """
    return min(int(n), max(1, int(np.floor(n * rate + 1e-9))))


@dataclass(frozen=True)
class SparseSketch:
    """Per-column retained entries of a dense slice, column-compressed.

    rows holds slice-local row indices; every retained value equals the
    source value at its position (the sketch is a mask applied to the slice).
    """

    n_rows: int
    n_cols: int
    col_ptr: np.ndarray
    rows: np.ndarray
    vals: np.ndarray

    @property
    def nnz(self):
        return int(self.rows.size)

    @property
    def kept_per_column(self):
        return np.diff(self.col_ptr)

    @property
    def complete(self):
        return self.nnz == self.n_rows * self.n_cols

    def column(self, c):
        """(rows, values) retained in column ``c``."""
        lo, hi = self.col_ptr[c], self.col_ptr[c + 1]
        return self.rows[lo:hi], self.vals[lo:hi]

    def to_dense(self):
        out = np.zeros((self.n_rows, self.n_cols))
        cols = np.repeat(np.arange(self.n_cols), self.kept_per_column)
        out[self.rows, cols] = self.vals
        return out


def ces_sketch(X, rate):
    """Sparse sketch keeping the top-|value| elements of each column.

    Per column, the s = max(1, floor(n*rate)) entries of largest absolute
    value are retained with sign and magnitude intact (ties broken toward the
    smallest row index); everything else is dropped. Selection runs in
    expected linear time per column (quickselect, median-of-three).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DataError("ces_sketch expects a non-empty 2-d slice")
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"rate must be in (0, 1], got {rate}")
    n, p = X.shape
    s = sketch_budget(n, rate)
    rows = np.empty(p * s, dtype=np.int32)
    _kernels.select_columns(np.ascontiguousarray(X.T), s, rows)
    cols = np.repeat(np.arange(p), s)
    return SparseSketch(n_rows=n, n_cols=p,
                        col_ptr=np.arange(p + 1, dtype=np.int64) * s,
                        rows=rows, vals=X[rows, cols])


# -- sketched ridge updates ------------------------------------------------

def _solve_sketched(G, b, context=""):
    """LU solve of the (generally non-symmetric) sketched system, jitter once."""
    try:
        return _kernels.lu_solve(G, b)
    except np.linalg.LinAlgError:
        pass
    jitter = np.float64(1e-10) * np.trace(G) / G.shape[0]
    G2 = G + jitter * np.eye(G.shape[0])
    try:
        return _kernels.lu_solve(G2, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular sketched system after jitter retry {context}") from exc


def update_user_core(M_slice, sketch, y, lam, n_count, context=""):
    """Sketched ridge update for one user row.

    Solves (X*^T X + lam*n_count*I) u = X*^T y with X the unsketched slice
    and X* its sketch; the product touches only retained entries. A complete
    sketch (rate 1) delegates to the exact SPD path, so both estimators agree
    exactly there.
    """
    X = np.ascontiguousarray(M_slice, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or sketch.n_rows != X.shape[0] or sketch.n_cols != X.shape[1]:
        raise DataError("sketch shape does not match the slice")
    if y.size != X.shape[0]:
        raise DataError("response length does not match the slice height")
    if sketch.complete:
        A = X.T @ X
        A[np.diag_indices_from(A)] += lam * n_count
        return _solve_spd(A, X.T @ y, context)
    p = X.shape[1]
    G = np.empty((p, p))
    b = np.empty(p)
    _kernels.gram_rhs_csc(X, sketch.col_ptr, sketch.rows, sketch.vals, y,
                          lam * n_count, G, b)
    return _solve_sketched(G, b, context)


def update_item_core(U_slice, sketch, y, lam, n_count, context=""):
    """Sketched ridge update for one item row (same math as the user side)."""
    return update_user_core(U_slice, sketch, y, lam, n_count, context)


# -- sweep machinery ---------------------------------------------------------

def _presort_columns(source):
    """Global row order per column by |value| descending, row index ascending."""
    order = np.argsort(-np.abs(source), axis=0, kind="stable")
    return np.ascontiguousarray(order.T.astype(np.int32))


class _CoreSweeper:
    """Per-regression sketching (one selection per slice, rebuilt every sweep)."""

    def __init__(self, cfg, R):
        self.cfg = cfg
        self.sketch_time = 0.0
        nf = cfg.n_f
        self._G = np.empty((nf, nf))
        self._b = np.empty(nf)
        dim = max(R.n_users, R.n_items)
        self._mask = np.zeros(dim, dtype=np.uint8)
        self._yfull = np.zeros(dim)
        self._sorted = None
        self._n_source = 0
        self._agg = None
        self._summaries = []
        self._context = ("", 0)

    def begin(self, side, source, iteration):
        self._flush_diag()
        t0 = time.perf_counter()
        self._sorted = _presort_columns(source)
        self.sketch_time += time.perf_counter() - t0
        self._n_source = source.shape[0]
        self._context = (side, iteration)

    def row(self, side, index, idx, y, source):
        cfg = self.cfg
        n_i = idx.size
        s = sketch_budget(n_i, cfg.rate)
        lam_n = cfg.lam * n_i
        if cfg.diagnostics:
            return self._row_instrumented(index, idx, y, source, s, lam_n)
        if s == n_i:
            return _full_row(source, idx, y, lam_n)
        t0 = time.perf_counter()
        if cfg.rate * self._n_source <= _WALK_FACTOR * n_i:
            sel = np.empty((cfg.n_f, s), dtype=np.int32)
            self._mask[idx] = 1
            _kernels.collect_topk_walk(self._sorted, self._mask, s, sel)
            self._mask[idx] = 0
        else:
            Xt = np.ascontiguousarray(source[idx].T)
            rows = np.empty(cfg.n_f * s, dtype=np.int32)
            _kernels.select_columns(Xt, s, rows)
            sel = idx[rows].reshape(cfg.n_f, s)
        self.sketch_time += time.perf_counter() - t0
        self._yfull[idx] = y
        _kernels.gram_rhs_global(source, sel, self._yfull, lam_n, self._G, self._b)
        return _solve_sketched(self._G, self._b,
                               f"({self._context[0]} {index}, iteration {self._context[1]})")

    # -- diagnostics-instrumented path (opt-in, slow) --

    def _row_instrumented(self, index, idx, y, source, s, lam_n):
        X = source[idx]
        t0 = time.perf_counter()
        sketch = ces_sketch(X, self.cfg.rate)
        self.sketch_time += time.perf_counter() - t0
        u_core = update_user_core(X, sketch, y, self.cfg.lam, idx.size)
        u_full = _full_row(source, idx, y, lam_n)
        rec = compute_diagnostics(X, sketch, y, self.cfg.lam, idx.size, u_full, u_core)
        self._accumulate(rec)
        return u_core

    def _accumulate(self, rec):
        if self._agg is None:
            side, iteration = self._context
            self._agg = _DiagAggregator(iteration, side)
        self._agg.add(rec)

    def _flush_diag(self):
        if self._agg is not None:
            self._summaries.append(self._agg.summary())
            self._agg = None

    @property
    def diagnostics(self):
        self._flush_diag()
        return self._summaries


class _FastCoreSweeper:
    """Whole-matrix sketch once per half-iteration, sliced per regression.

    Per-slice kept counts fall where they may (only the whole-matrix
    per-column budget is exact); a slice column left empty falls back to its
    single largest-|value| element inside the Gram kernel.
    """

    def __init__(self, cfg, R):
        self.cfg = cfg
        self.sketch_time = 0.0
        nf = cfg.n_f
        self._G = np.empty((nf, nf))
        self._b = np.empty(nf)
        self._colcount = np.empty(nf, dtype=np.int64)
        self._sk = None
        self._complete = False
        self._context = ("", 0)

    def begin(self, side, source, iteration):
        t0 = time.perf_counter()
        sk = ces_sketch(source, self.cfg.rate)
        self._complete = sk.complete
        if not self._complete:
            # column-compressed -> row-compressed for slice-wise iteration
            cols = np.repeat(np.arange(sk.n_cols, dtype=np.int32), sk.kept_per_column)
            order = np.lexsort((cols, sk.rows))
            rows = sk.rows[order]
            ptr = np.zeros(sk.n_rows + 1, dtype=np.int64)
            np.cumsum(np.bincount(rows, minlength=sk.n_rows), out=ptr[1:])
            self._sk = (ptr, cols[order], sk.vals[order])
        self.sketch_time += time.perf_counter() - t0
        self._context = (side, iteration)

    def row(self, side, index, idx, y, source):
        cfg = self.cfg
        lam_n = cfg.lam * idx.size
        if self._complete:
            return _full_row(source, idx, y, lam_n)
        ptr, cols, vals = self._sk
        _kernels.gram_rhs_rowsketch(ptr, cols, vals, idx, source, y, lam_n,
                                    self._G, self._b, self._colcount)
        return _solve_sketched(self._G, self._b,
                               f"({self._context[0]} {index}, iteration {self._context[1]})")


def fit_core(R, cfg, *, init_u=None, init_m=None, items_first=False):
    """Alternating fit with one element sketch per regression slice.

    Each half-iteration re-sketches the current factor matrix slice by slice
    and applies the sketched ridge update; convergence and reporting follow
    the exact solver. With cfg.diagnostics, per-regression approximation
    diagnostics are aggregated per half-iteration into the report.
    """
    if cfg.method != "core":
        raise ConfigError(f"fit_core handles method 'core', got {cfg.method!r}")
    return _alternate(R, cfg, _CoreSweeper(cfg, R), init_u=init_u, init_m=init_m,
                      items_first=items_first)


def fit_fast_core(R, cfg, *, init_u=None, init_m=None, items_first=False):
    """Alternating fit sketching each whole factor matrix once per half-iteration."""
    if cfg.method != "fast_core":
        raise ConfigError(f"fit_fast_core handles method 'fast_core', got {cfg.method!r}")
    if cfg.diagnostics:
        warnings.warn("per-regression diagnostics are only instrumented for method "
                      "'core'; ignoring the flag", stacklevel=2)
        cfg = replace(cfg, diagnostics=False)
    return _alternate(R, cfg, _FastCoreSweeper(cfg, R), init_u=init_u, init_m=init_m,
                      items_first=items_first)


# -- approximation diagnostics ----------------------------------------------

@dataclass
class DiagnosticsRecord:
    """Measured approximation quantities for one sketched regression.

    spectral_ratio  ||X - X*||_2 / ||X||_2
    c_const         ||X||_2^2 ||(X^T X + lam n I)^-1||_2
    rsse            ||y - X u_full|| / ||y||
    rss_ratio       ||y - X u_core||^2 / ||y - X u_full||^2
    gamma           ||D L^T X||_2 with D the penalized inverse Gram, L = X - X*
    """

    spectral_ratio: float
    c_const: float
    rsse: float
    rss_ratio: float
    gamma: float
    spectral_converged: bool = True

    def as_tuple(self):
        return (self.spectral_ratio, self.c_const, self.rsse, self.rss_ratio, self.gamma)


@dataclass
class DiagnosticsSummary:
    """Mean/max aggregate of the per-regression records in one half-iteration."""

    iteration: int
    side: str
    count: int
    mean: DiagnosticsRecord
    max: DiagnosticsRecord


class _DiagAggregator:
    def __init__(self, iteration, side):
        self.iteration = iteration
        self.side = side
        self.count = 0
        self._sum = np.zeros(5)
        self._max = np.full(5, -np.inf)
        self._all_converged = True

    def add(self, rec):
        t = np.asarray(rec.as_tuple())
        self._sum += t
        np.maximum(self._max, t, out=self._max)
        self._all_converged &= rec.spectral_converged
        self.count += 1

    def summary(self):
        mean = DiagnosticsRecord(*(self._sum / max(self.count, 1)),
                                 spectral_converged=self._all_converged)
        mx = DiagnosticsRecord(*self._max, spectral_converged=self._all_converged)
        return DiagnosticsSummary(self.iteration, self.side, self.count, mean, mx)


def spectral_norm(A, tol=1e-6, max_iter=200):
    """Largest singular value by power iteration on A^T A.

    Returns (estimate, converged); a non-convergent run returns the last
    estimate flagged False rather than failing.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.size == 0:
        return 0.0, True
    rng = np.random.default_rng(0)
    v = rng.standard_normal(A.shape[1])
    nv = np.linalg.norm(v)
    if nv == 0:
        return 0.0, True
    v /= nv
    sigma = 0.0
    for _ in range(max_iter):
        w = A @ v
        new_sigma = np.linalg.norm(w)
        if new_sigma == 0.0:
            return 0.0, True
        v = A.T @ w
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return float(new_sigma), True
        v /= nv
        if abs(new_sigma - sigma) <= tol * new_sigma:
            return float(new_sigma), True
        sigma = new_sigma
    return float(sigma), False


def compute_diagnostics(X, sketch, y, lam, n, u_full, u_core):
    """Fill a :class:`DiagnosticsRecord` for one regression instance.

    All spectral norms come from power iteration (tol 1e-6, 200-iteration
    cap); non-convergence flags the record instead of raising.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    L = X - sketch.to_dense()
    nrm_x, ok1 = spectral_norm(X)
    nrm_l, ok2 = spectral_norm(L)
    spectral_ratio = nrm_l / nrm_x if nrm_x > 0 else 0.0

    A = X.T @ X
    A[np.diag_indices_from(A)] += lam * n
    D = np.linalg.inv(A)
    nrm_d, ok3 = spectral_norm(D)
    c_const = nrm_x ** 2 * nrm_d

    ny = np.linalg.norm(y)
    r_full = y - X @ u_full
    r_core = y - X @ u_core
    rss_full = float(r_full @ r_full)
    rss_core = float(r_core @ r_core)
    rsse = np.sqrt(rss_full) / ny if ny > 0 else 0.0
    if rss_full > 0:
        rss_ratio = rss_core / rss_full
    else:
        rss_ratio = 1.0 if rss_core == 0.0 else np.inf

    gamma, ok4 = spectral_norm(D @ (L.T @ X))
    return DiagnosticsRecord(
        spectral_ratio=float(spectral_ratio), c_const=float(c_const),
        rsse=float(rsse), rss_ratio=float(rss_ratio), gamma=float(gamma),
        spectral_converged=bool(ok1 and ok2 and ok3 and ok4))


def theorem_bound_spectral(c_const, rsse, eps):
    """Largest admissible spectral ratio certifying a (1+eps) residual bound.

    Instantiates the per-regression guarantee: when
    ||X - X*||_2 / ||X||_2 falls below this value, the sketched solution's
    residual sum of squares is at most (1+eps) times the exact one.
    """
    if rsse <= 0.0:
        return 0.0
    denom = 1.0 + (c_const + 1.0) / ((np.sqrt(1.0 + eps) - 1.0) * rsse)
    return (1.0 / c_const) / denom if c_const > 0 else np.inf


def write_diagnostics_csv(path, summaries):
    """Aggregate diagnostics stream: mean and max lines per half-iteration."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "side", "stat", "count",
                    "spectral_ratio", "c_const", "rsse", "rss_ratio", "gamma",
                    "spectral_converged"])
        for s in summaries:
            for stat, rec in (("mean", s.mean), ("max", s.max)):
                w.writerow([s.iteration, s.side, stat, s.count,
                            *(repr(float(v)) for v in rec.as_tuple()),
                            int(rec.spectral_converged)])
