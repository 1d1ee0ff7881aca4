"""Compiled inner kernels: element selection, sketch products, sampling, residuals.

Everything here is deterministic and single-threaded; orchestration, error
handling, and all user-facing validation live in the calling modules. Keys
for the sampling kernels are 32-bit values pre-mixed by the caller.
"""

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1


def mix_key(*parts):
    """Collapse integers into one 32-bit key (splitmix64 chain)."""
    x = 0
    for p in parts:
        x = (x + int(p) + 0x9E3779B97F4A7C15) & MASK64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        x = z ^ (z >> 31)
    return int(x & 0xFFFFFFFF)


@njit(cache=True)
def kth_largest_inplace(buf, k):
    """Value of the k-th largest element of ``buf`` (1-indexed). Permutes buf.

    Quickselect with median-of-three pivoting; expected linear time.
    """
    n = buf.shape[0]
    target = n - k
    lo, hi = 0, n - 1
    while hi > lo:
        mid = (lo + hi) >> 1
        if buf[mid] < buf[lo]:
            buf[mid], buf[lo] = buf[lo], buf[mid]
        if buf[hi] < buf[lo]:
            buf[hi], buf[lo] = buf[lo], buf[hi]
        if buf[hi] < buf[mid]:
            buf[hi], buf[mid] = buf[mid], buf[hi]
        if hi - lo <= 2:
            break
        pivot = buf[mid]
        buf[mid], buf[hi - 1] = buf[hi - 1], buf[mid]
        i, j = lo, hi - 1
        while True:
            i += 1
            while buf[i] < pivot:
                i += 1
            j -= 1
            while buf[j] > pivot:
                j -= 1
            if i >= j:
                break
            buf[i], buf[j] = buf[j], buf[i]
        buf[i], buf[hi - 1] = buf[hi - 1], buf[i]
        if i == target:
            return buf[i]
        elif i < target:
            lo = i + 1
        else:
            hi = i - 1
    return buf[target]


@njit(cache=True)
def select_columns(Xt, s, rows_out):
    """Top-``s`` |value| row indices per column of a slice.

    Xt is the column-major copy (p, n) of the slice; column c's selection is
    written to rows_out[c*s : (c+1)*s] as slice-local row indices. Ties at the
    threshold keep the smallest row index. Selection emits entries in a
    strict-then-tied two-pass order.
    """
    p, n = Xt.shape
    scratch = np.empty(n, dtype=np.float64)
    for c in range(p):
        col = Xt[c]
        for i in range(n):
            scratch[i] = abs(col[i])
        thr = kth_largest_inplace(scratch[:n], s)
        base = c * s
        k = 0
        for i in range(n):
            if abs(col[i]) > thr:
                rows_out[base + k] = i
                k += 1
        if k < s:
            for i in range(n):
                if abs(col[i]) == thr:
                    rows_out[base + k] = i
                    k += 1
                    if k == s:
                        break


@njit(cache=True)
def collect_topk_walk(sorted_cols, mask, s, sel):
    """Per-column top-s of the masked rows, walking a presorted global order.

    sorted_cols[c] lists all global row indices by |value| descending (ties by
    ascending row); mask marks member rows of the current slice. sel (p, s)
    receives global row indices. Returns -1, or the first column that could
    not be filled (never happens when s <= popcount(mask)).
    """
    p, n = sorted_cols.shape
    for c in range(p):
        col = sorted_cols[c]
        k = 0
        for t in range(n):
            row = col[t]
            sel[c, k] = row
            k += mask[row]
            if k == s:
                break
        if k < s:
            return c
    return -1


@njit(cache=True)
def gram_rhs_global(M, sel, yfull, lam_n, G, b):
    """Sketched normal equations from globally-indexed selections.

    G = X*^T X + lam_n I and b = X*^T y, where X is the slice of M whose rows
    are the masked set and X* keeps rows sel[c] in column c. Row indices are
    global into M; yfull holds y scattered to global positions.
    """
    p, s = sel.shape
    nf = M.shape[1]
    for c in range(p):
        gc = G[c]
        for f in range(nf):
            gc[f] = 0.0
        acc = 0.0
        for q in range(s):
            i = sel[c, q]
            v = M[i, c]
            row = M[i]
            for f in range(nf):
                gc[f] += v * row[f]
            acc += v * yfull[i]
        b[c] = acc
        gc[c] += lam_n


@njit(cache=True)
def gram_rhs_csc(X, col_ptr, rows, vals, y, lam_n, G, b):
    """Sketched normal equations from a slice-local CSC sketch.

    Iterates only retained entries: G = X*^T X + lam_n I, b = X*^T y.
    """
    n, p = X.shape
    for c in range(p):
        gc = G[c]
        for f in range(p):
            gc[f] = 0.0
        acc = 0.0
        for k in range(col_ptr[c], col_ptr[c + 1]):
            i = rows[k]
            v = vals[k]
            row = X[i]
            for f in range(p):
                gc[f] += v * row[f]
            acc += v * y[i]
        b[c] = acc
        gc[c] += lam_n


@njit(cache=True)
def gram_rhs_rowsketch(sk_ptr, sk_cols, sk_vals, idx, M, y, lam_n, G, b, colcount):
    """Sketched normal equations for the whole-matrix (fast) variant.

    The global sketch of M is stored row-compressed (sk_ptr/sk_cols/sk_vals);
    the slice is rows ``idx``. Slice columns left empty by the global sketch
    fall back to their single largest-|value| element.
    """
    nf = M.shape[1]
    for c in range(nf):
        colcount[c] = 0
        b[c] = 0.0
        gc = G[c]
        for f in range(nf):
            gc[f] = 0.0
    for k in range(idx.shape[0]):
        j = idx[k]
        yk = y[k]
        row = M[j]
        for t in range(sk_ptr[j], sk_ptr[j + 1]):
            c = sk_cols[t]
            v = sk_vals[t]
            gc = G[c]
            for f in range(nf):
                gc[f] += v * row[f]
            b[c] += v * yk
            colcount[c] += 1
    for c in range(nf):
        if colcount[c] == 0 and idx.shape[0] > 0:
            best = 0
            bv = -1.0
            for k in range(idx.shape[0]):
                av = abs(M[idx[k], c])
                if av > bv:
                    bv = av
                    best = k
            j = idx[best]
            v = M[j, c]
            row = M[j]
            gc = G[c]
            for f in range(nf):
                gc[f] += v * row[f]
            b[c] += v * y[best]
    for c in range(nf):
        G[c, c] += lam_n


@njit(cache=True)
def rss_rows(M, idx, y, w):
    """Sum of squared residuals (y - M[idx] @ w)^2 without materializing the slice."""
    acc = 0.0
    nf = w.shape[0]
    for k in range(idx.shape[0]):
        row = M[idx[k]]
        d = y[k]
        for f in range(nf):
            d -= row[f] * w[f]
        acc += d * d
    return acc


@njit(cache=True)
def lu_solve(G, b):
    """General (non-symmetric) dense solve; raises LinAlgError when singular."""
    return np.linalg.solve(G, b)


@njit(cache=True)
def sample_distinct(n, s, key, out, perm_buf):
    """s distinct uniform draws from range(n) under a fixed 32-bit key."""
    np.random.seed(key)
    for i in range(n):
        perm_buf[i] = i
    for i in range(s):
        j = i + np.random.randint(0, n - i)
        t = perm_buf[i]
        perm_buf[i] = perm_buf[j]
        perm_buf[j] = t
        out[i] = perm_buf[i]


@njit(cache=True)
def sample_weighted(cum, s, key, out):
    """s draws with replacement from probabilities with cumulative sums ``cum``."""
    np.random.seed(key)
    n = cum.shape[0]
    total = cum[n - 1]
    for t in range(s):
        u = np.random.random() * total
        k = np.searchsorted(cum, u, side="right")
        if k >= n:
            k = n - 1
        out[t] = k
