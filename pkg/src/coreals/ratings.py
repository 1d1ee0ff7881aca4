"""Sparse rating-matrix data model: missing values, dual row/column indexing, CSV ingestion.

"Sparse" here means mostly-missing, not mostly-zero: only observed entries are
stored, simultaneously in row-major (per-user) and column-major (per-item)
compressed form so that both sweep directions of an alternating solver can
slice their regressions cheaply.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = [
    "RatingMatrix",
    "HoldoutSplit",
    "build_rating_matrix",
    "split_holdout",
    "slice_rows",
    "read_ratings_csv",
    "write_ratings_csv",
    "write_split_manifest",
    "read_split_manifest",
]


class RatingMatrix:
    """Immutable store of observed (user, item, rating) entries with dual indexes.

    Parameters
    ----------
    users, items : int arrays
        Dense 0-based indices of each observed entry.
    values : float array
        Ratings; must be finite.
    n_users, n_items : int, optional
        Matrix shape. Defaults to max index + 1; rows/columns with no
        observed entry are legal (their counts are 0).
    user_ids, item_ids : sequence, optional
        External identifiers, position = dense index.
    """

    __slots__ = (
        "n_users", "n_items", "user_ids", "item_ids",
        "row_ptr", "row_items", "row_vals",
        "col_ptr", "col_users", "col_vals",
    )

    def __init__(self, users, items, values, n_users=None, n_items=None,
                 user_ids=None, item_ids=None):
        users = np.ascontiguousarray(users, dtype=np.int64)
        items = np.ascontiguousarray(items, dtype=np.int64)
        values = np.ascontiguousarray(values, dtype=np.float64)
        if not (users.shape == items.shape == values.shape) or users.ndim != 1:
            raise DataError("users, items, values must be 1-d arrays of equal length")
        if users.size and (users.min() < 0 or items.min() < 0):
            raise DataError("negative entry index")
        self.n_users = int(n_users) if n_users is not None else (int(users.max()) + 1 if users.size else 0)
        self.n_items = int(n_items) if n_items is not None else (int(items.max()) + 1 if items.size else 0)
        if users.size:
            if users.max() >= self.n_users or items.max() >= self.n_items:
                raise DataError("entry index out of range for declared shape")
        if not np.all(np.isfinite(values)):
            k = int(np.flatnonzero(~np.isfinite(values))[0])
            raise DataError(f"non-finite rating at entry {k}: ({users[k]}, {items[k]})")
        self.user_ids = None if user_ids is None else np.asarray(user_ids)
        self.item_ids = None if item_ids is None else np.asarray(item_ids)

        # row-major (CSR over users) and column-major (CSC over items) views
        order = np.lexsort((items, users))
        ru, ri, rv = users[order], items[order], values[order]
        dup = (ru[1:] == ru[:-1]) & (ri[1:] == ri[:-1])
        if dup.any():
            k = int(np.flatnonzero(dup)[0])
            u_lab = self.user_ids[ru[k]] if self.user_ids is not None else ru[k]
            i_lab = self.item_ids[ri[k]] if self.item_ids is not None else ri[k]
            raise DataError(f"duplicate (user, item) pair: ({u_lab}, {i_lab})")
        self.row_ptr = np.zeros(self.n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(ru, minlength=self.n_users), out=self.row_ptr[1:])
        self.row_items = ri.astype(np.int32)
        self.row_vals = rv

        order = np.lexsort((ru, ri))
        self.col_ptr = np.zeros(self.n_items + 1, dtype=np.int64)
        np.cumsum(np.bincount(ri, minlength=self.n_items), out=self.col_ptr[1:])
        self.col_users = ru[order].astype(np.int32)
        self.col_vals = rv[order]

    # -- basic queries -------------------------------------------------

    @property
    def n_entries(self):
        return int(self.row_vals.size)

    @property
    def row_counts(self):
        """Number of observed ratings per user."""
        return np.diff(self.row_ptr)

    @property
    def col_counts(self):
        """Number of observed ratings per item."""
        return np.diff(self.col_ptr)

    def user_slice(self, i):
        """Item indices and ratings observed for user ``i`` (sorted by item)."""
        if not 0 <= i < self.n_users:
            raise IndexError(f"user index {i} out of range [0, {self.n_users})")
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.row_items[lo:hi], self.row_vals[lo:hi]

    def item_slice(self, j):
        """User indices and ratings observed for item ``j`` (sorted by user)."""
        if not 0 <= j < self.n_items:
            raise IndexError(f"item index {j} out of range [0, {self.n_items})")
        lo, hi = self.col_ptr[j], self.col_ptr[j + 1]
        return self.col_users[lo:hi], self.col_vals[lo:hi]

    def entries(self):
        """All observed entries as (users, items, values) in row-major order."""
        users = np.repeat(np.arange(self.n_users, dtype=np.int64), self.row_counts)
        return users, self.row_items.astype(np.int64), self.row_vals.copy()

    def transpose(self):
        """Rating matrix with users and items swapped."""
        users, items, vals = self.entries()
        return RatingMatrix(items, users, vals, n_users=self.n_items, n_items=self.n_users,
                            user_ids=self.item_ids, item_ids=self.user_ids)

    def to_dense(self, fill=np.nan):
        """Dense (n_users, n_items) array with ``fill`` at missing cells."""
        out = np.full((self.n_users, self.n_items), fill, dtype=np.float64)
        users, items, vals = self.entries()
        out[users, items] = vals
        return out

    def __repr__(self):
        return (f"RatingMatrix({self.n_users} users x {self.n_items} items, "
                f"{self.n_entries} observed)")


@dataclass(frozen=True)
class HoldoutSplit:
    """Train/test partition of a rating matrix's observed entries."""

    train: RatingMatrix
    test_users: np.ndarray
    test_items: np.ndarray
    test_vals: np.ndarray
    fraction: float
    seed: int
    cold_items: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def n_test(self):
        return int(self.test_vals.size)


def build_rating_matrix(triples):
    """Build a :class:`RatingMatrix` from (user_id, item_id, rating) triples.

    External ids may be arbitrary hashable values; they are remapped to
    contiguous dense indices in sorted-id order and retained on the matrix.
    Duplicate (user, item) pairs and non-finite ratings are rejected.
    """
    triples = list(triples)
    if not triples:
        raise DataError("no rating triples supplied")
    raw_u = np.asarray([t[0] for t in triples])
    raw_i = np.asarray([t[1] for t in triples])
    vals = np.asarray([float(t[2]) for t in triples], dtype=np.float64)
    user_ids, users = np.unique(raw_u, return_inverse=True)
    item_ids, items = np.unique(raw_i, return_inverse=True)
    return RatingMatrix(users, items, vals, n_users=len(user_ids), n_items=len(item_ids),
                        user_ids=user_ids, item_ids=item_ids)


def slice_rows(X, idx):
    """Select rows ``idx`` of a dense matrix, preserving order."""
    X = np.asarray(X)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= X.shape[0]):
        raise IndexError("row index out of range")
    return X[idx]


def split_holdout(R, fraction_test, seed):
    """Randomly hold out ``round(fraction_test * n)`` entries as a test set.

    Selection is stratified by user: each user with >= 2 ratings contributes
    floor(fraction_test * n_i) entries (never more than n_i - 1), and the
    remainder up to the exact global count is drawn globally from users that
    still have spare ratings. Users keep at least one training rating; items
    that lose all training ratings are reported in ``cold_items``.
    """
    if not 0.0 < fraction_test < 1.0:
        raise DataError(f"fraction_test must be in (0, 1), got {fraction_test}")
    n = R.n_entries
    target = int(round(fraction_test * n))
    if target >= n:
        raise DataError("fraction_test leaves an empty training set")
    rng = np.random.default_rng(int(seed))

    counts = R.row_counts
    take = np.zeros(n, dtype=bool)  # over row-major entry positions
    quota = np.minimum(np.floor(fraction_test * counts).astype(np.int64), counts - 1)
    quota[counts < 2] = 0
    for i in np.flatnonzero(quota):
        lo, hi = R.row_ptr[i], R.row_ptr[i + 1]
        sel = rng.choice(hi - lo, size=quota[i], replace=False)
        take[lo + sel] = True

    remaining = target - int(quota.sum())
    if remaining > 0:
        chosen = quota.copy()
        users_of = np.repeat(np.arange(R.n_users), counts)
        pool = np.flatnonzero(~take & (counts[users_of] >= 2))
        rng.shuffle(pool)
        got = 0
        for pos in pool:
            u = users_of[pos]
            if chosen[u] < counts[u] - 1:
                take[pos] = True
                chosen[u] += 1
                got += 1
                if got == remaining:
                    break
        if got < remaining:
            raise DataError(
                f"cannot reach test size {target}: only {int(quota.sum()) + got} "
                "entries available without emptying a user's training set")

    users, items, vals = R.entries()
    tr = RatingMatrix(users[~take], items[~take], vals[~take],
                      n_users=R.n_users, n_items=R.n_items,
                      user_ids=R.user_ids, item_ids=R.item_ids)
    cold = np.flatnonzero((tr.col_counts == 0) & (R.col_counts > 0))
    if cold.size:
        warnings.warn(f"{cold.size} item(s) have no training ratings after the split",
                      stacklevel=2)
    return HoldoutSplit(train=tr, test_users=users[take], test_items=items[take],
                        test_vals=vals[take], fraction=float(fraction_test),
                        seed=int(seed), cold_items=cold)


# -- CSV interfaces ----------------------------------------------------

def read_ratings_csv(path):
    """Read a rating-triple CSV with header ``user,item,rating[,date]``.

    The optional date column is parsed for validity and discarded.
    """
    triples = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["user", "item", "rating"]:
            raise DataError(f"{path}: expected header 'user,item,rating[,date]', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 3:
                raise DataError(f"{path}:{lineno}: expected at least 3 fields, got {len(row)}")
            try:
                rating = float(row[2])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad rating {row[2]!r}") from exc
            triples.append((row[0], row[1], rating))
    return build_rating_matrix(triples)


def _fmt(x):
    """Shortest round-trip decimal form, stable across runs."""
    return repr(float(x))


def write_ratings_csv(path, R):
    """Write observed entries as ``user,item,rating`` (external ids if present)."""
    users, items, vals = R.entries()
    u_lab = R.user_ids[users] if R.user_ids is not None else users
    i_lab = R.item_ids[items] if R.item_ids is not None else items
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "item", "rating"])
        for u, i, v in zip(u_lab, i_lab, vals):
            w.writerow([u, i, _fmt(v)])


def write_split_manifest(path, split):
    """Write a train/test fold manifest: ``user,item,rating,fold``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "item", "rating", "fold"])
        users, items, vals = split.train.entries()
        for u, i, v in zip(users, items, vals):
            w.writerow([u, i, _fmt(v), "train"])
        for u, i, v in zip(split.test_users, split.test_items, split.test_vals):
            w.writerow([u, i, _fmt(v), "test"])


def read_split_manifest(path):
    """Read a fold manifest back into (train RatingMatrix, test arrays)."""
    tr, te = [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user", "item", "rating", "fold"]:
            raise DataError(f"{path}: not a split manifest")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            u, i, v, fold = row
            if fold == "train":
                tr.append((int(u), int(i), float(v)))
            elif fold == "test":
                te.append((int(u), int(i), float(v)))
            else:
                raise DataError(f"{path}:{lineno}: unknown fold {fold!r}")
    if not tr:
        raise DataError(f"{path}: manifest has no training entries")
    tu = np.array([t[0] for t in tr]); ti = np.array([t[1] for t in tr])
    tv = np.array([t[2] for t in tr])
    eu = np.array([t[0] for t in te], dtype=np.int64)
    ei = np.array([t[1] for t in te], dtype=np.int64)
    ev = np.array([t[2] for t in te], dtype=np.float64)
    n_u = int(max(tu.max(initial=-1), eu.max(initial=-1))) + 1
    n_i = int(max(ti.max(initial=-1), ei.max(initial=-1))) + 1
    train = RatingMatrix(tu, ti, tv, n_users=n_u, n_items=n_i)
    return train, (eu, ei, ev)
