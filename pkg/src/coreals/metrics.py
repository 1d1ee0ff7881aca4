"""Evaluation metrics: relative RMSE / PRMSE and test-set top-k ranking quality.

Ranking metrics score each user's held-out items only, ordered by predicted
score (ties broken by ascending item index). Relevance for the hit rate is
"true rating at or above a global percentile of the test ratings".
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .als import predict_entries
from .errors import DataError

__all__ = [
    "EvalResult", "rmse", "prmse", "relevance_threshold",
    "hit_at_k", "ndcg_at_k", "evaluate", "aggregate", "write_eval_csv",
]


@dataclass
class EvalResult:
    """Metric bundle for one fitted model (or an aggregate of replications)."""

    rmse: float
    prmse: float | None
    hit_at_k: float
    ndcg_at_k: float
    k_hit: int = 5
    k_ndcg: int = 10
    n_replications: int = 1


def _triplet_arrays(heldout):
    """Normalize held-out entries to (users, items, ratings) arrays."""
    if isinstance(heldout, tuple) and len(heldout) == 3:
        u, i, r = heldout
    else:
        rows = list(heldout)
        if not rows:
            raise DataError("empty held-out set")
        u = [t[0] for t in rows]
        i = [t[1] for t in rows]
        r = [t[2] for t in rows]
    u = np.asarray(u, dtype=np.int64)
    i = np.asarray(i, dtype=np.int64)
    r = np.asarray(r, dtype=np.float64)
    if not (u.size == i.size == r.size) or u.size == 0:
        raise DataError("held-out arrays must be non-empty and of equal length")
    return u, i, r


def _relative_rmse(truth, pred):
    denom = float(truth @ truth)
    if denom == 0.0:
        raise DataError("relative RMSE undefined: all true ratings are zero")
    resid = truth - pred
    return float(np.sqrt(float(resid @ resid) / denom))


def rmse(R, F):
    """Relative root error over the observed entries: ||r - r~|| / ||r||."""
    users, items, vals = R.entries()
    if vals.size == 0:
        raise DataError("rating matrix has no observed entries")
    return _relative_rmse(vals, predict_entries(F, users, items))


def prmse(heldout, F):
    """Relative root error over held-out (user, item, rating) entries."""
    users, items, vals = _triplet_arrays(heldout)
    return _relative_rmse(vals, predict_entries(F, users, items))


def relevance_threshold(ratings, percentile=95.0):
    """Global percentile of test ratings (linear interpolation).

    Items rated at or above the returned value count as relevant.
    """
    ratings = np.asarray(ratings, dtype=np.float64)
    if ratings.size == 0:
        raise DataError("cannot take a percentile of an empty rating set")
    return float(np.percentile(ratings, percentile, method="linear"))


def _user_groups(users, items, truths, scores):
    """Yield (item_idx, truth, score) per user, items sorted by predicted rank."""
    order = np.lexsort((items, users))
    users, items = users[order], items[order]
    truths, scores = truths[order], scores[order]
    bounds = np.flatnonzero(np.diff(users)) + 1
    for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, users.size]):
        it, tr, sc = items[lo:hi], truths[lo:hi], scores[lo:hi]
        # descending score; equal scores resolve to the smaller item index
        rank = np.lexsort((it, -sc))
        yield it[rank], tr[rank], sc[rank]


def hit_at_k(heldout, F, k, percentile=95.0, threshold=None):
    """Share of users with any relevant item inside their predicted top-k.

    Users with no relevant test item do not qualify; with no qualifying users
    at all the metric is undefined and raises.
    """
    users, items, truths = _triplet_arrays(heldout)
    if threshold is None:
        threshold = relevance_threshold(truths, percentile)
    scores = predict_entries(F, users, items)
    hits = n_qual = 0
    for it, tr, _ in _user_groups(users, items, truths, scores):
        relevant = tr >= threshold
        if not relevant.any():
            continue
        n_qual += 1
        hits += bool(relevant[:k].any())
    if n_qual == 0:
        raise DataError(f"hit@{k} undefined: 0 of {len(set(users.tolist()))} "
                        "users have a relevant test item")
    return hits / n_qual


def ndcg_at_k(heldout, F, k):
    """Score-gain NDCG over each user's test items.

    Gains are the true ratings of the items at each predicted rank; the ideal
    ordering ranks by true rating. Users with nonpositive ideal DCG are
    excluded. With nonnegative ratings the result lies in [0, 1]; zero-mean
    synthetic ratings can push individual users outside that range.
    """
    users, items, truths = _triplet_arrays(heldout)
    scores = predict_entries(F, users, items)
    total = n_used = 0
    for it, tr, _ in _user_groups(users, items, truths, scores):
        kk = min(k, tr.size)
        disc = 1.0 / np.log2(np.arange(2, kk + 2))
        dcg = float(tr[:kk] @ disc)
        ideal = np.sort(tr)[::-1][:kk]
        idcg = float(ideal @ disc)
        if idcg <= 0.0:
            continue
        total += dcg / idcg
        n_used += 1
    if n_used == 0:
        raise DataError(f"ndcg@{k} undefined: every user has nonpositive ideal DCG")
    return total / n_used


def evaluate(R_train, heldout, F, k_hit=5, k_ndcg=10, percentile=95.0):
    """All four metrics for one fit; heldout supplies PRMSE and ranking sets."""
    return EvalResult(
        rmse=rmse(R_train, F),
        prmse=prmse(heldout, F) if heldout is not None else None,
        hit_at_k=hit_at_k(heldout, F, k_hit, percentile=percentile),
        ndcg_at_k=ndcg_at_k(heldout, F, k_ndcg),
        k_hit=k_hit, k_ndcg=k_ndcg)


def aggregate(results):
    """Mean of each metric across replications."""
    results = list(results)
    if not results:
        raise DataError("nothing to aggregate")
    ks = {(r.k_hit, r.k_ndcg) for r in results}
    if len(ks) != 1:
        raise DataError("cannot aggregate results computed at different k")
    has_prmse = all(r.prmse is not None for r in results)
    return EvalResult(
        rmse=float(np.mean([r.rmse for r in results])),
        prmse=float(np.mean([r.prmse for r in results])) if has_prmse else None,
        hit_at_k=float(np.mean([r.hit_at_k for r in results])),
        ndcg_at_k=float(np.mean([r.ndcg_at_k for r in results])),
        k_hit=results[0].k_hit, k_ndcg=results[0].k_ndcg,
        n_replications=int(sum(r.n_replications for r in results)))


EVAL_KEY_FIELDS = ("method", "rate", "lambda", "n_f", "dist", "alpha", "seed")


def write_eval_csv(path, keyed_results):
    """Write (key_dict, EvalResult) pairs; key columns identify the run."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*EVAL_KEY_FIELDS,
                    "rmse", "prmse", "hit_at_k", "ndcg_at_k",
                    "k_hit", "k_ndcg", "n_replications"])
        for key, res in keyed_results:
            w.writerow([key.get(f, "") for f in EVAL_KEY_FIELDS]
                       + [repr(float(res.rmse)),
                          "" if res.prmse is None else repr(float(res.prmse)),
                          repr(float(res.hit_at_k)), repr(float(res.ndcg_at_k)),
                          res.k_hit, res.k_ndcg, res.n_replications])
