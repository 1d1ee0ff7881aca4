"""Synthetic low-rank rating benchmarks: factor draws, noise, sparsification.

Factor rows are i.i.d. from a zero-location multivariate normal, log-normal,
or t (4 d.o.f.) with AR(1) covariance rho^|i-j|; the noiseless product U M^T
is perturbed by Gaussian noise and an exact-count uniform subset of cells is
kept as observed.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .ratings import RatingMatrix, write_ratings_csv
from .serialize import write_matrix

__all__ = [
    "SyntheticConfig", "ar1_covariance", "sample_factors",
    "generate_rating_matrix", "write_dataset", "read_manifest",
]

DISTRIBUTIONS = ("normal", "lognormal", "t4")


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings for one synthetic rating matrix."""

    dist: str = "normal"
    n_users: int = 300
    n_items: int = 300
    n_f: int = 20
    rho: float = 0.6
    alpha: float = 0.4
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.dist not in DISTRIBUTIONS:
            raise ConfigError(f"unknown distribution {self.dist!r}; expected {DISTRIBUTIONS}")
        if min(self.n_users, self.n_items, self.n_f) < 1:
            raise ConfigError("n_users, n_items, n_f must be >= 1")
        if not -1.0 < self.rho < 1.0:
            raise ConfigError("rho must be in (-1, 1)")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must be in (0, 1]")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")


def ar1_covariance(p, rho):
    """AR(1) covariance: entry (i, j) = rho^|i-j|; SPD for |rho| < 1."""
    if p < 1:
        raise ConfigError("dimension must be >= 1")
    if not -1.0 < rho < 1.0:
        raise ConfigError("rho must be in (-1, 1)")
    k = np.arange(p)
    return rho ** np.abs(k[:, None] - k[None, :])


def _draw_rows(rng, n, chol, dist):
    z = rng.standard_normal((n, chol.shape[0]))
    x = z @ chol.T
    if dist == "normal":
        return x
    if dist == "lognormal":
        return np.exp(x)
    w = rng.chisquare(df=4, size=n)
    return x * np.sqrt(4.0 / w)[:, None]


def sample_factors(cfg, rng=None):
    """Draw (U, M) with i.i.d. rows from cfg.dist and AR(1) row covariance."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    sigma = ar1_covariance(cfg.n_f, cfg.rho)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ConfigError(f"covariance not positive definite (rho={cfg.rho})") from exc
    U = _draw_rows(rng, cfg.n_users, chol, cfg.dist)
    M = _draw_rows(rng, cfg.n_items, chol, cfg.dist)
    return U, M


def _repair_empty(obs, rng):
    """Move single cells so no row/column is left unobserved; count preserved."""
    n_u, n_m = obs.shape
    row_counts = obs.sum(axis=1)
    col_counts = obs.sum(axis=0)
    moved = 0
    for axis, counts in ((0, row_counts), (1, col_counts)):
        for k in np.flatnonzero(counts == 0):
            donor_rows, donor_cols = np.nonzero(obs)
            good = (row_counts[donor_rows] >= 2) & (col_counts[donor_cols] >= 2)
            if not good.any():
                return moved, False
            pick = rng.choice(np.flatnonzero(good))
            a, b = donor_rows[pick], donor_cols[pick]
            obs[a, b] = False
            row_counts[a] -= 1
            col_counts[b] -= 1
            if axis == 0:
                j = rng.integers(n_m)
                obs[k, j] = True
                row_counts[k] += 1
                col_counts[j] += 1
            else:
                i = rng.integers(n_u)
                obs[i, k] = True
                row_counts[i] += 1
                col_counts[k] += 1
            moved += 1
    return moved, True


def generate_rating_matrix(cfg):
    """Generate (observed RatingMatrix, noiseless ground-truth matrix).

    Noise is added to every cell first; then exactly round(alpha * n_u * n_m)
    cells are retained uniformly at random. Rows or columns that end up empty
    are repaired by moving single cells (flagged with a warning) so the
    alternating solver has at least one rating everywhere.
    """
    rng = np.random.default_rng(cfg.seed)
    U, M = sample_factors(cfg, rng)
    truth = U @ M.T
    rated = truth + rng.normal(0.0, cfg.noise_sd, size=truth.shape) \
        if cfg.noise_sd > 0 else truth.copy()

    total = cfg.n_users * cfg.n_items
    k = int(round(cfg.alpha * total))
    if k < max(cfg.n_users, cfg.n_items):
        raise DataError(
            f"alpha={cfg.alpha} keeps {k} cells; cannot cover "
            f"{cfg.n_users} rows and {cfg.n_items} columns")
    keep = rng.permutation(total)[:k]
    obs = np.zeros(total, dtype=bool)
    obs[keep] = True
    obs = obs.reshape(cfg.n_users, cfg.n_items)
    if (obs.sum(axis=1) == 0).any() or (obs.sum(axis=0) == 0).any():
        moved, ok = _repair_empty(obs, rng)
        warnings.warn(f"sparsification left empty rows/columns; moved {moved} cell(s)"
                      + ("" if ok else "; repair incomplete"), stacklevel=2)

    rows, cols = np.nonzero(obs)
    R = RatingMatrix(rows, cols, rated[rows, cols],
                     n_users=cfg.n_users, n_items=cfg.n_items)
    return R, truth


def write_dataset(cfg, out_dir, stem="synth"):
    """Write ratings CSV, ground-truth container, and a JSON manifest.

    Returns the three paths. Re-running with the manifest's configuration
    reproduces the files byte for byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    R, truth = generate_rating_matrix(cfg)
    ratings_path = out / f"{stem}_ratings.csv"
    truth_path = out / f"{stem}_truth.bin"
    manifest_path = out / f"{stem}_manifest.json"
    write_ratings_csv(ratings_path, R)
    write_matrix(truth_path, truth)
    manifest = dict(asdict(cfg), n_entries=R.n_entries)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    return ratings_path, truth_path, manifest_path


def read_manifest(path):
    """Load a dataset manifest back into a SyntheticConfig."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    data.pop("n_entries", None)
    return SyntheticConfig(**data)
