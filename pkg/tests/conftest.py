import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from coreals import RatingMatrix, SyntheticConfig, generate_rating_matrix


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_matrix(seed, n_users=40, n_items=30, alpha=0.6, dist="normal",
                  n_f=4, noise_sd=1.0):
    """Small synthetic rating matrix; warnings from repair are silenced."""
    cfg = SyntheticConfig(dist=dist, n_users=n_users, n_items=n_items, n_f=n_f,
                          alpha=alpha, noise_sd=noise_sd, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        R, truth = generate_rating_matrix(cfg)
    return R, truth


def matrix_from_dense(dense):
    """RatingMatrix from a dense array with NaNs marking missing cells."""
    dense = np.asarray(dense, dtype=float)
    rows, cols = np.nonzero(~np.isnan(dense))
    return RatingMatrix(rows, cols, dense[rows, cols],
                        n_users=dense.shape[0], n_items=dense.shape[1])
