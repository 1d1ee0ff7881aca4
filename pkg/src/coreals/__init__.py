"""Low-rank factorization of partially observed rating matrices.

Exact weighted-ridge alternating least squares plus accelerated variants that
subsample each regression: element-wise core-elements sketching (with a fast
whole-matrix variant), uniform row sampling, and leverage-score row sampling.
Includes synthetic benchmark generation, recommendation metrics, and a
grayscale image-restoration pipeline.
"""

from .als import (
    FactorPair, FitReport, SolverConfig,
    fit, init_factors, load_factors, objective, predict, predict_entries,
    predict_full, save_factors, save_factors_csv, update_item_full,
    update_user_full,
)
from .baselines import (
    RowSample, fit_sampled, leverage_scores, sample_uniform, update_row_sampled,
)
from .core import (
    DiagnosticsRecord, DiagnosticsSummary, SparseSketch, ces_sketch,
    compute_diagnostics, fit_core, fit_fast_core, sketch_budget, spectral_norm,
    theorem_bound_spectral, update_item_core, update_user_core,
    write_diagnostics_csv,
)
from .driver import fit_method
from .errors import ConfigError, DataError, NumericalError
from .imaging import GrayImage, load_pgm, mask_image, psnr, restore, save_pgm
from .metrics import (
    EvalResult, aggregate, evaluate, hit_at_k, ndcg_at_k, prmse,
    relevance_threshold, rmse, write_eval_csv,
)
from .ratings import (
    HoldoutSplit, RatingMatrix, build_rating_matrix, read_ratings_csv,
    slice_rows, split_holdout, write_ratings_csv, write_split_manifest,
)
from .synth import (
    SyntheticConfig, ar1_covariance, generate_rating_matrix, sample_factors,
    write_dataset,
)

__version__ = "0.1.0"
