"""Single entry point dispatching a fit to the configured estimator."""

from .als import fit as _fit_full
from .baselines import fit_sampled
from .core import fit_core, fit_fast_core
from .errors import ConfigError

__all__ = ["fit_method"]

_DISPATCH = {
    "full": _fit_full,
    "core": fit_core,
    "fast_core": fit_fast_core,
    "unif": fit_sampled,
    "blev": fit_sampled,
}


def fit_method(R, cfg, **kwargs):
    """Fit ``R`` with the estimator selected by ``cfg.method``."""
    try:
        fn = _DISPATCH[cfg.method]
    except KeyError:
        raise ConfigError(f"unknown method {cfg.method!r}") from None
    return fn(R, cfg, **kwargs)
