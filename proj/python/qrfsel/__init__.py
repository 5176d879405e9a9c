"""Forward variable selection for quantile random forests under the CRPS.

Reports are returned as dicts with the same layout as the command-line JSON.
Forest and selection options use the config-file keys (trees, mtry,
subsample_fraction, min_node_size, split_quantiles, crps_grid_k, alpha).
"""

import json

from ._core import (
    ConfigError,
    DataError,
    Dataset,
    MissingFileError,
    QuantileForest,
    binomial_critical,
    crps_from_quantiles,
    crps_gaussian,
    simulate,
    weighted_quantile,
)
from . import _core

__all__ = [
    "ConfigError",
    "DataError",
    "Dataset",
    "MissingFileError",
    "QuantileForest",
    "backmse",
    "binomial_critical",
    "crps_from_quantiles",
    "crps_gaussian",
    "fit_forest",
    "ngr",
    "oob_risk",
    "select",
    "simulate",
    "weighted_quantile",
]


def _options(options):
    out = {}
    for key, value in options.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(repr(float(v)) for v in value)
        out[key] = str(value)
    return out


def select(data, seed, threads=1, **options):
    """Forward CRPS selection; returns the selection trace."""
    return json.loads(_core.select_json(data, seed, _options(options), threads))


def fit_forest(data, covariates, seed, threads=1, **options):
    return QuantileForest.fit(data, list(covariates), seed, _options(options), threads)


def oob_risk(data, covariates, seed, threads=1, **options):
    return _core.oob_risk(data, list(covariates), seed, _options(options), threads)


def backmse(data, seed, trees=2000, replicates=20, threads=1):
    """Backward elimination by permutation importance; returns the report."""
    return json.loads(_core.backmse_json(data, seed, trees, replicates, threads))


def ngr(data, threads=1):
    """Gaussian regression with BIC stepwise selection; returns the report."""
    return json.loads(_core.ngr_json(data, threads))
