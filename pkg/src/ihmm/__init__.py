"""Covariate-dependent infinite hidden Markov model for multiple multivariate
time series with missing-at-random and below-detection-limit data."""

from .data import (
    AffineTransform,
    CovariateSpec,
    Dataset,
    ObsStatus,
    Series,
    ingest_csv,
    standardize,
    with_covariates,
    write_csv,
)
from .emissions import EmissionParams, NiwHyper
from .sampler import ChainState, McmcConfig, PosteriorDraws, Priors, init_chain, run, sweep
from .simulation import SimConfig, generate
from .transitions import PsbpParams, PsbpPriors

__version__ = "0.1.0"

__all__ = [
    "AffineTransform", "ChainState", "CovariateSpec", "Dataset", "EmissionParams", "McmcConfig", "NiwHyper",
    "ObsStatus", "PosteriorDraws", "Priors", "PsbpParams", "PsbpPriors", "Series", "SimConfig", "generate",
    "ingest_csv", "init_chain", "run", "standardize", "sweep", "with_covariates", "write_csv",
]
