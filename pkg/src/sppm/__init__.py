"""Spatial product partition model with AR(1) latent series.

Bayesian clustering of point-referenced time series: a collapsed Gibbs
sampler with O(T) tridiagonal kernels, closed-form spatial similarities and
loss-based partition point estimates.
"""
from ._kernels import BACKEND_NAME
from .ar1 import Ar1Params, InvalidParameterError
from .io import SyntheticSpec, emit_bands, generate_synthetic, ingest, write_dataset
from .model import Dataset, Hyperparams, Partition, build_seasonal_design, canonicalize
from .partition import (DistanceSimilarity, NiwParams, NiwPosteriorSimilarity, NiwSimilarity,
                        ThresholdSimilarity, enumerate_partitions, eppf_dp)
from .sampler import ChainConfig, PosteriorDraws, run_chain
from .summary import (SearchConfig, binder_loss, cocluster, conditional_reestimate,
                      search_point_estimate, vi_loss)

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME", "Ar1Params", "InvalidParameterError", "SyntheticSpec", "emit_bands",
    "generate_synthetic", "ingest", "write_dataset", "Dataset", "Hyperparams", "Partition",
    "build_seasonal_design", "canonicalize", "DistanceSimilarity", "NiwParams",
    "NiwPosteriorSimilarity", "NiwSimilarity", "ThresholdSimilarity", "enumerate_partitions",
    "eppf_dp", "ChainConfig", "PosteriorDraws", "run_chain", "SearchConfig", "binder_loss",
    "cocluster", "conditional_reestimate", "search_point_estimate", "vi_loss",
]
