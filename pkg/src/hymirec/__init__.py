"""Hybrid multi-interest recommendation: residual codebooks, a coarse-to-fine
interest model, disentangled multi-interest training and query-splitting
retrieval."""

from .codebook import (QuantCodes, ResidualCodebook, ResidualQuantizer, build_codebook,
                       compression_ratio, decode, encode)
from .config import RunConfig
from .dmil import WindowTargets, ablation_variant, cluster_and_match, contrastive_loss, dmil_loss
from .exceptions import ConfigError, DataError, DegenerateVectorError, HyMiRecError, NumericError
from .numerics import balanced_kmeans, cosine_similarity, hungarian_max, spherical_kmeans
from .recommender import MultiInterestRecommender
from .retrieval import InterestSet, RetrievalIndex, full_scan_topk, retrieve_topk, serve_session

__version__ = "0.1.0"

__all__ = [
    "QuantCodes", "ResidualCodebook", "ResidualQuantizer", "build_codebook",
    "compression_ratio", "decode", "encode", "RunConfig", "WindowTargets",
    "ablation_variant", "cluster_and_match", "contrastive_loss", "dmil_loss",
    "ConfigError", "DataError", "DegenerateVectorError", "HyMiRecError", "NumericError",
    "balanced_kmeans", "cosine_similarity", "hungarian_max", "spherical_kmeans",
    "MultiInterestRecommender", "InterestSet", "RetrievalIndex", "full_scan_topk",
    "retrieve_topk", "serve_session",
]
