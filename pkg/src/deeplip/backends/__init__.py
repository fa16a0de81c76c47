"""Scoring backends: cosine, PLDA and GMM-UBM."""
from .cosine import cosine_score, cosine_scores
from .gmm import GmmFeatureConfig, GmmModel, gmm_features, gmm_ubm_score, map_adapt, train_ubm
from .plda import PldaModel, plda_score, plda_scores, train_plda

__all__ = [
    "cosine_score", "cosine_scores",
    "GmmFeatureConfig", "GmmModel", "gmm_features", "gmm_ubm_score", "map_adapt", "train_ubm",
    "PldaModel", "plda_score", "plda_scores", "train_plda",
]
