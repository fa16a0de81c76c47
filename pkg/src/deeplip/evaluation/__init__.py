"""Trial scoring, fusion and verification metrics."""
from .fusion import feature_fuse, l1_normalize, score_fuse, znorm, znorm_params
from .metrics import compute_eer, compute_min_dcf, det_curve, eer_from_points, operating_points
from .scoring import (EmbeddingStore, ScoreSet, SystemResult, evaluate_trials, format_report,
                      summarize, write_det_csv)

__all__ = [
    "feature_fuse", "l1_normalize", "score_fuse", "znorm", "znorm_params",
    "compute_eer", "compute_min_dcf", "det_curve", "eer_from_points", "operating_points",
    "EmbeddingStore", "ScoreSet", "SystemResult", "evaluate_trials", "format_report", "summarize",
    "write_det_csv",
]
