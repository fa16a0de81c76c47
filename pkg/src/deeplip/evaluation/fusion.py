"""Feature-level and score-level fusion of the audio and video streams."""
from __future__ import annotations

import numpy as np

from ..errors import MissingStream, TrialMismatch, ZeroVector


def l1_normalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.abs(x).sum()
    if norm == 0:
        raise ZeroVector("cannot L1-normalise a zero vector")
    return x / norm


def feature_fuse(a, v) -> np.ndarray:
    """Concatenate the L1-normalised audio and video embeddings."""
    if a is None or v is None:
        raise MissingStream("feature fusion needs both an audio and a video embedding")
    return np.concatenate([l1_normalize(a), l1_normalize(v)])


def score_fuse(s_audio, s_video, weights=(0.5, 0.5), name: str = "score_fusion"):
    """Weighted mean of two ScoreSets over an identical trial list."""
    from .scoring import ScoreSet

    if len(s_audio.trials) != len(s_video.trials) or any(
            (ta.enroll_utt, ta.test_utt) != (tv.enroll_utt, tv.test_utt)
            for ta, tv in zip(s_audio.trials, s_video.trials)):
        raise TrialMismatch("score fusion requires identical trial lists in identical order")
    wa, wv = weights
    if wa < 0 or wv < 0 or wa + wv <= 0:
        raise ValueError(f"fusion weights must be non-negative with positive sum, got {weights}")
    wa, wv = wa / (wa + wv), wv / (wa + wv)
    if wv == 0:
        fused = s_audio.scores.copy()
    elif wa == 0:
        fused = s_video.scores.copy()
    else:
        fused = wa * s_audio.scores + wv * s_video.scores
    return ScoreSet(list(s_audio.trials), fused, name)


def znorm_params(dev_scores) -> tuple[float, float]:
    """Mean and std of a development ScoreSet's nontarget scores."""
    s = np.asarray(dev_scores.scores)[~dev_scores.labels]
    if len(s) < 2:
        raise ValueError("z-norm needs at least two nontarget development scores")
    return float(s.mean()), float(max(s.std(), 1e-12))


def znorm(scores, params):
    from .scoring import ScoreSet

    mean, std = params
    return ScoreSet(list(scores.trials), (scores.scores - mean) / std, scores.system_name)
