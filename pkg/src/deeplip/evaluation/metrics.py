"""EER, minDCF and DET operating points.

Operating point ``i`` accepts every trial scoring at least the ``i``-th
smallest distinct score; the final point rejects everything.  The sweep
therefore starts at (FAR=1, FRR=0) and ends at (FAR=0, FRR=1).
"""
from __future__ import annotations

import numpy as np

from ..errors import OneClassOnly


def _scores_labels(s, labels=None) -> tuple[np.ndarray, np.ndarray]:
    if labels is None:
        scores, labels = s.scores, s.labels
    else:
        scores = s
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if labels.all() or not labels.any():
        raise OneClassOnly("need at least one target and one nontarget trial")
    return scores, labels


def operating_points(s, labels=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (thresholds, FAR, FRR) over all distinct-score thresholds plus +inf."""
    scores, labels = _scores_labels(s, labels)
    uniq, inverse = np.unique(scores, return_inverse=True)
    tar = np.bincount(inverse[labels], minlength=len(uniq))
    non = np.bincount(inverse[~labels], minlength=len(uniq))
    n_tar, n_non = int(tar.sum()), int(non.sum())
    # integer counts keep FAR == FRR ties exact
    frr = np.concatenate([[0], np.cumsum(tar)]) / n_tar
    far = (n_non - np.concatenate([[0], np.cumsum(non)])) / n_non
    return np.append(uniq, np.inf), far, frr


def eer_from_points(thresholds, far, frr) -> tuple[float, float]:
    """Linear interpolation of the first FAR/FRR crossing along the sweep."""
    diff = far - frr
    i = int(np.flatnonzero(diff <= 0)[0])
    if i == 0 or diff[i] == 0:
        return float(frr[i]), float(thresholds[i])
    t = diff[i - 1] / (diff[i - 1] - diff[i])
    eer = frr[i - 1] + t * (frr[i] - frr[i - 1])
    lo, hi = thresholds[i - 1], thresholds[i]
    thr = lo if not np.isfinite(hi) else lo + t * (hi - lo)
    return float(eer), float(thr)


def compute_eer(s, labels=None) -> tuple[float, float]:
    """Equal error rate and the threshold where FAR and FRR cross."""
    return eer_from_points(*operating_points(s, labels))


def compute_min_dcf(s, labels=None, p_target: float = 0.01, c_miss: float = 1.0, c_fa: float = 1.0,
                    return_threshold: bool = False):
    """Minimum normalised detection cost over all operating points."""
    thresholds, far, frr = operating_points(s, labels)
    dcf = c_miss * p_target * frr + c_fa * (1.0 - p_target) * far
    i = int(np.argmin(dcf))
    value = float(dcf[i] / min(c_miss * p_target, c_fa * (1.0 - p_target)))
    return (value, float(thresholds[i])) if return_threshold else value


def det_curve(s, labels=None) -> list[tuple[float, float]]:
    """(FAR, FRR) points in order of rising threshold."""
    _, far, frr = operating_points(s, labels)
    return list(zip(far.tolist(), frr.tolist()))
