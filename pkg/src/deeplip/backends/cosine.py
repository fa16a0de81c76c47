from __future__ import annotations

import numpy as np

from ..errors import ZeroVector


def cosine_score(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_scores(enroll: np.ndarray, test: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity of two N x D arrays."""
    enroll = np.asarray(enroll, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    ne = np.linalg.norm(enroll, axis=1)
    nt = np.linalg.norm(test, axis=1)
    if (ne == 0).any() or (nt == 0).any():
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return np.clip(np.einsum("ij,ij->i", enroll, test) / (ne * nt), -1.0, 1.0)
