"""Simplified (two-covariance) PLDA trained by EM.

Preprocessed embeddings are modelled as ``x = mu + V y + e`` with
``y ~ N(0, I_rank)`` and ``e ~ N(0, Sigma)`` (full covariance), so the
between-speaker covariance is ``V V^T`` and the within-speaker covariance is
``Sigma``.  Scores are log-likelihood ratios of the same-speaker versus
different-speaker hypotheses.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import InsufficientData, ModelNotTrained, RankTooHigh

logger = logging.getLogger(__name__)

FORMAT = "deeplip-plda"
VERSION = 1


@dataclass
class PldaModel:
    centre: np.ndarray  # input-space mean removed before anything else
    mu: np.ndarray  # mean in the preprocessed space
    V: np.ndarray  # dim x rank speaker loading
    Sigma: np.ndarray  # dim x dim within-class covariance
    length_norm: bool = True
    projection: np.ndarray | None = None  # optional PCA, input_dim x dim
    n_iter: int = 0
    objective: list = field(default_factory=list)

    def __post_init__(self):
        self._cache = None

    @property
    def rank(self) -> int:
        return self.V.shape[1]

    @property
    def dim(self) -> int:
        return self.V.shape[0]

    @property
    def between(self) -> np.ndarray:
        return self.V @ self.V.T

    def preprocess(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64)) - self.centre
        if self.projection is not None:
            x = x @ self.projection
        if self.length_norm:
            x = _length_norm(x)
        return x - self.mu

    def scoring_matrices(self):
        if self._cache is None:
            B = self.between
            T = B + self.Sigma
            T_inv = np.linalg.inv(T)
            A = np.linalg.inv(T - B @ T_inv @ B)
            Q = T_inv - A
            P = T_inv @ B @ A
            Q = 0.5 * (Q + Q.T)
            P = 0.5 * (P + P.T)
            const = 0.5 * (np.linalg.slogdet(T)[1] - np.linalg.slogdet(T - B @ T_inv @ B)[1])
            self._cache = (Q, P, const)
        return self._cache

    def save(self, path: str) -> None:
        np.savez(path, format=FORMAT, version=VERSION, dim=self.dim, rank=self.rank,
                 input_dim=self.centre.shape[0], centre=self.centre, mu=self.mu, V=self.V,
                 Sigma=self.Sigma, length_norm=self.length_norm,
                 projection=self.projection if self.projection is not None else np.zeros((0, 0)),
                 objective=np.asarray(self.objective, dtype=np.float64))

    @classmethod
    def load(cls, path: str) -> "PldaModel":
        with np.load(path, allow_pickle=False) as z:
            if str(z["format"]) != FORMAT or int(z["version"]) != VERSION:
                raise ValueError(f"{path}: not a version-{VERSION} PLDA model")
            proj = z["projection"]
            return cls(z["centre"], z["mu"], z["V"], z["Sigma"], bool(z["length_norm"]),
                       proj if proj.size else None, n_iter=len(z["objective"]),
                       objective=z["objective"].tolist())


def _length_norm(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return x / safe * np.sqrt(x.shape[1])


def _floor_eig(S: np.ndarray, rel: float) -> np.ndarray:
    evals, evecs = np.linalg.eigh(S)
    floor = max(rel * max(evals.mean(), 0.0), 1e-10)
    if evals.min() >= floor:
        return S
    return (evecs * np.maximum(evals, floor)) @ evecs.T


def _group_stats(x: np.ndarray, labels: np.ndarray):
    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    sums = np.zeros((len(counts), x.shape[1]))
    np.add.at(sums, inverse, x)
    return counts, sums


def _log_likelihood(S_total, counts, sums, V, Sigma) -> float:
    n, d = int(counts.sum()), V.shape[0]
    Sigma_inv = np.linalg.inv(Sigma)
    VtSi = V.T @ Sigma_inv
    VtSiV = VtSi @ V
    ll = -0.5 * (n * d * np.log(2 * np.pi) + n * np.linalg.slogdet(Sigma)[1]
                 + np.sum(Sigma_inv * S_total))
    h = sums @ VtSi.T
    eye = np.eye(V.shape[1])
    for c in np.unique(counts):
        sel = counts == c
        P = eye + c * VtSiV
        ll += 0.5 * (np.sum(h[sel] * np.linalg.solve(P, h[sel].T).T) - sel.sum() * np.linalg.slogdet(P)[1])
    return float(ll)


def train_plda(embeddings, labels, rank: int = 150, max_iter: int = 50, tol: float = 1e-6,
               length_norm: bool = True, pca_dim: int | None = None,
               sigma_floor: float = 1e-4) -> PldaModel:
    """Fit PLDA with speaker-factor ``rank`` by EM.

    Stops when the per-sample log-likelihood gain drops below ``tol`` or
    after ``max_iter`` iterations.  ``pca_dim`` adds an optional PCA
    projection before length normalisation.  Eigenvalues of ``Sigma`` are
    floored at ``sigma_floor`` times its mean eigenvalue so that too few
    within-speaker samples (fewer than the dimension) still give an
    invertible model; the floor never binds on well-conditioned data.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(labels):
        raise ValueError("embeddings must be N x D with one label per row")
    uniq, counts = np.unique(labels, return_counts=True)
    if len(uniq) < 2 or counts.max() < 2:
        raise InsufficientData("PLDA needs >= 2 speakers and >= 2 utterances for one of them")
    centre = x.mean(axis=0)
    xc = x - centre
    projection = None
    if pca_dim is not None:
        if pca_dim > x.shape[1]:
            raise RankTooHigh(f"pca_dim {pca_dim} exceeds embedding dim {x.shape[1]}")
        _, _, vt = np.linalg.svd(xc, full_matrices=False)
        projection = vt[:pca_dim].T
        xc = xc @ projection
    if length_norm:
        xc = _length_norm(xc)
    n, d = xc.shape
    if rank < 1 or rank > d:
        raise RankTooHigh(f"rank {rank} must be in [1, {d}]")
    if n <= rank:
        raise InsufficientData(f"need more than rank={rank} embeddings, got {n}")

    mu = xc.mean(axis=0)
    xs = xc - mu
    counts, sums = _group_stats(xs, labels)
    S_total = xs.T @ xs

    # init: between-class eigvectors, within-class scatter
    means = sums / counts[:, None]
    Sb = (means * counts[:, None]).T @ means / n
    Sw = (S_total - (means * counts[:, None]).T @ means) / n
    evals, evecs = np.linalg.eigh(Sb)
    order = np.argsort(evals)[::-1][:rank]
    V = evecs[:, order] * np.sqrt(np.maximum(evals[order], 1e-6))
    Sigma = _floor_eig(Sw, sigma_floor)

    objective = [_log_likelihood(S_total, counts, sums, V, Sigma)]
    eye = np.eye(rank)
    it = 0
    for it in range(1, max_iter + 1):
        Sigma_inv = np.linalg.inv(Sigma)
        VtSi = V.T @ Sigma_inv
        VtSiV = VtSi @ V
        h = sums @ VtSi.T  # n_spk x rank
        Ey = np.empty_like(h)
        R = np.zeros((rank, rank))
        for c in np.unique(counts):
            sel = counts == c
            cov = np.linalg.inv(eye + c * VtSiV)
            Ey[sel] = h[sel] @ cov
            R += c * (sel.sum() * cov + Ey[sel].T @ Ey[sel])
        T = Ey.T @ sums  # rank x dim
        V = np.linalg.solve(R, T).T
        Sigma = (S_total - V @ T) / n
        Sigma = _floor_eig(0.5 * (Sigma + Sigma.T), sigma_floor)
        objective.append(_log_likelihood(S_total, counts, sums, V, Sigma))
        if abs(objective[-1] - objective[-2]) / n < tol:
            break
    logger.info("PLDA EM: %d iterations, log-likelihood %.3f", it, objective[-1])
    return PldaModel(centre, mu, V, Sigma, length_norm, projection, it, objective)


def plda_scores(model: PldaModel | None, enroll, test) -> np.ndarray:
    """Vectorised LLR for row pairs of two N x D arrays."""
    if model is None:
        raise ModelNotTrained("PLDA scoring requires a trained model")
    a = model.preprocess(enroll)
    b = model.preprocess(test)
    Q, P, const = model.scoring_matrices()
    qa = np.einsum("ij,jk,ik->i", a, Q, a)
    qb = np.einsum("ij,jk,ik->i", b, Q, b)
    s, d = a + b, a - b
    cross = 0.25 * (np.einsum("ij,jk,ik->i", s, P, s) - np.einsum("ij,jk,ik->i", d, P, d))
    return 0.5 * qa + 0.5 * qb + cross + const


def plda_score(model: PldaModel | None, a, b) -> float:
    return float(plda_scores(model, np.atleast_2d(a), np.atleast_2d(b))[0])

