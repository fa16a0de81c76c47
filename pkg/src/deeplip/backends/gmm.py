"""Diagonal-covariance GMM-UBM with means-only MAP adaptation."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ..errors import DegenerateComponent, EmptyData, ShapeMismatch
from ..features import MfccConfig, Waveform, deltas, extract_mfcc, frame_log_energy

logger = logging.getLogger(__name__)

FORMAT = "deeplip-gmm"
VERSION = 1
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmModel:
    weights: np.ndarray  # K
    means: np.ndarray  # K x D
    covars: np.ndarray  # K x D diagonal variances
    llk_trace: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covars = np.asarray(self.covars, dtype=np.float64)
        if self.means.shape != self.covars.shape or self.weights.shape != (self.means.shape[0],):
            raise ShapeMismatch("weights K, means K x D and covars K x D must agree")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_likelihood(self, x: np.ndarray) -> np.ndarray:
        """N x K matrix of log w_k + log N(x | m_k, diag(c_k))."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise ShapeMismatch(f"frames have dim {x.shape[1]}, model has {self.dim}")
        prec = 1.0 / self.covars
        const = np.log(self.weights) - 0.5 * (self.dim * LOG_2PI + np.log(self.covars).sum(axis=1)
                                              + (self.means ** 2 * prec).sum(axis=1))
        return const + x @ (self.means * prec).T - 0.5 * (x ** 2) @ prec.T

    def log_likelihood(self, x: np.ndarray) -> np.ndarray:
        """Per-frame log density."""
        return logsumexp(self.component_log_likelihood(x), axis=1)

    def posteriors(self, x: np.ndarray) -> np.ndarray:
        comp = self.component_log_likelihood(x)
        return np.exp(comp - logsumexp(comp, axis=1, keepdims=True))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        k = rng.choice(self.n_components, size=n, p=self.weights / self.weights.sum())
        return self.means[k] + rng.standard_normal((n, self.dim)) * np.sqrt(self.covars[k])

    def copy(self) -> "GmmModel":
        return GmmModel(self.weights.copy(), self.means.copy(), self.covars.copy())

    def save(self, path: str) -> None:
        np.savez(path, format=FORMAT, version=VERSION, n_components=self.n_components, dim=self.dim,
                 weights=self.weights, means=self.means, covars=self.covars)

    @classmethod
    def load(cls, path: str) -> "GmmModel":
        with np.load(path, allow_pickle=False) as z:
            if str(z["format"]) != FORMAT or int(z["version"]) != VERSION:
                raise ValueError(f"{path}: not a version-{VERSION} GMM model")
            return cls(z["weights"], z["means"], z["covars"])


def _kmeans_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    from scipy.cluster.vq import kmeans2

    centroids, _ = kmeans2(x, k, iter=10, minit="++", seed=rng)
    return centroids


def train_ubm(features: np.ndarray, n_components: int = 64, max_iter: int = 100, tol: float = 1e-5,
              var_floor: float = 1e-4, seed: int = 0) -> GmmModel:
    """k-means initialised EM for a diagonal GMM on pooled frames (N x D).

    Variances are floored at ``var_floor`` times the global variance.
    ``llk_trace`` records the mean per-frame log-likelihood before each
    M-step and after the last one.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch("features must be N x D")
    n, d = x.shape
    if n < 2 * n_components:
        raise EmptyData(f"{n} frames is too few for {n_components} components")
    rng = np.random.default_rng(seed)
    floor = np.maximum(var_floor * x.var(axis=0), 1e-12)
    means = _kmeans_init(x, n_components, rng)
    covars = np.tile(np.maximum(x.var(axis=0), floor), (n_components, 1))
    gmm = GmmModel(np.full(n_components, 1.0 / n_components), means, covars)

    trace = []
    for it in range(max_iter):
        comp = gmm.component_log_likelihood(x)
        frame_ll = logsumexp(comp, axis=1)
        trace.append(float(frame_ll.mean()))
        if it > 0 and abs(trace[-1] - trace[-2]) < tol:
            break
        post = np.exp(comp - frame_ll[:, None])
        nk = post.sum(axis=0)
        dead = nk < 1e-3
        nk_safe = np.where(dead, 1.0, nk)
        new_means = (post.T @ x) / nk_safe[:, None]
        new_covars = (post.T @ (x ** 2)) / nk_safe[:, None] - new_means ** 2
        new_covars = np.maximum(new_covars, floor)
        weights = nk / n
        if dead.any():
            warnings.warn(f"re-seeding {int(dead.sum())} empty GMM components", DegenerateComponent,
                          stacklevel=2)
            worst = np.argsort(frame_ll)[:int(dead.sum())]
            new_means[dead] = x[worst]
            new_covars[dead] = np.maximum(x.var(axis=0), floor)
            weights[dead] = 1.0 / n
            weights = weights / weights.sum()
        gmm = GmmModel(weights, new_means, new_covars)
    else:
        trace.append(float(gmm.log_likelihood(x).mean()))
    gmm.llk_trace = trace
    logger.info("UBM EM: %d iterations, mean log-likelihood %.4f", len(trace), trace[-1])
    return gmm


def map_adapt(ubm: GmmModel, frames: np.ndarray, relevance: float = 16.0) -> GmmModel:
    """Means-only MAP: m_k' = a_k E_k[x] + (1 - a_k) m_k with a_k = n_k / (n_k + r)."""
    x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if x.size == 0 or x.shape[0] == 0:
        raise EmptyData("MAP adaptation needs at least one frame")
    post = ubm.posteriors(x)
    nk = post.sum(axis=0)
    fx = post.T @ x
    with np.errstate(invalid="ignore", divide="ignore"):
        data_mean = np.where(nk[:, None] > 0, fx / nk[:, None], ubm.means)
        if np.isinf(relevance):
            alpha = np.zeros_like(nk)
        else:
            alpha = np.where(nk > 0, nk / (nk + relevance), 0.0)
    means = alpha[:, None] * data_mean + (1.0 - alpha[:, None]) * ubm.means
    return GmmModel(ubm.weights.copy(), means, ubm.covars.copy())


def gmm_ubm_score(ubm: GmmModel, spk: GmmModel, test_frames: np.ndarray) -> float:
    """Average per-frame log-likelihood ratio of speaker model versus UBM."""
    if spk.means.shape != ubm.means.shape:
        raise ShapeMismatch(f"speaker model {spk.means.shape} vs UBM {ubm.means.shape}")
    x = np.atleast_2d(np.asarray(test_frames, dtype=np.float64))
    return float(np.mean(spk.log_likelihood(x) - ubm.log_likelihood(x)))


@dataclass(frozen=True)
class GmmFeatureConfig:
    """MFCC + deltas + double deltas with energy-based frame dropping."""
    n_ceps: int = 20
    deltas: bool = True
    vad: bool = True
    vad_threshold: float = 5.0  # drop frames more than this (nats) below the utterance's peak energy
    min_frames: int = 10


def gmm_features(w: Waveform, cfg: GmmFeatureConfig = GmmFeatureConfig()) -> np.ndarray:
    mcfg = MfccConfig(n_ceps=cfg.n_ceps, cmvn=True)
    ceps = extract_mfcc(w, mcfg).values
    feats = [ceps]
    if cfg.deltas:
        d1 = deltas(ceps)
        feats += [d1, deltas(d1)]
    out = np.hstack(feats)
    if cfg.vad:
        energy = frame_log_energy(w, mcfg)[:len(out)]
        keep = energy > energy.max() - cfg.vad_threshold
        if keep.sum() >= cfg.min_frames:
            out = out[keep]
    return out
