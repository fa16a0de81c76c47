import warnings

import numpy as np
import pytest

from deeplip.backends import (GmmModel, cosine_score, cosine_scores, gmm_ubm_score, map_adapt,
                              plda_score, plda_scores, train_plda, train_ubm)
from deeplip.backends.gmm import GmmFeatureConfig, gmm_features
from deeplip.backends.plda import PldaModel
from deeplip.errors import (EmptyData, InsufficientData, ModelNotTrained, RankTooHigh, ShapeMismatch,
                            ZeroVector)
from deeplip.features import Waveform
from oracles import dense_two_cov_llr


# cosine

def test_cosine_examples():
    x = np.array([0.3, -1.2, 2.0])
    assert cosine_score(x, x) == pytest.approx(1.0)
    assert cosine_score(x, -x) == pytest.approx(-1.0)
    assert cosine_score([1, 0], [1, 1]) == pytest.approx(0.70710678, abs=1e-8)
    with pytest.raises(ZeroVector):
        cosine_score([0, 0], [1, 1])


def test_cosine_scale_invariance_and_batch(rng):
    a, b = rng.normal(size=(50, 6)), rng.normal(size=(50, 6))
    for c in (1e-3, 0.5, 7.0):
        np.testing.assert_allclose(cosine_scores(c * a, b), cosine_scores(a, b), atol=1e-12)
    np.testing.assert_allclose(cosine_scores(a, b), [cosine_score(x, y) for x, y in zip(a, b)], atol=1e-12)
    np.testing.assert_allclose(cosine_scores(a, b), cosine_scores(b, a), atol=1e-15)


# PLDA

def _generate_plda(rng, d=8, rank=2, n_spk=200, n_utt=10):
    V = rng.normal(size=(d, rank)) * 2.0
    L = rng.normal(size=(d, d)) * 0.3
    Sigma = L @ L.T + 0.5 * np.eye(d)
    mu = rng.normal(size=d)
    y = rng.normal(size=(n_spk, rank))
    labels = np.repeat(np.arange(n_spk), n_utt)
    e = rng.multivariate_normal(np.zeros(d), Sigma, size=n_spk * n_utt)
    x = mu + y[labels] @ V.T + e
    return x, labels, mu, V, Sigma


def plda_known_parameter_correlation(seed=0) -> float:
    rng = np.random.default_rng(seed)
    x, labels, mu, V, Sigma = _generate_plda(rng)
    model = train_plda(x, labels, rank=2, length_norm=False)
    pairs = rng.integers(0, len(x), size=(400, 2))
    pairs[:200, 1] = pairs[:200, 0] // 10 * 10 + (pairs[:200, 0] + 1) % 10  # some same-speaker pairs
    ours = plda_scores(model, x[pairs[:, 0]], x[pairs[:, 1]])
    truth = [dense_two_cov_llr(x[i] - mu, x[j] - mu, V @ V.T, Sigma) for i, j in pairs]
    return float(np.corrcoef(ours, truth)[0, 1])


def test_plda_known_parameters():
    assert plda_known_parameter_correlation() >= 0.99


def test_plda_matches_dense_oracle(rng):
    x, labels, *_ = _generate_plda(rng, d=6, rank=3, n_spk=40, n_utt=5)
    model = train_plda(x, labels, rank=3)
    a, b = x[:20], x[20:40]
    ours = plda_scores(model, a, b)
    pa, pb = model.preprocess(a), model.preprocess(b)
    dense = [dense_two_cov_llr(p, q, model.between, model.Sigma) for p, q in zip(pa, pb)]
    np.testing.assert_allclose(ours, dense, atol=1e-8)
    # a = b = mean -> closed form at the origin
    model_nl = train_plda(x, labels, rank=3, length_norm=False)
    s0 = plda_score(model_nl, model_nl.centre + model_nl.mu, model_nl.centre + model_nl.mu)
    d = model_nl.dim
    assert s0 == pytest.approx(dense_two_cov_llr(np.zeros(d), np.zeros(d), model_nl.between, model_nl.Sigma),
                               abs=1e-9)


def test_plda_symmetry_batch_and_shift(rng):
    x, labels, *_ = _generate_plda(rng, d=6, rank=2, n_spk=30, n_utt=6)
    model = train_plda(x, labels, rank=2)
    a, b = x[::2][:40], x[1::2][:40]
    np.testing.assert_array_equal(plda_scores(model, a, b), plda_scores(model, b, a))
    looped = [plda_score(model, p, q) for p, q in zip(a, b)]
    np.testing.assert_allclose(plda_scores(model, a, b), looped, atol=1e-10)
    shift = rng.normal(size=6) * 5
    shifted = train_plda(x + shift, labels, rank=2)
    s1 = plda_scores(model, a, b)
    s2 = plda_scores(shifted, a + shift, b + shift)
    np.testing.assert_array_equal(np.argsort(s1), np.argsort(s2))


def test_plda_em_objective_non_decreasing(rng):
    x, labels, *_ = _generate_plda(rng, d=8, rank=2, n_spk=50, n_utt=6)
    model = train_plda(x, labels, rank=2, length_norm=False, tol=0.0, max_iter=20)
    obj = np.array(model.objective)
    assert np.all(np.diff(obj) >= -1e-6 * np.abs(obj[1:]))
    assert model.rank == 2


def test_plda_rank_150_and_errors(rng):
    x = rng.normal(size=(400, 512))
    labels = np.repeat(np.arange(40), 10)
    model = train_plda(x, labels, rank=150, max_iter=3)
    assert model.V.shape == (512, 150)
    assert np.all(np.linalg.eigvalsh(model.Sigma) > 0)
    with pytest.raises(InsufficientData):
        train_plda(x[:10], np.zeros(10), rank=2)
    with pytest.raises(RankTooHigh):
        train_plda(x[:, :8], labels, rank=9)
    with pytest.raises(ModelNotTrained):
        plda_scores(None, x[:2], x[:2])


def test_plda_pca_option_and_io(rng, tmp_path):
    x, labels, *_ = _generate_plda(rng, d=10, rank=2, n_spk=30, n_utt=5)
    model = train_plda(x, labels, rank=2, pca_dim=6)
    assert model.dim == 6
    path = tmp_path / "plda.npz"
    model.save(str(path))
    back = PldaModel.load(str(path))
    np.testing.assert_array_equal(plda_scores(back, x[:5], x[5:10]), plda_scores(model, x[:5], x[5:10]))


# GMM-UBM

def test_ubm_single_gaussian_moments(rng):
    x = rng.normal(loc=[1.0, -2.0, 3.0], scale=[0.5, 2.0, 1.0], size=(20000, 3))
    ubm = train_ubm(x, n_components=1)
    np.testing.assert_allclose(ubm.means[0], x.mean(axis=0), rtol=0.02, atol=1e-3)
    np.testing.assert_allclose(ubm.covars[0], x.var(axis=0), rtol=0.02)


def _blobs(rng, n=4000, d=3):
    centres = rng.normal(size=(5, d)) * 4
    return centres[rng.integers(0, 5, size=n)] + rng.normal(size=(n, d))


def test_ubm_monotone_and_deterministic(rng):
    x = _blobs(rng)
    ubm = train_ubm(x, n_components=8, seed=3)
    trace = np.array(ubm.llk_trace)
    assert np.all(np.diff(trace) >= -1e-8)
    assert ubm.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(ubm.covars >= 1e-4 * x.var(axis=0) - 1e-15)
    again = train_ubm(x, n_components=8, seed=3)
    np.testing.assert_array_equal(ubm.means, again.means)


def test_ubm_default_components(rng):
    x = _blobs(rng, n=3000, d=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert train_ubm(x, max_iter=5).n_components == 64


def test_gmm_density_integrates_to_one():
    rng = np.random.default_rng(11)
    gmm = GmmModel([0.3, 0.7], [[0.0, 0.0], [1.5, -1.0]], [[0.5, 1.0], [0.3, 0.2]])
    lo, hi = np.array([-6.0, -7.0]), np.array([7.0, 5.0])
    u = rng.uniform(lo, hi, size=(1_000_000, 2))
    integral = np.exp(gmm.log_likelihood(u)).mean() * np.prod(hi - lo)
    assert integral == pytest.approx(1.0, rel=0.02)


def test_map_limits_and_convexity(rng):
    x = _blobs(rng)
    ubm = train_ubm(x, n_components=4, seed=0)
    frames = rng.normal(size=(200, 3)) + 1.0
    np.testing.assert_array_equal(map_adapt(ubm, frames, relevance=np.inf).means, ubm.means)
    post = ubm.posteriors(frames)
    nk = post.sum(axis=0)
    data_mean = post.T @ frames / nk[:, None]
    adapted = map_adapt(ubm, frames)
    for k in range(4):
        diff = data_mean[k] - ubm.means[k]
        alpha = (adapted.means[k] - ubm.means[k]) / np.where(diff == 0, 1, diff)
        assert np.all((alpha >= -1e-12) & (alpha <= 1 + 1e-12))
        np.testing.assert_allclose(alpha, alpha[0], atol=1e-9)  # one alpha per component
    np.testing.assert_array_equal(adapted.covars, ubm.covars)
    np.testing.assert_array_equal(adapted.weights, ubm.weights)
    with pytest.raises(EmptyData):
        map_adapt(ubm, np.zeros((0, 3)))


def test_map_zero_relevance_single_component():
    ubm = GmmModel([0.5, 0.5], [[0.0], [100.0]], [[1.0], [1.0]])
    frames = np.array([[0.5], [-0.2], [1.1]])
    adapted = map_adapt(ubm, frames, relevance=0.0)
    assert adapted.means[0, 0] == pytest.approx(frames.mean())
    assert adapted.means[1, 0] == 100.0


def test_gmm_ubm_score_oracles(rng):
    x = _blobs(rng)
    ubm = train_ubm(x, n_components=4, seed=0)
    assert gmm_ubm_score(ubm, ubm, x[:100]) == 0.0
    spk = map_adapt(ubm, rng.normal(size=(500, 3)) + 2.0)
    assert gmm_ubm_score(ubm, spk, spk.sample(5000, rng)) > 0
    with pytest.raises(ShapeMismatch):
        gmm_ubm_score(ubm, GmmModel([1.0], [[0.0, 0.0, 0.0]], [[1.0, 1.0, 1.0]]), x[:5])


def test_gmm_single_frame_hand_density():
    ubm = GmmModel([1.0], [[0.0]], [[1.0]])
    spk = GmmModel([1.0], [[1.0]], [[1.0]])
    # at x = 1: log N(1;1,1) - log N(1;0,1) = 0.5
    assert gmm_ubm_score(ubm, spk, [[1.0]]) == pytest.approx(0.5)
    assert gmm_ubm_score(ubm, spk, [[-1.0]]) == pytest.approx(-1.5)


def test_gmm_io_and_features(rng, tmp_path):
    gmm = GmmModel([0.4, 0.6], rng.normal(size=(2, 3)), np.ones((2, 3)))
    gmm.save(str(tmp_path / "g.npz"))
    np.testing.assert_array_equal(GmmModel.load(str(tmp_path / "g.npz")).means, gmm.means)
    t = np.arange(16000) / 16000
    w = Waveform(np.sin(2 * np.pi * 220 * t) * (t > 0.3) + 1e-4 * rng.normal(size=16000), 16000)
    feats = gmm_features(w, GmmFeatureConfig())
    assert feats.shape[1] == 60
    assert 10 <= feats.shape[0] < 98
