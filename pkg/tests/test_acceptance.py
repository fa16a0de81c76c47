"""Acceptance criteria 1-10.  Each test prints and records one PASS/FAIL line.

Run alone with ``pytest -v -s tests/test_acceptance.py``; the lines are also
collected into an "acceptance criteria" section of the terminal summary.
The two training criteria (5, 6) are marked ``slow``.
"""
import time
import warnings

import numpy as np
import pytest
import torch

import conftest
from deeplip.corpus import PartitionSpec, generate_trials, make_partitions
from deeplip.evaluation import (EmbeddingStore, ScoreSet, compute_eer, compute_min_dcf, evaluate_trials,
                                score_fuse)
from deeplip.lipnet import McnnConfig, VideoTrainConfig, build_mcnn, embed_video, train_video
from deeplip.pipeline import audio_dataset, extract_embeddings, video_dataset
from deeplip.synth import synth_corpus
from deeplip.xvector import AudioTrainConfig, EtdnnConfig, build_etdnn, embed_audio, train_audio
from oracles import brute_force_eer, brute_force_min_dcf


def record(n, ok, detail):
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_metric_oracle():
    from deeplip.corpus import Trial

    rng = np.random.default_rng(2024)
    worst, t0 = 0.0, time.time()
    for k in range(1000):
        n = int(rng.integers(10, 5001))
        labels = rng.random(n) < rng.uniform(0.05, 0.95)
        labels[0], labels[1] = True, False
        scores = rng.normal(size=n) + labels * rng.uniform(0, 3)
        if k % 3 == 0:
            scores = np.round(scores, 2)  # ties
        trials = [Trial(f"e{i}", f"t{i}", bool(lab)) for i, lab in enumerate(labels)]
        s = ScoreSet(trials, scores)
        worst = max(worst, abs(compute_eer(s)[0] - brute_force_eer(scores, labels)),
                    abs(compute_min_dcf(s) - brute_force_min_dcf(scores, labels)))
    elapsed = time.time() - t0
    record(1, worst <= 1e-9 and elapsed < 60, f"max |diff| {worst:.2e} over 1000 sets in {elapsed:.1f}s")


def test_criterion_2_handcrafted_eer():
    eer, _ = compute_eer([0.9, 0.8, 0.3, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0, 0])
    record(2, eer == pytest.approx(1 / 3, abs=1e-15), f"EER {eer!r} (expected 1/3)")


def test_criterion_3_shapes_and_determinism():
    torch.manual_seed(0)
    t0 = time.time()
    ok, notes = True, []
    video = build_mcnn(conftest.tiny_mcnn(embedding_dim=512))
    for t in (29, 35, 58):
        x = torch.rand(2, 1, t, 88, 88)
        a, b = embed_video(video, x), embed_video(video, x)
        good = a.shape == (2, 512) and torch.allclose(a, b, atol=1e-6)
        ok &= good
        notes.append(f"video T={t} {tuple(a.shape)}")
    audio = build_etdnn(conftest.tiny_etdnn(embedding_dim=512))
    for t in (23, 98, 300):
        x = torch.randn(3, t, 26)
        a, b = embed_audio(audio, x), embed_audio(audio, x)
        ok &= a.shape == (3, 512) and torch.allclose(a, b, atol=1e-6)
        notes.append(f"audio T={t} {tuple(a.shape)}")
    elapsed = time.time() - t0
    record(3, ok and elapsed < 120, f"{', '.join(notes)} in {elapsed:.1f}s")


def test_criterion_4_gradient_checks():
    from test_lipnet import video_gradient_error
    from test_xvector import audio_gradient_error

    (ve, vn), (ae, an) = video_gradient_error(), audio_gradient_error()
    ok = ve < 1e-3 and ae < 1e-3 and vn >= 100 and an >= 100
    record(4, ok, f"video max rel err {ve:.2e} on {vn} params, audio {ae:.2e} on {an} params")


@pytest.mark.slow
def test_criterion_5_overfit(small_corpus):
    from test_lipnet import video_one_batch_losses
    from test_xvector import audio_one_batch_losses

    t0 = time.time()
    vd, ad = video_dataset(small_corpus), audio_dataset(small_corpus)
    torch.manual_seed(0)
    vm = build_mcnn(conftest.tiny_mcnn(n_classes=4))
    _, vlog = train_video(vm, vd, VideoTrainConfig(epochs=60, lr=0.002, batch_size=16, seed=0,
                                                   target_accuracy=0.95))
    torch.manual_seed(0)
    am = build_etdnn(EtdnnConfig(hidden_dim=64, prepool_dim=128, embedding_dim=32, n_classes=4))
    _, alog = train_audio(am, None, ad, AudioTrainConfig(finetune_epochs=60, batch_size=8, chunk_min=100,
                                                         chunk_max=200, seed=0, target_accuracy=0.95))
    v_acc, a_acc = max(r.accuracy for r in vlog), max(r.accuracy for r in alog)
    mono = []
    for losses in (video_one_batch_losses(), audio_one_batch_losses()):
        mono.append(all(b < a for a, b in zip(losses, losses[1:])))
    elapsed = time.time() - t0
    ok = v_acc >= 0.95 and a_acc >= 0.95 and all(mono) and elapsed < 900
    record(5, ok, f"video acc {v_acc:.3f} in {len(vlog)} epochs, audio acc {a_acc:.3f} in {len(alog)} epochs, "
                  f"one-batch monotone video={mono[0]} audio={mono[1]}, {elapsed:.0f}s")


def fusion_trend(seed, workdir):
    """Train both streams on a 16-speaker synthetic corpus and score held-out trials."""
    m = synth_corpus(16, 24, seed, workdir)
    scheme = [PartitionSpec("train", "training", "synth", utts=(0, 10)),
              PartitionSpec("test", "test", "synth", utts=(10, None))]
    parts = make_partitions({"synth": m}, scheme, seed=seed)
    train, test = parts["train"].manifest, parts["test"].manifest
    trials = generate_trials(parts["test"], 2000, seed)
    torch.manual_seed(seed)
    vm = build_mcnn(McnnConfig(stem_channels=4, trunk_widths=(4, 8, 16, 32), tcn_width=48, embedding_dim=64,
                               n_classes=16))
    train_video(vm, video_dataset(train), VideoTrainConfig(epochs=20, lr=0.002, batch_size=16, seed=seed))
    torch.manual_seed(seed)
    am = build_etdnn(EtdnnConfig(hidden_dim=64, prepool_dim=128, embedding_dim=64, n_classes=16))
    train_audio(am, None, audio_dataset(train), AudioTrainConfig(finetune_epochs=30, batch_size=16,
                                                                 chunk_min=100, chunk_max=200, seed=seed))
    store = EmbeddingStore()
    rep = extract_embeddings(test, store, am, vm)
    assert not rep.failures, rep.failures[:3]
    audio = evaluate_trials(store, trials, "cosine", "audio")
    video = evaluate_trials(store, trials, "cosine", "video")
    feature = evaluate_trials(store, trials, "fused-feature")
    fused = score_fuse(audio, video)
    return len(trials), {name: compute_eer(s)[0] for name, s in
                         (("audio", audio), ("video", video), ("feature", feature), ("score", fused))}


@pytest.mark.slow
def test_criterion_6_fusion_trend(tmp_path):
    t0 = time.time()
    ok, notes = True, []
    for seed in (1, 2, 3):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            n, eer = fusion_trend(seed, str(tmp_path / f"s{seed}"))
        best = min(eer["audio"], eer["video"])
        good = (n >= 2000 and eer["audio"] <= 0.15 and eer["video"] <= 0.15
                and eer["feature"] <= best and eer["score"] <= best)
        ok &= good
        notes.append(f"seed {seed}: " + " ".join(f"{k} {v:.4f}" for k, v in eer.items()))
    elapsed = time.time() - t0
    record(6, ok and elapsed < 3600, f"{'; '.join(notes)} ({n} trials each, {elapsed:.0f}s)")


def test_criterion_7_backend_oracles():
    from deeplip.backends import gmm_ubm_score, map_adapt, train_ubm
    from test_backends import _blobs, plda_known_parameter_correlation

    rng = np.random.default_rng(5)
    corr = plda_known_parameter_correlation()
    x = _blobs(rng)
    ubm = train_ubm(x, n_components=8, seed=1)
    monotone = bool(np.all(np.diff(ubm.llk_trace) >= -1e-8))
    frames = rng.normal(size=(300, 3)) + 1.0
    post = ubm.posteriors(frames)
    data_mean = post.T @ frames / post.sum(axis=0)[:, None]
    adapted = map_adapt(ubm, frames).means
    lo, hi = np.minimum(ubm.means, data_mean) - 1e-12, np.maximum(ubm.means, data_mean) + 1e-12
    convex = bool(np.all((adapted >= lo) & (adapted <= hi)))
    zero = gmm_ubm_score(ubm, ubm, x[:200]) == 0.0
    record(7, corr >= 0.99 and monotone and convex and zero,
           f"PLDA corr {corr:.4f}, UBM monotone={monotone}, MAP convex={convex}, self-score zero={zero}")


def test_criterion_8_fusion_identities():
    from deeplip.backends import cosine_score
    from deeplip.corpus import Trial
    from deeplip.evaluation import feature_fuse

    rng = np.random.default_rng(8)
    example = np.array_equal(feature_fuse([2, 0], [0, 3]), [1, 0, 0, 1])
    cos_err = idem_err = 0.0
    for _ in range(1000):
        d = int(rng.integers(2, 64))
        a, b = rng.normal(size=d), rng.normal(size=d)
        cos_err = max(cos_err, abs(cosine_score(feature_fuse(a, a), feature_fuse(b, b)) - cosine_score(a, b)))
        n = int(rng.integers(1, 50))
        s = ScoreSet([Trial(f"e{i}", f"t{i}", bool(i % 2)) for i in range(n)], rng.normal(size=n))
        idem_err = max(idem_err, float(np.max(np.abs(score_fuse(s, s).scores - s.scores))))
    record(8, example and cos_err <= 1e-9 and idem_err <= 1e-12,
           f"[2,0]/[0,3] ok={example}, cosine max err {cos_err:.1e}, idempotence max err {idem_err:.1e} "
           f"over 1000 instances")


def test_criterion_9_protocol(tmp_path):
    from deeplip.corpus import Manifest, check_trial_labels, read_trials, write_trials
    from test_corpus import TABLE_COUNTS, fake_manifest

    grid = fake_manifest("grid", 34, 32886, "g")
    trials = generate_trials(grid, 20000, seed=4)
    check_trial_labels(trials, grid)
    write_trials(str(tmp_path / "a"), trials)
    write_trials(str(tmp_path / "b"), generate_trials(grid, 20000, seed=4))
    same = (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes() and read_trials(str(tmp_path / "a")) == trials
    tcd = fake_manifest("tcd", 62, 6913, "tcd")
    dev = fake_manifest("ld", 18, 1774, "lg", seed=1)
    lombard = Manifest(dev.records + fake_manifest("lt", 36, 3541, "lh", seed=2).records, name="lombard")
    parts = make_partitions({"tcd": tcd, "lombard": lombard, "grid": grid}, [
        PartitionSpec("tcd", "training", "tcd"),
        PartitionSpec("dev", "development", "lombard", speakers=tuple(dev.speakers)),
        PartitionSpec("test1", "test", "lombard"),
        PartitionSpec("test2", "test", "grid")], seed=0)
    counts = {p: (parts[p].manifest.n_speakers, len(parts[p].manifest)) for p in parts.names()}
    record(9, len(trials) == 20000 and same and counts == TABLE_COUNTS,
           f"{len(trials)} trials, reproducible={same}, partition counts {counts}")


def test_criterion_10_recipe_defaults():
    from test_config import golden_config_mismatches

    bad = golden_config_mismatches()
    record(10, not bad, "zero-flag config matches the published recipe" if not bad else f"mismatches: {bad}")
