"""Command-line driver: ``deeplip <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
Every artifact lives under the work directory (``--workdir``, the
``DEEPLIP_WORKDIR`` environment variable, or the config's ``workdir``)::

    corpus/            synthetic corpus written by ``prepare`` when configured
    data/<part>.tsv    partition manifests
    trials/<part>.trials
    models/            video.pt, audio.pt, *_log.jsonl, plda_<stream>.npz
    embeddings/<part>.npz
    scores/<part>/<system>.scores
    reports/<part>_<measure>.txt, reports/<part>_<measure>/<system>.det.csv
"""
from __future__ import annotations

import argparse
import glob
import logging
import os
import sys

from . import __version__
from .config import RunConfig, SynthConfig, apply_overrides, config_from_dict, load_config
from .corpus import (Manifest, PartitionSpec, generate_trials, load_manifest, make_partitions,
                     read_trials, write_trials)
from .errors import ConfigError, DeepLipError
from .evaluation import (EmbeddingStore, ScoreSet, evaluate_trials, format_report, score_fuse,
                         summarize, write_det_csv, znorm, znorm_params)

logger = logging.getLogger("deeplip")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(DeepLipError):
    """Bad invocation or missing input; maps to exit code 2."""


# ---------------------------------------------------------------------------
# helpers

def _dirs(cfg: RunConfig, *parts) -> str:
    return os.path.join(cfg.workdir, *parts)


def _partition_manifest(cfg: RunConfig, name: str) -> Manifest:
    path = _dirs(cfg, "data", f"{name}.tsv")
    if not os.path.exists(path):
        raise UsageError(f"partition manifest not found: {path} (run 'prepare' first)")
    return load_manifest(path, strict=cfg.strict, name=name)


def _role_partitions(cfg: RunConfig, role: str) -> list[str]:
    return [p.name for p in cfg.corpus.partitions if p.role == role]


def _test_partitions(cfg: RunConfig, args) -> list[str]:
    names = args.partition or _role_partitions(cfg, "test")
    if not names:
        raise ConfigError("no partition with role 'test' (pass --partition or configure one)")
    return names


def _trials(cfg: RunConfig, partition: str):
    path = _dirs(cfg, "trials", f"{partition}.trials")
    if not os.path.exists(path):
        raise UsageError(f"trial list not found: {path}")
    trials = read_trials(path)
    if not trials:
        raise UsageError(f"trial list is empty: {path}")
    return trials


def _store(cfg: RunConfig, partition: str) -> EmbeddingStore:
    path = _dirs(cfg, "embeddings", f"{partition}.npz")
    if not os.path.exists(path):
        raise UsageError(f"embedding store not found: {path} (run 'extract' first)")
    return EmbeddingStore.load(path)


def _score_path(cfg: RunConfig, partition: str, system: str) -> str:
    return _dirs(cfg, "scores", partition, f"{system}.scores")


# ---------------------------------------------------------------------------
# commands

def cmd_synth(cfg: RunConfig, args) -> int:
    from .synth import synth_corpus

    sc = cfg.corpus.synth or SynthConfig()
    n_spk = args.n_speakers or sc.n_speakers
    n_utt = args.utts or sc.utts_per_speaker
    out = args.out or _dirs(cfg, "corpus")
    m = synth_corpus(n_spk, n_utt, cfg.seed, out, n_frames=sc.n_frames, fps=sc.fps,
                     sample_rate=sc.sample_rate)
    print(f"wrote {len(m)} utterances from {m.n_speakers} speakers to {out}")
    return EXIT_OK


def cmd_prepare(cfg: RunConfig, args) -> int:
    manifests: dict[str, Manifest] = {}
    if cfg.corpus.synth is not None and "synth" not in cfg.corpus.manifests:
        from .synth import synth_corpus

        sc = cfg.corpus.synth
        out = _dirs(cfg, "corpus")
        manifests["synth"] = synth_corpus(sc.n_speakers, sc.utts_per_speaker, cfg.seed, out,
                                          n_frames=sc.n_frames, fps=sc.fps, sample_rate=sc.sample_rate)
    for name, path in cfg.corpus.manifests.items():
        if not os.path.exists(path):
            raise UsageError(f"manifest {name!r} not found: {path}")
        manifests[name] = load_manifest(path, strict=cfg.strict, name=name)
    if not cfg.corpus.partitions:
        raise ConfigError("corpus.partitions is empty")
    scheme = [PartitionSpec(p.name, p.role, p.source, p.n_speakers,
                            tuple(p.speakers) if p.speakers else None,
                            tuple(p.utts) if p.utts else None) for p in cfg.corpus.partitions]
    parts = make_partitions(manifests, scheme, seed=cfg.seed)
    trial_seed = cfg.trials.seed if cfg.trials.seed is not None else cfg.seed
    for part in parts:
        out = _dirs(cfg, "data", f"{part.name}.tsv")
        part.manifest.write(out, relative_to=os.path.dirname(out))
        line = f"{part.name:<12} {part.role:<12} {part.manifest.n_speakers:5d} spk {len(part.manifest):7d} utt"
        if part.role == "test":
            n = min(cfg.trials.n_pairs, args.n_pairs or cfg.trials.n_pairs)
            trials = generate_trials(part, n, trial_seed)
            write_trials(_dirs(cfg, "trials", f"{part.name}.trials"), trials)
            line += f" {len(trials):7d} trials"
        print(line)
    return EXIT_OK


def _train_manifest(cfg: RunConfig) -> Manifest:
    names = _role_partitions(cfg, "training")
    if not names:
        raise ConfigError("no partition with role 'training'")
    return _partition_manifest(cfg, names[0])


def cmd_train(cfg: RunConfig, args) -> int:
    from .pipeline import audio_dataset, video_dataset

    manifest = _train_manifest(cfg)
    ckpt = _dirs(cfg, "models", f"{args.stream}.pt")
    log_path = _dirs(cfg, "models", f"{args.stream}_log.jsonl")
    if args.stream == "video":
        from .lipnet import build_mcnn, train_video

        data = video_dataset(manifest, cfg.features.segment_frames, cfg.jobs)
        cfg.video_model.n_classes = manifest.n_speakers
        hyper = cfg.video_train
        hyper.seed = cfg.seed
        if args.epochs is not None:
            hyper.epochs = args.epochs
        model, log = train_video(build_mcnn(cfg.video_model), data, hyper, ckpt, log_path)
    else:
        from .xvector import build_etdnn, train_audio

        data = audio_dataset(manifest, cfg.features.mfcc, cfg.jobs)
        pre = None
        if cfg.corpus.pretrain:
            pm = load_manifest(cfg.corpus.manifests[cfg.corpus.pretrain], strict=cfg.strict)
            pre = audio_dataset(pm, cfg.features.mfcc, cfg.jobs)
        cfg.audio_model.n_classes = manifest.n_speakers
        cfg.audio_model.feat_dim = cfg.features.mfcc.n_ceps
        hyper = cfg.audio_train
        hyper.seed = cfg.seed
        if args.epochs is not None:
            hyper.finetune_epochs = args.epochs
            hyper.pretrain_epochs = args.epochs
        model, log = train_audio(build_etdnn(cfg.audio_model), pre, data, hyper, ckpt, log_path)
    last = log.records[-1]
    print(f"{args.stream}: {len(log)} epochs, final loss {last.loss:.4f}, accuracy {last.accuracy:.3f}; "
          f"checkpoint {ckpt}")
    return EXIT_OK


def _load_models(cfg: RunConfig, stream: str):
    from .lipnet import load_video_model
    from .training import load_checkpoint
    from .xvector import load_audio_model

    audio = video = None
    if stream in ("audio", "both"):
        audio = load_audio_model(load_checkpoint(_dirs(cfg, "models", "audio.pt")))
    if stream in ("video", "both"):
        video = load_video_model(load_checkpoint(_dirs(cfg, "models", "video.pt")))
    return audio, video


def cmd_extract(cfg: RunConfig, args) -> int:
    from .pipeline import extract_embeddings

    if args.manifest:
        if not os.path.exists(args.manifest):
            raise UsageError(f"manifest not found: {args.manifest}")
        manifest = load_manifest(args.manifest, strict=cfg.strict)
        names = [manifest.name]
        manifests = [manifest]
    else:
        names = args.partition or (_role_partitions(cfg, "development") + _role_partitions(cfg, "test"))
        manifests = [_partition_manifest(cfg, n) for n in names]
    audio, video = _load_models(cfg, args.stream)
    failed = 0
    for name, manifest in zip(names, manifests):
        path = _dirs(cfg, "embeddings", f"{name}.npz")
        store = EmbeddingStore.load(path) if os.path.exists(path) else EmbeddingStore()
        rep = extract_embeddings(manifest, store, audio, video, cfg.features.mfcc,
                                 cfg.features.segment_frames)
        store.save(path)
        print(f"{name}: {rep.done} embeddings, {len(rep.failures)} failures -> {path}")
        for utt, stream, msg in rep.failures:
            print(f"  FAILED {utt} [{stream}]: {msg}", file=sys.stderr)
        failed += len(rep.failures)
    return EXIT_RUNTIME if failed and cfg.strict else EXIT_OK


def _plda(cfg: RunConfig, stream: str):
    from .backends.plda import PldaModel, train_plda
    from .evaluation.fusion import feature_fuse

    path = _dirs(cfg, "models", f"plda_{stream}.npz")
    if os.path.exists(path):
        return PldaModel.load(path)
    dev = _role_partitions(cfg, "development")
    if not dev:
        raise ConfigError("PLDA scoring needs a partition with role 'development'")
    manifest = _partition_manifest(cfg, dev[0])
    store = _store(cfg, dev[0])
    ids = [r.utt_id for r in manifest.records]
    if stream == "fused":
        import numpy as np

        x = np.stack([feature_fuse(store.get(u, "audio"), store.get(u, "video")) for u in ids])
    else:
        x = store.matrix(ids, stream)
    labels = [manifest[u].speaker_id for u in ids]
    rank = min(cfg.backends.plda_rank, x.shape[1], len(ids) - 1)
    if rank < cfg.backends.plda_rank:
        logger.warning("PLDA rank reduced from %d to %d for %d dev embeddings",
                       cfg.backends.plda_rank, rank, len(ids))
    model = train_plda(x, labels, rank, cfg.backends.plda_max_iter,
                       length_norm=cfg.backends.plda_length_norm, pca_dim=cfg.backends.plda_pca_dim)
    model.save(path)
    return model


def _single_system(cfg: RunConfig, partition: str, stream: str, measure: str, trials=None) -> ScoreSet:
    trials = trials or _trials(cfg, partition)
    store = _store(cfg, partition)
    plda = _plda(cfg, stream) if measure == "plda" else None
    if stream == "fused":
        s = evaluate_trials(store, trials, "fused-feature", plda=plda,
                            system_name=f"feature_fusion_{measure}")
    else:
        s = evaluate_trials(store, trials, measure, stream=stream, plda=plda,
                            system_name=f"{stream}_{measure}")
    s.write(_score_path(cfg, partition, s.system_name))
    return s


def cmd_score(cfg: RunConfig, args) -> int:
    measure = args.measure or cfg.measure
    for part in _test_partitions(cfg, args):
        for stream in args.stream:
            s = _single_system(cfg, part, stream, measure)
            print(f"{part}: {len(s)} scores -> {_score_path(cfg, part, s.system_name)}")
    return EXIT_OK


def _score_fusion(cfg: RunConfig, partition: str, measure: str) -> ScoreSet:
    sets = {}
    for stream in ("audio", "video"):
        path = _score_path(cfg, partition, f"{stream}_{measure}")
        sets[stream] = ScoreSet.read(path) if os.path.exists(path) else _single_system(
            cfg, partition, stream, measure)
    if cfg.fusion.znorm:
        dev = _role_partitions(cfg, "development")
        if not dev:
            raise ConfigError("fusion.znorm needs a development partition with trials")
        dev_trials = _trials(cfg, dev[0])
        for stream in sets:
            dev_scores = evaluate_trials(_store(cfg, dev[0]), dev_trials, measure, stream=stream,
                                         plda=_plda(cfg, stream) if measure == "plda" else None)
            sets[stream] = znorm(sets[stream], znorm_params(dev_scores))
    fused = score_fuse(sets["audio"], sets["video"], tuple(cfg.fusion.weights),
                       name=f"score_fusion_{measure}")
    fused.write(_score_path(cfg, partition, fused.system_name))
    return fused


def cmd_fuse(cfg: RunConfig, args) -> int:
    measure = args.measure or cfg.measure
    for part in _test_partitions(cfg, args):
        for mode in args.mode:
            if mode == "score":
                s = _score_fusion(cfg, part, measure)
            else:
                s = _single_system(cfg, part, "fused", measure)
            print(f"{part}: {s.system_name} -> {_score_path(cfg, part, s.system_name)}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    measure = args.measure or cfg.measure
    m = cfg.metrics
    for part in _test_partitions(cfg, args):
        systems = [_single_system(cfg, part, "audio", measure),
                   _single_system(cfg, part, "video", measure),
                   _single_system(cfg, part, "fused", measure),
                   _score_fusion(cfg, part, measure)]
        results = [summarize(s, m.p_target, m.c_miss, m.c_fa) for s in systems]
        text = format_report(results, f"{part} ({measure})", m.p_target, m.c_miss, m.c_fa)
        out = _dirs(cfg, "reports", f"{part}_{measure}.txt")
        os.makedirs(os.path.dirname(out), exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        for s in systems:
            write_det_csv(_dirs(cfg, "reports", f"{part}_{measure}", f"{s.system_name}.det.csv"), s)
        print(text, end="")
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    paths = sorted(p for p in glob.glob(_dirs(cfg, "reports", "*.txt"))
                   if os.path.basename(p) != "summary.txt")
    if not paths:
        raise UsageError(f"no reports under {_dirs(cfg, 'reports')} (run 'eval' first)")
    chunks = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            chunks.append(fh.read())
    text = "\n".join(chunks)
    with open(_dirs(cfg, "reports", "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


def cmd_config(cfg: RunConfig, args) -> int:
    print(cfg.dump(), end="")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "prepare": cmd_prepare, "train": cmd_train, "extract": cmd_extract,
    "score": cmd_score, "fuse": cmd_fuse, "eval": cmd_eval, "report": cmd_report,
    "config": cmd_config,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON run config (must set 'seed')")
    common.add_argument("--workdir", help="work directory (overrides $DEEPLIP_WORKDIR and config)")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--jobs", type=int, help="worker processes for feature loading")
    common.add_argument("--strict", action="store_true", default=None,
                        help="missing media or failed extraction is an error")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. video_train.lr=0.01")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="deeplip", description=__doc__.splitlines()[0],
                                parents=[common])
    p.add_argument("--version", action="version", version=f"deeplip {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic audio-visual corpus")
    s.add_argument("--n-speakers", type=int)
    s.add_argument("--utts", type=int, help="utterances per speaker")
    s.add_argument("--out")

    s = sub.add_parser("prepare", parents=[common], help="partition manifests and draw trial lists")
    s.add_argument("--n-pairs", type=int, help="cap the number of trials per test partition")

    s = sub.add_parser("train", parents=[common], help="train one embedding network")
    s.add_argument("--stream", choices=("audio", "video"), required=True)
    s.add_argument("--epochs", type=int)

    s = sub.add_parser("extract", parents=[common], help="compute utterance embeddings")
    s.add_argument("--stream", choices=("audio", "video", "both"), default="both")
    s.add_argument("--partition", action="append")
    s.add_argument("--manifest")

    s = sub.add_parser("score", parents=[common], help="score trials for single streams")
    s.add_argument("--partition", action="append")
    s.add_argument("--stream", action="append", choices=("audio", "video"))
    s.add_argument("--measure", choices=("cosine", "plda"))

    s = sub.add_parser("fuse", parents=[common], help="feature and/or score fusion")
    s.add_argument("--partition", action="append")
    s.add_argument("--mode", action="append", choices=("feature", "score"))
    s.add_argument("--measure", choices=("cosine", "plda"))

    s = sub.add_parser("eval", parents=[common], help="score all four systems and write reports")
    s.add_argument("--partition", action="append")
    s.add_argument("--measure", choices=("cosine", "plda"))

    sub.add_parser("report", parents=[common], help="collect every report into one summary")
    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return p


def resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config, args.overrides)
    else:
        data = apply_overrides({}, args.overrides)
        if args.seed is None and "seed" not in data and args.command != "config":
            raise ConfigError("a seed is mandatory: pass --seed or use a config file that sets it")
        cfg = config_from_dict(data)
    if os.environ.get("DEEPLIP_WORKDIR"):
        cfg.workdir = os.environ["DEEPLIP_WORKDIR"]
    if args.workdir:
        cfg.workdir = args.workdir
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.strict:
        cfg.strict = True
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "score" and not args.stream:
        args.stream = ["audio", "video"]
    if args.command == "fuse" and not args.mode:
        args.mode = ["feature", "score"]
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"deeplip {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DeepLipError, OSError, ValueError, KeyError) as exc:
        print(f"deeplip {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
