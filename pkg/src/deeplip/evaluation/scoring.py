"""Embedding stores, trial scoring, score files and reports."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..backends.cosine import cosine_scores
from ..backends.plda import PldaModel, plda_scores
from ..corpus import Trial
from ..errors import MissingEmbedding, MissingStream, ParseError
from .fusion import feature_fuse
from .metrics import compute_eer, compute_min_dcf, det_curve

STREAMS = ("audio", "video")
SCORERS = ("cosine", "plda", "fused-feature")


@dataclass
class ScoreSet:
    trials: list
    scores: np.ndarray
    system_name: str = ""

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        if len(self.scores) != len(self.trials):
            raise ValueError(f"{len(self.scores)} scores for {len(self.trials)} trials")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError(f"{self.system_name}: non-finite scores")

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.is_target for t in self.trials], dtype=bool)

    def __len__(self):
        return len(self.trials)

    def write(self, path: str) -> None:
        lines = [f"{t.enroll_utt} {t.test_utt} {s!r} {'target' if t.is_target else 'nontarget'}\n"
                 for t, s in zip(self.trials, self.scores.tolist())]
        _write_text(path, "".join(lines))

    @classmethod
    def read(cls, path: str, system_name: str | None = None) -> "ScoreSet":
        trials, scores = [], []
        with open(path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                cols = raw.split()
                if not cols or cols[0].startswith("#"):
                    continue
                if len(cols) != 4 or cols[3] not in ("target", "nontarget"):
                    raise ParseError("expected 'enroll test score target|nontarget'", path, line_no)
                trials.append(Trial(cols[0], cols[1], cols[3] == "target"))
                scores.append(float(cols[2]))
        name = system_name or os.path.splitext(os.path.basename(path))[0]
        return cls(trials, np.array(scores), name)


def _write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


@dataclass
class EmbeddingStore:
    """utt_id -> {stream: vector}; vector width is fixed per stream."""
    data: dict = field(default_factory=dict)

    def add(self, utt_id: str, stream: str, vector) -> None:
        vector = np.asarray(vector, dtype=np.float64).ravel()
        dim = self.dim(stream)
        if dim is not None and dim != vector.shape[0]:
            raise ValueError(f"{stream} embeddings have dim {dim}, got {vector.shape[0]} for {utt_id}")
        self.data.setdefault(utt_id, {})[stream] = vector

    def get(self, utt_id: str, stream: str) -> np.ndarray:
        try:
            return self.data[utt_id][stream]
        except KeyError:
            raise MissingEmbedding(utt_id, stream) from None

    def has(self, utt_id: str, stream: str) -> bool:
        return stream in self.data.get(utt_id, {})

    def dim(self, stream: str) -> int | None:
        for streams in self.data.values():
            if stream in streams:
                return streams[stream].shape[0]
        return None

    def streams(self) -> list[str]:
        found = {s for v in self.data.values() for s in v}
        return sorted(found)

    def utt_ids(self, stream: str | None = None) -> list[str]:
        return sorted(u for u, v in self.data.items() if stream is None or stream in v)

    def matrix(self, utt_ids: Sequence[str], stream: str) -> np.ndarray:
        return np.stack([self.get(u, stream) for u in utt_ids])

    def __len__(self):
        return len(self.data)

    def merge(self, other: "EmbeddingStore") -> "EmbeddingStore":
        for utt, streams in other.data.items():
            for stream, vec in streams.items():
                self.add(utt, stream, vec)
        return self

    def save(self, path: str) -> None:
        arrays = {}
        for stream in self.streams():
            ids = self.utt_ids(stream)
            arrays[f"{stream}__ids"] = np.array(ids, dtype=str)
            arrays[f"{stream}__vectors"] = self.matrix(ids, stream)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        tmp = f"{path}.tmp{os.getpid()}.npz"
        np.savez(tmp, **arrays)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "EmbeddingStore":
        store = cls()
        with np.load(path, allow_pickle=False) as z:
            for key in z.files:
                if key.endswith("__ids"):
                    stream = key[:-len("__ids")]
                    for utt, vec in zip(z[key].tolist(), z[f"{stream}__vectors"]):
                        store.add(utt, stream, vec)
        return store


def evaluate_trials(store: EmbeddingStore, trials: Sequence[Trial], scorer: str = "cosine",
                    stream: str = "audio", plda: PldaModel | None = None,
                    system_name: str | None = None) -> ScoreSet:
    """One score per trial, in trial order.

    ``scorer`` is ``cosine`` or ``plda`` on a single ``stream``, or
    ``fused-feature`` for cosine over L1-normalised audio+video
    concatenations (``plda`` given: PLDA over the fused vectors).
    """
    if scorer not in SCORERS:
        raise ValueError(f"scorer must be one of {SCORERS}, got {scorer!r}")
    if not trials:
        raise ValueError("empty trial list")
    enroll_ids = [t.enroll_utt for t in trials]
    test_ids = [t.test_utt for t in trials]
    if scorer == "fused-feature":
        cache: dict[str, np.ndarray] = {}

        def fused(u):
            if u not in cache:
                cache[u] = feature_fuse(store.get(u, "audio"), store.get(u, "video"))
            return cache[u]

        a = np.stack([fused(u) for u in enroll_ids])
        b = np.stack([fused(u) for u in test_ids])
        scores = cosine_scores(a, b) if plda is None else plda_scores(plda, a, b)
        name = system_name or ("feature_fusion" if plda is None else "feature_fusion_plda")
    else:
        if stream not in STREAMS and stream != "fused":
            raise MissingStream(f"unknown stream {stream!r}")
        a = store.matrix(enroll_ids, stream)
        b = store.matrix(test_ids, stream)
        scores = cosine_scores(a, b) if scorer == "cosine" else plda_scores(plda, a, b)
        name = system_name or f"{stream}_{scorer}"
    return ScoreSet(list(trials), scores, name)


@dataclass
class SystemResult:
    name: str
    eer: float
    threshold: float
    min_dcf: float
    n_trials: int

    def row(self) -> str:
        return (f"{self.name:<24} {100 * self.eer:8.3f} {self.threshold:12.6f} "
                f"{self.min_dcf:8.4f} {self.n_trials:8d}")


REPORT_HEADER = f"{'system':<24} {'EER(%)':>8} {'threshold':>12} {'minDCF':>8} {'trials':>8}"


def summarize(s: ScoreSet, p_target: float = 0.01, c_miss: float = 1.0, c_fa: float = 1.0) -> SystemResult:
    eer, thr = compute_eer(s)
    return SystemResult(s.system_name, eer, thr, compute_min_dcf(s, p_target=p_target, c_miss=c_miss,
                                                                 c_fa=c_fa), len(s))


def format_report(results: Sequence[SystemResult], title: str = "", p_target: float = 0.01,
                  c_miss: float = 1.0, c_fa: float = 1.0) -> str:
    lines = []
    if title:
        lines.append(f"# {title}")
    lines.append(f"# minDCF: p_target={p_target:g} c_miss={c_miss:g} c_fa={c_fa:g}")
    lines.append(REPORT_HEADER)
    lines += [r.row() for r in results]
    return "\n".join(lines) + "\n"


def write_det_csv(path: str, s: ScoreSet) -> None:
    rows = ["far,frr"] + [f"{far!r},{frr!r}" for far, frr in det_curve(s)]
    _write_text(path, "\n".join(rows) + "\n")
