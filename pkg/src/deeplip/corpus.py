"""Manifests, partitions and verification trial lists.

A manifest is a tab-separated text file, one utterance per line::

    utt_id  speaker_id  audio_path  video_path  fps  sample_rate  duration

Lines starting with ``#`` are comments.  Relative media paths are resolved
against the directory holding the manifest.
"""
from __future__ import annotations

import logging
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateUttId,
    EmptyPartition,
    InfeasibleTrials,
    MissingMedia,
    OverlapError,
    ParseError,
)

logger = logging.getLogger(__name__)

ROLES = ("training", "development", "test")
MANIFEST_HEADER = "# utt_id\tspeaker_id\taudio_path\tvideo_path\tfps\tsample_rate\tduration"


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    speaker_id: str
    audio_path: str
    video_path: str
    fps: float
    sample_rate: int
    duration: float

    def __post_init__(self):
        if not self.utt_id or not self.speaker_id:
            raise ValueError("utt_id and speaker_id must be non-empty")
        if any(c.isspace() for c in self.utt_id + self.speaker_id):
            raise ValueError(f"ids may not contain whitespace: {self.utt_id!r}")
        if not self.fps > 0:
            raise ValueError(f"{self.utt_id}: fps must be > 0, got {self.fps}")
        if not self.sample_rate > 0:
            raise ValueError(f"{self.utt_id}: sample_rate must be > 0, got {self.sample_rate}")
        if not self.duration > 0:
            raise ValueError(f"{self.utt_id}: duration must be > 0, got {self.duration}")

    def to_line(self) -> str:
        return "\t".join([
            self.utt_id, self.speaker_id, self.audio_path, self.video_path,
            _fmt_num(self.fps), str(int(self.sample_rate)), _fmt_num(self.duration),
        ])


def _fmt_num(x: float) -> str:
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


@dataclass
class Manifest:
    records: list[UtteranceRecord]
    name: str = "manifest"
    root: str | None = None  # directory relative media paths are resolved against

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.utt_id in seen:
                raise DuplicateUttId(f"duplicate utt_id {rec.utt_id!r} in manifest {self.name!r}")
            seen.add(rec.utt_id)
        self._index = {rec.utt_id: i for i, rec in enumerate(self.records)}

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, utt_id: str) -> UtteranceRecord:
        return self.records[self._index[utt_id]]

    def __contains__(self, utt_id) -> bool:
        return utt_id in self._index

    @property
    def utt_ids(self) -> list[str]:
        return [r.utt_id for r in self.records]

    @property
    def speakers(self) -> list[str]:
        """Distinct speaker ids in order of first appearance."""
        return list(OrderedDict.fromkeys(r.speaker_id for r in self.records))

    @property
    def n_speakers(self) -> int:
        return len(self.speakers)

    def by_speaker(self) -> "OrderedDict[str, list[UtteranceRecord]]":
        groups: OrderedDict[str, list[UtteranceRecord]] = OrderedDict()
        for rec in self.records:
            groups.setdefault(rec.speaker_id, []).append(rec)
        return groups

    def subset(self, keep: Callable[[UtteranceRecord], bool], name: str | None = None) -> "Manifest":
        return Manifest([r for r in self.records if keep(r)], name=name or self.name, root=self.root)

    def resolve(self, path: str) -> str:
        if os.path.isabs(path) or self.root is None:
            return path
        return os.path.join(self.root, path)

    def check_media(self) -> list[str]:
        """Return every referenced media path that does not exist."""
        missing = []
        for rec in self.records:
            for p in (rec.audio_path, rec.video_path):
                if p and p != "-" and not os.path.exists(self.resolve(p)):
                    missing.append(p)
        return missing

    def write(self, path: str, relative_to: str | None = None) -> None:
        """Write the manifest; paths are made relative to ``relative_to`` if given."""
        lines = [MANIFEST_HEADER]
        for rec in self.records:
            if relative_to is not None:
                rec = UtteranceRecord(
                    rec.utt_id, rec.speaker_id,
                    _relpath(self.resolve(rec.audio_path), relative_to),
                    _relpath(self.resolve(rec.video_path), relative_to),
                    rec.fps, rec.sample_rate, rec.duration)
            lines.append(rec.to_line())
        _atomic_write_text(path, "\n".join(lines) + "\n")


def _relpath(path: str, start: str) -> str:
    if path == "-":
        return path
    return os.path.relpath(os.path.abspath(path), os.path.abspath(start))


def _atomic_write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def load_manifest(path: str, strict: bool = False, name: str | None = None,
                  validate: Callable[[UtteranceRecord], bool] | None = None) -> Manifest:
    """Parse a manifest file.

    ``strict`` makes missing media files an error.  ``validate`` is an
    optional filter hook: records for which it returns False are dropped
    (e.g. a check for lost frames or faces).
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    records = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 7:
                raise ParseError(f"expected 7 tab-separated fields, got {len(cols)}", path, line_no)
            utt_id, spk, audio, video, fps, sr, dur = (c.strip() for c in cols)
            try:
                rec = UtteranceRecord(utt_id, spk, audio, video, float(fps), int(sr), float(dur))
            except ValueError as exc:
                raise ParseError(str(exc), path, line_no) from None
            if utt_id in seen:
                raise DuplicateUttId(
                    f"{path}:{line_no}: utt_id {utt_id!r} already defined on line {seen[utt_id]}")
            seen[utt_id] = line_no
            if validate is not None and not validate(rec):
                logger.info("validation hook dropped %s", utt_id)
                continue
            records.append(rec)
    if name is None:
        name = os.path.splitext(os.path.basename(path))[0]
    manifest = Manifest(records, name=name, root=os.path.dirname(os.path.abspath(path)))
    missing = manifest.check_media()
    if missing:
        if strict:
            raise MissingMedia(f"{path}: missing media file {missing[0]!r}"
                               + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
        logger.warning("%s: %d referenced media files do not exist", path, len(missing))
    return manifest


# ---------------------------------------------------------------------------
# partitions

@dataclass(frozen=True)
class PartitionSpec:
    """One row of a partition scheme.

    Specs that share a ``source`` draw speakers from one seeded permutation
    of that source's speakers, in scheme order: ``n_speakers`` takes the
    next n, ``speakers`` names them explicitly, neither takes the rest.
    ``utts`` optionally keeps a ``(start, stop)`` slice of each speaker's
    utterances (sorted by utt_id) for closed-set utterance splits.
    """
    name: str
    role: str
    source: str
    n_speakers: int | None = None
    speakers: tuple[str, ...] | None = None
    utts: tuple[int | None, int | None] | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.n_speakers is not None and self.speakers is not None:
            raise ValueError("give n_speakers or speakers, not both")


@dataclass
class Partition:
    role: str
    manifest: Manifest

    @property
    def name(self) -> str:
        return self.manifest.name


@dataclass
class PartitionSet:
    partitions: "OrderedDict[str, Partition]" = field(default_factory=OrderedDict)

    def __getitem__(self, name: str) -> Partition:
        return self.partitions[name]

    def __iter__(self):
        return iter(self.partitions.values())

    def __len__(self):
        return len(self.partitions)

    def names(self) -> list[str]:
        return list(self.partitions)

    def by_role(self, role: str) -> list[Partition]:
        return [p for p in self.partitions.values() if p.role == role]

    def check_disjoint(self) -> None:
        owner: dict[str, str] = {}
        for name, part in self.partitions.items():
            for utt in part.manifest.utt_ids:
                if utt in owner:
                    raise OverlapError(f"utterance {utt!r} is in both {owner[utt]!r} and {name!r}")
                owner[utt] = name


def make_partitions(manifests: dict[str, Manifest], scheme: Sequence[PartitionSpec],
                    seed: int = 0) -> PartitionSet:
    """Build a disjoint PartitionSet from named source manifests."""
    rng = np.random.default_rng(seed)
    pools: dict[str, list[str]] = {}
    for src in sorted({s.source for s in scheme}):
        if src not in manifests:
            raise KeyError(f"partition scheme references unknown manifest {src!r}")
        spks = sorted(manifests[src].speakers)
        pools[src] = [spks[i] for i in rng.permutation(len(spks))]

    # utterance-slice specs may share speakers with siblings; speaker pools are
    # only consumed by specs without a slice
    out = PartitionSet()
    for spec in scheme:
        src = manifests[spec.source]
        pool = pools[spec.source]
        if spec.speakers is not None:
            chosen = list(spec.speakers)
            unknown = set(chosen) - set(src.speakers)
            if unknown:
                raise KeyError(f"{spec.name}: speakers not in {spec.source!r}: {sorted(unknown)}")
        elif spec.n_speakers is not None:
            if spec.n_speakers > len(pool):
                raise EmptyPartition(
                    f"{spec.name}: wants {spec.n_speakers} speakers, only {len(pool)} left in {spec.source!r}")
            chosen = pool[:spec.n_speakers]
        else:
            chosen = list(pool)
        if spec.utts is None:
            taken = set(chosen)
            pools[spec.source] = [s for s in pool if s not in taken]

        keep = set(chosen)
        groups = src.by_speaker()
        records = []
        for spk in sorted(keep):
            recs = sorted(groups.get(spk, []), key=lambda r: r.utt_id)
            if spec.utts is not None:
                recs = recs[slice(*spec.utts)]
            records.extend(recs)
        if not records:
            raise EmptyPartition(f"partition {spec.name!r} ({spec.role}) has no utterances")
        out.partitions[spec.name] = Partition(spec.role, Manifest(records, name=spec.name, root=src.root))
    out.check_disjoint()
    return out


# ---------------------------------------------------------------------------
# trials

@dataclass(frozen=True)
class Trial:
    enroll_utt: str
    test_utt: str
    is_target: bool

    def __post_init__(self):
        if self.enroll_utt == self.test_utt:
            raise ValueError(f"trial pairs an utterance with itself: {self.enroll_utt!r}")

    def to_line(self) -> str:
        return f"{self.enroll_utt} {self.test_utt} {'target' if self.is_target else 'nontarget'}"


TrialList = list  # list[Trial]


def _pair_counts(sizes: np.ndarray) -> tuple[int, int]:
    n = int(sizes.sum())
    target = int(sum(int(s) * (int(s) - 1) // 2 for s in sizes))
    return target, n * (n - 1) // 2 - target


def generate_trials(partition: Partition | Manifest, n_pairs: int, seed: int) -> list[Trial]:
    """Sample ``n_pairs`` distinct trials, ceil(n/2) target and floor(n/2) nontarget.

    Pairs are unordered and drawn uniformly without replacement within each
    class; the enroll/test orientation of each pair is randomised.
    """
    manifest = partition.manifest if isinstance(partition, Partition) else partition
    if n_pairs < 1:
        raise InfeasibleTrials("n_pairs must be >= 1")
    groups = manifest.by_speaker()
    spk_names = list(groups)
    utts = [[r.utt_id for r in groups[s]] for s in spk_names]
    sizes = np.array([len(u) for u in utts], dtype=np.int64)
    n_tar = (n_pairs + 1) // 2
    n_non = n_pairs // 2
    avail_tar, avail_non = _pair_counts(sizes)
    if len(spk_names) < 2 and n_non > 0:
        raise InfeasibleTrials(f"{manifest.name}: need >= 2 speakers for nontarget trials")
    if n_tar > avail_tar:
        raise InfeasibleTrials(f"{manifest.name}: {n_tar} target pairs requested, {avail_tar} exist")
    if n_non > avail_non:
        raise InfeasibleTrials(f"{manifest.name}: {n_non} nontarget pairs requested, {avail_non} exist")

    rng = np.random.default_rng(seed)
    flat = [u for group in utts for u in group]
    spk_of = np.repeat(np.arange(len(utts)), sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])

    target_pairs = _sample_target_pairs(rng, sizes, offsets, n_tar, avail_tar)
    nontarget_pairs = _sample_nontarget_pairs(rng, spk_of, n_non, avail_non)

    pairs = [(a, b, True) for a, b in target_pairs] + [(a, b, False) for a, b in nontarget_pairs]
    order = rng.permutation(len(pairs))
    swap = rng.random(len(pairs)) < 0.5
    trials = []
    for k, i in enumerate(order):
        a, b, tgt = pairs[i]
        if swap[k]:
            a, b = b, a
        trials.append(Trial(flat[a], flat[b], tgt))
    return trials


def _sample_target_pairs(rng, sizes, offsets, n, available):
    if n == 0:
        return []
    if 2 * n > available:
        # dense regime: enumerate then choose
        allp = [(o + i, o + j) for s, o in zip(sizes, offsets)
                for i in range(s) for j in range(i + 1, s)]
        idx = rng.choice(len(allp), size=n, replace=False)
        return [allp[i] for i in sorted(idx)]
    weights = sizes * (sizes - 1) / 2.0
    weights = weights / weights.sum()
    chosen: dict[tuple[int, int], None] = {}
    while len(chosen) < n:
        need = n - len(chosen)
        spks = rng.choice(len(sizes), size=need, p=weights)
        for s in spks:
            i, j = rng.choice(int(sizes[s]), size=2, replace=False)
            a, b = int(offsets[s] + min(i, j)), int(offsets[s] + max(i, j))
            chosen.setdefault((a, b))
            if len(chosen) == n:
                break
    return list(chosen)


def _sample_nontarget_pairs(rng, spk_of, n, available):
    if n == 0:
        return []
    total = len(spk_of)
    if 2 * n > available:
        allp = [(i, j) for i in range(total) for j in range(i + 1, total) if spk_of[i] != spk_of[j]]
        idx = rng.choice(len(allp), size=n, replace=False)
        return [allp[i] for i in sorted(idx)]
    chosen: dict[tuple[int, int], None] = {}
    while len(chosen) < n:
        need = n - len(chosen)
        a = rng.integers(0, total, size=2 * need)
        b = rng.integers(0, total, size=2 * need)
        for i, j in zip(a.tolist(), b.tolist()):
            if spk_of[i] == spk_of[j]:
                continue
            chosen.setdefault((min(i, j), max(i, j)))
            if len(chosen) == n:
                break
    return list(chosen)


def check_trial_labels(trials: Iterable[Trial], manifest: Manifest) -> None:
    """Raise ValueError if any trial label disagrees with the manifest speakers."""
    for t in trials:
        same = manifest[t.enroll_utt].speaker_id == manifest[t.test_utt].speaker_id
        if same != t.is_target:
            raise ValueError(f"mislabelled trial {t.to_line()!r}")


def write_trials(path: str, trials: Sequence[Trial]) -> None:
    _atomic_write_text(path, "".join(t.to_line() + "\n" for t in trials))


def read_trials(path: str) -> list[Trial]:
    trials = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split()
            if len(cols) != 3 or cols[2] not in ("target", "nontarget"):
                raise ParseError("expected 'enroll test target|nontarget'", path, line_no)
            try:
                trials.append(Trial(cols[0], cols[1], cols[2] == "target"))
            except ValueError as exc:
                raise ParseError(str(exc), path, line_no) from None
    return trials


def expected_trial_counts(n_pairs: int) -> tuple[int, int]:
    """(target, nontarget) counts produced by :func:`generate_trials`."""
    return math.ceil(n_pairs / 2), n_pairs // 2
