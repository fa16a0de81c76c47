"""Declarative run configuration.

Every default reproduces the published training recipe, so an empty
config file (plus a seed) runs that recipe unchanged.  Files are YAML or JSON;
``key.path=value`` overrides are applied on top.
"""
from __future__ import annotations

import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .features import MfccConfig
from .lipnet import McnnConfig, VideoTrainConfig
from .xvector import AudioTrainConfig, EtdnnConfig


@dataclass
class SynthConfig:
    n_speakers: int = 16
    utts_per_speaker: int = 24
    n_frames: int = 58
    fps: float = 25.0
    sample_rate: int = 16000


@dataclass
class PartitionEntry:
    name: str
    role: str
    source: str
    n_speakers: int | None = None
    speakers: list | None = None
    utts: list | None = None


@dataclass
class CorpusConfig:
    manifests: dict = field(default_factory=dict)  # name -> manifest path
    partitions: list = field(default_factory=list)  # PartitionEntry
    synth: SynthConfig | None = None
    pretrain: str | None = None  # manifest name used for audio pretraining


@dataclass
class FeatureConfig:
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    roi_size: int = 96
    crop_size: int = 88
    segment_frames: int = 29
    min_view_frames: int = 16


@dataclass
class BackendConfig:
    plda_rank: int = 150
    plda_max_iter: int = 50
    plda_length_norm: bool = True
    plda_pca_dim: int | None = None
    ubm_components: int = 64
    ubm_max_iter: int = 100
    map_relevance: float = 16.0


@dataclass
class TrialConfig:
    n_pairs: int = 20000
    seed: int | None = None  # falls back to the global seed


@dataclass
class FusionConfig:
    weights: tuple = (0.5, 0.5)
    znorm: bool = False


@dataclass
class MetricConfig:
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0


@dataclass
class RunConfig:
    seed: int = 0
    workdir: str = "work"
    jobs: int = 1
    strict: bool = False
    measure: str = "cosine"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    video_model: McnnConfig = field(default_factory=McnnConfig)
    video_train: VideoTrainConfig = field(default_factory=VideoTrainConfig)
    audio_model: EtdnnConfig = field(default_factory=EtdnnConfig)
    audio_train: AudioTrainConfig = field(default_factory=AudioTrainConfig)
    backends: BackendConfig = field(default_factory=BackendConfig)
    trials: TrialConfig = field(default_factory=TrialConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def validate(self) -> None:
        if self.measure not in ("cosine", "plda"):
            raise ConfigError(f"measure must be cosine or plda, got {self.measure!r}")
        for name, path in self.corpus.manifests.items():
            if not os.path.exists(path):
                raise ConfigError(f"manifest {name!r} not found: {path}")
        self.video_model.validate()
        self.audio_model.validate()


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data):
    """Recursively construct dataclass ``cls`` from plain data, rejecting unknown keys."""
    if data is None:
        return None
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(hints[name], value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from None


def _coerce(hint, value):
    if value is None:
        return None
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", typing.Union)):
        for arg in args:
            if dataclasses.is_dataclass(arg):
                return _build(arg, value)
        return value
    if origin is tuple or hint is tuple:
        return tuple(value)
    if hint is float and isinstance(value, int):
        return float(value)
    return value


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data or {})
    cfg.corpus.partitions = [p if isinstance(p, PartitionEntry) else _build(PartitionEntry, p)
                             for p in cfg.corpus.partitions]
    return cfg


def load_config(path: str, overrides: typing.Sequence[str] = ()) -> RunConfig:
    """Read a YAML/JSON config.  The file must set ``seed`` explicitly."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    data = data or {}
    if "seed" not in data:
        raise ConfigError(f"{path}: 'seed' is mandatory")
    base = os.path.dirname(os.path.abspath(path))
    manifests = data.get("corpus", {}).get("manifests", {})
    for name, p in list(manifests.items()):
        if not os.path.isabs(p):
            manifests[name] = os.path.join(base, p)
    apply_overrides(data, overrides)
    return config_from_dict(data)


def apply_overrides(data: dict, overrides: typing.Sequence[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key.path=value, got {item!r}")
        key, raw = item.split("=", 1)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override inside non-mapping {part!r}")
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def recipe_defaults() -> RunConfig:
    return RunConfig()
