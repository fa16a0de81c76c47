import json

import pytest
import yaml

from deeplip.config import RunConfig, apply_overrides, config_from_dict, load_config, recipe_defaults
from deeplip.errors import ConfigError

# the published training recipe, as the zero-flag config must serialize it
GOLDEN = {
    "video_train": {"optimizer": "adam", "lr": 0.05, "weight_decay": 1e-4, "epochs": 300, "schedule": "cosine"},
    "audio_train": {"optimizer": "sgd", "lr": 0.01, "weight_decay": 1e-5, "batch_size": 256, "loss": "am_softmax"},
    "features": {"mfcc": {"n_fft": 512, "n_bins": 26, "n_ceps": 26}, "segment_frames": 29, "crop_size": 88},
    "backends": {"plda_rank": 150, "ubm_components": 64, "map_relevance": 16.0},
    "video_model": {"embedding_dim": 512, "stem_kernel": [5, 7, 7], "tcn_kernels": [3, 5, 7]},
    "audio_model": {"embedding_dim": 512},
    "trials": {"n_pairs": 20000},
}


def _subset(expected, actual, path=""):
    """Return the key paths where ``actual`` differs from ``expected``."""
    bad = []
    for k, v in expected.items():
        if isinstance(v, dict):
            bad += _subset(v, actual.get(k, {}), f"{path}{k}.")
        elif actual.get(k) != v:
            bad.append(f"{path}{k}: {actual.get(k)!r} != {v!r}")
    return bad


def golden_config_mismatches() -> list:
    dumped = yaml.safe_load(recipe_defaults().dump())
    return _subset(GOLDEN, dumped)


def test_golden_recipe():
    assert golden_config_mismatches() == []


def test_empty_file_is_recipe(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 3\n")
    cfg = load_config(str(p))
    assert cfg.seed == 3
    assert _subset(GOLDEN, cfg.to_dict()) == []


def test_dump_roundtrip():
    cfg = recipe_defaults()
    assert config_from_dict(yaml.safe_load(cfg.dump())).to_dict() == cfg.to_dict()


def test_seed_mandatory_and_unknown_keys(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("workdir: w\n")
    with pytest.raises(ConfigError, match="seed"):
        load_config(str(p))
    p.write_text("seed: 1\nvideo_train: {lr: 0.1, momentum: 0.9}\n")
    with pytest.raises(ConfigError, match="momentum"):
        load_config(str(p))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.yaml"))


def test_json_and_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 2, "backends": {"plda_rank": 10}}))
    cfg = load_config(str(p), ["backends.plda_rank=20", "video_train.lr=0.002", "fusion.weights=[0.3, 0.7]"])
    assert cfg.backends.plda_rank == 20 and cfg.video_train.lr == 0.002
    assert tuple(cfg.fusion.weights) == (0.3, 0.7)
    with pytest.raises(ConfigError):
        apply_overrides({}, ["no_equals_sign"])


def test_validation(tmp_path):
    cfg = RunConfig(measure="euclid")
    with pytest.raises(ConfigError):
        cfg.validate()
    p = tmp_path / "c.yaml"
    p.write_text("seed: 1\ncorpus: {manifests: {a: missing.tsv}}\n")
    with pytest.raises(ConfigError, match="missing.tsv"):
        load_config(str(p)).validate()
    with pytest.raises(ConfigError):
        config_from_dict({"video_model": {"tcn_kernels": [3, 4]}}).validate()
