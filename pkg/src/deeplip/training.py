"""Checkpoint and metrics-log plumbing shared by both embedding networks."""
from __future__ import annotations

import json
import math
import os
import random
from dataclasses import asdict, dataclass, is_dataclass

import numpy as np
import torch

from .errors import MissingCheckpoint

CHECKPOINT_VERSION = 1


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    lr: float
    stage: str = "train"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def cosine_lr(epoch: int, total_epochs: int, base_lr: float, min_lr: float = 0.0) -> float:
    """Cosine-annealed learning rate at ``epoch`` (0-based); reaches ``min_lr`` at ``total_epochs``."""
    if total_epochs <= 0:
        return base_lr
    frac = min(max(epoch / total_epochs, 0.0), 1.0)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * frac))


def seed_everything(seed: int) -> np.random.Generator:
    random.seed(seed)
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def rng_state(rng: np.random.Generator) -> dict:
    return {"numpy": rng.bit_generator.state, "torch": torch.get_rng_state().tolist()}


def save_checkpoint(path: str, stream: str, config, model: torch.nn.Module, epoch: int,
                    rng: np.random.Generator | None = None, extra: dict | None = None) -> None:
    """Write-temp-then-rename so a crash never leaves a half-written checkpoint."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "stream": stream,
        "config": asdict(config) if is_dataclass(config) else dict(config),
        "state_dict": model.state_dict(),
        "epoch": epoch,
        "rng_state": rng_state(rng) if rng is not None else None,
        "extra": extra or {},
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp{os.getpid()}"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict:
    if not os.path.exists(path):
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('format_version')}")
    return payload


class MetricsLog:
    """Append-only JSON-lines log of :class:`EpochRecord` entries."""

    def __init__(self, path: str | None = None):
        self.path = path
        self.records: list[EpochRecord] = []
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            open(path, "w").close()

    def append(self, rec: EpochRecord) -> None:
        self.records.append(rec)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(rec.to_json() + "\n")

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    @staticmethod
    def read(path: str) -> list[EpochRecord]:
        with open(path, encoding="utf-8") as fh:
            return [EpochRecord(**json.loads(line)) for line in fh if line.strip()]
