"""Audio stream: extended TDNN x-vector network trained with AM-Softmax."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import BadLabel, BadShape, ConfigError, DataError, TooShort
from .training import EpochRecord, MetricsLog, cosine_lr, save_checkpoint, seed_everything

logger = logging.getLogger(__name__)

STREAM = "audio"
STD_FLOOR = 1e-10


@dataclass
class EtdnnConfig:
    feat_dim: int = 26
    # one entry per frame layer; context 1 is a dense (frame-wise) layer
    contexts: tuple[int, ...] = (5, 1, 3, 1, 3, 1, 3, 1, 1)
    dilations: tuple[int, ...] = (1, 1, 2, 1, 3, 1, 4, 1, 1)
    hidden_dim: int = 512
    prepool_dim: int = 1500
    pooling: str = "stats"  # or "asp"
    attention_dim: int = 128
    embedding_dim: int = 512
    n_classes: int = 62

    def __post_init__(self):
        self.contexts = tuple(self.contexts)
        self.dilations = tuple(self.dilations)

    @property
    def receptive_field(self) -> int:
        return 1 + sum((c - 1) * d for c, d in zip(self.contexts, self.dilations))

    @property
    def pooled_dim(self) -> int:
        return 2 * self.prepool_dim

    def validate(self) -> None:
        if len(self.contexts) != len(self.dilations) or not self.contexts:
            raise ConfigError("contexts and dilations must have equal, non-zero length")
        if any(c < 1 for c in self.contexts) or any(d < 1 for d in self.dilations):
            raise ConfigError("contexts and dilations must be >= 1")
        if self.pooling not in ("stats", "asp"):
            raise ConfigError(f"pooling must be 'stats' or 'asp', got {self.pooling!r}")
        if min(self.feat_dim, self.hidden_dim, self.prepool_dim, self.embedding_dim, self.n_classes) < 1:
            raise ConfigError("layer widths and n_classes must be positive")


def stats_pool(frames: torch.Tensor, floor: float = STD_FLOOR) -> torch.Tensor:
    """B x T x C -> B x 2C: per-channel mean and population std over time."""
    mean = frames.mean(dim=1)
    var = ((frames - mean.unsqueeze(1)) ** 2).mean(dim=1)
    return torch.cat([mean, torch.sqrt(var.clamp(min=floor * floor))], dim=1)


class AttentiveStatsPool(nn.Module):
    def __init__(self, channels: int, attention_dim: int):
        super().__init__()
        self.attention = nn.Sequential(
            nn.Conv1d(channels, attention_dim, 1), nn.Tanh(), nn.Conv1d(attention_dim, channels, 1))

    def forward(self, x):  # B x C x T
        w = torch.softmax(self.attention(x), dim=2)
        mean = (w * x).sum(dim=2)
        var = (w * x * x).sum(dim=2) - mean * mean
        return torch.cat([mean, torch.sqrt(var.clamp(min=STD_FLOOR ** 2))], dim=1)


class TdnnLayer(nn.Module):
    """Dilated 1-D conv (or dense layer when context is 1), ReLU, BatchNorm."""

    def __init__(self, cin: int, cout: int, context: int, dilation: int):
        super().__init__()
        self.conv = nn.Conv1d(cin, cout, context, dilation=dilation if context > 1 else 1)
        self.bn = nn.BatchNorm1d(cout)

    def forward(self, x):
        return self.bn(F.relu(self.conv(x)))


class AudioModel(nn.Module):
    def __init__(self, cfg: EtdnnConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        layers = []
        cin = cfg.feat_dim
        n = len(cfg.contexts)
        for i, (c, d) in enumerate(zip(cfg.contexts, cfg.dilations)):
            cout = cfg.prepool_dim if i == n - 1 else cfg.hidden_dim
            layers.append(TdnnLayer(cin, cout, c, d))
            cin = cout
        self.frame_layers = nn.Sequential(*layers)
        self.asp = AttentiveStatsPool(cfg.prepool_dim, cfg.attention_dim) if cfg.pooling == "asp" else None
        self.bottleneck = nn.Linear(cfg.pooled_dim, cfg.embedding_dim)
        self.bn1 = nn.BatchNorm1d(cfg.embedding_dim)
        self.fc2 = nn.Linear(cfg.embedding_dim, cfg.embedding_dim)
        self.bn2 = nn.BatchNorm1d(cfg.embedding_dim)
        self.head = AmSoftmaxHead(cfg.embedding_dim, cfg.n_classes)

    def pool(self, feats: torch.Tensor) -> torch.Tensor:
        """B x T x feat_dim -> B x pooled_dim."""
        h = self.frame_layers(feats.transpose(1, 2))  # B x C x T'
        if self.asp is not None:
            return self.asp(h)
        return stats_pool(h.transpose(1, 2))

    def forward(self, feats: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (embedding tap, output-layer representation fed to the AM-Softmax head)."""
        emb = self.bottleneck(self.pool(feats))
        h = self.bn1(F.relu(emb))
        h = self.bn2(F.relu(self.fc2(h)))
        return emb, h

    def reset_classifier(self, n_classes: int) -> None:
        self.cfg.n_classes = n_classes
        self.head = AmSoftmaxHead(self.cfg.embedding_dim, n_classes)


def build_etdnn(cfg: EtdnnConfig | None = None) -> AudioModel:
    return AudioModel(cfg or EtdnnConfig())


@dataclass
class AmSoftmaxConfig:
    margin: float = 0.2
    scale: float = 30.0

    def __post_init__(self):
        if self.margin < 0 or self.scale <= 0:
            raise ConfigError("AM-Softmax needs margin >= 0 and scale > 0")


def am_softmax_loss(embeddings: torch.Tensor, weight: torch.Tensor, labels: torch.Tensor,
                    cfg: AmSoftmaxConfig = AmSoftmaxConfig()) -> tuple[torch.Tensor, torch.Tensor]:
    """Additive-margin softmax; returns (mean loss, cosine logits).

    ``weight`` is ``n_classes x dim``; rows and embeddings are L2-normalised
    here.  The target cosine is reduced by ``margin`` before scaling.
    """
    labels = torch.as_tensor(labels, dtype=torch.long)
    n_classes = weight.shape[0]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise BadLabel(f"labels must be in [0, {n_classes}), got range "
                       f"[{int(labels.min())}, {int(labels.max())}]")
    cosine = F.linear(F.normalize(embeddings, dim=1), F.normalize(weight, dim=1))
    margin = torch.zeros_like(cosine).scatter_(1, labels.view(-1, 1), cfg.margin)
    loss = F.cross_entropy(cfg.scale * (cosine - margin), labels)
    return loss, cosine


class AmSoftmaxHead(nn.Module):
    def __init__(self, dim: int, n_classes: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(n_classes, dim))
        nn.init.xavier_uniform_(self.weight)

    def forward(self, h, labels, cfg: AmSoftmaxConfig):
        return am_softmax_loss(h, self.weight, labels, cfg)


def embed_audio(model: AudioModel, features) -> torch.Tensor:
    """Bottleneck activations (B x 512), eval mode, before any nonlinearity."""
    x = torch.as_tensor(features, dtype=next(model.parameters()).dtype)
    if x.dim() != 3 or x.shape[2] != model.cfg.feat_dim:
        raise BadShape(f"expected B x T x {model.cfg.feat_dim}, got {tuple(x.shape)}")
    if x.shape[1] < model.cfg.receptive_field:
        raise TooShort(f"T={x.shape[1]} is below the receptive field ({model.cfg.receptive_field})")
    was_training = model.training
    model.eval()
    with torch.no_grad():
        emb, _ = model(x)
    model.train(was_training)
    return emb


@dataclass
class AudioEmbedding:
    vector: np.ndarray
    utt_id: str = ""
    stream: str = STREAM


def embed_utterance_audio(model: AudioModel, feats: np.ndarray, utt_id: str = "") -> AudioEmbedding:
    """Whole-utterance embedding, L2-normalised like the video stream."""
    emb = embed_audio(model, feats[None]).double()[0].numpy()
    norm = np.linalg.norm(emb)
    return AudioEmbedding(emb / norm if norm > 0 else emb, utt_id)


# ---------------------------------------------------------------------------
# training

@dataclass
class AudioTrainConfig:
    pretrain_epochs: int = 30
    finetune_epochs: int = 10
    lr: float = 0.01
    weight_decay: float = 1e-5
    momentum: float = 0.9
    optimizer: str = "sgd"
    schedule: str = "constant"
    loss: str = "am_softmax"
    batch_size: int = 256
    margin: float = 0.2
    scale: float = 30.0
    chunk_min: int = 200  # frames, variable-length augmentation
    chunk_max: int = 400
    seed: int = 0
    target_accuracy: float | None = None
    log_every: int = 1


def _random_chunks(feats: Sequence[np.ndarray], idx, length: int, rng) -> np.ndarray:
    out = []
    for i in idx:
        f = feats[i]
        if f.shape[0] <= length:
            reps = -(-length // f.shape[0])
            f = np.concatenate([f] * reps, axis=0)
        start = int(rng.integers(0, f.shape[0] - length + 1))
        out.append(f[start:start + length])
    return np.stack(out)


def _run_stage(model: AudioModel, data: Sequence[tuple[np.ndarray, int]], epochs: int,
               hyper: AudioTrainConfig, rng, log: MetricsLog, stage: str,
               checkpoint: str | None) -> None:
    feats = [np.asarray(f, dtype=np.float32) for f, _ in data]
    labels = np.array([lab for _, lab in data], dtype=np.int64)
    n_classes = model.cfg.n_classes
    counts = np.bincount(labels, minlength=n_classes)
    if n_classes < 2 or len(counts) > n_classes or (counts == 0).any():
        raise DataError(f"{stage}: every one of {n_classes} (>= 2) classes needs utterances")
    rf = model.cfg.receptive_field
    if hyper.optimizer != "sgd":
        opt = torch.optim.Adam(model.parameters(), lr=hyper.lr, weight_decay=hyper.weight_decay)
    else:
        opt = torch.optim.SGD(model.parameters(), lr=hyper.lr, momentum=hyper.momentum,
                              weight_decay=hyper.weight_decay)
    am = AmSoftmaxConfig(hyper.margin, hyper.scale)
    best = -1.0
    for epoch in range(epochs):
        lr = cosine_lr(epoch, epochs, hyper.lr) if hyper.schedule == "cosine" else hyper.lr
        for g in opt.param_groups:
            g["lr"] = lr
        model.train()
        order = rng.permutation(len(feats))
        total, correct = 0.0, 0
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            if len(idx) < 2 and len(order) > 1:
                continue
            length = int(rng.integers(max(hyper.chunk_min, rf), max(hyper.chunk_max, rf) + 1))
            x = torch.from_numpy(_random_chunks(feats, idx, length, rng))
            y = torch.from_numpy(labels[idx])
            _, h = model(x)
            loss, cosine = model.head(h, y, am)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            correct += int((cosine.argmax(1) == y).sum())
        rec = EpochRecord(epoch + 1, total / len(order), correct / len(order), lr, stage)
        log.append(rec)
        if hyper.log_every and (epoch + 1) % hyper.log_every == 0:
            logger.info("audio %s epoch %d loss %.4f acc %.3f", stage, rec.epoch, rec.loss, rec.accuracy)
        if checkpoint and stage == "finetune" and rec.accuracy > best:
            best = rec.accuracy
            save_checkpoint(checkpoint, STREAM, model.cfg, model, rec.epoch, rng,
                            {"train": asdict(hyper), "accuracy": rec.accuracy})
        if hyper.target_accuracy is not None and rec.accuracy >= hyper.target_accuracy:
            break


def train_audio(model: AudioModel, pretrain_set: Sequence[tuple[np.ndarray, int]] | None,
                finetune_set: Sequence[tuple[np.ndarray, int]],
                hyper: AudioTrainConfig | None = None, checkpoint: str | None = None,
                log_path: str | None = None) -> tuple[AudioModel, MetricsLog]:
    """Optional pretraining, classifier re-initialisation, then fine-tuning.

    Each set is a sequence of ``(T x feat_dim features, label)`` pairs with
    labels numbered 0..k-1 within that set.
    """
    hyper = hyper or AudioTrainConfig()
    rng = seed_everything(hyper.seed)
    log = MetricsLog(log_path)
    if pretrain_set:
        n_pre = int(max(lab for _, lab in pretrain_set)) + 1
        model.reset_classifier(n_pre)
        _run_stage(model, pretrain_set, hyper.pretrain_epochs, hyper, rng, log, "pretrain", None)
    n_fine = int(max(lab for _, lab in finetune_set)) + 1 if finetune_set else 0
    if n_fine != model.cfg.n_classes or pretrain_set:
        model.reset_classifier(n_fine)
    _run_stage(model, finetune_set, hyper.finetune_epochs, hyper, rng, log, "finetune", checkpoint)
    model.eval()
    return model, log


def load_audio_model(payload: dict) -> AudioModel:
    model = AudioModel(EtdnnConfig(**payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
