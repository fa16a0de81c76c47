"""Visual stream: 3D stem, ResNet-18 trunk, spatial GAP and a multiscale TCN.

Input batches are ``B x 1 x T x 88 x 88`` grey crops; the embedding tap is
the linear layer that follows the temporal average of the TCN output.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import BadShape, ConfigError, DataError, TooShort
from .features import (CROP_SIZE, MIN_VIEW_FRAMES, SEGMENT_FRAMES, LipSequence, augment_video,
                       crop_params, segment_sequence)
from .training import EpochRecord, MetricsLog, cosine_lr, save_checkpoint, seed_everything

logger = logging.getLogger(__name__)

STREAM = "video"


@dataclass
class McnnConfig:
    stem_kernel: tuple[int, int, int] = (5, 7, 7)
    stem_channels: int = 64
    trunk_widths: tuple[int, ...] = (64, 128, 256, 512)
    trunk_blocks: tuple[int, ...] = (2, 2, 2, 2)
    tcn_kernels: tuple[int, ...] = (3, 5, 7)
    tcn_blocks: int = 4
    tcn_width: int = 768
    dropout: float = 0.2
    embedding_dim: int = 512
    n_classes: int = 62

    def __post_init__(self):
        self.stem_kernel = tuple(self.stem_kernel)
        self.trunk_widths = tuple(self.trunk_widths)
        self.trunk_blocks = tuple(self.trunk_blocks)
        self.tcn_kernels = tuple(self.tcn_kernels)

    @property
    def branch_width(self) -> int:
        return self.tcn_width // len(self.tcn_kernels)

    def validate(self) -> None:
        if len(self.stem_kernel) != 3 or any(k < 1 or k % 2 == 0 for k in self.stem_kernel):
            raise ConfigError(f"stem_kernel must be three odd sizes, got {self.stem_kernel}")
        if len(self.trunk_widths) != len(self.trunk_blocks) or not self.trunk_widths:
            raise ConfigError("trunk_widths and trunk_blocks must have equal, non-zero length")
        if not self.tcn_kernels or any(k % 2 == 0 for k in self.tcn_kernels):
            raise ConfigError("TCN branch kernels must be odd (non-causal symmetric padding)")
        if self.tcn_width % len(self.tcn_kernels):
            raise ConfigError(f"tcn_width {self.tcn_width} is not divisible by "
                              f"{len(self.tcn_kernels)} branches")
        if self.tcn_blocks < 1 or self.embedding_dim < 1 or self.n_classes < 1:
            raise ConfigError("tcn_blocks, embedding_dim and n_classes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.downsample = None
        if stride != 1 or cin != cout:
            self.downsample = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False),
                                            nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x if self.downsample is None else self.downsample(x)
        return F.relu(out + skip)


class ResNetTrunk(nn.Module):
    """Per-frame 2D residual encoder; default plan 2/2/2/2 BasicBlocks (ResNet-18)."""

    def __init__(self, cin: int, widths: Sequence[int], blocks: Sequence[int]):
        super().__init__()
        stages = []
        for i, (w, n) in enumerate(zip(widths, blocks)):
            layers = [BasicBlock(cin, w, 1 if i == 0 else 2)]
            layers += [BasicBlock(w, w) for _ in range(n - 1)]
            stages.append(nn.Sequential(*layers))
            cin = w
        self.stages = nn.ModuleList(stages)
        self.out_channels = cin

    def forward(self, x):
        for stage in self.stages:
            x = stage(x)
        return x


class MultiscaleConv(nn.Module):
    """Parallel dilated 1-D convs with different kernels, outputs concatenated on channels."""

    def __init__(self, cin: int, branch_width: int, kernels: Sequence[int], dilation: int,
                 dropout: float):
        super().__init__()
        self.branches = nn.ModuleList()
        for k in kernels:
            self.branches.append(nn.Sequential(
                nn.Conv1d(cin, branch_width, k, padding=(k - 1) * dilation // 2, dilation=dilation,
                          bias=False),
                nn.BatchNorm1d(branch_width),
                nn.ReLU(),
                nn.Dropout(dropout),
            ))

    def forward(self, x):
        return torch.cat([b(x) for b in self.branches], dim=1)


class MultiscaleTCNBlock(nn.Module):
    def __init__(self, cin: int, branch_width: int, kernels: Sequence[int], dilation: int,
                 dropout: float):
        super().__init__()
        width = branch_width * len(kernels)
        self.sub1 = MultiscaleConv(cin, branch_width, kernels, dilation, dropout)
        self.sub2 = MultiscaleConv(width, branch_width, kernels, dilation, dropout)
        self.skip = None if cin == width else nn.Conv1d(cin, width, 1)

    def forward(self, x):
        out = self.sub2(self.sub1(x))
        skip = x if self.skip is None else self.skip(x)
        return F.relu(out + skip)


class MultiscaleTCN(nn.Module):
    """Stacked non-causal multiscale blocks; dilation doubles per block."""

    def __init__(self, cin: int, cfg: McnnConfig):
        super().__init__()
        blocks = []
        for i in range(cfg.tcn_blocks):
            blocks.append(MultiscaleTCNBlock(cin, cfg.branch_width, cfg.tcn_kernels, 2 ** i, cfg.dropout))
            cin = cfg.branch_width * len(cfg.tcn_kernels)
        self.blocks = nn.Sequential(*blocks)
        self.out_channels = cin

    def forward(self, x):
        return self.blocks(x)


class VideoModel(nn.Module):
    def __init__(self, cfg: McnnConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        kt, kh, kw = cfg.stem_kernel
        self.stem = nn.Sequential(
            nn.Conv3d(1, cfg.stem_channels, cfg.stem_kernel, stride=(1, 2, 2),
                      padding=(kt // 2, kh // 2, kw // 2), bias=False),
            nn.BatchNorm3d(cfg.stem_channels),
            nn.ReLU(),
            nn.MaxPool3d((1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)),
        )
        self.trunk = ResNetTrunk(cfg.stem_channels, cfg.trunk_widths, cfg.trunk_blocks)
        self.tcn = MultiscaleTCN(self.trunk.out_channels, cfg)
        self.embedding = nn.Linear(self.tcn.out_channels, cfg.embedding_dim)
        self.classifier = nn.Linear(cfg.embedding_dim, cfg.n_classes)

    def frame_features(self, x: torch.Tensor) -> torch.Tensor:
        """B x 1 x T x H x W -> B x C x T (spatial global average pooling)."""
        b, _, t = x.shape[:3]
        x = self.stem(x)  # B x C x T x H' x W'
        x = x.transpose(1, 2).reshape(b * t, x.shape[1], x.shape[3], x.shape[4])
        x = self.trunk(x)
        x = x.mean(dim=(2, 3))
        return x.view(b, t, -1).transpose(1, 2)

    def pool_embed(self, h: torch.Tensor) -> torch.Tensor:
        """Temporal average of TCN output (B x C x T) followed by the embedding layer."""
        return self.embedding(h.mean(dim=2))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        emb = self.pool_embed(self.tcn(self.frame_features(x)))
        return emb, self.classifier(emb)

    def reset_classifier(self, n_classes: int) -> None:
        self.cfg.n_classes = n_classes
        self.classifier = nn.Linear(self.cfg.embedding_dim, n_classes)


def build_mcnn(cfg: McnnConfig | None = None) -> VideoModel:
    return VideoModel(cfg or McnnConfig())


def _check_batch(batch: torch.Tensor, min_t: int) -> None:
    if batch.dim() != 5 or batch.shape[1] != 1 or batch.shape[3:] != (CROP_SIZE, CROP_SIZE):
        raise BadShape(f"expected B x 1 x T x {CROP_SIZE} x {CROP_SIZE}, got {tuple(batch.shape)}")
    if batch.shape[2] < min_t:
        raise BadShape(f"T={batch.shape[2]} is below the stem's temporal kernel ({min_t})")


def embed_video(model: VideoModel, batch) -> torch.Tensor:
    """Embedding-tap activations (B x 512) in eval mode."""
    batch = torch.as_tensor(batch, dtype=next(model.parameters()).dtype)
    _check_batch(batch, model.cfg.stem_kernel[0])
    was_training = model.training
    model.eval()
    with torch.no_grad():
        emb, _ = model(batch)
    model.train(was_training)
    return emb


@dataclass
class VideoEmbedding:
    vector: np.ndarray
    utt_id: str = ""
    stream: str = STREAM


def segments_to_batch(segs: Sequence[LipSequence], mode: str = "eval",
                      rng: np.random.Generator | None = None) -> torch.Tensor:
    crops = [augment_video(s, mode, rng).frames for s in segs]
    return torch.from_numpy(np.stack(crops)[:, None].astype(np.float32))


def embed_utterance_video(model: VideoModel, seq: LipSequence, utt_id: str = "",
                          seg_len: int = SEGMENT_FRAMES) -> VideoEmbedding:
    """Mean of per-segment embeddings, L2-normalised."""
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        segs = segment_sequence(seq, seg_len)
    if not segs:
        raise TooShort(f"{utt_id or 'utterance'}: {len(seq)} frames, no full {seg_len}-frame segment")
    emb = embed_video(model, segments_to_batch(segs, "eval")).double().mean(dim=0).numpy()
    norm = np.linalg.norm(emb)
    return VideoEmbedding(emb / norm if norm > 0 else emb, utt_id)


# ---------------------------------------------------------------------------
# training

@dataclass
class VideoTrainConfig:
    epochs: int = 300
    lr: float = 0.05
    weight_decay: float = 1e-4
    optimizer: str = "adam"
    schedule: str = "cosine"
    loss: str = "cross_entropy"
    batch_size: int = 32
    variable_length: bool = True
    min_length: int = MIN_VIEW_FRAMES
    seed: int = 0
    target_accuracy: float | None = None  # stop early once reached
    log_every: int = 1


def _variable_length_batch(frames: np.ndarray, rng: np.random.Generator, min_len: int) -> np.ndarray:
    """One random length per batch, an independent contiguous window per item."""
    t = frames.shape[1]
    if t <= min_len:
        return frames
    length = int(rng.integers(min_len, t + 1))
    starts = rng.integers(0, t - length + 1, size=frames.shape[0])
    return np.stack([f[s:s + length] for f, s in zip(frames, starts)])


def train_video(model: VideoModel, train_set: Sequence[tuple[LipSequence, int]],
                hyper: VideoTrainConfig | None = None, checkpoint: str | None = None,
                log_path: str | None = None) -> tuple[VideoModel, MetricsLog]:
    """Speaker-classification training on 96x96 segments labelled 0..n_classes-1."""
    hyper = hyper or VideoTrainConfig()
    labels = np.array([lab for _, lab in train_set], dtype=np.int64)
    n_classes = model.cfg.n_classes
    counts = np.bincount(labels, minlength=n_classes) if len(labels) else np.zeros(n_classes)
    if n_classes < 2 or (counts[:n_classes] == 0).any() or len(counts) > n_classes:
        raise DataError(f"every one of {n_classes} (>= 2) classes needs segments; counts={counts.tolist()}")
    rng = seed_everything(hyper.seed)
    segs = [s for s, _ in train_set]
    if hyper.optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=hyper.lr, weight_decay=hyper.weight_decay)
    elif hyper.optimizer == "sgd":
        opt = torch.optim.SGD(model.parameters(), lr=hyper.lr, momentum=0.9,
                              weight_decay=hyper.weight_decay)
    else:
        raise ValueError(f"unknown optimizer {hyper.optimizer!r}")
    log = MetricsLog(log_path)
    best = -1.0
    for epoch in range(hyper.epochs):
        lr = cosine_lr(epoch, hyper.epochs, hyper.lr) if hyper.schedule == "cosine" else hyper.lr
        for g in opt.param_groups:
            g["lr"] = lr
        model.train()
        order = rng.permutation(len(segs))
        total_loss, correct = 0.0, 0
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            if len(idx) < 2 and len(order) > 1:
                continue  # BatchNorm needs >1 sample
            crops = []
            for i in idx:
                dy, dx, flip = crop_params("train", rng)
                f = segs[i].frames[:, dy:dy + CROP_SIZE, dx:dx + CROP_SIZE]
                crops.append(f[:, :, ::-1] if flip else f)
            frames = np.stack(crops)
            if hyper.variable_length:
                frames = _variable_length_batch(frames, rng, hyper.min_length)
            x = torch.from_numpy(np.ascontiguousarray(frames[:, None], dtype=np.float32))
            y = torch.from_numpy(labels[idx])
            _, logits = model(x)
            loss = F.cross_entropy(logits, y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += loss.item() * len(idx)
            correct += int((logits.argmax(1) == y).sum())
        n = len(order)
        rec = EpochRecord(epoch + 1, total_loss / n, correct / n, lr)
        log.append(rec)
        if hyper.log_every and (epoch + 1) % hyper.log_every == 0:
            logger.info("video epoch %d loss %.4f acc %.3f lr %.5f", rec.epoch, rec.loss, rec.accuracy, lr)
        if checkpoint and rec.accuracy > best:
            best = rec.accuracy
            save_checkpoint(checkpoint, STREAM, model.cfg, model, rec.epoch, rng,
                            {"train": _asdict(hyper), "accuracy": rec.accuracy})
        if hyper.target_accuracy is not None and rec.accuracy >= hyper.target_accuracy:
            break
    model.eval()
    return model, log


def _asdict(obj) -> dict:
    from dataclasses import asdict

    return asdict(obj)


def load_video_model(payload: dict) -> VideoModel:
    model = VideoModel(McnnConfig(**payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
