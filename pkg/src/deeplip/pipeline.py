"""Glue between manifests, feature extraction and the two embedding networks."""
from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import Manifest, UtteranceRecord
from .errors import DeepLipError
from .features import (ROI_SIZE, CropBox, LipSequence, MfccConfig, extract_mfcc, full_frame_boxes,
                       load_video, preprocess_roi, read_wav, segment_sequence)
from .lipnet import VideoModel, embed_utterance_video
from .xvector import AudioModel, embed_utterance_audio

logger = logging.getLogger(__name__)


def read_boxes(path: str) -> list[CropBox | None]:
    """Sidecar annotation file: one ``x0 y0 x1 y1`` line per frame, ``-`` when missing."""
    boxes: list[CropBox | None] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            cols = line.split()
            if not cols:
                continue
            boxes.append(None if cols[0] == "-" else CropBox(*map(float, cols[:4])))
    return boxes


def default_annotations(video_path: str, frames: np.ndarray) -> list:
    """Boxes from a ``<video>.boxes`` sidecar, else the whole (ROI-sized) frame."""
    sidecar = video_path + ".boxes"
    if os.path.exists(sidecar):
        return read_boxes(sidecar)
    t, h, w = frames.shape[:3]
    if (h, w) != (ROI_SIZE, ROI_SIZE):
        logger.warning("%s: no annotations, using a centred %dx%d box", video_path, ROI_SIZE, ROI_SIZE)
        cx, cy = w / 2.0, h / 2.0
        half = ROI_SIZE / 2.0
        return [CropBox(cx - half, cy - half, cx + half, cy + half)] * t
    return full_frame_boxes(t, h, w)


def audio_features(manifest: Manifest, rec: UtteranceRecord, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    w = read_wav(manifest.resolve(rec.audio_path), target_rate=cfg.sample_rate)
    return extract_mfcc(w, cfg).values.astype(np.float32)


def lip_sequence(manifest: Manifest, rec: UtteranceRecord,
                 annotate: Callable[[str, np.ndarray], list] = default_annotations) -> LipSequence:
    path = manifest.resolve(rec.video_path)
    frames = load_video(path)
    return preprocess_roi(frames, annotate(path, frames), fps=rec.fps)


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=8))


class _AudioJob:
    def __init__(self, manifest, cfg):
        self.manifest, self.cfg = manifest, cfg

    def __call__(self, rec):
        return audio_features(self.manifest, rec, self.cfg)


class _VideoJob:
    def __init__(self, manifest):
        self.manifest = manifest

    def __call__(self, rec):
        return lip_sequence(self.manifest, rec)


def speaker_labels(manifest: Manifest) -> dict[str, int]:
    return {spk: i for i, spk in enumerate(sorted(manifest.speakers))}


def audio_dataset(manifest: Manifest, cfg: MfccConfig = MfccConfig(), jobs: int = 1):
    labels = speaker_labels(manifest)
    feats = _map(_AudioJob(manifest, cfg), manifest.records, jobs)
    return [(f, labels[r.speaker_id]) for f, r in zip(feats, manifest.records)]


def video_dataset(manifest: Manifest, seg_len: int = 29, jobs: int = 1):
    labels = speaker_labels(manifest)
    seqs = _map(_VideoJob(manifest), manifest.records, jobs)
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for seq, rec in zip(seqs, manifest.records):
            out.extend((seg, labels[rec.speaker_id]) for seg in segment_sequence(seq, seg_len))
    return out


@dataclass
class ExtractionReport:
    done: int = 0
    failures: list = field(default_factory=list)  # (utt_id, stream, message)


def extract_embeddings(manifest: Manifest, store, audio_model: AudioModel | None = None,
                       video_model: VideoModel | None = None, mfcc: MfccConfig = MfccConfig(),
                       seg_len: int = 29) -> ExtractionReport:
    """Add per-utterance embeddings to ``store``; failures are collected, not raised."""
    report = ExtractionReport()
    recs: Sequence[UtteranceRecord] = manifest.records
    if audio_model is not None:
        audio_model.eval()
        for rec in recs:
            try:
                feats = audio_features(manifest, rec, mfcc)
                store.add(rec.utt_id, "audio", embed_utterance_audio(audio_model, feats, rec.utt_id).vector)
                report.done += 1
            except (DeepLipError, OSError, ValueError) as exc:
                report.failures.append((rec.utt_id, "audio", str(exc)))
    if video_model is not None:
        video_model.eval()
        for rec in recs:
            try:
                seq = lip_sequence(manifest, rec)
                store.add(rec.utt_id, "video",
                          embed_utterance_video(video_model, seq, rec.utt_id, seg_len).vector)
                report.done += 1
            except (DeepLipError, OSError, ValueError) as exc:
                report.failures.append((rec.utt_id, "video", str(exc)))
    return report
