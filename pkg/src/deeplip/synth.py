"""Deterministic synthetic audio-visual corpus.

Each speaker gets a voice (fundamental frequency, three resonances, noise
floor) and a mouth (lip ellipse size and tone, opening amplitude and rate).
Every parameter is drawn from an evenly spaced grid that is permuted per
seed, so speakers differ along every axis and either modality alone is
enough to tell them apart.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import Manifest, UtteranceRecord
from .features import Waveform, write_wav

FRAME_SIZE = 96


@dataclass(frozen=True)
class SynthSpeakerParams:
    speaker_id: str
    f0: float  # Hz
    formants: tuple[float, float, float]  # Hz
    noise_level: float
    lip_width: float  # ellipse semi-axis, px
    lip_height: float  # ellipse semi-axis, px
    lip_tone: float  # grey level of the lips
    open_amp: float  # px
    open_freq: float  # Hz

    def vector(self) -> np.ndarray:
        return np.array([self.f0, *self.formants, self.noise_level, self.lip_width,
                         self.lip_height, self.lip_tone, self.open_amp, self.open_freq])


_GRIDS = {
    "f0": (95.0, 240.0),
    "f1": (350.0, 850.0),
    "f2": (1000.0, 2200.0),
    "f3": (2500.0, 3400.0),
    "noise_level": (0.003, 0.02),
    "lip_width": (18.0, 34.0),
    "lip_height": (7.0, 15.0),
    "lip_tone": (0.25, 0.55),
    "open_amp": (2.0, 8.0),
    "open_freq": (1.5, 4.5),
}


def speaker_params(n_speakers: int, seed: int) -> list[SynthSpeakerParams]:
    if n_speakers < 1:
        raise ValueError("n_speakers must be >= 1")
    rng = np.random.default_rng([seed, 0x5EED])
    cols = {}
    step = 1.0 / max(n_speakers, 1)
    for key, (lo, hi) in _GRIDS.items():
        levels = (np.arange(n_speakers) + 0.5) * step
        levels = levels + rng.uniform(-0.25, 0.25, n_speakers) * step
        cols[key] = lo + (hi - lo) * levels[rng.permutation(n_speakers)]
    return [
        SynthSpeakerParams(
            speaker_id=f"spk{i:03d}",
            f0=float(cols["f0"][i]),
            formants=(float(cols["f1"][i]), float(cols["f2"][i]), float(cols["f3"][i])),
            noise_level=float(cols["noise_level"][i]),
            lip_width=float(cols["lip_width"][i]),
            lip_height=float(cols["lip_height"][i]),
            lip_tone=float(cols["lip_tone"][i]),
            open_amp=float(cols["open_amp"][i]),
            open_freq=float(cols["open_freq"][i]),
        )
        for i in range(n_speakers)
    ]


def _syllable_envelope(n: int, sr: int, rng) -> np.ndarray:
    env = np.zeros(n)
    t = int(rng.uniform(0.03, 0.12) * sr)
    while t < n:
        length = int(rng.uniform(0.12, 0.26) * sr)
        stop = min(n, t + length)
        env[t:stop] = np.hanning(length)[:stop - t] * rng.uniform(0.6, 1.0)
        t = stop + int(rng.uniform(0.04, 0.12) * sr)
    return env


def synth_audio(p: SynthSpeakerParams, duration: float, sample_rate: int, rng) -> Waveform:
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = p.f0 * rng.uniform(0.97, 1.03)
    contour = f0 * (1.0 + 0.04 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(contour) / sample_rate
    n_harm = int((0.45 * sample_rate) // (f0 * 1.05))
    voiced = np.zeros(n)
    for k in range(1, n_harm + 1):
        fk = k * f0
        gain = sum(np.exp(-0.5 * ((fk - fm) / (60.0 + 0.06 * fm)) ** 2) for fm in p.formants) + 0.01
        voiced += gain * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    voiced *= _syllable_envelope(n, sample_rate, rng)
    voiced /= max(np.abs(voiced).max(), 1e-9)
    samples = 0.5 * voiced + p.noise_level * rng.standard_normal(n)
    return Waveform(np.clip(samples, -1.0, 1.0), sample_rate)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def synth_video(p: SynthSpeakerParams, n_frames: int, fps: float, rng,
                size: int = FRAME_SIZE) -> np.ndarray:
    """Grey uint8 frames (T x size x size) of a moving lip ellipse."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    phase = rng.uniform(0, 2 * np.pi)
    freq = p.open_freq * rng.uniform(0.95, 1.05)
    amp = p.open_amp * rng.uniform(0.9, 1.1)
    cx0 = size / 2 + rng.uniform(-2, 2)
    cy0 = size / 2 + rng.uniform(-2, 2)
    skin = 0.75 + rng.uniform(-0.03, 0.03)
    frames = np.empty((n_frames, size, size), dtype=np.uint8)
    for i in range(n_frames):
        t = i / fps
        opening = 0.5 * amp * (1 - np.cos(2 * np.pi * freq * t + phase))
        cx = cx0 + rng.normal(0, 0.4)
        cy = cy0 + rng.normal(0, 0.4)
        a, b = p.lip_width, p.lip_height + 0.5 * opening
        r = np.sqrt(((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2)
        lips = _sigmoid((1.0 - r) * 12.0)
        img = skin + (p.lip_tone - skin) * lips
        if opening > 0.3:
            ri = np.sqrt(((xx - cx) / (0.7 * a)) ** 2 + ((yy - cy) / (0.5 * opening)) ** 2)
            img = img + (0.05 - img) * _sigmoid((1.0 - ri) * 8.0)
        img = img + rng.normal(0, 0.015, img.shape)
        frames[i] = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return frames


def synth_corpus(n_speakers: int, utts_per_speaker: int, seed: int, out_dir: str,
                 n_frames: int = 58, fps: float = 25.0, sample_rate: int = 16000,
                 name: str = "synth") -> Manifest:
    """Write ``n_speakers * utts_per_speaker`` utterances and ``manifest.tsv`` to ``out_dir``.

    Audio goes to ``audio/<utt>.wav`` (16-bit PCM), video to
    ``video/<utt>.npy`` (uint8 grey frames).  Output is a pure function of
    the arguments.
    """
    if n_speakers < 1 or utts_per_speaker < 1:
        raise ValueError("counts must be >= 1")
    os.makedirs(os.path.join(out_dir, "audio"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "video"), exist_ok=True)
    duration = n_frames / fps
    records = []
    params = speaker_params(n_speakers, seed)
    for s, p in enumerate(params):
        for u in range(utts_per_speaker):
            rng = np.random.default_rng([seed, s, u])
            utt = f"{p.speaker_id}-{u:03d}"
            wav = synth_audio(p, duration, sample_rate, rng)
            frames = synth_video(p, n_frames, fps, rng)
            audio_rel = os.path.join("audio", utt + ".wav")
            video_rel = os.path.join("video", utt + ".npy")
            write_wav(os.path.join(out_dir, audio_rel), wav)
            np.save(os.path.join(out_dir, video_rel), frames)
            records.append(UtteranceRecord(utt, p.speaker_id, audio_rel, video_rel,
                                           fps, sample_rate, duration))
    manifest = Manifest(records, name=name, root=os.path.abspath(out_dir))
    manifest.write(os.path.join(out_dir, "manifest.tsv"))
    _write_params(os.path.join(out_dir, "speakers.tsv"), params)
    return manifest


def _write_params(path: str, params: list[SynthSpeakerParams]) -> None:
    keys = list(asdict(params[0]))
    lines = ["\t".join(keys)]
    for p in params:
        d = asdict(p)
        lines.append("\t".join(",".join(f"{v:.6g}" for v in d[k]) if isinstance(d[k], tuple)
                               else (d[k] if isinstance(d[k], str) else f"{d[k]:.6g}") for k in keys))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
