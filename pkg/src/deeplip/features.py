"""Audio MFCC front-end and mouth-ROI video preprocessing."""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.fft import dct
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import BadShape, CropOutOfBounds, MissingLandmarks, TooShort

ROI_SIZE = 96
CROP_SIZE = 88
SEGMENT_FRAMES = 29
MIN_VIEW_FRAMES = 16
LUMA = np.array([0.299, 0.587, 0.114])
LOG_FLOOR = 1e-10


# ---------------------------------------------------------------------------
# audio

@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be > 0")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class FeatureMatrix:
    values: np.ndarray  # T_frames x n_coeffs
    frame_shift: float = 10.0  # ms
    frame_length: float = 25.0  # ms

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class MfccConfig:
    n_fft: int = 512
    n_bins: int = 26
    n_ceps: int = 26
    frame_length: float = 25.0
    frame_shift: float = 10.0
    pre_emphasis: float = 0.97
    cmvn: bool = True
    low_freq: float = 0.0
    high_freq: float | None = None
    sample_rate: int = 16000

    def __post_init__(self):
        if self.n_fft < 2 or self.n_fft & (self.n_fft - 1):
            raise ValueError(f"n_fft must be a power of two, got {self.n_fft}")
        if not 1 <= self.n_bins <= self.n_fft // 2:
            raise ValueError(f"n_bins must be in [1, n_fft/2], got {self.n_bins}")
        if not 1 <= self.n_ceps <= self.n_bins:
            raise ValueError("n_ceps must be in [1, n_bins]")


def read_wav(path: str, target_rate: int | None = 16000) -> Waveform:
    """Read PCM/float WAV, downmix to mono and resample to ``target_rate``."""
    rate, data = wavfile.read(path)
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if target_rate is not None and rate != target_rate:
        g = np.gcd(int(rate), int(target_rate))
        data = resample_poly(data, target_rate // g, rate // g)
        rate = target_rate
    return Waveform(data, int(rate))


def write_wav(path: str, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    wavfile.write(path, w.sample_rate, pcm)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bins: int, n_fft: int, sample_rate: int,
                   low_freq: float = 0.0, high_freq: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_bins, n_fft // 2 + 1)``."""
    high_freq = sample_rate / 2.0 if high_freq is None else high_freq
    edges = mel_to_hz(np.linspace(hz_to_mel(low_freq), hz_to_mel(high_freq), n_bins + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None] - lower) / (centre - lower)
    falling = (upper - freqs[None]) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    return 1 + (n_samples - frame_len) // hop


def extract_mfcc(w: Waveform, cfg: MfccConfig = MfccConfig()) -> FeatureMatrix:
    """MFCCs: pre-emphasis, Hamming frames, power spectrum, mel bank, log, DCT-II, CMVN."""
    sr = w.sample_rate
    win = int(round(cfg.frame_length * sr / 1000.0))
    hop = int(round(cfg.frame_shift * sr / 1000.0))
    if win > cfg.n_fft:
        raise ValueError(f"frame of {win} samples exceeds n_fft={cfg.n_fft}")
    x = w.samples
    if len(x) < win:
        raise TooShort(f"{len(x)} samples is shorter than one {win}-sample frame")
    x = np.append(x[0], x[1:] - cfg.pre_emphasis * x[:-1])
    n = frame_count(len(x), win, hop)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n]
    frames = frames * np.hamming(win)
    power = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1)) ** 2 / cfg.n_fft
    fbank = mel_filterbank(cfg.n_bins, cfg.n_fft, sr, cfg.low_freq, cfg.high_freq)
    energies = np.log(np.maximum(power @ fbank.T, LOG_FLOOR))
    ceps = dct(energies, type=2, axis=1, norm="ortho")[:, :cfg.n_ceps]
    if cfg.cmvn:
        ceps = cmvn(ceps)
    return FeatureMatrix(ceps, frame_shift=cfg.frame_shift, frame_length=cfg.frame_length)


def cmvn(feats: np.ndarray, variance: bool = True) -> np.ndarray:
    out = feats - feats.mean(axis=0, keepdims=True)
    if variance:
        out = out / np.maximum(out.std(axis=0, keepdims=True), LOG_FLOOR)
    return out


def deltas(feats: np.ndarray, window: int = 2) -> np.ndarray:
    """Regression deltas over +-``window`` frames with edge replication."""
    t = feats.shape[0]
    padded = np.pad(feats, ((window, window), (0, 0)), mode="edge")
    num = sum(k * (padded[window + k:window + k + t] - padded[window - k:window - k + t])
              for k in range(1, window + 1))
    return num / (2.0 * sum(k * k for k in range(1, window + 1)))


def frame_log_energy(w: Waveform, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    sr = w.sample_rate
    win = int(round(cfg.frame_length * sr / 1000.0))
    hop = int(round(cfg.frame_shift * sr / 1000.0))
    n = frame_count(len(w.samples), win, hop)
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, win)[::hop][:n]
    return np.log(np.maximum((frames ** 2).sum(axis=1), LOG_FLOOR))


# ---------------------------------------------------------------------------
# video

@dataclass
class LipSequence:
    frames: np.ndarray  # T x H x W, float32 in [0, 1]
    fps: float = 25.0

    def __post_init__(self):
        if self.frames.ndim != 3:
            raise BadShape(f"LipSequence frames must be T x H x W, got {self.frames.shape}")

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class CropBox:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def centre(self) -> tuple[float, float]:
        return (self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0


def full_frame_boxes(n_frames: int, height: int, width: int) -> list[CropBox]:
    """Trivial annotation provider: the whole frame is the mouth box."""
    return [CropBox(0, 0, width, height)] * n_frames


def to_gray(frames: np.ndarray) -> np.ndarray:
    """Convert T x H x W x 3 RGB (or already-gray T x H x W) to float gray in [0, 1]."""
    frames = np.asarray(frames)
    if np.issubdtype(frames.dtype, np.integer):
        scale = float(np.iinfo(frames.dtype).max)
        frames = frames.astype(np.float64) / scale
    else:
        frames = frames.astype(np.float64)
    if frames.ndim == 4:
        if frames.shape[-1] == 1:
            frames = frames[..., 0]
        elif frames.shape[-1] == 3:
            frames = frames @ LUMA
        else:
            raise BadShape(f"expected 1 or 3 channels, got {frames.shape[-1]}")
    elif frames.ndim != 3:
        raise BadShape(f"expected T x H x W [x C] frames, got {frames.shape}")
    return np.clip(frames, 0.0, 1.0)


def estimate_affine(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares 2x3 affine mapping ``src`` (N x 2, x/y) onto ``dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.shape[0] < 3:
        raise ValueError("need >= 3 matching landmark pairs for an affine fit")
    design = np.hstack([src, np.ones((len(src), 1))])
    sol, *_ = np.linalg.lstsq(design, dst, rcond=None)
    return sol.T


def _warp(gray: np.ndarray, affine: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    from scipy.ndimage import affine_transform

    # affine maps source (x, y) -> canvas (x, y); ndimage wants canvas (row, col) -> source (row, col)
    full = np.vstack([affine, [0, 0, 1]])
    inv = np.linalg.inv(full)
    swap = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]], dtype=np.float64)
    m = swap @ inv @ swap
    return affine_transform(gray, m[:2, :2], offset=m[:2, 2], output_shape=out_shape,
                            order=1, mode="nearest")


def _crop(gray: np.ndarray, cx: float, cy: float, size: int) -> np.ndarray:
    h, w = gray.shape
    x0 = int(round(cx - size / 2.0))
    y0 = int(round(cy - size / 2.0))
    x1, y1 = x0 + size, y0 + size
    if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
        warnings.warn(f"crop window ({x0},{y0})-({x1},{y1}) leaves {w}x{h} frame; edge-padding",
                      CropOutOfBounds, stacklevel=3)
        pad = ((max(0, -y0), max(0, y1 - h)), (max(0, -x0), max(0, x1 - w)))
        gray = np.pad(gray, pad, mode="edge")
        x0 += pad[1][0]
        y0 += pad[0][0]
    return gray[y0:y0 + size, x0:x0 + size]


def _resize(img: np.ndarray, size: int) -> np.ndarray:
    import cv2

    return cv2.resize(img, (size, size), interpolation=cv2.INTER_AREA if img.shape[0] > size
                      else cv2.INTER_LINEAR)


def preprocess_roi(frames: np.ndarray, annotations: Sequence, fps: float = 25.0,
                   reference: np.ndarray | None = None, canvas: tuple[int, int] | None = None,
                   mouth_points: Sequence[int] | None = None, size: int = ROI_SIZE) -> LipSequence:
    """Crop a grayscale ``size`` x ``size`` mouth ROI from every frame.

    ``annotations`` holds one entry per frame: a :class:`CropBox`, an
    ``L x 2`` landmark array in (x, y) pixels, or ``None`` if missing.  With
    landmarks and a ``reference`` shape the frame is first affinely aligned
    to the reference on a ``canvas``-sized image; the crop is centred on the
    mean of the ``mouth_points`` subset (all points by default).  Boxes whose
    side differs from ``size`` are resampled to ``size``.
    """
    gray = to_gray(frames)
    if len(annotations) != gray.shape[0]:
        raise MissingLandmarks(f"{gray.shape[0]} frames but {len(annotations)} annotations")
    out = np.empty((gray.shape[0], size, size), dtype=np.float32)
    for t, (img, ann) in enumerate(zip(gray, annotations)):
        if ann is None:
            raise MissingLandmarks(f"frame {t} has no landmark or box annotation")
        if isinstance(ann, CropBox):
            side = max(ann.x1 - ann.x0, ann.y1 - ann.y0)
            cx, cy = ann.centre
            if int(round(side)) == size:
                roi = _crop(img, cx, cy, size)
            else:
                roi = _resize(_crop(img, cx, cy, int(round(side))).astype(np.float32), size)
        else:
            pts = np.asarray(ann, dtype=np.float64)
            if pts.ndim != 2 or pts.shape[1] != 2 or not np.all(np.isfinite(pts)):
                raise MissingLandmarks(f"frame {t}: landmarks must be a finite L x 2 array")
            if reference is not None:
                ref = np.asarray(reference, dtype=np.float64)
                affine = estimate_affine(pts, ref)
                img = _warp(img, affine, canvas or img.shape)
                pts = ref
            sel = pts if mouth_points is None else pts[list(mouth_points)]
            cx, cy = sel.mean(axis=0)
            roi = _crop(img, cx, cy, size)
        out[t] = roi
    return LipSequence(np.clip(out, 0.0, 1.0), fps)


def load_video(path: str) -> np.ndarray:
    """Load frames from ``.npy``/``.npz``, a directory of images, or a container file."""
    if os.path.isdir(path):
        from PIL import Image

        names = sorted(n for n in os.listdir(path)
                       if n.lower().endswith((".png", ".jpg", ".jpeg", ".bmp", ".pgm")))
        if not names:
            raise FileNotFoundError(f"no image frames in {path}")
        return np.stack([np.asarray(Image.open(os.path.join(path, n))) for n in names])
    if path.endswith(".npy"):
        return np.load(path)
    if path.endswith(".npz"):
        with np.load(path) as z:
            return z["frames"]
    import cv2

    cap = cv2.VideoCapture(path)
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        frames.append(frame[..., ::-1])  # BGR -> RGB
    cap.release()
    if not frames:
        raise OSError(f"could not decode any frames from {path}")
    return np.stack(frames)


def save_lip_sequence(path: str, seq: LipSequence) -> None:
    np.savez(path, frames=seq.frames.astype(np.float32), fps=np.float64(seq.fps))


def load_lip_sequence(path: str) -> LipSequence:
    with np.load(path) as z:
        return LipSequence(z["frames"], float(z["fps"]))


def segment_sequence(seq: LipSequence, seg_len: int = SEGMENT_FRAMES) -> list[LipSequence]:
    """Split into consecutive non-overlapping ``seg_len``-frame segments; drop the tail."""
    if seg_len < 1:
        raise ValueError("seg_len must be >= 1")
    n = len(seq) // seg_len
    dropped = len(seq) - n * seg_len
    if dropped:
        warnings.warn(f"dropping {dropped} trailing frames (< {seg_len}-frame segment)", stacklevel=2)
    return [LipSequence(seq.frames[i * seg_len:(i + 1) * seg_len], seq.fps) for i in range(n)]


def crop_params(mode: str, rng: np.random.Generator | None = None,
                size: int = ROI_SIZE, crop: int = CROP_SIZE) -> tuple[int, int, bool]:
    """(row offset, col offset, flip) for one segment."""
    if mode == "eval":
        off = (size - crop) // 2
        return off, off, False
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    dy, dx = (int(v) for v in rng.integers(0, size - crop + 1, size=2))
    return dy, dx, bool(rng.random() < 0.5)


def augment_video(seg: LipSequence, mode: str = "eval", rng: np.random.Generator | None = None,
                  crop: int = CROP_SIZE) -> LipSequence:
    """Random (train) or centre (eval) ``crop`` x ``crop`` window plus random h-flip."""
    _, h, w = seg.frames.shape
    if h != ROI_SIZE or w != ROI_SIZE:
        raise BadShape(f"augment_video expects {ROI_SIZE}x{ROI_SIZE} frames, got {h}x{w}")
    dy, dx, flip = crop_params(mode, rng, ROI_SIZE, crop)
    out = seg.frames[:, dy:dy + crop, dx:dx + crop]
    if flip:
        out = out[:, :, ::-1]
    return LipSequence(np.ascontiguousarray(out), seg.fps)


def hflip(seq: LipSequence) -> LipSequence:
    return LipSequence(np.ascontiguousarray(seq.frames[:, :, ::-1]), seq.fps)


def variable_length_view(seq: LipSequence, rng: np.random.Generator,
                         min_len: int = MIN_VIEW_FRAMES) -> LipSequence:
    """Random contiguous sub-sequence with length uniform in ``[min_len, T]``."""
    t = len(seq)
    if t < min_len:
        raise TooShort(f"sequence of {t} frames is below the {min_len}-frame minimum")
    length = int(rng.integers(min_len, t + 1))
    start = int(rng.integers(0, t - length + 1))
    return LipSequence(seq.frames[start:start + length], seq.fps)
