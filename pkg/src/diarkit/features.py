"""MFCC front end and cepstral normalization."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct

from .audio_io import AudioSignal
from .errors import DataError, FormatError, ValidationError

ENERGY_FLOOR = 1e-10
LOG_FLOOR = float(np.log(ENERGY_FLOOR))


@dataclass(frozen=True)
class FrameSpec:
    frame_length: float = 25.0  # ms
    frame_shift: float = 10.0  # ms
    num_mel_filters: int = 23
    num_ceps: int = 13
    fft_size: int = 512
    pre_emphasis: float = 0.97
    low_freq: float = 20.0
    high_freq: float | None = None
    # energies are computed on the 16-bit integer scale so that the usual
    # energy-VAD offsets (tuned for int16 audio) apply unchanged
    pcm_scale: float = 32768.0

    def __post_init__(self):
        if not self.frame_length >= self.frame_shift > 0:
            raise ValidationError("need frame_length >= frame_shift > 0")
        if not 0 < self.num_ceps <= self.num_mel_filters:
            raise ValidationError("need 0 < num_ceps <= num_mel_filters")
        if self.fft_size & (self.fft_size - 1):
            raise ValidationError(f"fft_size {self.fft_size} is not a power of two")

    def samples_per_frame(self, sample_rate: int) -> int:
        return int(round(self.frame_length * sample_rate / 1000))

    def samples_per_shift(self, sample_rate: int) -> int:
        return int(round(self.frame_shift * sample_rate / 1000))

    def num_frames(self, num_samples: int, sample_rate: int) -> int:
        L, S = self.samples_per_frame(sample_rate), self.samples_per_shift(sample_rate)
        if num_samples < L:
            return 0
        return 1 + (num_samples - L) // S


@dataclass
class FeatureMatrix:
    values: np.ndarray
    frame_shift: float = 10.0  # ms

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-D, got shape {self.values.shape}")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(num_filters: int, fft_size: int, sample_rate: int, low_freq: float = 20.0, high_freq=None) -> np.ndarray:
    """Triangular filters, equally spaced on the Mel scale; shape (num_filters, fft_size//2 + 1)."""
    high_freq = sample_rate / 2 if high_freq is None else high_freq
    edges = mel_to_hz(np.linspace(hz_to_mel(low_freq), hz_to_mel(high_freq), num_filters + 2))
    bins = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    fb = np.zeros((num_filters, len(bins)))
    for m in range(num_filters):
        left, center, right = edges[m : m + 3]
        up = (bins - left) / (center - left)
        down = (right - bins) / (right - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def frame_signal(samples: np.ndarray, frame_len: int, shift: int) -> np.ndarray:
    return sliding_window_view(samples, frame_len)[::shift]


def compute_mfcc(signal: AudioSignal, spec: FrameSpec = FrameSpec()) -> FeatureMatrix:
    """13-dim MFCCs (by default) with C0 replaced by the log frame energy."""
    sr = signal.sample_rate
    L, S = spec.samples_per_frame(sr), spec.samples_per_shift(sr)
    if spec.fft_size < L:
        raise ValidationError(f"fft_size {spec.fft_size} shorter than frame ({L} samples)")
    x = np.asarray(signal.samples, dtype=np.float64) * spec.pcm_scale
    if len(x) < L:
        raise DataError(f"signal of {len(x)} samples is shorter than one frame ({L})")
    frames = frame_signal(x, L, S)
    log_energy = np.log(np.maximum(np.einsum("ij,ij->i", frames, frames), ENERGY_FLOOR))

    emph = np.empty_like(frames)
    emph[:, 1:] = frames[:, 1:] - spec.pre_emphasis * frames[:, :-1]
    emph[:, 0] = frames[:, 0] * (1.0 - spec.pre_emphasis)
    emph *= np.hamming(L)
    power = np.abs(np.fft.rfft(emph, spec.fft_size, axis=1)) ** 2
    fb = mel_filterbank(spec.num_mel_filters, spec.fft_size, sr, spec.low_freq, spec.high_freq)
    mel = np.log(np.maximum(power @ fb.T, ENERGY_FLOOR))
    ceps = dct(mel, type=2, axis=1, norm="ortho")[:, : spec.num_ceps]
    ceps[:, 0] = log_energy
    return FeatureMatrix(ceps, spec.frame_shift)


def cmvn(features: FeatureMatrix) -> FeatureMatrix:
    """Per-column mean and (population) variance normalization."""
    x = features.values
    if x.shape[0] < 2:
        raise DataError(f"cmvn needs at least 2 frames, got {x.shape[0]}")
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    out = x - mean
    ok = var >= 1e-12
    out[:, ok] /= np.sqrt(var[ok])
    return FeatureMatrix(out, features.frame_shift)


def sliding_cmn(features: FeatureMatrix, window: int = 300, center: bool = True) -> FeatureMatrix:
    """Subtract a per-frame mean over a window of at most `window` frames (truncated at edges)."""
    if window < 1:
        raise ValidationError("window must be >= 1")
    x = features.values
    T = x.shape[0]
    if T == 0:
        raise DataError("empty feature matrix")
    t = np.arange(T)
    if center:
        start = t - window // 2
    else:
        start = t - window + 1
    end = np.minimum(start + window, T)
    start = np.maximum(start, 0)
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    means = (csum[end] - csum[start]) / (end - start)[:, None]
    return FeatureMatrix(x - means, features.frame_shift)


# ---------------------------------------------------------------------------
# DKF1 container: magic, u32 rows, u32 cols, f32 row-major payload (little-endian)


def write_features(path, features: FeatureMatrix) -> None:
    v = np.ascontiguousarray(features.values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(b"DKF1")
        f.write(struct.pack("<II", *v.shape))
        f.write(v.tobytes())


def read_features(path, frame_shift: float = 10.0) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if data[:4] != b"DKF1" or len(data) < 12:
        raise FormatError(f"{path}: not a DKF1 feature archive")
    rows, cols = struct.unpack_from("<II", data, 4)
    need = 12 + 4 * rows * cols
    if len(data) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(data)}")
    v = np.frombuffer(data, dtype="<f4", offset=12).reshape(rows, cols)
    return FeatureMatrix(v.astype(np.float64), frame_shift)
