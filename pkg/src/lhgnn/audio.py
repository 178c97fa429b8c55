"""Audio ingestion and the fixed-shape log-mel frontend.

Clips are decoded to mono float32 at 16 kHz, then converted to a log-mel
matrix with a 25 ms Hann window (400 samples), 10 ms hop (160 samples),
FFT size 512, and 128 triangular HTK-scale filters spanning 0-8000 Hz
(peak 1, no area normalization).  Energies pass through log(e + 1e-6);
the time axis is then padded with the log floor or head-cropped to a
fixed frame count (1024 by default), giving every clip the same
(frames, mels) shape at 100 frames/s.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import FormatError, ParameterError

SAMPLE_RATE = 16_000
WINDOW = 400
HOP = 160
N_FFT = 512
N_MELS = 128
N_FRAMES = 1024
FMIN = 0.0
FMAX = 8_000.0
LOG_FLOOR = 1e-6

_CACHE_MAGIC = b"LMEL"
_CACHE_VERSION = 1


@dataclass
class AudioClip:
    """Mono samples in [-1, 1] at a known rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def load_wav(path) -> AudioClip:
    """Decode a PCM WAV file to mono 16 kHz float32.

    Channels are averaged; other rates are resampled by linear
    interpolation.  Anything scipy cannot parse as WAV raises FormatError.
    """
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise FormatError(f"cannot read WAV file {path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"unsupported WAV sample format {data.dtype} in {path}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    samples = resample_linear(samples, rate, SAMPLE_RATE)
    return AudioClip(samples=samples.astype(np.float32), sample_rate=SAMPLE_RATE)


def resample_linear(samples: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    """Linear-interpolation resampler; output length rounds len * dst/src."""
    if src_rate <= 0 or dst_rate <= 0:
        raise ParameterError("sample rates must be positive")
    if src_rate == dst_rate:
        return np.asarray(samples)
    samples = np.asarray(samples, dtype=np.float64)
    n_out = int(round(len(samples) * dst_rate / src_rate))
    if n_out == 0:
        return np.zeros(0)
    t_src = np.arange(len(samples)) / src_rate
    t_dst = np.arange(n_out) / dst_rate
    return np.interp(t_dst, t_src, samples)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    sample_rate: int = SAMPLE_RATE,
    fmin: float = FMIN,
    fmax: float = FMAX,
) -> np.ndarray:
    """Triangular filterbank (n_mels, n_fft//2 + 1), peak 1, HTK mel spacing."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    lower, center, upper = edges[:-2], edges[1:-1], edges[2:]
    up = (freqs[None, :] - lower[:, None]) / (center - lower)[:, None]
    down = (upper[:, None] - freqs[None, :]) / (upper - center)[:, None]
    return np.clip(np.minimum(up, down), 0.0, 1.0)


def filter_center_frequencies(n_mels: int = N_MELS, fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Peak frequency (Hz) of each triangular filter."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


def frame_count(num_samples: int) -> int:
    """Frames produced before pad/crop: 1 + floor((L - WINDOW)/HOP), min 1."""
    if num_samples < WINDOW:
        return 1
    return 1 + (num_samples - WINDOW) // HOP


def mel_energies(clip: AudioClip, n_mels: int = N_MELS) -> np.ndarray:
    """Pre-log mel energies, shape (frames, n_mels).

    A clip shorter than one window is zero-padded to a single window.
    """
    if clip.sample_rate != SAMPLE_RATE:
        raise ParameterError(f"expected {SAMPLE_RATE} Hz input, got {clip.sample_rate}")
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.ndim != 1:
        raise ParameterError("clip must be mono")
    if len(x) < WINDOW:
        x = np.pad(x, (0, WINDOW - len(x)))
    frames = sliding_window_view(x, WINDOW)[::HOP]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WINDOW) / WINDOW)
    spectrum = np.fft.rfft(frames * window, n=N_FFT, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    fb = mel_filterbank(n_mels=n_mels)
    return power @ fb.T


def logmel(clip: AudioClip, n_frames: int = N_FRAMES, n_mels: int = N_MELS) -> np.ndarray:
    """Fixed-shape log-mel features (n_frames, n_mels), float32.

    Shorter clips are padded along time with the log floor (the value a
    zero-signal frame produces); longer ones keep their first n_frames.
    """
    feats = np.log(mel_energies(clip, n_mels=n_mels) + LOG_FLOOR)
    t = feats.shape[0]
    if t < n_frames:
        pad = np.full((n_frames - t, n_mels), np.log(LOG_FLOOR))
        feats = np.vstack([feats, pad])
    elif t > n_frames:
        feats = feats[:n_frames]
    return feats.astype(np.float32)


def normalize(features: np.ndarray, mean: float, std: float) -> np.ndarray:
    """Elementwise (x - mean) / std."""
    if std <= 0:
        raise ParameterError(f"std must be > 0, got {std}")
    return ((np.asarray(features) - mean) / std).astype(np.float32)


def running_stats(feature_iter) -> tuple[float, float, int]:
    """Dataset-level mean/std over an iterable of feature arrays.

    Returns (mean, std, cell_count); accumulation is float64.
    """
    n = 0
    total = 0.0
    total_sq = 0.0
    for feats in feature_iter:
        arr = np.asarray(feats, dtype=np.float64)
        n += arr.size
        total += arr.sum()
        total_sq += (arr * arr).sum()
    if n == 0:
        raise ParameterError("no features to compute statistics over")
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    return mean, float(np.sqrt(var)), n


# ---------------------------------------------------------------------------
# feature cache files
# ---------------------------------------------------------------------------


def write_feature_cache(path, features: np.ndarray) -> None:
    """Write a (T, n_mels) float32 matrix: magic, version, extents, LE payload."""
    feats = np.ascontiguousarray(features, dtype="<f4")
    if feats.ndim != 2:
        raise ParameterError(f"features must be 2-D, got shape {feats.shape}")
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<III", _CACHE_VERSION, feats.shape[0], feats.shape[1]))
        fh.write(feats.tobytes())


def read_feature_cache(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _CACHE_MAGIC:
        raise FormatError(f"{path}: not a feature cache (bad magic)")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated feature cache header")
    version, t, n_mels = struct.unpack("<III", raw[4:16])
    if version != _CACHE_VERSION:
        raise FormatError(f"{path}: unsupported cache version {version}")
    payload = raw[16:]
    if len(payload) != 4 * t * n_mels:
        raise FormatError(f"{path}: payload size mismatch for {t}x{n_mels}")
    return np.frombuffer(payload, dtype="<f4").reshape(t, n_mels).copy()


# ---------------------------------------------------------------------------
# estimator wrapper
# ---------------------------------------------------------------------------


class LogMelExtractor(BaseEstimator, TransformerMixin):
    """Transformer from clips to fixed-shape log-mel features.

    Accepts WAV paths, :class:`AudioClip` objects, or raw 16 kHz sample
    arrays.  ``fit`` learns dataset mean/std; ``transform`` standardizes
    with them (or returns raw log-mels before fitting when
    ``standardize=False``).
    """

    def __init__(self, n_frames: int = N_FRAMES, n_mels: int = N_MELS, standardize: bool = True):
        self.n_frames = n_frames
        self.n_mels = n_mels
        self.standardize = standardize

    def _extract(self, X) -> np.ndarray:
        out = np.empty((len(X), self.n_frames, self.n_mels), dtype=np.float32)
        for i, item in enumerate(X):
            if isinstance(item, AudioClip):
                clip = item
            elif isinstance(item, (str, Path)):
                clip = load_wav(item)
            else:
                clip = AudioClip(np.asarray(item, dtype=np.float32))
            out[i] = logmel(clip, n_frames=self.n_frames, n_mels=self.n_mels)
        return out

    def fit(self, X, y=None):
        feats = self._extract(X)
        self.mean_, self.std_, _ = running_stats([feats])
        return self

    def transform(self, X) -> np.ndarray:
        feats = self._extract(X)
        if not self.standardize:
            return feats
        check_is_fitted(self, "mean_")
        return normalize(feats, self.mean_, self.std_)
