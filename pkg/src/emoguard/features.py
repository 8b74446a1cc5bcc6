"""MFCC front end producing fixed-shape matrices for the CNN attacker."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.fft import dct

from .audio_io import AudioClip, downmix_mono, resample
from .errors import ClipTooShortError, ConfigError, ShapeMismatchError

MIN_CLIP_S = 0.2


@dataclass(frozen=True)
class MfccConfig:
    target_rate_hz: int = 22050
    frame_len: int = 2048
    hop: int = 512
    n_mels: int = 40
    n_mfcc: int = 40
    fmin_hz: float = 20.0
    fmax_hz: float | None = None
    fixed_frames: int = 256
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.fmax_hz is None:
            object.__setattr__(self, "fmax_hz", 0.5 * self.target_rate_hz)
        if not 1 <= self.n_mfcc <= self.n_mels:
            raise ConfigError("need 1 <= n_mfcc <= n_mels")
        if not 0 <= self.fmin_hz < self.fmax_hz <= self.target_rate_hz / 2:
            raise ConfigError("need 0 <= fmin_hz < fmax_hz <= target_rate_hz/2")
        if not 1 <= self.hop <= self.frame_len:
            raise ConfigError("need 1 <= hop <= frame_len")
        if self.fixed_frames < 1 or self.log_floor <= 0:
            raise ConfigError("fixed_frames and log_floor must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MfccConfig":
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_mfcc, self.fixed_frames)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray
    fingerprint: str | None = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ShapeMismatchError("feature matrix must be 2-D")
        if not np.all(np.isfinite(v)):
            raise ShapeMismatchError("feature matrix contains non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: MfccConfig) -> np.ndarray:
    """Filter edges: n_mels + 2 points spaced uniformly in mel."""
    mels = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2)
    return mel_to_hz(mels)


@lru_cache(maxsize=8)
def _filterbank(cfg: MfccConfig) -> np.ndarray:
    edges = mel_center_frequencies(cfg)
    bins = np.arange(cfg.frame_len // 2 + 1) * cfg.target_rate_hz / cfg.frame_len
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lo) / (mid - lo)
    falling = (hi - bins[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(~(fb > 0).any(axis=1))
    if empty.size:
        raise ConfigError(
            f"{empty.size} mel filters have no FFT bin inside them; "
            "lower n_mels or raise frame_len"
        )
    fb.setflags(write=False)
    return fb


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, frame_len // 2 + 1)."""
    return _filterbank(cfg)


def stft_power(clip: AudioClip, cfg: MfccConfig) -> np.ndarray:
    """Power spectrogram, shape (frame_len // 2 + 1, n_frames)."""
    x = clip.samples
    if x.size < cfg.frame_len:
        raise ClipTooShortError(f"clip has {x.size} samples, need at least {cfg.frame_len}")
    n = cfg.frame_len
    n_frames = 1 + (x.size - n) // cfg.hop
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[:: cfg.hop][:n_frames]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    spec = np.fft.rfft(frames * window, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def normalize_and_fix_length(raw: np.ndarray, cfg: MfccConfig) -> FeatureMatrix:
    """Standardise each coefficient over time, then pad or centre-crop to fixed_frames."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] < 1:
        raise ShapeMismatchError("expected a (coefficients, frames) matrix with >= 1 frame")
    mean = raw.mean(axis=1, keepdims=True)
    std = raw.std(axis=1, keepdims=True)
    std[std < 1e-8] = 1.0
    z = (raw - mean) / std
    T, F = z.shape[1], cfg.fixed_frames
    if T >= F:
        start = (T - F) // 2
        out = z[:, start:start + F]
    else:
        out = np.zeros((z.shape[0], F))
        out[:, :T] = z
    return FeatureMatrix(np.ascontiguousarray(out), cfg.fingerprint())


def raw_mfcc(clip: AudioClip, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """Cepstra before standardisation, shape (n_mfcc, n_frames)."""
    clip = downmix_mono(clip)
    if clip.duration_s < MIN_CLIP_S:
        raise ClipTooShortError(f"clip is {clip.duration_s:.3f} s, need >= {MIN_CLIP_S} s")
    clip = resample(clip, cfg.target_rate_hz)
    power = stft_power(clip, cfg)
    mel = mel_filterbank(cfg) @ power
    logmel = np.log(np.maximum(mel, cfg.log_floor))
    return dct(logmel, type=2, norm="ortho", axis=0)[: cfg.n_mfcc]


def mfcc(clip: AudioClip, cfg: MfccConfig = MfccConfig()) -> FeatureMatrix:
    return normalize_and_fix_length(raw_mfcc(clip, cfg), cfg)
