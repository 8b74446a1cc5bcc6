"""Pitch shifting and tempo change: the obfuscation transform.

Pitch shift = resampling (changes pitch and duration together) followed by a
WSOLA time-scale modification that puts the duration where the tempo setting
wants it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .audio_io import AudioClip, ratio_as_fraction, resample_array
from .errors import ClipTooShortError, ConfigError, InvalidClipError

PITCH_LIMIT = 24.0
TEMPO_MIN, TEMPO_MAX = 25.0, 400.0
SPEED_MIN, SPEED_MAX = 0.25, 4.0


@dataclass(frozen=True)
class TransformSpec:
    pitch_semitones: float = 0.0
    tempo_percent: float = 100.0

    def __post_init__(self):
        p, t = float(self.pitch_semitones), float(self.tempo_percent)
        if not math.isfinite(p) or abs(p) > PITCH_LIMIT:
            raise ConfigError(f"pitch must be within [-{PITCH_LIMIT:g}, {PITCH_LIMIT:g}] semitones")
        if not math.isfinite(t) or not TEMPO_MIN < t <= TEMPO_MAX:
            raise ConfigError(f"tempo must be within ({TEMPO_MIN:g}, {TEMPO_MAX:g}] percent")
        # normalise -0.0 so identity checks and CSV output are stable
        object.__setattr__(self, "pitch_semitones", p + 0.0)
        object.__setattr__(self, "tempo_percent", t)

    @property
    def is_identity(self) -> bool:
        return self.pitch_semitones == 0.0 and self.tempo_percent == 100.0


IDENTITY = TransformSpec(0.0, 100.0)


@dataclass(frozen=True)
class WsolaConfig:
    frame_ms: float = 30.0
    synthesis_hop_fraction: float = 0.5
    search_ms: float = 7.5

    def __post_init__(self):
        if self.frame_ms <= 0:
            raise ConfigError("frame_ms must be positive")
        if not 0 < self.synthesis_hop_fraction <= 0.5:
            raise ConfigError("synthesis_hop_fraction must be in (0, 0.5]")
        if not 0 <= self.search_ms < self.frame_ms:
            raise ConfigError("search_ms must be in [0, frame_ms)")

    def frame_samples(self, rate: int) -> tuple[int, int, int]:
        """(frame length, synthesis hop, search tolerance) in samples."""
        n = int(round(self.frame_ms * 1e-3 * rate))
        n += n % 2
        hs = max(1, int(round(n * self.synthesis_hop_fraction)))
        tol = int(round(self.search_ms * 1e-3 * rate))
        return n, hs, tol


def semitone_to_ratio(s: float) -> float:
    return 2.0 ** (s / 12.0)


def tempo_to_speed(tempo_percent: float) -> float:
    if not tempo_percent > 0:
        raise ConfigError("tempo_percent must be positive")
    return tempo_percent / 100.0


def _require_mono(clip: AudioClip) -> None:
    if clip.channel_count != 1:
        raise InvalidClipError("expected a mono clip")


def _hann(n: int) -> np.ndarray:
    # periodic: overlapping copies at hop n/2 sum to exactly 1
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def time_stretch(clip: AudioClip, speed: float, cfg: WsolaConfig = WsolaConfig()) -> AudioClip:
    """Change duration by ``1/speed`` without changing pitch (WSOLA)."""
    _require_mono(clip)
    if not SPEED_MIN <= speed <= SPEED_MAX:
        raise ConfigError(f"speed must be within [{SPEED_MIN}, {SPEED_MAX}], got {speed}")
    if speed == 1.0:
        return clip
    N, hs, tol = cfg.frame_samples(clip.sample_rate_hz)
    x = clip.samples
    if x.size < N:
        raise ClipTooShortError(f"clip has {x.size} samples, shorter than one {N}-sample frame")

    n_out = int(np.floor(x.size / speed + 0.5))
    ha = hs * speed
    n_frames = int(np.ceil((n_out + N // 2) / hs)) + 1
    # frame k is centred on input time k*ha; the front pad absorbs the half
    # frame plus the search margin
    front = N // 2 + tol
    positions = tol + np.floor(np.arange(n_frames) * ha + 0.5).astype(np.int64)
    need = int(positions[-1]) + tol + N + hs + N
    back = max(0, need - front - x.size)
    xp = np.concatenate([np.zeros(front), x, np.zeros(back)])

    y, wsum = _kernels.wsola(xp, _hann(N), positions, hs, tol)
    np.divide(y, wsum, out=y, where=wsum > 1e-8)
    return clip.with_samples(y[N // 2:N // 2 + n_out])


def rate_change(clip: AudioClip, ratio: float) -> AudioClip:
    """Multiply pitch by ``ratio`` and divide duration by it (resample + relabel)."""
    _require_mono(clip)
    if not SPEED_MIN <= ratio <= SPEED_MAX:
        raise ConfigError(f"ratio must be within [{SPEED_MIN}, {SPEED_MAX}], got {ratio}")
    if ratio == 1.0:
        return clip
    frac = ratio_as_fraction(1.0 / ratio)
    n_out = int(np.floor(clip.samples.size / ratio + 0.5))
    return clip.with_samples(resample_array(clip.samples, frac.numerator, frac.denominator, n_out))


def apply_transform(clip: AudioClip, spec: TransformSpec, cfg: WsolaConfig = WsolaConfig()) -> AudioClip:
    _require_mono(clip)
    if spec.is_identity:
        return clip
    p = semitone_to_ratio(spec.pitch_semitones)
    r = tempo_to_speed(spec.tempo_percent)
    return time_stretch(rate_change(clip, p), r / p, cfg)


def invert_spec(spec: TransformSpec) -> TransformSpec:
    return TransformSpec(-spec.pitch_semitones, 10000.0 / spec.tempo_percent)


DOMINANT_SEGMENT = 8192
DOMINANT_NFFT = 4 * DOMINANT_SEGMENT
_MIN_DOMINANT = 2048


def dominant_frequency(clip: AudioClip) -> float:
    """Peak bin of a Hann-windowed, 4x zero-padded FFT of the middle 8192 samples."""
    _require_mono(clip)
    x = clip.samples
    if x.size < _MIN_DOMINANT:
        raise ClipTooShortError(f"need at least {_MIN_DOMINANT} samples, got {x.size}")
    n = min(DOMINANT_SEGMENT, x.size)
    start = (x.size - n) // 2
    seg = x[start:start + n] * np.hanning(n)
    spectrum = np.abs(np.fft.rfft(seg, DOMINANT_NFFT))
    return float(np.argmax(spectrum)) * clip.sample_rate_hz / DOMINANT_NFFT
