"""WAV reading/writing, downmix and band-limited resampling.

All processing happens on float64 arrays; 16-bit and 32-bit float are storage
formats only.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import (
    AudioIOError,
    InvalidClipError,
    MalformedWavError,
    UnsupportedEncodingError,
    UsageError,
    WavNotFoundError,
)

MIN_RATE_HZ = 8000
INT16_SCALE = 32768.0

# Resampler design: Hann-windowed sinc, 16 zero crossings per side, cutoff at
# 0.95 of the lower Nyquist frequency.
RESAMPLE_ZERO_CROSSINGS = 16
RESAMPLE_CUTOFF_FRACTION = 0.95

_FMT_PCM = 1
_FMT_FLOAT = 3
_FMT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Interleaved float64 samples plus their sample rate."""

    samples: np.ndarray
    sample_rate_hz: int
    channel_count: int = 1

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidClipError("samples must be a flat (interleaved) array")
        if self.channel_count < 1:
            raise InvalidClipError("channel_count must be >= 1")
        if samples.size % self.channel_count:
            raise InvalidClipError("sample count is not a multiple of channel_count")
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz < MIN_RATE_HZ:
            raise InvalidClipError(f"sample_rate_hz must be an integer >= {MIN_RATE_HZ}")
        if not np.all(np.isfinite(samples)):
            raise InvalidClipError("samples contain NaN or Inf")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    @property
    def n_frames(self) -> int:
        return self.samples.size // self.channel_count

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        return AudioClip(samples, self.sample_rate_hz, self.channel_count)


@dataclass(frozen=True)
class WavInfo:
    bits_per_sample: int
    encoding: str  # "int-pcm" | "float-pcm"
    duration_s: float
    sample_rate_hz: int
    channel_count: int
    n_frames: int


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = pos + 8
        if body + size > len(data):
            raise MalformedWavError(
                f"chunk {cid!r} claims {size} bytes but only {len(data) - body} remain"
            )
        yield cid, data[body:body + size]
        pos = body + size + (size & 1)


def read_wav(path) -> tuple[AudioClip, WavInfo]:
    """Read a 16-bit integer or 32-bit float RIFF/WAVE file."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise WavNotFoundError(f"no such file: {path}") from None
    except OSError as exc:
        raise AudioIOError(f"cannot read {path}: {exc}") from exc

    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    for cid, body in _iter_chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError(f"{path}: fmt chunk too short")
            fmt = body
        elif cid == b"data":
            payload = body
            break
        # LIST, fact, bext, ... are skipped
    if fmt is None:
        raise MalformedWavError(f"{path}: missing fmt chunk")
    if payload is None:
        raise MalformedWavError(f"{path}: missing data chunk")

    code, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if code == _FMT_EXTENSIBLE and len(fmt) >= 26:
        code = struct.unpack_from("<H", fmt, 24)[0]

    if code == _FMT_PCM and bits == 16:
        dtype, encoding = np.dtype("<i2"), "int-pcm"
    elif code == _FMT_FLOAT and bits == 32:
        dtype, encoding = np.dtype("<f4"), "float-pcm"
    else:
        raise UnsupportedEncodingError(
            f"{path}: format code {code} with {bits} bits is not supported "
            "(need 16-bit PCM or 32-bit float)"
        )
    if channels not in (1, 2):
        raise UnsupportedEncodingError(f"{path}: {channels} channels (need 1 or 2)")
    if block_align != channels * bits // 8:
        raise MalformedWavError(f"{path}: block_align {block_align} inconsistent with header")

    n_frames = len(payload) // block_align
    raw = np.frombuffer(payload, dtype=dtype, count=n_frames * channels)
    if encoding == "int-pcm":
        samples = raw.astype(np.float64) / INT16_SCALE
    else:
        samples = raw.astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise MalformedWavError(f"{path}: float data contains NaN or Inf")

    try:
        clip = AudioClip(samples, rate, channels)
    except InvalidClipError as exc:
        raise MalformedWavError(f"{path}: {exc}") from exc
    info = WavInfo(bits, encoding, n_frames / rate, rate, channels, n_frames)
    return clip, info


def encode_pcm16(samples: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1 - 2**-15] and round half away from zero."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0 - 2.0 ** -15) * INT16_SCALE
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype("<i2")


def wav_bytes(clip: AudioClip, bits: int = 16) -> bytes:
    """Serialise ``clip`` as a canonical 44-byte-header WAV file."""
    if bits == 16:
        code, payload = _FMT_PCM, encode_pcm16(clip.samples).tobytes()
    elif bits == 32:
        code, payload = _FMT_FLOAT, clip.samples.astype("<f4").tobytes()
    else:
        raise UsageError(f"bits must be 16 or 32, got {bits}")
    ch = clip.channel_count
    block = ch * bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, code, ch, clip.sample_rate_hz, clip.sample_rate_hz * block, block, bits,
        b"data", len(payload),
    )
    return header + payload


def write_wav(clip: AudioClip, path, bits: int = 16) -> None:
    blob = wav_bytes(clip, bits)
    try:
        with open(os.fspath(path), "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise AudioIOError(f"cannot write {path}: {exc}") from exc


def downmix_mono(clip: AudioClip) -> AudioClip:
    if clip.channel_count == 1:
        return clip
    if clip.channel_count != 2:
        raise InvalidClipError(f"cannot downmix {clip.channel_count} channels")
    frames = clip.samples.reshape(-1, 2)
    return AudioClip(0.5 * (frames[:, 0] + frames[:, 1]), clip.sample_rate_hz, 1)


def resample_array(x: np.ndarray, up: int, down: int, n_out: int | None = None) -> np.ndarray:
    """Resample by the rational factor ``up / down`` with a windowed-sinc kernel.

    Output sample ``m`` sits at input position ``m * down / up``.
    """
    if up <= 0 or down <= 0:
        raise ValueError("up and down must be positive")
    g = gcd(up, down)
    up, down = up // g, down // g
    x = np.asarray(x, dtype=np.float64)
    if n_out is None:
        n_out = int(np.floor(x.size * up / down + 0.5))
    if up == down and n_out == x.size:
        return x.copy()
    cutoff = RESAMPLE_CUTOFF_FRACTION * 0.5 * min(1.0, up / down)
    return _kernels.sinc_resample(x, up, down, n_out, cutoff, RESAMPLE_ZERO_CROSSINGS)


def resample(clip: AudioClip, target_rate_hz: int) -> AudioClip:
    if clip.channel_count != 1:
        raise InvalidClipError("resample needs a mono clip; call downmix_mono first")
    if target_rate_hz < MIN_RATE_HZ:
        raise InvalidClipError(f"target rate must be >= {MIN_RATE_HZ} Hz")
    if target_rate_hz == clip.sample_rate_hz:
        return clip
    out = resample_array(clip.samples, int(target_rate_hz), clip.sample_rate_hz)
    return AudioClip(out, int(target_rate_hz), 1)


def ratio_as_fraction(ratio: float, max_denominator: int = 10000) -> Fraction:
    return Fraction(ratio).limit_denominator(max_denominator)
