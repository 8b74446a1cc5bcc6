"""Numpy implementations of the hot DSP loops.

These mirror ``_ckernels.pyx`` argument for argument; the compiled module is
preferred when it imports.
"""
from __future__ import annotations

import numpy as np

_CHUNK = 4096


def sinc_resample(x, up, down, n_out, cutoff, half_zc):
    """Windowed-sinc interpolation of ``x`` at positions ``m * down / up``.

    ``cutoff`` is in cycles per input sample. Each output's taps are
    renormalised to unit sum so DC passes exactly.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    n_in = x.shape[0]
    hw = half_zc / (2.0 * cutoff)
    K = int(np.ceil(hw)) + 1
    xp = np.concatenate([np.zeros(K), x, np.zeros(K + 1)])
    k = np.arange(-K, K + 1)
    out = np.empty(n_out)
    for start in range(0, n_out, _CHUNK):
        m = np.arange(start, min(start + _CHUNK, n_out), dtype=np.int64)
        num = m * down
        ipos = num // up
        frac = (num % up) / up
        tau = k[None, :] - frac[:, None]
        w = 2.0 * cutoff * np.sinc(2.0 * cutoff * tau)
        w *= np.where(np.abs(tau) < hw, 0.5 + 0.5 * np.cos(np.pi * tau / hw), 0.0)
        w /= w.sum(axis=1, keepdims=True)
        idx = ipos[:, None] + k[None, :] + K
        np.clip(idx, 0, n_in + 2 * K, out=idx)
        out[m] = np.einsum("ij,ij->i", w, xp[idx])
    return out


def _best_offset(nat, region, tol):
    n = nat.shape[0]
    num = np.correlate(region, nat, mode="valid")
    sq = np.concatenate([[0.0], np.cumsum(region * region)])
    energy = sq[n:] - sq[:-n]
    score = num / np.sqrt(np.maximum(energy, 0.0) + 1e-12)
    # candidates visited as 0, -1, +1, -2, +2, ... so ties resolve toward zero
    best = tol
    best_score = score[tol]
    for d in range(1, tol + 1):
        for j in (tol - d, tol + d):
            if score[j] > best_score:
                best_score = score[j]
                best = j
    return best - tol


def wsola(xp, window, positions, hs, tol):
    """Overlap-add frames of ``xp`` starting near ``positions``.

    Returns the un-normalised output and the summed window envelope.
    """
    xp = np.ascontiguousarray(xp, dtype=np.float64)
    N = window.shape[0]
    n_frames = positions.shape[0]
    y = np.zeros(n_frames * hs + N)
    wsum = np.zeros_like(y)
    prev = 0
    for k in range(n_frames):
        a = int(positions[k])
        if k == 0:
            delta = 0
        else:
            nat = xp[prev + hs: prev + hs + N]
            region = xp[a - tol: a + tol + N]
            delta = _best_offset(nat, region, tol)
        actual = a + delta
        o = k * hs
        y[o:o + N] += window * xp[actual:actual + N]
        wsum[o:o + N] += window
        prev = actual
    return y, wsum
