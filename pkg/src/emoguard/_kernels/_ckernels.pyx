# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the resampler and WSOLA inner loops."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, ceil, fabs, M_PI

cnp.import_array()


cdef inline void _fill_taps(double* taps, double frac, Py_ssize_t K, double hw,
                            double cutoff) noexcept nogil:
    # taps[j + K] for j in [-K, K]; taps outside the window are exactly 0
    cdef Py_ssize_t j
    cdef double tau, arg, w
    for j in range(-K, K + 1):
        tau = j - frac
        if fabs(tau) >= hw:
            taps[j + K] = 0.0
            continue
        arg = 2.0 * cutoff * tau
        if arg == 0.0:
            w = 2.0 * cutoff
        else:
            w = 2.0 * cutoff * sin(M_PI * arg) / (M_PI * arg)
        taps[j + K] = w * (0.5 + 0.5 * cos(M_PI * tau / hw))


def sinc_resample(x, long long up, long long down, Py_ssize_t n_out,
                  double cutoff, int half_zc):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n_in = xv.shape[0]
    cdef double hw = half_zc / (2.0 * cutoff)
    cdef Py_ssize_t K = <Py_ssize_t>ceil(hw) + 1
    cdef Py_ssize_t width = 2 * K + 1
    out = np.empty(n_out, dtype=np.float64)
    cdef double[::1] ov = out
    # one row of taps per phase when that is cheaper than per-output evaluation
    cdef bint use_table = up <= n_out
    table = np.empty((up if use_table else 1, width), dtype=np.float64)
    cdef double[:, ::1] tv = table
    scratch = np.empty(width, dtype=np.float64)
    cdef double[::1] sc = scratch
    cdef Py_ssize_t m, j, idx, phase
    cdef long long num, ipos
    cdef double wsum, acc, w
    cdef double* taps
    with nogil:
        if use_table:
            for phase in range(up):
                _fill_taps(&tv[phase, 0], <double>phase / <double>up, K, hw, cutoff)
        for m in range(n_out):
            num = m * down
            ipos = num // up
            phase = num % up
            if use_table:
                taps = &tv[phase, 0]
            else:
                _fill_taps(&sc[0], <double>phase / <double>up, K, hw, cutoff)
                taps = &sc[0]
            wsum = 0.0
            acc = 0.0
            for j in range(width):
                w = taps[j]  # taps outside the window are 0.0, which adds nothing
                wsum += w
                idx = ipos + j - K
                if 0 <= idx < n_in:
                    acc += w * xv[idx]
            ov[m] = acc / wsum
    return out


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= n:
        s0 += a[i] * b[i]
        s1 += a[i + 1] * b[i + 1]
        s2 += a[i + 2] * b[i + 2]
        s3 += a[i + 3] * b[i + 3]
        i += 4
    while i < n:
        s0 += a[i] * b[i]
        i += 1
    return (s0 + s1) + (s2 + s3)


def wsola(xp, window, positions, Py_ssize_t hs, Py_ssize_t tol):
    cdef const double[::1] xv = np.ascontiguousarray(xp, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(window, dtype=np.float64)
    cdef const long long[::1] pv = np.ascontiguousarray(positions, dtype=np.int64)
    cdef Py_ssize_t N = wv.shape[0]
    cdef Py_ssize_t n_frames = pv.shape[0]
    cdef Py_ssize_t n_cand = 2 * tol + 1
    y = np.zeros(n_frames * hs + N, dtype=np.float64)
    wsum = np.zeros(n_frames * hs + N, dtype=np.float64)
    scores = np.empty(n_cand, dtype=np.float64)
    cdef double[::1] yv = y
    cdef double[::1] sv = wsum
    cdef double[::1] scv = scores
    cdef Py_ssize_t k, i, j, d, o, best, prev = 0, a, actual, nat, lo
    cdef double en, best_score, v_out, v_in
    with nogil:
        for k in range(n_frames):
            a = pv[k]
            best = 0
            if k > 0:
                nat = prev + hs
                lo = a - tol
                # energy of each candidate window, updated by sliding one sample
                en = _dot(&xv[lo], &xv[lo], N)
                for j in range(n_cand):
                    if j > 0:
                        v_out = xv[lo + j - 1]
                        v_in = xv[lo + j + N - 1]
                        en += v_in * v_in - v_out * v_out
                    scv[j] = _dot(&xv[nat], &xv[lo + j], N) / sqrt((en if en > 0.0 else 0.0) + 1e-12)
                # candidates visited as 0, -1, +1, -2, +2, ...; strict improvement only
                best_score = scv[tol]
                for d in range(1, tol + 1):
                    if scv[tol - d] > best_score:
                        best_score = scv[tol - d]
                        best = -d
                    if scv[tol + d] > best_score:
                        best_score = scv[tol + d]
                        best = d
            actual = a + best
            o = k * hs
            for i in range(N):
                yv[o + i] += wv[i] * xv[actual + i]
                sv[o + i] += wv[i]
            prev = actual
    return y, wsum
