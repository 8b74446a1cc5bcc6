"""Time the compiled and pure-Python kernel backends on realistic inputs.

    python3 benchmarks/bench_kernels.py [--seconds 3] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from emoguard import _kernels
from emoguard.audio_io import AudioClip, resample
from emoguard.dsp import TransformSpec, apply_transform, time_stretch


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=3.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    clip = AudioClip(0.3 * rng.standard_normal(int(24414 * args.seconds)), 24414)
    cases = {
        "resample 24414->22050": lambda: resample(clip, 22050).samples,
        "time_stretch x1.4": lambda: time_stretch(clip, 1.4).samples,
        "apply_transform (+4, 120)": lambda: apply_transform(clip, TransformSpec(4, 120)).samples,
    }
    backends = sorted(_kernels.BACKENDS)
    before = _kernels.backend_name()
    print(f"{args.seconds:g} s of audio at 24414 Hz, best of {args.repeat}")
    print(f"{'case':28s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}  max |diff|")
    try:
        for name, fn in cases.items():
            times, outs = {}, {}
            for b in backends:
                _kernels.use_backend(b)
                times[b], outs[b] = best_of(fn, args.repeat)
            row = f"{name:28s}" + "".join(f"{times[b] * 1e3:10.1f}ms" for b in backends)
            if len(backends) == 2:
                diff = float(np.max(np.abs(outs["compiled"] - outs["python"])))
                row += f"{times['python'] / times['compiled']:9.1f}x  {diff:.1e}"
            print(row)
    finally:
        _kernels.use_backend(before)


if __name__ == "__main__":
    main()
