"""Compare the numba and numpy paths of the data-pipeline kernels.

Usage: python3 benchmarks/bench_kernels.py [--seconds 30] [--repeats 5]
"""

import argparse
import time

import numpy as np

from mbvocoder import _kernels
from mbvocoder.data import extract_f0
from mbvocoder.dsp import AudioSignal


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seconds", type=float, default=30.0, help="signal length")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    sr = 24000
    rng = np.random.default_rng(0)
    t = np.arange(int(args.seconds * sr)) / sr
    x = (0.4 * np.sin(2 * np.pi * 220 * t) + 0.05 * rng.standard_normal(len(t))).astype(np.float32)
    sig = AudioSignal(x, sr)

    if not _kernels.HAVE_NUMBA:
        print("numba unavailable (or MBVOCODER_DISABLE_JIT set); timing the numpy path only")

    cases = {
        "frame_rms 10ms": lambda jit: _kernels.frame_rms(x, 240, use_jit=jit),
        "extract_f0": lambda jit: extract_f0(sig, use_jit=jit),
    }
    print(f"{'kernel':<16}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
    for name, fn in cases.items():
        t_np = best_of(lambda: fn(False), args.repeats)
        if _kernels.HAVE_NUMBA:
            fn(True)  # compile outside the timed region
            t_nb = best_of(lambda: fn(True), args.repeats)
            print(f"{name:<16}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}x")
        else:
            print(f"{name:<16}{t_np:>12.4f}{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
