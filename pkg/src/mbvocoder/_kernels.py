"""Hot inner loops of the data pipeline.

Each kernel has a numba ``@njit`` version and a pure-numpy version with the
same signature. Set ``MBVOCODER_DISABLE_JIT=1`` (or run without numba
installed) to select the numpy path; ``benchmarks/bench_kernels.py`` compares
both.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("MBVOCODER_DISABLE_JIT", "0").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # noqa: D103
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def frame_rms_numpy(x: np.ndarray, frame: int) -> np.ndarray:
    n = len(x) // frame
    tail = len(x) - n * frame
    blocks = x[: n * frame].reshape(n, frame).astype(np.float64)
    rms = np.sqrt(np.mean(blocks**2, axis=1))
    if tail:
        rms = np.append(rms, np.sqrt(np.mean(x[n * frame :].astype(np.float64) ** 2)))
    return rms


@njit(cache=True)
def _frame_rms_jit(x, frame):
    n = (len(x) + frame - 1) // frame
    out = np.empty(n)
    for i in range(n):
        start = i * frame
        stop = min(start + frame, len(x))
        acc = 0.0
        for j in range(start, stop):
            acc += x[j] * x[j]
        out[i] = np.sqrt(acc / (stop - start))
    return out


def nccf_numpy(x: np.ndarray, starts: np.ndarray, window: int, min_lag: int, max_lag: int) -> np.ndarray:
    """Normalized cross-correlation per frame and lag.

    ``out[f, lag - min_lag]`` correlates ``x[s:s+window]`` with
    ``x[s+lag:s+lag+window]`` for ``s = starts[f]``. ``x`` must extend at
    least ``max_lag + window`` past every start.
    """
    x = x.astype(np.float64)
    lags = np.arange(min_lag, max_lag + 1)
    out = np.zeros((len(starts), len(lags)))
    span = window + max_lag
    for f, s in enumerate(starts):
        seg = x[s : s + span]
        ref = seg[:window]
        e0 = ref @ ref
        if e0 <= 0.0:
            continue
        views = np.lib.stride_tricks.sliding_window_view(seg, window)[lags]
        num = views @ ref
        energy = np.einsum("ij,ij->i", views, views)
        den = np.sqrt(e0 * energy)
        out[f] = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    return out


@njit(cache=True)
def _nccf_jit(x, starts, window, min_lag, max_lag):
    nlag = max_lag - min_lag + 1
    out = np.zeros((len(starts), nlag))
    for f in range(len(starts)):
        s = starts[f]
        e0 = 0.0
        for n in range(window):
            e0 += x[s + n] * x[s + n]
        if e0 <= 0.0:
            continue
        # energy of the lagged window, updated incrementally
        e1 = 0.0
        base = s + min_lag
        for n in range(window):
            e1 += x[base + n] * x[base + n]
        for k in range(nlag):
            lag = min_lag + k
            if k > 0:
                old = x[s + lag - 1]
                new = x[s + lag + window - 1]
                e1 += new * new - old * old
                if e1 < 0.0:
                    e1 = 0.0
            num = 0.0
            for n in range(window):
                num += x[s + n] * x[s + lag + n]
            den = np.sqrt(e0 * e1)
            if den > 0.0:
                out[f, k] = num / den
    return out


def frame_rms(x: np.ndarray, frame: int, use_jit: bool | None = None) -> np.ndarray:
    """RMS of consecutive ``frame``-sample blocks; a short tail forms a final block."""
    if use_jit is None:
        use_jit = HAVE_NUMBA
    if use_jit and HAVE_NUMBA:
        return _frame_rms_jit(np.ascontiguousarray(x, dtype=np.float64), int(frame))
    return frame_rms_numpy(x, frame)


def nccf(x, starts, window, min_lag, max_lag, use_jit: bool | None = None) -> np.ndarray:
    if use_jit is None:
        use_jit = HAVE_NUMBA
    starts = np.asarray(starts, dtype=np.int64)
    if use_jit and HAVE_NUMBA:
        return _nccf_jit(
            np.ascontiguousarray(x, dtype=np.float64), starts, int(window), int(min_lag), int(max_lag)
        )
    return nccf_numpy(x, starts, window, min_lag, max_lag)
