"""Signal-processing primitives: STFT magnitude, log-mel, and the 4-band PQMF bank.

Tensor functions take ``(..., T)`` waveforms and stay differentiable, so the
same code computes training losses and preprocessing features.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.signal.windows import kaiser

from .config import AudioConfig, PqmfConfig

logger = logging.getLogger(__name__)


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class AudioSignal:
    """Mono waveform in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate: int = 24000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise SignalError(f"expected mono samples, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise SignalError("sample_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise SignalError("signal contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.samples.copy())


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, AudioSignal):
        return x.tensor()
    if isinstance(x, np.ndarray):
        return torch.from_numpy(np.ascontiguousarray(x))
    return x


def stft_magnitude(x, fft_size: int, hop_size: int, window_size: int) -> torch.Tensor:
    """Hann-windowed STFT magnitude.

    Frames are centered (reflect padding, or zero padding when the signal is
    shorter than half an FFT), so a length-``T`` input gives
    ``T // hop_size + 1`` frames.

    Args:
        x: waveform ``(..., T)`` as tensor, ndarray or AudioSignal.
        fft_size: FFT length; the window is zero-padded to it.
        hop_size: frame shift in samples.
        window_size: Hann window length.

    Returns:
        Tensor ``(..., frames, fft_size // 2 + 1)`` of nonnegative magnitudes.
    """
    x = _as_tensor(x)
    if fft_size < window_size:
        raise SignalError("fft_size must be >= window_size")
    if hop_size < 1:
        raise SignalError("hop_size must be >= 1")
    if x.shape[-1] == 0:
        raise SignalError("empty signal")
    if not torch.isfinite(x).all():
        raise SignalError("signal contains non-finite samples")
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    pad = fft_size // 2
    mode = "reflect" if flat.shape[-1] > pad else "constant"
    flat = F.pad(flat.unsqueeze(1), (pad, pad), mode=mode).squeeze(1)
    window = torch.hann_window(window_size, dtype=flat.dtype, device=flat.device)
    spec = torch.stft(
        flat, fft_size, hop_length=hop_size, win_length=window_size, window=window,
        center=False, return_complex=True,
    )
    # |z| of a complex tensor has a zero subgradient at z == 0, unlike sqrt(re^2 + im^2)
    mag = spec.abs().transpose(-1, -2)
    return mag.reshape(*lead, *mag.shape[-2:])


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=16)
def mel_filterbank(sample_rate: int, fft_size: int, num_mels: int, fmin: float = 0.0,
                   fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-spaced filters, shape ``(num_mels, fft_size // 2 + 1)``, unit peak."""
    fmax = sample_rate / 2 if fmax is None else fmax
    bins = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lower) / (center - lower)
    falling = (upper - bins[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_spectrogram(x, cfg: AudioConfig | None = None) -> torch.Tensor:
    """Natural-log mel spectrogram ``(..., frames, num_mels)``; differentiable in ``x``."""
    cfg = cfg or AudioConfig()
    if isinstance(x, AudioSignal) and x.sample_rate != cfg.sample_rate:
        raise SignalError(f"sample rate {x.sample_rate} != configured {cfg.sample_rate}")
    mag = stft_magnitude(x, cfg.fft_size, cfg.hop_size, cfg.window_size)
    fb = torch.tensor(
        mel_filterbank(cfg.sample_rate, cfg.fft_size, cfg.num_mels, cfg.fmin, cfg.fmax),
        dtype=mag.dtype, device=mag.device,
    )
    return torch.log(torch.clamp(mag @ fb.T, min=cfg.log_floor))


@dataclass(frozen=True, eq=False)
class PqmfBank:
    """Cosine-modulated pseudo-QMF bank.

    ``prototype`` has ``taps + 1`` coefficients (filter order ``taps``), so each
    filter delays by ``taps // 2`` samples and analysis plus synthesis by ``taps``.
    """

    num_bands: int
    taps: int
    cutoff_ratio: float
    kaiser_beta: float
    prototype: np.ndarray
    analysis_filters: np.ndarray
    synthesis_filters: np.ndarray

    @property
    def delay(self) -> int:
        return self.taps // 2


def design_prototype(taps: int, cutoff_ratio: float, beta: float) -> np.ndarray:
    n = np.arange(taps + 1) - taps / 2
    with np.errstate(invalid="ignore", divide="ignore"):
        ideal = np.sin(np.pi * cutoff_ratio * n) / (np.pi * n)
    ideal[taps // 2] = cutoff_ratio
    return ideal * kaiser(taps + 1, beta)


def cosine_modulation(num_bands: int, taps: int, k: int, sign: int) -> np.ndarray:
    n = np.arange(taps + 1) - taps / 2
    return 2.0 * np.cos((2 * k + 1) * np.pi / (2 * num_bands) * n + sign * (-1) ** k * np.pi / 4)


def design_pqmf(num_bands: int = 4, taps: int = 62, cutoff_ratio: float = 0.142,
                kaiser_beta: float = 9.0) -> PqmfBank:
    """Kaiser-window prototype lowpass, cosine-modulated into analysis/synthesis pairs."""
    if num_bands != 4:
        raise SignalError("only 4 bands are supported")
    if taps % 2:
        raise SignalError("taps must be even")
    if not 0.0 < cutoff_ratio < 0.5:
        raise SignalError("cutoff_ratio must lie in (0, 0.5)")
    proto = design_prototype(taps, cutoff_ratio, kaiser_beta)
    analysis = np.stack([proto * cosine_modulation(num_bands, taps, k, +1) for k in range(num_bands)])
    synthesis = np.stack([proto * cosine_modulation(num_bands, taps, k, -1) for k in range(num_bands)])
    for arr in (proto, analysis, synthesis):
        arr.setflags(write=False)
    return PqmfBank(num_bands, taps, cutoff_ratio, kaiser_beta, proto, analysis, synthesis)


def bank_from_config(cfg: PqmfConfig) -> PqmfBank:
    return design_pqmf(cfg.num_bands, cfg.taps, cfg.cutoff_ratio, cfg.kaiser_beta)


def _filters(arr: np.ndarray, like: torch.Tensor) -> torch.Tensor:
    # conv1d correlates; flipping makes it a true convolution with the designed taps
    return torch.as_tensor(arr[:, ::-1].copy(), dtype=like.dtype, device=like.device)


def pqmf_analysis(x, bank: PqmfBank) -> torch.Tensor:
    """Split ``(B, 1, T)`` (or ``(T,)``) into ``(B, 4, ceil(T / 4))`` sub-bands.

    Inputs whose length is not a multiple of 4 are zero-padded at the end.
    Filtering is delay-compensated, so sub-band ``m`` is centered on sample ``4m``.
    """
    x = _as_tensor(x)
    if x.dim() == 1:
        x = x[None, None]
    elif x.dim() == 2:
        x = x[:, None]
    rem = x.shape[-1] % bank.num_bands
    if rem:
        logger.debug("padding %d zeros before PQMF analysis", bank.num_bands - rem)
        x = F.pad(x, (0, bank.num_bands - rem))
    weight = _filters(bank.analysis_filters, x)[:, None, :]
    y = F.conv1d(F.pad(x, (bank.delay, bank.delay)), weight)
    return y[..., :: bank.num_bands]


def pqmf_synthesis(subbands, bank: PqmfBank) -> torch.Tensor:
    """Merge ``(B, 4, L)`` sub-bands into a ``(B, 1, 4L)`` waveform."""
    subbands = _as_tensor(subbands)
    if isinstance(subbands, (list, tuple)):
        lengths = {len(s) for s in subbands}
        if len(lengths) != 1:
            raise SignalError("sub-bands must have equal lengths")
        subbands = torch.stack([_as_tensor(s) for s in subbands])
    if subbands.dim() == 2:
        subbands = subbands[None]
    if subbands.shape[1] != bank.num_bands:
        raise SignalError(f"expected {bank.num_bands} sub-bands, got {subbands.shape[1]}")
    b, k, length = subbands.shape
    zeros = subbands.new_zeros(b, k, length, k - 1)
    upsampled = torch.cat([subbands[..., None] * k, zeros], dim=-1).reshape(b, k, length * k)
    weight = _filters(bank.synthesis_filters, upsampled)[None]
    return F.conv1d(F.pad(upsampled, (bank.delay, bank.delay)), weight)


class PQMF(torch.nn.Module):
    """Module wrapper holding a bank for use inside model graphs."""

    def __init__(self, bank: PqmfBank):
        super().__init__()
        self.bank = bank

    def analysis(self, x: torch.Tensor) -> torch.Tensor:
        return pqmf_analysis(x, self.bank)

    def synthesis(self, x: torch.Tensor) -> torch.Tensor:
        return pqmf_synthesis(x, self.bank)


def snr_db(reference: np.ndarray, estimate: np.ndarray) -> float:
    reference = np.asarray(reference, dtype=np.float64)
    err = reference - np.asarray(estimate, dtype=np.float64)
    return float(10.0 * np.log10(np.sum(reference**2) / max(np.sum(err**2), 1e-300)))
