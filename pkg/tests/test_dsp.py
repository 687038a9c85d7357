import math

import numpy as np
import pytest
import torch

from mbvocoder.config import AudioConfig
from mbvocoder.dsp import (
    AudioSignal,
    SignalError,
    design_pqmf,
    mel_filterbank,
    mel_spectrogram,
    pqmf_analysis,
    pqmf_synthesis,
    snr_db,
    stft_magnitude,
)

SR = 24000


def dft_magnitude_oracle(x, n_fft, hop, win):
    """Dense-DFT reference: centered reflect padding, periodic Hann centered in the FFT frame."""
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect")
    n = np.arange(win)
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * n / win)
    window = np.zeros(n_fft)
    left = (n_fft - win) // 2
    window[left : left + win] = hann
    frames = 1 + (len(xp) - n_fft) // hop
    k = np.arange(n_fft // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * np.arange(n_fft)[None] / n_fft)
    out = np.empty((frames, n_fft // 2 + 1))
    for f in range(frames):
        out[f] = np.abs(basis @ (xp[f * hop : f * hop + n_fft] * window))
    return out


def mel_filterbank_oracle(sr, n_fft, n_mels, fmin, fmax):
    def to_mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def to_hz(m):
        return 700.0 * (10 ** (m / 2595.0) - 1.0)

    lo, hi = to_mel(fmin), to_mel(fmax)
    edges = [to_hz(lo + (hi - lo) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        a, c, b = edges[m], edges[m + 1], edges[m + 2]
        for j in range(n_fft // 2 + 1):
            f = j * sr / n_fft
            if a < f <= c:
                fb[m, j] = (f - a) / (c - a)
            elif c < f < b:
                fb[m, j] = (b - f) / (b - c)
    return fb


@pytest.mark.parametrize("n_fft,hop,win", [(512, 128, 512), (1024, 120, 600), (64, 16, 40)])
def test_stft_matches_dense_dft(rng, n_fft, hop, win):
    x = rng.standard_normal(3000)
    got = stft_magnitude(torch.from_numpy(x), n_fft, hop, win).numpy()
    ref = dft_magnitude_oracle(x, n_fft, hop, win)
    assert got.shape == ref.shape == (3000 // hop + 1, n_fft // 2 + 1)
    np.testing.assert_allclose(got, ref, atol=1e-9, rtol=1e-9)


def test_stft_batch_shape_and_short_input():
    mag = stft_magnitude(torch.zeros(2, 3, 1000), 512, 128, 512)
    assert mag.shape == (2, 3, 8, 257)
    # shorter than half an FFT falls back to zero padding instead of failing
    assert stft_magnitude(torch.ones(100), 512, 128, 512).shape == (1, 257)


@pytest.mark.parametrize("bad", [torch.zeros(0), torch.tensor([0.0, float("nan")])])
def test_stft_rejects_bad_input(bad):
    with pytest.raises(SignalError):
        stft_magnitude(bad, 512, 128, 512)


def test_mel_filterbank_matches_oracle():
    got = mel_filterbank(SR, 512, 80, 0.0, None)
    ref = mel_filterbank_oracle(SR, 512, 80, 0.0, SR / 2)
    assert got.shape == (80, 257)
    np.testing.assert_allclose(got, ref, atol=1e-5)


def test_mel_spectrogram_matches_oracle(rng):
    x = 0.3 * rng.standard_normal(SR // 2)
    got = mel_spectrogram(torch.from_numpy(x)).numpy()
    mag = dft_magnitude_oracle(x, 512, 128, 512)
    ref = np.log(np.maximum(mag @ mel_filterbank_oracle(SR, 512, 80, 0.0, SR / 2).T, 1e-5))
    assert got.shape == (SR // 2 // 128 + 1, 80)
    np.testing.assert_allclose(got, ref, atol=1e-5)


def test_mel_floor_and_scaling():
    cfg = AudioConfig()
    silent = mel_spectrogram(torch.zeros(SR), cfg)
    assert torch.allclose(silent, torch.full_like(silent, math.log(1e-5)))
    x = torch.randn(SR, dtype=torch.float64)
    a, b = mel_spectrogram(x, cfg), mel_spectrogram(2 * x, cfg)
    loud = a > math.log(1e-3)
    assert torch.allclose((b - a)[loud], torch.full_like(a[loud], math.log(2)), atol=1e-9)


def test_mel_rejects_wrong_rate():
    with pytest.raises(SignalError):
        mel_spectrogram(AudioSignal(np.zeros(1000, np.float32), 16000))


def test_audio_signal_validation():
    sig = AudioSignal(np.zeros(SR, np.float64), SR)
    assert sig.samples.dtype == np.float32 and sig.duration == 1.0
    with pytest.raises(SignalError):
        AudioSignal(np.zeros((2, 10)), SR)
    with pytest.raises(SignalError):
        AudioSignal(np.array([np.inf]), SR)


# --- PQMF ------------------------------------------------------------------

def test_pqmf_filters_follow_modulation_formula():
    bank = design_pqmf()
    from scipy.signal.windows import kaiser

    n = np.arange(63) - 31
    ideal = np.where(n == 0, 0.142, np.sin(np.pi * 0.142 * n) / (np.pi * np.where(n == 0, 1, n)))
    proto = ideal * kaiser(63, 9.0)
    np.testing.assert_allclose(bank.prototype, proto, atol=1e-15)
    for k in range(4):
        phase = (-1) ** k * np.pi / 4
        arg = (2 * k + 1) * np.pi / 8 * n
        np.testing.assert_allclose(bank.analysis_filters[k], 2 * proto * np.cos(arg + phase), atol=1e-15)
        np.testing.assert_allclose(bank.synthesis_filters[k], 2 * proto * np.cos(arg - phase), atol=1e-15)


def test_pqmf_analysis_matches_numpy_convolution(rng):
    bank = design_pqmf()
    x = rng.standard_normal(1000)
    got = pqmf_analysis(torch.from_numpy(x), bank).numpy()[0]
    for k in range(4):
        full = np.convolve(x, bank.analysis_filters[k])  # length 1000 + 62
        ref = full[bank.delay : bank.delay + 1000][::4]
        np.testing.assert_allclose(got[k], ref, atol=1e-12)


def test_pqmf_synthesis_matches_numpy_convolution(rng):
    bank = design_pqmf()
    sub = rng.standard_normal((4, 250))
    got = pqmf_synthesis(torch.from_numpy(sub), bank).numpy()[0, 0]
    ref = np.zeros(1000)
    for k in range(4):
        up = np.zeros(1000)
        up[::4] = 4 * sub[k]
        ref += np.convolve(up, bank.synthesis_filters[k])[bank.delay : bank.delay + 1000]
    np.testing.assert_allclose(got, ref, atol=1e-12)


def _sweep(seconds=1.0, f0=100.0, f1=10000.0):
    t = np.arange(int(SR * seconds)) / SR
    k = np.log(f1 / f0) / seconds
    return 0.5 * np.sin(2 * np.pi * f0 * (np.exp(k * t) - 1) / k)


@pytest.mark.parametrize("kind", ["noise", "sweep"])
def test_pqmf_round_trip_snr(rng, kind):
    bank = design_pqmf()
    x = rng.standard_normal(SR) * 0.3 if kind == "noise" else _sweep()
    y = pqmf_synthesis(pqmf_analysis(torch.from_numpy(x), bank), bank).numpy()[0, 0]
    assert y.shape == x.shape
    assert snr_db(x, y) >= 40.0
    # away from the edges the reconstruction is limited by the prototype only
    assert snr_db(x[200:-200], y[200:-200]) >= 55.0


def test_pqmf_round_trip_scaling_and_linearity(rng):
    bank = design_pqmf()
    x = torch.from_numpy(rng.standard_normal(4096))
    s1 = pqmf_analysis(x, bank)
    torch.testing.assert_close(pqmf_analysis(3 * x, bank), 3 * s1)
    y = pqmf_synthesis(s1, bank)
    torch.testing.assert_close(pqmf_synthesis(-0.5 * s1, bank), -0.5 * y)


@pytest.mark.parametrize("band", range(4))
def test_pqmf_band_selectivity(band):
    bank = design_pqmf()
    center = (band + 0.5) * SR / 8
    t = np.arange(SR) / SR
    x = np.sin(2 * np.pi * center * t)
    sub = pqmf_analysis(torch.from_numpy(x), bank).numpy()[0][:, 100:-100]
    energy = (sub**2).sum(axis=1)
    assert energy[band] / energy.sum() >= 0.95


def test_pqmf_shapes_and_errors():
    bank = design_pqmf()
    assert pqmf_analysis(torch.zeros(2, 1, 1001), bank).shape == (2, 4, 251)
    assert pqmf_synthesis(torch.zeros(2, 4, 10), bank).shape == (2, 1, 40)
    with pytest.raises(SignalError):
        pqmf_synthesis(torch.zeros(1, 3, 10), bank)
    with pytest.raises(SignalError):
        pqmf_synthesis([torch.zeros(10), torch.zeros(10), torch.zeros(10), torch.zeros(9)], bank)
    with pytest.raises(SignalError):
        design_pqmf(num_bands=8)
    with pytest.raises(SignalError):
        design_pqmf(taps=61)
