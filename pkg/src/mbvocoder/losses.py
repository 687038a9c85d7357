"""Training objectives.

Conventions: ``x`` is the ground truth and ``y`` the synthetic waveform, both
``(..., T)``. Per-timestep discriminator scores are mean-reduced before they
enter the least-squares terms.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import torch

from .dsp import mel_spectrogram, stft_magnitude

DEFAULT_RESOLUTIONS = ((1024, 120, 600), (2048, 240, 1200), (512, 50, 240))


class LossError(ValueError):
    pass


def _check_pair(x: torch.Tensor, y: torch.Tensor) -> None:
    if x.shape[-1] != y.shape[-1]:
        raise LossError(f"length mismatch: {x.shape[-1]} vs {y.shape[-1]}")


def spectral_convergence(x, y, res: Sequence[int]) -> torch.Tensor:
    """Frobenius norm of the magnitude difference, relative to the reference magnitude."""
    _check_pair(x, y)
    fft, hop, win = res
    x_mag = stft_magnitude(x, fft, hop, win)
    y_mag = stft_magnitude(y, fft, hop, win)
    den = torch.linalg.matrix_norm(x_mag)
    if torch.any(den == 0):
        raise LossError("reference signal has zero STFT magnitude")
    return (torch.linalg.matrix_norm(x_mag - y_mag) / den).mean()


def log_stft_magnitude_loss(x, y, res: Sequence[int], floor: float = 1e-7) -> torch.Tensor:
    """Mean absolute difference of natural-log magnitudes."""
    _check_pair(x, y)
    fft, hop, win = res
    x_log = torch.log(torch.clamp(stft_magnitude(x, fft, hop, win), min=floor))
    y_log = torch.log(torch.clamp(stft_magnitude(y, fft, hop, win), min=floor))
    return (x_log - y_log).abs().mean()


def multi_res_stft_loss(x, y, resolutions: Sequence[Sequence[int]] = DEFAULT_RESOLUTIONS,
                        floor: float = 1e-7) -> torch.Tensor:
    if not resolutions:
        raise LossError("at least one resolution is required")
    total = 0.0
    for res in resolutions:
        total = total + spectral_convergence(x, y, res) + log_stft_magnitude_loss(x, y, res, floor)
    return total / len(resolutions)


def singer_perceptual_loss(x, y, encoder, audio=None) -> torch.Tensor:
    """Sum over encoder LSTM layers of the L2 distance between hidden-state sequences.

    Gradients reach ``y`` through the mel transform and the encoder; the
    encoder's own parameters are left untouched.
    """
    if encoder is None:
        raise LossError("speaker encoder not loaded")
    _check_pair(x, y)
    with torch.no_grad():
        ref = encoder.hidden_states(mel_spectrogram(x, audio))
    syn = encoder.hidden_states(mel_spectrogram(y, audio))
    total = 0.0
    for a, b in zip(ref, syn):
        diff = (a - b).flatten(1)
        total = total + torch.linalg.vector_norm(diff, dim=1).mean()
    return total


def _mean(score) -> torch.Tensor:
    if not torch.is_tensor(score):
        score = torch.as_tensor(score, dtype=torch.float64)
    return score.mean()


def jcu_discriminator_loss(d_real, d_fake, ds_real, ds_fake) -> torch.Tensor:
    """Least-squares loss of both discriminators: real -> 1, fake -> 0."""
    uncond = (_mean(d_real) - 1) ** 2 + _mean(d_fake) ** 2
    cond = (_mean(ds_real) - 1) ** 2 + _mean(ds_fake) ** 2
    return 0.5 * uncond + 0.5 * cond


def jcu_generator_loss(d_fake, ds_fake) -> torch.Tensor:
    return 0.5 * (_mean(d_fake) - 1) ** 2 + 0.5 * (_mean(ds_fake) - 1) ** 2


@dataclass
class LossWeights:
    lambda_adv: float = 10.0
    aux_mix: float = 0.5

    def __post_init__(self):
        if self.lambda_adv <= 0:
            raise LossError("lambda_adv must be positive")


def generator_total_loss(l_spl, l_stft, l_adv_g=None, w: LossWeights | None = None,
                         adversarial: bool = True):
    """Auxiliary mix of perceptual and STFT losses plus the weighted adversarial term.

    With ``adversarial=False`` (pretraining) the adversarial term is dropped.
    """
    w = w or LossWeights()
    aux = w.aux_mix * (l_spl + l_stft)
    if not adversarial or l_adv_g is None:
        return aux
    return aux + w.lambda_adv * l_adv_g
