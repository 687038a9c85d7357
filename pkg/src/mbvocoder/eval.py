"""Objective evaluation: embedding cosine similarity, spectral distance, real-time factor."""

from __future__ import annotations

import contextlib
import logging
import platform
import statistics
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import AudioConfig
from .data import load_wav
from .losses import DEFAULT_RESOLUTIONS, multi_res_stft_loss
from .speaker_encoder import SpeakerEncoder, embed_signal

logger = logging.getLogger(__name__)


class EvalError(ValueError):
    pass


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise EvalError("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class SimilarityReport:
    mean: float
    scores: list[float]
    errors: dict[str, str] = field(default_factory=dict)

    def as_text(self) -> str:
        lines = [f"speaker similarity over {len(self.scores)} pairs: {self.mean:.5f}"]
        lines += [f"error {k}: {v}" for k, v in sorted(self.errors.items())]
        lines += ["", "[eval]", f"pairs={len(self.scores)}", f"failed={len(self.errors)}",
                  f"cosine_similarity={self.mean:.6f}"]
        return "\n".join(lines) + "\n"


def eval_similarity(pairs: Sequence[tuple[str | Path, str | Path]], encoder: SpeakerEncoder,
                    audio: AudioConfig | None = None) -> SimilarityReport:
    """Mean cosine similarity between embeddings of (reference, synthetic) WAV pairs."""
    if not pairs:
        raise EvalError("no pairs to evaluate")
    audio = audio or AudioConfig()
    scores, errors = [], {}
    for ref, syn in pairs:
        try:
            a = embed_signal(load_wav(ref, audio.sample_rate).samples, encoder, audio)
            b = embed_signal(load_wav(syn, audio.sample_rate).samples, encoder, audio)
            scores.append(cosine_similarity(a, b))
        except Exception as exc:
            errors[f"{ref}|{syn}"] = f"{type(exc).__name__}: {exc}"
            logger.warning("pair %s / %s failed: %s", ref, syn, exc)
    if not scores:
        raise EvalError("every pair failed")
    return SimilarityReport(float(np.mean(scores)), scores, errors)


def spectral_distance(reference: np.ndarray, synthetic: np.ndarray,
                      resolutions=DEFAULT_RESOLUTIONS) -> float:
    """Multi-resolution STFT distance, the objective quality proxy."""
    n = min(len(reference), len(synthetic))
    with torch.no_grad():
        return float(multi_res_stft_loss(torch.as_tensor(reference[:n]), torch.as_tensor(synthetic[:n]),
                                         resolutions))


@dataclass
class RtfReport:
    synthesis_seconds: float
    audio_seconds: float
    trials: int
    warmup: int
    device: str
    trial_seconds: list[float] = field(default_factory=list)

    @property
    def rtf(self) -> float:
        return self.synthesis_seconds / self.audio_seconds

    def as_text(self) -> str:
        return (
            f"rtf {self.rtf:.6f} on {self.device} "
            f"({self.synthesis_seconds:.4f} s for {self.audio_seconds:.3f} s audio, "
            f"median of {self.trials} trials after {self.warmup} warmup)\n"
            "\n[bench]\n"
            f"rtf={self.rtf:.6f}\nsynthesis_seconds={self.synthesis_seconds:.6f}\n"
            f"audio_seconds={self.audio_seconds:.6f}\ntrials={self.trials}\nwarmup={self.warmup}\n"
            f"device={self.device}\n"
        )


def device_descriptor() -> str:
    return f"cpu:{platform.processor() or platform.machine()}:threads=1:torch-{torch.__version__}"


@contextlib.contextmanager
def single_thread():
    before = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(before)


def rtf_from_times(times: Sequence[float], audio_seconds: float, warmup: int = 0) -> RtfReport:
    if len(times) < 3:
        raise EvalError("at least 3 timed trials are required")
    return RtfReport(statistics.median(times), audio_seconds, len(times), warmup, device_descriptor(),
                     list(times))


def benchmark_rtf(generator: torch.nn.Module, mels: Sequence[torch.Tensor], trials: int = 5,
                  warmup: int = 1, sample_rate: int = 24000, hop_size: int = 128) -> RtfReport:
    """Median wall-clock synthesis time over ``trials`` divided by the audio duration.

    Each trial synthesizes every mel in ``mels``; warmup passes are not timed.
    """
    if trials < 3:
        raise EvalError("at least 3 trials are required")
    if not mels:
        raise EvalError("no mel inputs")
    generator.eval()
    audio_seconds = sum(m.shape[-2] * hop_size for m in mels) / sample_rate
    times = []
    with single_thread(), torch.inference_mode():
        for i in range(warmup + trials):
            t0 = time.perf_counter()
            for mel in mels:
                generator.synthesize(mel, seed=i)
            elapsed = time.perf_counter() - t0
            if i >= warmup:
                times.append(elapsed)
    return rtf_from_times(times, audio_seconds, warmup)
