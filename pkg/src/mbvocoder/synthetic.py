"""Synthetic "voices" for desk-scale experiments.

A profile is a harmonic source around a base pitch shaped by a fixed set of
resonances plus band-passed breath noise. Clips from one profile share a
spectral envelope; different profiles do not.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from .data import ManifestRecord, save_wav, write_manifest


@dataclass(frozen=True)
class VoiceProfile:
    name: str
    f0: float
    formants: tuple[float, ...]
    bandwidth: float = 0.25  # fraction of the center frequency
    noise: float = 0.15


def default_profiles(count: int = 4) -> list[VoiceProfile]:
    presets = [
        VoiceProfile("alto", 220.0, (700.0, 1200.0, 2600.0)),
        VoiceProfile("bass", 110.0, (400.0, 900.0, 2200.0), noise=0.05),
        VoiceProfile("soprano", 440.0, (1000.0, 2400.0, 3600.0), noise=0.25),
        VoiceProfile("tenor", 165.0, (550.0, 1700.0, 5000.0), noise=0.1),
        VoiceProfile("breathy", 300.0, (3000.0, 6000.0, 8000.0), noise=0.6),
        VoiceProfile("nasal", 260.0, (250.0, 2000.0, 3200.0), bandwidth=0.12),
    ]
    if count > len(presets):
        raise ValueError(f"at most {len(presets)} preset profiles")
    return presets[:count]


def synth_voice(profile: VoiceProfile, seconds: float, sample_rate: int = 24000,
                rng: np.random.Generator | None = None, peak: float = 0.5) -> np.ndarray:
    """Render one clip; pitch and vibrato vary per call, the envelope does not."""
    rng = rng or np.random.default_rng()
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    base = profile.f0 * 2 ** (rng.uniform(-2, 2) / 12)
    vibrato = 1 + 0.01 * np.sin(2 * np.pi * rng.uniform(4, 6) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(base * vibrato) / sample_rate
    nyq = sample_rate / 2
    source = np.zeros(n)
    for h in range(1, int(nyq // (base * 1.02))):
        source += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
    source += profile.noise * rng.standard_normal(n)
    out = np.zeros(n)
    for fc in profile.formants:
        lo = max(20.0, fc * (1 - profile.bandwidth))
        hi = min(nyq * 0.98, fc * (1 + profile.bandwidth))
        sos = butter(2, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")
        out += sosfilt(sos, source)
    out *= peak / max(np.max(np.abs(out)), 1e-9)
    return out.astype(np.float32)


def write_corpus(root: str | Path, profiles: list[VoiceProfile], clips_per_profile: int,
                 seconds: float, seed: int = 0, sample_rate: int = 24000) -> list[ManifestRecord]:
    """Write WAVs under ``root/wavs`` and a ``root/manifest.tsv``."""
    root = Path(root)
    (root / "wavs").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for profile in profiles:
        for i in range(clips_per_profile):
            utt = f"{profile.name}_{i:03d}"
            path = root / "wavs" / f"{utt}.wav"
            save_wav(path, synth_voice(profile, seconds, sample_rate, rng), sample_rate)
            records.append(ManifestRecord(utt, path, profile.name))
    write_manifest(root / "manifest.tsv", records, relative_to=root)
    return records
