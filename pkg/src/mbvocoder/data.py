"""Corpus ingestion: WAV I/O, manifests, VAD trimming, segmentation, F0 and corpus statistics."""

from __future__ import annotations

import logging
import math
import wave
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .config import DataConfig
from .dsp import AudioSignal

logger = logging.getLogger(__name__)


class DataError(ValueError):
    pass


# --- WAV -------------------------------------------------------------------

def load_wav(path: str | Path, expected_rate: int = 24000) -> AudioSignal:
    """Decode 16-bit PCM mono WAV into floats ``int16 / 32768``; other formats are rejected."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
            if wf.getcomptype() != "NONE":
                raise DataError(f"{path}: compressed WAV is not supported")
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise DataError(f"{path}: not a PCM WAV file ({exc})") from exc
    if channels != 1:
        raise DataError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise DataError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if rate != expected_rate:
        raise DataError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioSignal(pcm.astype(np.float32) / 32768.0, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")


def save_wav(path: str | Path, signal: AudioSignal | np.ndarray, sample_rate: int = 24000) -> None:
    if isinstance(signal, AudioSignal):
        samples, sample_rate = signal.samples, signal.sample_rate
    else:
        samples = np.asarray(signal).reshape(-1)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(to_pcm16(samples).tobytes())


# --- Manifest --------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRecord:
    utterance_id: str
    path: Path
    singer_id: str
    transcript: str | None = None


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    """Parse a tab-separated manifest; relative audio paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    records, seen = [], set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (3, 4):
            raise DataError(f"{path}:{lineno}: expected 3 or 4 tab-separated fields")
        utt, audio, singer = fields[:3]
        if not singer:
            raise DataError(f"{path}:{lineno}: empty singer id")
        if utt in seen:
            raise DataError(f"{path}:{lineno}: duplicate utterance id {utt!r}")
        seen.add(utt)
        audio_path = Path(audio)
        if not audio_path.is_absolute():
            audio_path = base / audio_path
        records.append(ManifestRecord(utt, audio_path, singer, fields[3] if len(fields) == 4 else None))
    return records


def write_manifest(path: str | Path, records: Iterable[ManifestRecord], relative_to: Path | None = None) -> None:
    lines = []
    for rec in records:
        audio = rec.path
        if relative_to is not None:
            try:
                audio = Path(rec.path).relative_to(relative_to)
            except ValueError:
                pass
        fields = [rec.utterance_id, str(audio), rec.singer_id]
        if rec.transcript is not None:
            fields.append(rec.transcript)
        lines.append("\t".join(fields))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# --- VAD and segmentation --------------------------------------------------

def vad_trim(signal: AudioSignal, frame_ms: float = 100.0, threshold_db: float = -40.0,
             min_segment_ms: float = 200.0) -> list[tuple[int, int]]:
    """Energy VAD over fixed frames.

    A frame is voiced when its RMS level is within ``threshold_db`` of the
    95th-percentile frame level. Runs of voiced frames become segments;
    segments shorter than ``min_segment_ms`` are dropped.

    Returns:
        Ordered, disjoint ``(start, stop)`` sample ranges.
    """
    if len(signal) == 0:
        raise DataError("empty signal")
    frame = max(1, int(round(signal.sample_rate * frame_ms / 1000)))
    rms = _kernels.frame_rms(signal.samples, frame)
    if not np.any(rms > 0):
        return []
    with np.errstate(divide="ignore"):
        level = 20.0 * np.log10(rms)
    ref = np.percentile(level[np.isfinite(level)], 95)
    voiced = level >= ref + threshold_db
    min_len = int(round(signal.sample_rate * min_segment_ms / 1000))
    segments = []
    edges = np.flatnonzero(np.diff(np.concatenate([[0], voiced.astype(np.int8), [0]])))
    for first, last in zip(edges[::2], edges[1::2]):
        start, stop = first * frame, min(last * frame, len(signal))
        if stop - start >= min_len:
            segments.append((int(start), int(stop)))
    return segments


def segment(signal: AudioSignal, max_seconds: float = 11.0, split_frame_ms: float = 10.0) -> list[tuple[int, int]]:
    """Cut a signal into clips of at most ``max_seconds``.

    Each oversized span is split at its quietest ``split_frame_ms`` frame
    between half and full clip length; that frame is dropped. Clips plus
    dropped frames tile the input exactly.
    """
    n = len(signal)
    if n == 0:
        raise DataError("empty signal")
    max_len = int(math.floor(max_seconds * signal.sample_rate))
    frame = max(1, int(round(split_frame_ms * signal.sample_rate / 1000)))
    if max_len <= 2 * frame:
        raise DataError("max_seconds too small for the split frame")
    x = signal.samples
    clips, start = [], 0
    while n - start > max_len:
        lo = start + max_len // 2
        count = (start + max_len - frame - lo) // frame + 1
        energy = _kernels.frame_rms(x[lo : lo + count * frame], frame)[:count]
        cut = lo + int(np.argmin(energy)) * frame
        clips.append((start, cut))
        start = cut + frame
    clips.append((start, n))
    return clips


def slice_ranges(signal: AudioSignal, ranges: Sequence[tuple[int, int]]) -> list[AudioSignal]:
    return [AudioSignal(signal.samples[a:b], signal.sample_rate) for a, b in ranges]


# --- Pitch -----------------------------------------------------------------

@dataclass
class PitchTrack:
    f0: np.ndarray  # Hz per frame, 0 = unvoiced
    hop_ms: float

    @property
    def voiced(self) -> np.ndarray:
        return self.f0[self.f0 > 0]


def extract_f0(signal: AudioSignal, fmin: float = 50.0, fmax: float = 1100.0, hop_ms: float = 10.0,
               clarity: float = 0.3, use_jit: bool | None = None) -> PitchTrack:
    """Normalized-autocorrelation F0 tracker with parabolic peak refinement.

    The first local correlation peak within 90% of the frame's strongest
    peak is taken as the period, which avoids octave-down errors.
    Frames whose peak correlation is below ``clarity`` are unvoiced.
    """
    sr = signal.sample_rate
    hop = max(1, int(round(sr * hop_ms / 1000)))
    min_lag = max(2, int(math.floor(sr / fmax)))
    max_lag = int(math.ceil(sr / fmin))
    window = max_lag
    nframes = len(signal) // hop + 1
    padded = np.concatenate([np.zeros(window // 2), signal.samples.astype(np.float64),
                             np.zeros(window + max_lag + hop)])
    starts = np.arange(nframes) * hop
    r = _kernels.nccf(padded, starts, window, min_lag - 1, max_lag + 1, use_jit=use_jit)
    f0 = np.zeros(nframes)
    for i, row in enumerate(r):
        inner = row[1:-1]
        peaks = np.flatnonzero((inner >= row[:-2]) & (inner > row[2:])) + 1
        if len(peaks) == 0:
            continue
        best = row[peaks].max()
        if best < clarity:
            continue
        k = peaks[np.argmax(row[peaks] >= 0.9 * best)]
        a, b, c = row[k - 1], row[k], row[k + 1]
        den = a - 2 * b + c
        delta = 0.5 * (a - c) / den if den < 0 else 0.0
        lag = (min_lag - 1) + k + delta
        hz = sr / lag
        if fmin <= hz <= fmax:
            f0[i] = hz
    return PitchTrack(f0, hop_ms)


# --- Corpus statistics -----------------------------------------------------

@dataclass
class CorpusStats:
    utterances: int = 0
    failed: dict[str, str] = field(default_factory=dict)
    total_seconds: float = 0.0
    voiced_frames: int = 0
    pitch_mean: float = 0.0
    pitch_std: float = 0.0
    per_singer: dict[str, dict[str, float]] = field(default_factory=dict)
    duration_histogram: dict[str, int] = field(default_factory=dict)

    def as_text(self) -> str:
        lines = [
            "corpus statistics",
            f"  utterances        {self.utterances}",
            f"  failed            {len(self.failed)}",
            f"  total duration    {self.total_seconds:.2f} s",
            f"  voiced frames     {self.voiced_frames}",
            f"  pitch mean / std  {self.pitch_mean:.2f} / {self.pitch_std:.2f} Hz",
        ]
        for singer, s in sorted(self.per_singer.items()):
            lines.append(f"  singer {singer}: {int(s['utterances'])} utts, "
                         f"pitch {s['pitch_mean']:.2f} / {s['pitch_std']:.2f} Hz")
        lines.append("  duration histogram (s):")
        for label, count in self.duration_histogram.items():
            lines.append(f"    {label:>7}  {count}")
        for utt, err in sorted(self.failed.items()):
            lines.append(f"  error {utt}: {err}")
        lines.append("")
        lines.append("[stats]")
        for key, value in self.key_values().items():
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def key_values(self) -> dict[str, str]:
        kv = {
            "utterances": str(self.utterances),
            "failed": str(len(self.failed)),
            "total_seconds": f"{self.total_seconds:.4f}",
            "voiced_frames": str(self.voiced_frames),
            "pitch_mean_hz": f"{self.pitch_mean:.4f}",
            "pitch_std_hz": f"{self.pitch_std:.4f}",
        }
        for singer, s in sorted(self.per_singer.items()):
            kv[f"singer.{singer}.pitch_mean_hz"] = f"{s['pitch_mean']:.4f}"
            kv[f"singer.{singer}.pitch_std_hz"] = f"{s['pitch_std']:.4f}"
        for label, count in self.duration_histogram.items():
            kv[f"duration.{label}"] = str(count)
        return kv


DURATION_BINS = (0, 2, 4, 6, 8, 10, 11, math.inf)


def corpus_stats(manifest: Sequence[ManifestRecord], cfg: DataConfig | None = None,
                 sample_rate: int = 24000) -> CorpusStats:
    """Pitch mean/std over voiced frames (corpus and per singer) and a duration histogram."""
    cfg = cfg or DataConfig()
    stats = CorpusStats()
    labels = [f"{lo}-{hi}" if math.isfinite(hi) else f">{lo}" for lo, hi in zip(DURATION_BINS, DURATION_BINS[1:])]
    stats.duration_histogram = {label: 0 for label in labels}
    all_f0, by_singer = [], {}
    for rec in manifest:
        try:
            sig = load_wav(rec.path, sample_rate)
            track = extract_f0(sig, cfg.f0_min, cfg.f0_max, cfg.f0_hop_ms, cfg.f0_clarity)
        except Exception as exc:
            stats.failed[rec.utterance_id] = f"{type(exc).__name__}: {exc}"
            logger.warning("stats failed for %s: %s", rec.utterance_id, exc)
            continue
        stats.utterances += 1
        stats.total_seconds += sig.duration
        idx = int(np.searchsorted(DURATION_BINS, sig.duration, side="right")) - 1
        stats.duration_histogram[labels[min(idx, len(labels) - 1)]] += 1
        all_f0.append(track.voiced)
        entry = by_singer.setdefault(rec.singer_id, {"f0": [], "utterances": 0})
        entry["f0"].append(track.voiced)
        entry["utterances"] += 1
    if all_f0:
        f0 = np.concatenate(all_f0)
        stats.voiced_frames = int(len(f0))
        if len(f0):
            stats.pitch_mean, stats.pitch_std = float(f0.mean()), float(f0.std())
    for singer, entry in by_singer.items():
        f0 = np.concatenate(entry["f0"])
        stats.per_singer[singer] = {
            "utterances": entry["utterances"],
            "pitch_mean": float(f0.mean()) if len(f0) else 0.0,
            "pitch_std": float(f0.std()) if len(f0) else 0.0,
        }
    return stats


# --- Mel container ---------------------------------------------------------
# 16-byte header: b"MELF", u32 version, u32 frames, u32 bands; then row-major <f4.

MEL_MAGIC = b"MELF"
MEL_VERSION = 1


def write_mel_file(path: str | Path, mel: np.ndarray) -> None:
    mel = np.asarray(mel, dtype="<f4")
    if mel.ndim != 2:
        raise DataError("mel must be a (frames, bands) matrix")
    header = MEL_MAGIC + np.array([MEL_VERSION, *mel.shape], dtype="<u4").tobytes()
    Path(path).write_bytes(header + np.ascontiguousarray(mel).tobytes())


def read_mel_file(path: str | Path, bands: int | None = 80) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MEL_MAGIC:
        raise DataError(f"{path}: not a mel file")
    version, frames, nb = np.frombuffer(data, dtype="<u4", count=3, offset=4)
    if version != MEL_VERSION:
        raise DataError(f"{path}: unsupported mel file version {version}")
    if bands is not None and nb != bands:
        raise DataError(f"{path}: expected {bands} bands, got {nb}")
    if len(data) != 16 + 4 * int(frames) * int(nb):
        raise DataError(f"{path}: payload size does not match {frames}x{nb}")
    mel = np.frombuffer(data, dtype="<f4", offset=16).reshape(int(frames), int(nb))
    if not np.all(np.isfinite(mel)):
        raise DataError(f"{path}: non-finite mel values")
    return mel.astype(np.float32)
