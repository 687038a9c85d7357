"""LSTM d-vector speaker encoder, GE2E training, and the embedding cache file."""

from __future__ import annotations

import logging
import struct
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import AudioConfig, SpeakerEncoderConfig

logger = logging.getLogger(__name__)

EMBEDDING_DIM = 256
CACHE_MAGIC = b"MBVEMBED"
CACHE_VERSION = 1


class EncoderError(ValueError):
    pass


class SpeakerEncoder(nn.Module):
    """Stacked unidirectional LSTMs over log-mel frames plus a linear projection.

    Layers are kept as separate modules so every layer's hidden-state
    sequence is available to the perceptual loss.
    """

    def __init__(self, cfg: SpeakerEncoderConfig | None = None):
        super().__init__()
        cfg = cfg or SpeakerEncoderConfig()
        cfg.validate()
        self.cfg = cfg
        sizes = [cfg.num_mels] + [cfg.hidden_size] * cfg.lstm_layers
        self.layers = nn.ModuleList(
            nn.LSTM(sizes[i], sizes[i + 1], batch_first=True) for i in range(cfg.lstm_layers)
        )
        self.projection = nn.Linear(cfg.hidden_size, cfg.projection_size)

    def _check(self, mel: torch.Tensor) -> torch.Tensor:
        if mel.dim() == 2:
            mel = mel[None]
        if mel.shape[-1] != self.cfg.num_mels:
            raise EncoderError(f"expected {self.cfg.num_mels} mel bands, got {mel.shape[-1]}")
        if mel.shape[1] < 2:
            raise EncoderError("at least 2 mel frames are required")
        return mel

    def hidden_states(self, mel: torch.Tensor) -> list[torch.Tensor]:
        """Per-layer hidden sequences, each ``(B, frames, hidden_size)``."""
        x = self._check(mel)
        states = []
        for layer in self.layers:
            x, _ = layer(x)
            states.append(x)
        return states

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        """Unit-norm ``(B, 256)`` embeddings from the top layer's final frame."""
        mel = self._check(mel)
        win = self.cfg.window_frames
        if win and mel.shape[1] > win:
            hop = max(1, win // 2)
            starts = range(0, mel.shape[1] - win + 1, hop)
            partial = torch.stack([self._embed(mel[:, s : s + win]) for s in starts], dim=1)
            return F.normalize(partial.mean(dim=1), dim=-1)
        return self._embed(mel)

    def _embed(self, mel: torch.Tensor) -> torch.Tensor:
        top = self.hidden_states(mel)[-1]
        return F.normalize(self.projection(top[:, -1]), dim=-1)

    encode = forward


def similarity_matrix(embeddings: torch.Tensor, w, b) -> torch.Tensor:
    """Scaled cosine similarity of every utterance to every speaker centroid.

    For the utterance's own speaker the centroid excludes that utterance.

    Args:
        embeddings: ``(N, M, D)`` speakers x utterances x dims.

    Returns:
        ``(N, M, N)`` matrix ``w * cos + b``.
    """
    n, m, _ = embeddings.shape
    centroids = embeddings.mean(dim=1)
    excl = (embeddings.sum(dim=1, keepdim=True) - embeddings) / (m - 1)
    cos = F.cosine_similarity(embeddings[:, :, None, :], centroids[None, None], dim=-1, eps=1e-8)
    cos_excl = F.cosine_similarity(embeddings, excl, dim=-1, eps=1e-8)
    own = torch.eye(n, dtype=torch.bool, device=embeddings.device)[:, None, :].expand(n, m, n)
    cos = torch.where(own, cos_excl[:, :, None].expand(n, m, n), cos)
    return w * cos + b


def ge2e_loss(embeddings: torch.Tensor, w=1.0, b=0.0) -> torch.Tensor:
    """Softmax GE2E: mean negative log-probability of each utterance's own speaker."""
    if embeddings.dim() != 3:
        raise EncoderError("embeddings must be (speakers, utterances, dims)")
    n, m, _ = embeddings.shape
    if n < 2 or m < 2:
        raise EncoderError("GE2E needs at least 2 speakers and 2 utterances each")
    sim = similarity_matrix(embeddings, w, b)
    target = torch.arange(n, device=embeddings.device)[:, None].expand(n, m)
    return F.cross_entropy(sim.reshape(n * m, n), target.reshape(-1))


class GE2ELoss(nn.Module):
    def __init__(self, init_w: float = 10.0, init_b: float = -5.0):
        super().__init__()
        self.w = nn.Parameter(torch.tensor(float(init_w)))
        self.b = nn.Parameter(torch.tensor(float(init_b)))

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        return ge2e_loss(embeddings, torch.clamp(self.w, min=1e-6), self.b)


def train_encoder(
    clips: Mapping[str, Sequence[torch.Tensor]],
    cfg: SpeakerEncoderConfig | None = None,
    steps: int | None = None,
    seed: int = 0,
) -> tuple[SpeakerEncoder, list[float]]:
    """Desk-scale GE2E training.

    Args:
        clips: speaker id -> list of log-mel tensors ``(frames, num_mels)``.
        steps: optimizer steps; defaults to ``cfg.train_steps``.

    Returns:
        The trained encoder (eval mode) and the per-step loss history.
    """
    cfg = cfg or SpeakerEncoderConfig()
    steps = cfg.train_steps if steps is None else steps
    speakers = sorted(k for k, v in clips.items() if len(v) >= 2)
    if len(speakers) < 2:
        raise EncoderError("GE2E training needs at least 2 speakers with 2 clips each")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    encoder = SpeakerEncoder(cfg)
    criterion = GE2ELoss(cfg.init_scale, cfg.init_bias)
    opt = torch.optim.Adam(list(encoder.parameters()) + list(criterion.parameters()), lr=cfg.learning_rate)
    n = min(cfg.speakers_per_batch, len(speakers))
    m = cfg.utterances_per_speaker
    history = []
    encoder.train()
    for _ in range(steps):
        batch = []
        for idx in sorted(rng.choice(len(speakers), size=n, replace=False)):
            pool = clips[speakers[idx]]
            for p in rng.choice(len(pool), size=m, replace=len(pool) < m):
                batch.append(_crop(pool[p], cfg.frames_per_utterance, rng))
        frames = min(x.shape[0] for x in batch)
        mels = torch.stack([x[:frames] for x in batch])
        emb = encoder(mels).reshape(n, m, -1)
        loss = criterion(emb)
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(encoder.parameters(), 3.0)
        opt.step()
        with torch.no_grad():
            criterion.w.clamp_(min=1e-6)
        history.append(loss.item())
    encoder.eval()
    for p in encoder.parameters():
        p.requires_grad_(False)
    return encoder, history


def _crop(mel: torch.Tensor, frames: int, rng: np.random.Generator) -> torch.Tensor:
    if mel.shape[0] <= frames:
        return mel
    start = int(rng.integers(0, mel.shape[0] - frames + 1))
    return mel[start : start + frames]


def save_encoder(path: str | Path, encoder: SpeakerEncoder) -> None:
    torch.save({"kind": "speaker_encoder", "version": 1, "config": vars(encoder.cfg).copy(),
                "state": encoder.state_dict()}, path)


def load_encoder(path: str | Path) -> SpeakerEncoder:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("kind") != "speaker_encoder":
        raise EncoderError(f"{path} is not a speaker encoder checkpoint")
    encoder = SpeakerEncoder(SpeakerEncoderConfig(**blob["config"]))
    encoder.load_state_dict(blob["state"])
    encoder.eval()
    for p in encoder.parameters():
        p.requires_grad_(False)
    return encoder


# Cache layout: 16-byte header (8-byte magic, u32 version, u32 count), then per
# record a u32 byte length, the UTF-8 utterance id, and 256 little-endian f32.
def write_embedding_cache(path: str | Path, embeddings: Mapping[str, np.ndarray]) -> None:
    parts = [CACHE_MAGIC, struct.pack("<II", CACHE_VERSION, len(embeddings))]
    for utt in sorted(embeddings):
        vec = np.asarray(embeddings[utt], dtype="<f4").reshape(-1)
        if vec.shape[0] != EMBEDDING_DIM:
            raise EncoderError(f"embedding for {utt} has {vec.shape[0]} dims")
        raw = utt.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, vec.tobytes()]
    Path(path).write_bytes(b"".join(parts))


def read_embedding_cache(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != CACHE_MAGIC:
        raise EncoderError(f"{path} is not an embedding cache")
    version, count = struct.unpack_from("<II", data, 8)
    if version != CACHE_VERSION:
        raise EncoderError(f"unsupported embedding cache version {version}")
    out = {}
    pos = 16
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        utt = data[pos : pos + n].decode("utf-8")
        pos += n
        out[utt] = np.frombuffer(data, dtype="<f4", count=EMBEDDING_DIM, offset=pos).astype(np.float32)
        pos += 4 * EMBEDDING_DIM
    if pos != len(data):
        raise EncoderError(f"{path}: trailing bytes after {count} records")
    return out


@torch.no_grad()
def embed_signal(samples: np.ndarray, encoder: SpeakerEncoder, audio: AudioConfig | None = None) -> np.ndarray:
    from .dsp import mel_spectrogram

    mel = mel_spectrogram(torch.as_tensor(np.asarray(samples, dtype=np.float32)), audio)
    return encoder(mel)[0].numpy()


def embedding_cache_build(manifest, encoder: SpeakerEncoder, path: str | Path,
                          audio: AudioConfig | None = None) -> dict[str, str]:
    """Embed every manifest utterance and write the cache.

    Unreadable entries are skipped and reported.

    Returns:
        utterance id -> error message for failed entries.
    """
    from .data import load_wav

    embeddings, errors = {}, {}
    for rec in manifest:
        try:
            sig = load_wav(rec.path, expected_rate=(audio or AudioConfig()).sample_rate)
            embeddings[rec.utterance_id] = embed_signal(sig.samples, encoder, audio)
        except Exception as exc:  # per-entry failures must not abort the build
            errors[rec.utterance_id] = f"{type(exc).__name__}: {exc}"
            logger.warning("embedding failed for %s: %s", rec.utterance_id, exc)
    write_embedding_cache(path, embeddings)
    return errors
