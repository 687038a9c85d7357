"""Two-phase optimization: generator pretraining on the auxiliary loss, then joint GAN training."""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import ManifestRecord, load_wav, read_manifest
from .dsp import mel_spectrogram
from .losses import (
    LossWeights,
    generator_total_loss,
    jcu_discriminator_loss,
    jcu_generator_loss,
    multi_res_stft_loss,
    singer_perceptual_loss,
)
from .model import MultiBandGenerator, SingerConditionalDiscriminator, UnconditionalDiscriminator
from .speaker_encoder import SpeakerEncoder, load_encoder, read_embedding_cache

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class Utterance:
    utterance_id: str
    singer_id: str
    audio: np.ndarray  # float32, length a multiple of hop_size
    mel: np.ndarray  # (len(audio) // hop_size, num_mels)


@dataclass
class Batch:
    utterance_ids: list[str]
    audio: torch.Tensor  # (B, 1, T)
    mel: torch.Tensor  # (B, T // hop, num_mels)


def prepare_utterance(utt_id: str, singer: str, samples: np.ndarray, cfg: RunConfig) -> Utterance:
    hop = cfg.audio.hop_size
    samples = np.asarray(samples, dtype=np.float32)
    if len(samples) < cfg.train.segment_length:
        samples = np.pad(samples, (0, cfg.train.segment_length - len(samples)))
    samples = samples[: len(samples) // hop * hop]
    with torch.no_grad():
        mel = mel_spectrogram(torch.from_numpy(samples), cfg.audio).numpy()
    return Utterance(utt_id, singer, samples, mel[: len(samples) // hop])


def load_utterances(records: Sequence[ManifestRecord], cfg: RunConfig) -> list[Utterance]:
    out = []
    for rec in records:
        sig = load_wav(rec.path, cfg.audio.sample_rate)
        out.append(prepare_utterance(rec.utterance_id, rec.singer_id, sig.samples, cfg))
    return out


class BatchSampler:
    """Random fixed-length excerpts, frame-aligned so mel and audio stay in register."""

    def __init__(self, utterances: Sequence[Utterance], segment_length: int, hop_size: int, seed: int):
        if not utterances:
            raise TrainingError("no training utterances")
        self.utterances = list(utterances)
        self.segment_length = segment_length
        self.hop = hop_size
        self.rng = np.random.default_rng(seed)

    def sample(self, batch_size: int) -> Batch:
        frames = self.segment_length // self.hop
        ids, audio, mel = [], [], []
        for idx in self.rng.integers(0, len(self.utterances), size=batch_size):
            utt = self.utterances[idx]
            start = int(self.rng.integers(0, utt.mel.shape[0] - frames + 1))
            ids.append(utt.utterance_id)
            audio.append(utt.audio[start * self.hop : start * self.hop + self.segment_length])
            mel.append(utt.mel[start : start + frames])
        return Batch(ids, torch.from_numpy(np.stack(audio))[:, None], torch.from_numpy(np.stack(mel)))

    def state(self) -> dict:
        return self.rng.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state


def _finite_or_raise(name: str, value: torch.Tensor, step: int) -> None:
    if not torch.isfinite(value).all():
        raise TrainingError(f"non-finite {name} at step {step}: {float(value)}")


class Trainer:
    """Owns models, optimizers, RNG streams and the step counter."""

    def __init__(self, cfg: RunConfig, utterances: Sequence[Utterance],
                 embeddings: Mapping[str, np.ndarray] | None = None,
                 encoder: SpeakerEncoder | None = None):
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.generator = MultiBandGenerator(cfg.generator, cfg.pqmf, cfg.audio)
        self.uncond_disc = UnconditionalDiscriminator(cfg.uncond_disc)
        self.cond_disc = SingerConditionalDiscriminator(cfg.cond_disc)
        t = cfg.train
        self.opt_g = torch.optim.RAdam(self.generator.parameters(), lr=t.lr_g, betas=tuple(t.betas),
                                       weight_decay=t.weight_decay)
        lr_cond = t.lr_d if t.lr_d_cond is None else t.lr_d_cond
        self.opt_d = torch.optim.RAdam(
            [{"params": self.uncond_disc.parameters()},
             {"params": self.cond_disc.parameters(), "lr": lr_cond}],
            lr=t.lr_d, betas=tuple(t.betas), weight_decay=t.weight_decay,
        )
        self.sampler = BatchSampler(utterances, t.segment_length, cfg.audio.hop_size, cfg.seed + 1)
        self.embeddings = dict(embeddings or {})
        self.encoder = encoder
        if encoder is not None:
            for p in encoder.parameters():
                p.requires_grad_(False)
        self.weights = LossWeights(cfg.loss.lambda_adv, cfg.loss.aux_mix)
        self.noise_gen = torch.Generator().manual_seed(cfg.seed + 2)
        self.step = 0

    # -- losses --------------------------------------------------------------

    def _aux_losses(self, x: torch.Tensor, y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x, y = x.squeeze(1), y.squeeze(1)
        l_stft = multi_res_stft_loss(x, y, self.cfg.loss.resolutions, self.cfg.loss.log_floor)
        if self.cfg.loss.use_spl and self.encoder is not None:
            l_spl = singer_perceptual_loss(x, y, self.encoder, self.cfg.audio)
        else:
            l_spl = torch.zeros((), dtype=l_stft.dtype)
        return l_spl, l_stft

    def _noise(self, batch: Batch, gen: torch.Generator | None = None) -> torch.Tensor:
        frames = batch.mel.shape[1]
        return torch.randn(batch.mel.shape[0], 1, self.generator.noise_length(frames),
                           generator=self.noise_gen if gen is None else gen)

    def singer_embeddings(self, batch: Batch) -> torch.Tensor:
        missing = [u for u in batch.utterance_ids if u not in self.embeddings]
        if missing:
            raise TrainingError(f"missing singer embedding for utterance {missing[0]!r}")
        return torch.from_numpy(np.stack([self.embeddings[u] for u in batch.utterance_ids]))

    # -- steps ---------------------------------------------------------------

    def pretrain_step(self, batch: Batch) -> dict[str, float]:
        """Generator-only update on the auxiliary loss; discriminators untouched."""
        self.generator.train()
        y = self.generator(self._noise(batch), batch.mel)
        l_spl, l_stft = self._aux_losses(batch.audio, y)
        loss = generator_total_loss(l_spl, l_stft, w=self.weights, adversarial=False)
        _finite_or_raise("generator loss", loss, self.step)
        self.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_g.step()
        return {"l_stft": l_stft.item(), "l_spl": l_spl.item(), "l_g": loss.item()}

    def joint_step(self, batch: Batch) -> dict[str, float]:
        """Discriminator update on detached fakes, then generator update on L_aux + lambda * L_adv."""
        s = self.singer_embeddings(batch)
        x = batch.audio
        self.generator.train()
        y = self.generator(self._noise(batch), batch.mel)

        fake = y.detach()
        d_real, d_fake = self.uncond_disc(x), self.uncond_disc(fake)
        ds_real, ds_fake = self.cond_disc(x, s), self.cond_disc(fake, s)
        l_adv_d = jcu_discriminator_loss(d_real, d_fake, ds_real, ds_fake)
        _finite_or_raise("discriminator loss", l_adv_d, self.step)
        self.opt_d.zero_grad(set_to_none=True)
        l_adv_d.backward()
        self.opt_d.step()

        l_adv_g = jcu_generator_loss(self.uncond_disc(y), self.cond_disc(y, s))
        l_spl, l_stft = self._aux_losses(x, y)
        loss = generator_total_loss(l_spl, l_stft, l_adv_g, self.weights)
        _finite_or_raise("generator loss", loss, self.step)
        self.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_g.step()
        # generator backward leaves gradients on discriminator weights; drop them
        self.opt_d.zero_grad(set_to_none=True)
        return {
            "l_stft": l_stft.item(), "l_spl": l_spl.item(), "l_adv_g": l_adv_g.item(),
            "l_adv_d": l_adv_d.item(), "l_g": loss.item(),
            "d_real": d_real.mean().item(), "d_fake": d_fake.mean().item(),
            "ds_real": ds_real.mean().item(), "ds_fake": ds_fake.mean().item(),
        }

    def train_step(self) -> dict[str, float]:
        t0 = time.perf_counter()
        batch = self.sampler.sample(self.cfg.train.batch_size)
        if self.step < self.cfg.train.pretrain_steps:
            metrics = self.pretrain_step(batch)
        else:
            metrics = self.joint_step(batch)
        self.step += 1
        return {"step": self.step, **metrics, "ms": (time.perf_counter() - t0) * 1e3}

    # -- persistence ---------------------------------------------------------

    def state_payload(self) -> dict:
        return {
            "step": self.step,
            "generator": self.generator.state_dict(),
            "uncond_disc": self.uncond_disc.state_dict(),
            "cond_disc": self.cond_disc.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "sampler_rng": self.sampler.state(),
            "noise_rng": self.noise_gen.get_state(),
            "torch_rng": torch.get_rng_state(),
        }

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(path, self.cfg, **self.state_payload())

    def load_state(self, blob: Mapping) -> None:
        self.generator.load_state_dict(blob["generator"])
        self.uncond_disc.load_state_dict(blob["uncond_disc"])
        self.cond_disc.load_state_dict(blob["cond_disc"])
        self.opt_g.load_state_dict(blob["opt_g"])
        self.opt_d.load_state_dict(blob["opt_d"])
        self.sampler.set_state(blob["sampler_rng"])
        self.noise_gen.set_state(blob["noise_rng"])
        torch.set_rng_state(blob["torch_rng"])
        self.step = int(blob["step"])

    @torch.no_grad()
    def score_means(self, batch: Batch, seed: int | None = None) -> dict[str, float]:
        """Mean discriminator scores on real and generated audio for one batch.

        With ``seed`` the noise comes from a private generator, so scoring
        leaves the training RNG streams untouched.
        """
        gen = torch.Generator().manual_seed(seed) if seed is not None else None
        s = self.singer_embeddings(batch)
        self.generator.eval()
        try:
            y = self.generator(self._noise(batch, gen), batch.mel)
        finally:
            self.generator.train()
        return {
            "d_real": self.uncond_disc(batch.audio).mean().item(),
            "d_fake": self.uncond_disc(y).mean().item(),
            "ds_real": self.cond_disc(batch.audio, s).mean().item(),
            "ds_fake": self.cond_disc(y, s).mean().item(),
        }

    def evaluate_scores(self, num_batches: int = 8, seed: int = 1234) -> dict[str, float]:
        """Average ``score_means`` over training-length excerpts from an independent sampler."""
        sampler = BatchSampler(self.sampler.utterances, self.sampler.segment_length,
                               self.sampler.hop, seed)
        rows = [self.score_means(sampler.sample(self.cfg.train.batch_size), seed=seed + i)
                for i in range(num_batches)]
        return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


def _trim_log(path: Path, last_step: int) -> None:
    if not path.exists():
        return
    kept = [line for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip() and json.loads(line)["step"] <= last_step]
    path.write_text("".join(line + "\n" for line in kept), encoding="utf-8")


def run_training(cfg: RunConfig, manifest: str | Path, out_dir: str | Path,
                 embeddings_path: str | Path | None = None, encoder_path: str | Path | None = None,
                 resume: str | Path | None = None) -> Path:
    """Pretrain then joint-train, checkpointing to ``out_dir`` and logging to ``out_dir/train_log.jsonl``.

    Embedding cache and encoder default to ``embeddings.bin`` / ``encoder.pt``
    next to the manifest. Both are checked before step 0.

    Returns:
        Path of the final checkpoint.
    """
    manifest = Path(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    embeddings_path = Path(embeddings_path or manifest.parent / "embeddings.bin")
    if not embeddings_path.exists():
        raise TrainingError(f"embedding cache not found: {embeddings_path}")
    embeddings = read_embedding_cache(embeddings_path)
    encoder = None
    if cfg.loss.use_spl:
        encoder_path = Path(encoder_path or manifest.parent / "encoder.pt")
        if not encoder_path.exists():
            raise TrainingError(f"speaker encoder not found: {encoder_path}")
        encoder = load_encoder(encoder_path)
    records = read_manifest(manifest)
    if not records:
        raise TrainingError("manifest is empty")

    if resume is not None:
        resume_cfg, blob = load_checkpoint(resume)
        # schedule overrides given for the resumed run win over the stored ones
        resume_cfg.train.total_steps = cfg.train.total_steps
        resume_cfg.train.checkpoint_interval = cfg.train.checkpoint_interval
        cfg = resume_cfg.validate()
    trainer = Trainer(cfg, load_utterances(records, cfg), embeddings, encoder)
    log_path = out_dir / "train_log.jsonl"
    if resume is not None:
        trainer.load_state(blob)
        _trim_log(log_path, trainer.step)
    elif log_path.exists():
        log_path.unlink()

    final = out_dir / "last.pt"
    with log_path.open("a", encoding="utf-8") as log:
        while trainer.step < cfg.train.total_steps:
            record = trainer.train_step()
            log.write(json.dumps(record) + "\n")
            log.flush()
            if trainer.step % max(1, cfg.train.log_interval) == 0:
                logger.info("step %d %s", trainer.step,
                            " ".join(f"{k}={v:.4f}" for k, v in record.items() if k != "step"))
            if trainer.step % cfg.train.checkpoint_interval == 0 or trainer.step == cfg.train.total_steps:
                trainer.save(out_dir / f"ckpt_{trainer.step:07d}.pt")
                trainer.save(final)
    if not final.exists():
        trainer.save(final)
    return final


def has_nonfinite(*modules: torch.nn.Module) -> bool:
    return any(not torch.isfinite(p).all() for m in modules for p in m.parameters())


