"""Generator and discriminator graphs."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import (
    AudioConfig,
    CondDiscriminatorConfig,
    GeneratorConfig,
    PqmfConfig,
    SubGeneratorConfig,
    UncondDiscriminatorConfig,
)
from .dsp import bank_from_config, pqmf_synthesis


class ShapeError(ValueError):
    pass


class WaveNetBlock(nn.Module):
    """Dilated conv + mel conditioning, tanh/sigmoid gate, skip and residual 1x1 outputs."""

    def __init__(self, residual_channels=64, gate_channels=128, skip_channels=64,
                 conditioning_channels=80, kernel_size=3, dilation=1):
        super().__init__()
        if gate_channels % 2:
            raise ValueError("gate_channels must be even")
        self.dilation = dilation
        self.conv = nn.Conv1d(
            residual_channels, gate_channels, kernel_size,
            padding=(kernel_size - 1) // 2 * dilation, dilation=dilation,
        )
        self.cond = nn.Conv1d(conditioning_channels, gate_channels, 1, bias=False)
        half = gate_channels // 2
        self.skip_out = nn.Conv1d(half, skip_channels, 1)
        self.res_out = nn.Conv1d(half, residual_channels, 1)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.shape[-1] != c.shape[-1]:
            raise ShapeError(f"hidden length {x.shape[-1]} != conditioning length {c.shape[-1]}")
        xa, xb = self.conv(x).chunk(2, dim=1)
        sa, sb = self.cond(c).chunk(2, dim=1)
        z = torch.tanh(xa + sa) * torch.sigmoid(xb + sb)
        return self.skip_out(z), x + self.res_out(z)


class SubGenerator(nn.Module):
    """Stack of WaveNet blocks mapping (noise, conditioning) to ``out_channels`` signals."""

    def __init__(self, cfg: SubGeneratorConfig, out_channels: int = 2):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.input = nn.Conv1d(1, cfg.residual_channels, 1)
        self.blocks = nn.ModuleList(
            WaveNetBlock(cfg.residual_channels, cfg.gate_channels, cfg.skip_channels,
                         cfg.conditioning_channels, cfg.kernel_size, d)
            for d in cfg.dilation_cycle
        )
        self.output = nn.Sequential(
            nn.ReLU(),
            nn.Conv1d(cfg.skip_channels, cfg.skip_channels, 1),
            nn.ReLU(),
            nn.Conv1d(cfg.skip_channels, out_channels, 1),
        )

    @property
    def receptive_field(self) -> int:
        return self.cfg.receptive_field()

    def forward(self, noise: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        x = self.input(noise)
        skips = 0.0
        for block in self.blocks:
            h, x = block(x, cond)
            skips = skips + h
        skips = skips * math.sqrt(1.0 / len(self.blocks))
        return torch.tanh(self.output(skips))


def _mel_channels_first(mel: torch.Tensor, num_mels: int) -> torch.Tensor:
    if mel.dim() == 2:
        mel = mel[None]
    if mel.shape[-1] != num_mels:
        raise ShapeError(f"mel must be (batch, frames, {num_mels}), got {tuple(mel.shape)}")
    return mel.transpose(1, 2)


class MultiBandGenerator(nn.Module):
    """Two frequency-adapted sub-generators (bands 0-1 and 2-3) merged by PQMF synthesis."""

    def __init__(self, cfg: GeneratorConfig | None = None, pqmf: PqmfConfig | None = None,
                 audio: AudioConfig | None = None):
        super().__init__()
        cfg = cfg or GeneratorConfig()
        self.audio = audio or AudioConfig()
        self.bank = bank_from_config(pqmf or PqmfConfig())
        self.num_bands = self.bank.num_bands
        self.low_model = SubGenerator(cfg.low, out_channels=2)
        self.high_model = SubGenerator(cfg.high, out_channels=2)
        self.upsample_factor = self.audio.hop_size // self.num_bands

    def noise_length(self, frames: int) -> int:
        return frames * self.upsample_factor

    def make_noise(self, batch: int, frames: int, seed: int | None = None) -> torch.Tensor:
        gen = torch.Generator().manual_seed(seed) if seed is not None else None
        return torch.randn(batch, 1, self.noise_length(frames), generator=gen)

    def forward(self, noise: torch.Tensor, mel: torch.Tensor) -> torch.Tensor:
        """Synthesize ``(B, 1, frames * hop)`` samples in [-1, 1].

        Args:
            noise: Gaussian noise ``(B, 1, frames * hop / 4)``.
            mel: log-mel ``(B, frames, num_mels)``.
        """
        cond = _mel_channels_first(mel, self.audio.num_mels)
        if noise.dim() == 2:
            noise = noise[:, None]
        cond = cond.repeat_interleave(self.upsample_factor, dim=-1)
        if noise.shape[-1] != cond.shape[-1] or noise.shape[0] != cond.shape[0]:
            raise ShapeError(
                f"noise shape {tuple(noise.shape)} does not match {cond.shape[-1]} sub-band samples"
            )
        subbands = torch.cat([self.low_model(noise, cond), self.high_model(noise, cond)], dim=1)
        return torch.clamp(pqmf_synthesis(subbands, self.bank), -1.0, 1.0)

    @torch.no_grad()
    def synthesize(self, mel: torch.Tensor, seed: int = 0) -> torch.Tensor:
        cond = mel if mel.dim() == 3 else mel[None]
        noise = self.make_noise(cond.shape[0], cond.shape[1], seed)
        return self.forward(noise, cond)


class FullBandGenerator(nn.Module):
    """Single-band ablation: one WaveNet stack at the full sample rate.

    Uses the concatenated block lists of both sub-generators so the block
    budget matches MultiBandGenerator.
    """

    def __init__(self, cfg: GeneratorConfig | None = None, audio: AudioConfig | None = None):
        super().__init__()
        cfg = cfg or GeneratorConfig()
        self.audio = audio or AudioConfig()
        merged = SubGeneratorConfig(
            num_blocks=cfg.low.num_blocks + cfg.high.num_blocks,
            dilation_cycle=list(cfg.low.dilation_cycle) + list(cfg.high.dilation_cycle),
            residual_channels=cfg.low.residual_channels,
            skip_channels=cfg.low.skip_channels,
            gate_channels=cfg.low.gate_channels,
            conditioning_channels=cfg.low.conditioning_channels,
            kernel_size=cfg.low.kernel_size,
        )
        self.model = SubGenerator(merged, out_channels=1)
        self.upsample_factor = self.audio.hop_size

    def make_noise(self, batch: int, frames: int, seed: int | None = None) -> torch.Tensor:
        gen = torch.Generator().manual_seed(seed) if seed is not None else None
        return torch.randn(batch, 1, frames * self.upsample_factor, generator=gen)

    def forward(self, noise: torch.Tensor, mel: torch.Tensor) -> torch.Tensor:
        cond = _mel_channels_first(mel, self.audio.num_mels).repeat_interleave(self.upsample_factor, dim=-1)
        if noise.shape[-1] != cond.shape[-1]:
            raise ShapeError("noise length does not match conditioning")
        return self.model(noise, cond)

    @torch.no_grad()
    def synthesize(self, mel: torch.Tensor, seed: int = 0) -> torch.Tensor:
        cond = mel if mel.dim() == 3 else mel[None]
        return self.forward(self.make_noise(cond.shape[0], cond.shape[1], seed), cond)


class UnconditionalDiscriminator(nn.Module):
    """Ten non-causal dilated 1-D convolutions emitting a raw score per sample."""

    def __init__(self, cfg: UncondDiscriminatorConfig | None = None):
        super().__init__()
        cfg = cfg or UncondDiscriminatorConfig()
        self.cfg = cfg
        layers = []
        in_ch = 1
        for i, d in enumerate(cfg.dilations):
            out_ch = 1 if i == len(cfg.dilations) - 1 else cfg.channels
            layers.append(
                nn.Conv1d(in_ch, out_ch, cfg.kernel_size,
                          padding=(cfg.kernel_size - 1) // 2 * d, dilation=d)
            )
            in_ch = out_ch
        self.layers = nn.ModuleList(layers)
        nn.init.constant_(self.layers[-1].bias, cfg.output_bias_init)

    @property
    def receptive_field(self) -> int:
        return 1 + (self.cfg.kernel_size - 1) * sum(self.cfg.dilations)

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        if wave.dim() == 2:
            wave = wave[:, None]
        if wave.shape[-1] < self.receptive_field:
            raise ShapeError(
                f"input length {wave.shape[-1]} shorter than receptive field {self.receptive_field}"
            )
        x = wave
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.leaky_relu(x, self.cfg.negative_slope)
        return x


class SingerConditionalDiscriminator(nn.Module):
    """256x downsampler, LSTM, then ReLU(linear(h_last + embedding)).

    Each downsampling stage is conv -> leaky ReLU -> strided average pool, so
    pooling averages rectified features rather than the raw waveform.
    """

    def __init__(self, cfg: CondDiscriminatorConfig | None = None):
        super().__init__()
        cfg = cfg or CondDiscriminatorConfig()
        if len(cfg.pool_factors) != len(cfg.conv_channels):
            raise ValueError("one conv stage per pooling stage is required")
        if cfg.conv_channels[-1] != cfg.embedding_dim:
            raise ValueError("final conv width must equal the embedding dimension")
        self.cfg = cfg
        self.pools = nn.ModuleList(
            nn.AvgPool1d(cfg.pool_kernel, stride=f, padding=max(0, (cfg.pool_kernel - f) // 2))
            for f in cfg.pool_factors
        )
        chans = [1, *cfg.conv_channels]
        self.convs = nn.ModuleList(
            nn.Conv1d(chans[i], chans[i + 1], cfg.conv_kernel, padding=cfg.conv_kernel // 2)
            for i in range(len(cfg.conv_channels))
        )
        self.lstm = nn.LSTM(cfg.embedding_dim, cfg.embedding_dim, num_layers=cfg.lstm_layers,
                            batch_first=True)
        self.head = nn.Linear(cfg.embedding_dim, 1)
        # start inside the ReLU's active region; a negative initial output never recovers
        nn.init.constant_(self.head.bias, cfg.head_bias_init)

    @property
    def downsample_factor(self) -> int:
        return math.prod(self.cfg.pool_factors)

    def features(self, wave: torch.Tensor) -> torch.Tensor:
        """Downsampled ``(B, T / 256, 256)`` sequence fed to the LSTM."""
        if wave.dim() == 2:
            wave = wave[:, None]
        factor = self.downsample_factor
        rem = wave.shape[-1] % factor
        if rem:
            wave = F.pad(wave, (0, factor - rem))
        if wave.shape[-1] < factor:
            raise ShapeError(f"input shorter than {factor} samples")
        x = wave
        for conv, pool in zip(self.convs, self.pools):
            x = pool(F.leaky_relu(conv(x), self.cfg.negative_slope))
        return x.transpose(1, 2)

    def forward(self, wave: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        if embedding.dim() == 1:
            embedding = embedding[None]
        if embedding.shape[-1] != self.cfg.embedding_dim:
            raise ShapeError(
                f"singer embedding must have {self.cfg.embedding_dim} dims, got {embedding.shape[-1]}"
            )
        seq = self.features(wave)
        _, (h, _) = self.lstm(seq)
        return F.relu(self.head(h[-1] + embedding)).squeeze(-1)
