"""Declarative run configuration.

Every tunable default of the package lives here. Configs load from YAML or
JSON; unknown keys are rejected so typos never silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised for malformed or unknown configuration entries."""


@dataclass
class AudioConfig:
    sample_rate: int = 24000
    fft_size: int = 512
    hop_size: int = 128
    window_size: int = 512
    num_mels: int = 80
    fmin: float = 0.0
    fmax: float | None = None  # None -> sample_rate / 2
    log_floor: float = 1e-5


@dataclass
class PqmfConfig:
    num_bands: int = 4
    taps: int = 62
    cutoff_ratio: float = 0.142
    kaiser_beta: float = 9.0


@dataclass
class SubGeneratorConfig:
    num_blocks: int = 20
    dilation_cycle: list[int] = field(default_factory=lambda: [2**i for i in range(10)] * 2)
    residual_channels: int = 64
    skip_channels: int = 64
    gate_channels: int = 128
    conditioning_channels: int = 80
    kernel_size: int = 3

    def validate(self) -> None:
        if self.num_blocks != len(self.dilation_cycle):
            raise ConfigError(
                f"num_blocks={self.num_blocks} but {len(self.dilation_cycle)} dilations given"
            )
        for name in ("residual_channels", "skip_channels", "gate_channels", "conditioning_channels"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.gate_channels % 2:
            raise ConfigError("gate_channels must be even")
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd for same padding")

    def receptive_field(self) -> int:
        return 1 + (self.kernel_size - 1) * sum(self.dilation_cycle)


def _high_default() -> SubGeneratorConfig:
    return SubGeneratorConfig(num_blocks=10, dilation_cycle=[2**i for i in range(5)] * 2)


@dataclass
class GeneratorConfig:
    low: SubGeneratorConfig = field(default_factory=SubGeneratorConfig)
    high: SubGeneratorConfig = field(default_factory=_high_default)


@dataclass
class UncondDiscriminatorConfig:
    channels: int = 64
    kernel_size: int = 5
    dilations: list[int] = field(default_factory=lambda: [1, 1, 2, 3, 4, 5, 6, 7, 8, 1])
    negative_slope: float = 0.2
    # start at the least-squares midpoint between the real (1) and fake (0) targets
    output_bias_init: float = 0.5


@dataclass
class CondDiscriminatorConfig:
    pool_factors: list[int] = field(default_factory=lambda: [8, 8, 2, 2])
    pool_kernel: int = 4
    conv_channels: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    conv_kernel: int = 3
    lstm_layers: int = 2
    embedding_dim: int = 256
    negative_slope: float = 0.2
    head_bias_init: float = 0.5


@dataclass
class SpeakerEncoderConfig:
    num_mels: int = 80
    lstm_layers: int = 3
    hidden_size: int = 256
    projection_size: int = 256
    # 0 -> whole utterance; otherwise average embeddings over windows of this many frames
    window_frames: int = 0
    init_scale: float = 10.0
    init_bias: float = -5.0
    train_steps: int = 200
    learning_rate: float = 1e-3
    speakers_per_batch: int = 4
    utterances_per_speaker: int = 4
    frames_per_utterance: int = 80

    def validate(self) -> None:
        if self.projection_size != 256:
            raise ConfigError("projection_size must be 256")


@dataclass
class LossConfig:
    resolutions: list[list[int]] = field(
        default_factory=lambda: [[1024, 120, 600], [2048, 240, 1200], [512, 50, 240]]
    )
    lambda_adv: float = 10.0
    aux_mix: float = 0.5
    log_floor: float = 1e-7
    use_spl: bool = True

    def validate(self) -> None:
        if not self.resolutions:
            raise ConfigError("at least one STFT resolution is required")
        for fft, hop, win in self.resolutions:
            if win > fft or hop < 1:
                raise ConfigError(f"invalid STFT resolution {(fft, hop, win)}")
        if self.lambda_adv <= 0:
            raise ConfigError("lambda_adv must be positive")


@dataclass
class TrainConfig:
    pretrain_steps: int = 1000
    total_steps: int = 2000
    batch_size: int = 4
    segment_length: int = 8192
    lr_g: float = 1e-4
    lr_d: float = 5e-5
    # conditional discriminator learning rate; None -> lr_d
    lr_d_cond: float | None = None
    betas: list[float] = field(default_factory=lambda: [0.9, 0.999])
    weight_decay: float = 0.0
    checkpoint_interval: int = 500
    log_interval: int = 1

    def validate(self) -> None:
        if self.pretrain_steps > self.total_steps:
            raise ConfigError("pretrain_steps must not exceed total_steps")
        if self.segment_length % 512:
            raise ConfigError("segment_length must be divisible by 512")


@dataclass
class DataConfig:
    vad_frame_ms: float = 100.0
    vad_threshold_db: float = -40.0
    vad_min_segment_ms: float = 200.0
    max_seconds: float = 11.0
    split_frame_ms: float = 10.0
    f0_min: float = 50.0
    f0_max: float = 1100.0
    f0_hop_ms: float = 10.0
    f0_clarity: float = 0.3


@dataclass
class EvalConfig:
    warmup: int = 1
    trials: int = 5
    seconds: float = 2.0


@dataclass
class RunConfig:
    seed: int = 0
    audio: AudioConfig = field(default_factory=AudioConfig)
    pqmf: PqmfConfig = field(default_factory=PqmfConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    uncond_disc: UncondDiscriminatorConfig = field(default_factory=UncondDiscriminatorConfig)
    cond_disc: CondDiscriminatorConfig = field(default_factory=CondDiscriminatorConfig)
    encoder: SpeakerEncoderConfig = field(default_factory=SpeakerEncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        self.generator.low.validate()
        self.generator.high.validate()
        self.encoder.validate()
        self.loss.validate()
        self.train.validate()
        if self.audio.hop_size % self.pqmf.num_bands:
            raise ConfigError("hop_size must be divisible by the number of bands")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _build(cls, data: dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    return _build(RunConfig, data or {}, "").validate()


def load_config(path: str | Path | None) -> RunConfig:
    """Load a RunConfig from a YAML or JSON file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig().validate()
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    return config_from_dict(data or {})


def set_by_path(cfg: RunConfig, dotted: str, value: Any) -> None:
    """Override a single entry, e.g. ``set_by_path(cfg, "train.total_steps", 10)``."""
    *parents, leaf = dotted.split(".")
    node = cfg
    for part in parents:
        if not hasattr(node, part):
            raise ConfigError(f"unknown config key {dotted}")
        node = getattr(node, part)
    if not dataclasses.is_dataclass(node) or leaf not in {f.name for f in dataclasses.fields(node)}:
        raise ConfigError(f"unknown config key {dotted}")
    setattr(node, leaf, value)


def smoke_config(seed: int = 0) -> RunConfig:
    """Compact model sizes that train in minutes on a single CPU core.

    Architecture shapes fixed by design (discriminator layer counts, dilations,
    pooling factors, 256-d embeddings) are kept; only widths and depths of the
    sub-generators and the speaker encoder hidden size shrink.
    """
    cfg = RunConfig(seed=seed)
    cfg.generator.low = SubGeneratorConfig(
        num_blocks=6, dilation_cycle=[1, 2, 4, 8, 16, 32],
        residual_channels=24, skip_channels=24, gate_channels=48,
    )
    cfg.generator.high = SubGeneratorConfig(
        num_blocks=4, dilation_cycle=[1, 2, 4, 8],
        residual_channels=24, skip_channels=24, gate_channels=48,
    )
    cfg.uncond_disc.channels = 32
    cfg.cond_disc.conv_channels = [16, 32, 64, 256]
    cfg.cond_disc.lstm_layers = 1
    cfg.encoder.hidden_size = 128
    cfg.train.segment_length = 4096
    cfg.train.batch_size = 2
    cfg.train.lr_g = 1e-3
    cfg.train.lr_d = 5e-4
    # the conditional branch's LSTM collapses into the dead ReLU region at higher rates
    cfg.train.lr_d_cond = 1e-4
    return cfg.validate()
