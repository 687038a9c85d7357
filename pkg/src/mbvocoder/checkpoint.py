"""Versioned checkpoint container: named parameter tensors plus the full run config."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any

import torch

from .config import RunConfig, config_from_dict
from .model import MultiBandGenerator

FORMAT = "mbvocoder-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, cfg: RunConfig, **payload: Any) -> Path:
    """Write atomically; ``payload`` holds state dicts and bookkeeping."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {"format": FORMAT, "version": VERSION, "config": cfg.to_dict(), **payload}
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[RunConfig, dict[str, Any]]:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # torch surfaces corrupt files as several unrelated types
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if blob.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    return config_from_dict(blob["config"]), blob


def load_generator(path: str | Path) -> tuple[MultiBandGenerator, RunConfig]:
    cfg, blob = load_checkpoint(path)
    gen = MultiBandGenerator(cfg.generator, cfg.pqmf, cfg.audio)
    try:
        gen.load_state_dict(blob["generator"])
    except (KeyError, RuntimeError) as exc:
        raise CheckpointError(f"{path}: generator weights do not match the stored config ({exc})") from exc
    gen.eval()
    return gen, cfg
