"""Shared test utilities: finite-difference gradient checks and toy corpora."""

import numpy as np
import torch


def fd_relative_error(fn, tensors, eps=1e-6, max_entries=64, seed=0):
    """Worst relative error between autograd and central differences.

    ``fn`` maps the tensors (float64, requires_grad) to a scalar. At most
    ``max_entries`` randomly chosen entries of each tensor are probed.
    The error is normalized by the largest numeric gradient magnitude so
    entries near zero do not blow up the ratio.
    """
    gen = np.random.default_rng(seed)
    out = fn(*tensors)
    grads = torch.autograd.grad(out, tensors, allow_unused=True)
    worst = 0.0
    for t, g in zip(tensors, grads):
        g = torch.zeros_like(t) if g is None else g
        flat = t.data.view(-1)
        idx = np.arange(flat.numel())
        if len(idx) > max_entries:
            idx = gen.choice(idx, size=max_entries, replace=False)
        numeric, analytic = [], []
        for i in idx:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                up = fn(*tensors).item()
                flat[i] = orig - eps
                down = fn(*tensors).item()
                flat[i] = orig
            numeric.append((up - down) / (2 * eps))
            analytic.append(g.reshape(-1)[i].item())
        numeric, analytic = np.array(numeric), np.array(analytic)
        scale = max(np.abs(numeric).max(), 1e-12)
        worst = max(worst, float(np.abs(numeric - analytic).max() / scale))
    return worst


def weighted_sum(out, seed=0):
    """Scalar probe of a tensor output with fixed random weights."""
    w = torch.randn(out.shape, generator=torch.Generator().manual_seed(seed), dtype=out.dtype)
    return (out * w).sum()


def tiny_config(seed=0):
    """Smallest config that still exercises every component; steps take milliseconds."""
    from mbvocoder.config import RunConfig, SubGeneratorConfig

    cfg = RunConfig(seed=seed)
    sub = dict(residual_channels=8, skip_channels=8, gate_channels=16)
    cfg.generator.low = SubGeneratorConfig(num_blocks=2, dilation_cycle=[1, 2], **sub)
    cfg.generator.high = SubGeneratorConfig(num_blocks=2, dilation_cycle=[1, 2], **sub)
    cfg.uncond_disc.channels = 8
    cfg.cond_disc.conv_channels = [4, 8, 16, 256]
    cfg.cond_disc.lstm_layers = 1
    cfg.encoder.hidden_size = 16
    cfg.train.segment_length = 1024
    cfg.train.batch_size = 2
    cfg.train.pretrain_steps = 2
    cfg.train.total_steps = 4
    cfg.train.checkpoint_interval = 2
    cfg.loss.resolutions = [[512, 64, 256], [256, 32, 128]]
    return cfg.validate()


def toy_corpus(root, cfg, profiles=2, clips=2, seconds=0.5, seed=0):
    """Synthetic corpus plus encoder and embedding cache laid out like ``preprocess`` output."""
    from mbvocoder.speaker_encoder import SpeakerEncoder, embedding_cache_build, save_encoder
    from mbvocoder.synthetic import default_profiles, write_corpus

    records = write_corpus(root, default_profiles(profiles), clips, seconds, seed=seed)
    torch.manual_seed(seed)
    enc = SpeakerEncoder(cfg.encoder).eval()
    save_encoder(root / "encoder.pt", enc)
    embedding_cache_build(records, enc, root / "embeddings.bin", cfg.audio)
    return records, enc
