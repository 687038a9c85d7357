"""Command-line entry point: ``mbvocoder {preprocess,train,synth,bench,eval,stats}``."""

from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
import torch
import yaml

from . import data as D
from .checkpoint import load_generator
from .config import RunConfig, load_config, set_by_path
from .dsp import mel_spectrogram
from .eval import benchmark_rtf, eval_similarity
from .model import FullBandGenerator, MultiBandGenerator
from .speaker_encoder import (
    SpeakerEncoder,
    embedding_cache_build,
    load_encoder,
    save_encoder,
    train_encoder,
)
from .training import run_training

logger = logging.getLogger("mbvocoder")


class CommandError(RuntimeError):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise CommandError(f"--set expects KEY=VALUE, got {item!r}")
        set_by_path(cfg, key, yaml.safe_load(raw))
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _mel(samples: np.ndarray, cfg: RunConfig) -> np.ndarray:
    with torch.no_grad():
        return mel_spectrogram(torch.as_tensor(samples, dtype=torch.float32), cfg.audio).numpy()


# --- preprocess ------------------------------------------------------------

def cmd_preprocess(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    (out / "wavs").mkdir(parents=True, exist_ok=True)
    (out / "mels").mkdir(exist_ok=True)
    records = D.read_manifest(args.manifest)
    processed, failures = [], 0
    clips_by_singer: dict[str, list[torch.Tensor]] = defaultdict(list)
    dc = cfg.data
    for rec in records:
        try:
            sig = D.load_wav(rec.path, cfg.audio.sample_rate)
            voiced = D.vad_trim(sig, dc.vad_frame_ms, dc.vad_threshold_db, dc.vad_min_segment_ms)
            k = 0
            for a, b in voiced:
                part = D.AudioSignal(sig.samples[a:b], sig.sample_rate)
                for c0, c1 in D.segment(part, dc.max_seconds, dc.split_frame_ms):
                    clip = part.samples[c0:c1]
                    utt = f"{rec.utterance_id}_{k:03d}"
                    k += 1
                    wav_path = out / "wavs" / f"{utt}.wav"
                    D.save_wav(wav_path, clip, cfg.audio.sample_rate)
                    # mel from the PCM16 round-trip so it matches what training reloads
                    mel = _mel(D.load_wav(wav_path, cfg.audio.sample_rate).samples, cfg)
                    D.write_mel_file(out / "mels" / f"{utt}.mel", mel)
                    processed.append(D.ManifestRecord(utt, wav_path, rec.singer_id, rec.transcript))
                    clips_by_singer[rec.singer_id].append(torch.from_numpy(mel))
        except Exception as exc:
            failures += 1
            logger.error("preprocess failed for %s: %s", rec.utterance_id, exc)
    if records and failures == len(records):
        raise CommandError("every input file failed")
    D.write_manifest(out / "manifest.tsv", processed, relative_to=out)

    if args.encoder:
        encoder = load_encoder(args.encoder)
    else:
        steps = cfg.encoder.train_steps if args.encoder_steps is None else args.encoder_steps
        eligible = [s for s, v in clips_by_singer.items() if len(v) >= 2]
        if steps > 0 and len(eligible) >= 2:
            encoder, history = train_encoder(clips_by_singer, cfg.encoder, steps, seed=cfg.seed)
            logger.info("speaker encoder GE2E loss %.4f -> %.4f", history[0], history[-1])
        else:
            logger.warning("speaker encoder left untrained (needs 2 singers with 2 clips each)")
            torch.manual_seed(cfg.seed)
            encoder = SpeakerEncoder(cfg.encoder).eval()
    save_encoder(out / "encoder.pt", encoder)
    errors = embedding_cache_build(processed, encoder, out / "embeddings.bin", cfg.audio)
    print(f"preprocessed {len(records) - failures}/{len(records)} files into {len(processed)} clips "
          f"({failures} failed, {len(errors)} embedding errors) -> {out / 'manifest.tsv'}")
    return 0


# --- train / synth ---------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args)
    if args.pretrain_steps is not None:
        cfg.train.pretrain_steps = args.pretrain_steps
    if args.total_steps is not None:
        cfg.train.total_steps = args.total_steps
    if args.checkpoint_interval is not None:
        cfg.train.checkpoint_interval = args.checkpoint_interval
    cfg.validate()
    final = run_training(cfg, args.manifest, args.out, args.embeddings, args.encoder, args.resume)
    print(f"training finished: {final}")
    return 0


def cmd_synth(args) -> int:
    generator, cfg = load_generator(args.checkpoint)
    if args.mel:
        mel = D.read_mel_file(args.mel, cfg.audio.num_mels)
    elif args.wav:
        mel = _mel(D.load_wav(args.wav, cfg.audio.sample_rate).samples, cfg)
    else:
        raise CommandError("synth needs --mel or --wav")
    seed = cfg.seed if args.seed is None else args.seed
    torch.set_num_threads(1)
    audio = generator.synthesize(torch.from_numpy(mel)[None], seed=seed)[0, 0].numpy()
    D.save_wav(args.out, audio, cfg.audio.sample_rate)
    print(f"wrote {len(audio)} samples to {args.out}")
    return 0


# --- bench / eval / stats --------------------------------------------------

def cmd_bench(args) -> int:
    if args.checkpoint:
        generator, cfg = load_generator(args.checkpoint)
    else:
        cfg = _config(args)
        torch.manual_seed(cfg.seed)
        generator = MultiBandGenerator(cfg.generator, cfg.pqmf, cfg.audio)
    trials = args.trials or cfg.eval.trials
    warmup = cfg.eval.warmup if args.warmup is None else args.warmup
    seconds = args.seconds or cfg.eval.seconds
    frames = int(round(seconds * cfg.audio.sample_rate / cfg.audio.hop_size))
    rng = torch.Generator().manual_seed(cfg.seed)
    mel = torch.randn(1, frames, cfg.audio.num_mels, generator=rng) - 4.0
    report = benchmark_rtf(generator, [mel], trials, warmup, cfg.audio.sample_rate, cfg.audio.hop_size)
    sys.stdout.write(report.as_text())
    if args.full_band:
        torch.manual_seed(cfg.seed)
        full = FullBandGenerator(cfg.generator, cfg.audio)
        ref = benchmark_rtf(full, [mel], trials, warmup, cfg.audio.sample_rate, cfg.audio.hop_size)
        print(f"full_band_rtf={ref.rtf:.6f}")
        print(f"speedup={ref.rtf / report.rtf:.3f}")
    return 0


def _read_pairs(path) -> list[tuple[Path, Path]]:
    base = Path(path).parent
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        ref, syn = line.split("\t")[:2]
        pairs.append(tuple(p if Path(p).is_absolute() else base / p for p in (ref, syn)))
    return pairs


def cmd_eval(args) -> int:
    cfg = _config(args)
    encoder = load_encoder(args.encoder)
    report = eval_similarity(_read_pairs(args.pairs), encoder, cfg.audio)
    sys.stdout.write(report.as_text())
    return 0


def cmd_stats(args) -> int:
    cfg = _config(args)
    stats = D.corpus_stats(D.read_manifest(args.manifest), cfg.data, cfg.audio.sample_rate)
    text = stats.as_text()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON run config")
    common.add_argument("--seed", type=int, help="global seed (default: config seed)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set train.batch_size=2")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mbvocoder", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="VAD-trim, segment, extract mels and embeddings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--encoder", help="pretrained speaker encoder (skips GE2E training)")
    p.add_argument("--encoder-steps", type=int)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="pretrain and jointly train the vocoder")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--encoder")
    p.add_argument("--resume", metavar="CHECKPOINT")
    p.add_argument("--pretrain-steps", type=int)
    p.add_argument("--total-steps", type=int)
    p.add_argument("--checkpoint-interval", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", parents=[common], help="mel file -> 24 kHz PCM16 WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mel")
    p.add_argument("--wav", help="compute the mel from this WAV instead of --mel")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", parents=[common], help="real-time factor benchmark")
    p.add_argument("--checkpoint")
    p.add_argument("--seconds", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--full-band", action="store_true", help="also time the full-band ablation")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", parents=[common], help="speaker cosine similarity of WAV pairs")
    p.add_argument("--pairs", required=True, help="TSV of reference<TAB>synthetic paths")
    p.add_argument("--encoder", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", parents=[common], help="corpus pitch and duration statistics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except Exception as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {args.command}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
