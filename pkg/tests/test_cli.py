import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from mbvocoder.cli import main
from mbvocoder.data import load_wav, read_manifest, read_mel_file, save_wav, write_mel_file
from mbvocoder.speaker_encoder import read_embedding_cache
from mbvocoder.synthetic import default_profiles, synth_voice, write_corpus

from helpers import tiny_config


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_config().to_dict()))
    return path


@pytest.fixture
def raw_corpus(tmp_path):
    root = tmp_path / "raw"
    write_corpus(root, default_profiles(2), 2, 0.6, seed=0)
    # pad one file with silence so VAD has something to trim
    rng = np.random.default_rng(0)
    voice = synth_voice(default_profiles(1)[0], 0.5, rng=rng)
    save_wav(root / "wavs" / "padded.wav", np.concatenate([np.zeros(12000), voice, np.zeros(12000)]))
    with open(root / "manifest.tsv", "a") as f:
        f.write("padded\twavs/padded.wav\talto\n")
    return root


def preprocess(cfg_file, raw_corpus, out, *extra):
    return main(["preprocess", "--config", str(cfg_file), "--manifest", str(raw_corpus / "manifest.tsv"),
                 "--out", str(out), "--encoder-steps", "3", *extra])


def test_preprocess_outputs(cfg_file, raw_corpus, tmp_path, capsys):
    out = tmp_path / "prep"
    assert preprocess(cfg_file, raw_corpus, out) == 0
    records = read_manifest(out / "manifest.tsv")
    assert len(records) == 5
    padded = load_wav(next(r.path for r in records if r.utterance_id == "padded_000"))
    assert padded.duration == pytest.approx(0.5, abs=0.1)
    assert sorted(read_embedding_cache(out / "embeddings.bin")) == sorted(r.utterance_id for r in records)
    mel = read_mel_file(out / "mels" / "padded_000.mel")
    assert mel.shape[1] == 80 and mel.shape[0] == len(padded) // 128 + 1
    assert "preprocessed 5/5" in capsys.readouterr().out


def test_preprocess_is_idempotent(cfg_file, raw_corpus, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert preprocess(cfg_file, raw_corpus, a) == 0
    assert preprocess(cfg_file, raw_corpus, b) == 0
    for name in ("manifest.tsv", "embeddings.bin", "mels/padded_000.mel", "wavs/alto_000_000.wav"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_full_pipeline_train_synth_eval_stats_bench(cfg_file, raw_corpus, tmp_path, capsys):
    prep, run = tmp_path / "prep", tmp_path / "run"
    assert preprocess(cfg_file, raw_corpus, prep) == 0
    assert main(["train", "--config", str(cfg_file), "--manifest", str(prep / "manifest.tsv"),
                 "--out", str(run), "--total-steps", "3", "--pretrain-steps", "1",
                 "--checkpoint-interval", "3"]) == 0
    assert len((run / "train_log.jsonl").read_text().splitlines()) == 3

    mel_path = prep / "mels" / "alto_000_000.mel"
    outs = []
    for name in ("s1.wav", "s2.wav"):
        assert main(["synth", "--checkpoint", str(run / "last.pt"), "--mel", str(mel_path),
                     "--out", str(tmp_path / name), "--seed", "11"]) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    frames = read_mel_file(mel_path).shape[0]
    assert len(load_wav(tmp_path / "s1.wav").samples) == frames * 128

    (tmp_path / "pairs.tsv").write_text(f"{prep / 'wavs' / 'alto_000_000.wav'}\ts1.wav\n")
    capsys.readouterr()
    assert main(["eval", "--config", str(cfg_file), "--pairs", str(tmp_path / "pairs.tsv"),
                 "--encoder", str(prep / "encoder.pt")]) == 0
    text = capsys.readouterr().out
    kv = dict(line.split("=", 1) for line in text.split("[eval]")[1].split())
    assert int(kv["pairs"]) == 1 and -1 <= float(kv["cosine_similarity"]) <= 1

    assert main(["stats", "--manifest", str(prep / "manifest.tsv"), "--out", str(tmp_path / "s.txt")]) == 0
    assert "utterances=5" in (tmp_path / "s.txt").read_text()

    capsys.readouterr()
    assert main(["bench", "--checkpoint", str(run / "last.pt"), "--seconds", "0.2", "--trials", "3",
                 "--full-band"]) == 0
    out = capsys.readouterr().out
    assert "rtf=" in out and "speedup=" in out


def test_errors_are_single_machine_parsable_lines(tmp_path, capsys):
    assert main(["stats", "--manifest", str(tmp_path / "missing.tsv")]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: stats: FileNotFoundError:")
    assert main(["train", "--manifest", str(tmp_path / "m.tsv"), "--out", str(tmp_path),
                 "--set", "train.nope=1"]) == 1
    assert "ConfigError" in capsys.readouterr().err
    write_mel_file(tmp_path / "m.mel", np.zeros((3, 40), np.float32))
    assert main(["synth", "--checkpoint", str(tmp_path / "none.pt"), "--mel", str(tmp_path / "m.mel"),
                 "--out", str(tmp_path / "o.wav")]) == 1
    assert "CheckpointError" in capsys.readouterr().err


def test_preprocess_fails_when_every_file_fails(cfg_file, tmp_path, capsys):
    (tmp_path / "m.tsv").write_text("a\tnope.wav\ts\n")
    assert main(["preprocess", "--config", str(cfg_file), "--manifest", str(tmp_path / "m.tsv"),
                 "--out", str(tmp_path / "o")]) == 1
    assert "every input file failed" in capsys.readouterr().err


def test_module_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "mbvocoder", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for verb in ("preprocess", "train", "synth", "bench", "eval", "stats"):
        assert verb in res.stdout
