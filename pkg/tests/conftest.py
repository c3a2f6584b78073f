"""Shared fixtures: a small on-disk world for service and CLI tests, and
the desk-scale experiment (corpus -> vocab -> two trained models ->
paired evaluation) behind the acceptance suite.

Set PARAFILL_CACHE_DIR to reuse desk-scale artifacts across pytest runs
while iterating; leave it unset for a pristine end-to-end run.
"""

import json
import os
import shutil
from pathlib import Path

import pytest
import torch

torch.set_num_threads(1)

from parafill.cli import main as cli_main
from parafill.model import ModelConfig, make_model, save_checkpoint
from parafill.tokenizer import MIN_VOCAB, train_bpe
from tests.corpusgen import make_corpus

# Desk-scale experiment pins (see the acceptance criteria): vocab 8192,
# model 4x4x128, block 256, <= 3 epochs, held-out eval >= 200 triples.
EXPERIMENT = {
    "train_books": 10,
    "train_paragraphs": 240,
    "eval_books": 1,
    "eval_paragraphs": 260,
    "corpus_seed": 20,
    "vocab_size": 8192,
    "block_size": 256,
    "n_layers": 4,
    "n_heads": 4,
    "d_model": 128,
    "dropout": 0.1,
    "epochs": 3,
    "batch_size": 1,
    "context_jitter": 128,
    "train_seed": 0,
    "eval_seed": 1,
    "eval_max_samples": 260,
    "version": 15,
    "lr": 1e-3,
}

WORLD_TEXTS = [
    "The storm swept over the harbour and the keeper watched the waves.",
    "Alice met Bob beside the lighthouse during the grey storm.",
    "The keeper trimmed the lantern while waves battered the jetty.",
    "Storm clouds gathered while Alice watched the harbour lights.",
    "Bob climbed the tower stairs and waved to the boats below.",
]


@pytest.fixture(scope="session")
def service_world(tmp_path_factory):
    root = tmp_path_factory.mktemp("service_world")
    vocab = train_bpe([" " + t for t in WORLD_TEXTS], MIN_VOCAB + 150)
    vocab_dir = root / "vocab"
    vocab.save(vocab_dir)
    stats = {
        "S": {"count": 10, "p5": 3, "p50": 6, "p95": 12},
        "M": {"count": 10, "p5": 8, "p50": 14, "p95": 20},
        "L": {"count": 10, "p5": 16, "p50": 22, "p95": 30},
    }
    with open(vocab_dir / "stats.json", "w", encoding="utf-8") as fh:
        json.dump({"vocab_hash": vocab.content_hash(), "p2_token_length": stats}, fh)
    config = ModelConfig(
        vocab_size=vocab.size, n_layers=1, n_heads=2, d_model=32, block_size=128,
        dropout=0.0,
    )
    model = make_model(config, seed=7)
    checkpoint = root / "model.ckpt"
    save_checkpoint(model, vocab.content_hash(), checkpoint)
    gazetteer = {"persons": [], "locations": ["London"], "organisations": ["Council"],
                 "misc": []}
    gazetteer_path = root / "gazetteer.json"
    with open(gazetteer_path, "w", encoding="utf-8") as fh:
        json.dump(gazetteer, fh)
    return {
        "root": root,
        "vocab": vocab,
        "vocab_dir": vocab_dir,
        "checkpoint": checkpoint,
        "gazetteer": gazetteer_path,
        "model": model,
    }


def run_desk_experiment(root: Path, spec: dict) -> dict:
    """Drive the full pipeline through the CLI and return artifact paths."""
    root.mkdir(parents=True, exist_ok=True)
    raw_train = make_corpus(
        root / "raw_train", n_books=spec["train_books"],
        paragraphs_per_book=spec["train_paragraphs"], seed=spec["corpus_seed"],
    )
    raw_eval = make_corpus(
        root / "raw_eval", n_books=spec["eval_books"],
        paragraphs_per_book=spec["eval_paragraphs"], seed=spec["corpus_seed"] + 1,
        include_decoys=False,
    )
    books_train = root / "books_train"
    books_eval = root / "books_eval"
    vocab_dir = root / "vocab"
    for raw, books in ((raw_train, books_train), (raw_eval, books_eval)):
        assert cli_main(["preprocess", "--in", str(raw), "--out", str(books)]) == 0
        assert cli_main([
            "annotate", "--in", str(books),
            "--gazetteer", str(raw_train / "gazetteer.json"), "--keywords", "10",
        ]) == 0
    assert cli_main([
        "build-vocab", "--in", str(books_train), "--out", str(vocab_dir),
        "--vocab-size", str(spec["vocab_size"]),
    ]) == 0
    common = [
        "--books", str(books_train), "--vocab", str(vocab_dir),
        "--epochs", str(spec["epochs"]), "--batch-size", str(spec["batch_size"]),
        "--block-size", str(spec["block_size"]),
        "--n-layers", str(spec["n_layers"]), "--n-heads", str(spec["n_heads"]),
        "--d-model", str(spec["d_model"]), "--dropout", str(spec["dropout"]),
        "--context-jitter", str(spec["context_jitter"]),
        "--lr", str(spec.get("lr", 3e-4)),
        "--seed", str(spec["train_seed"]),
    ]
    assert cli_main(["train", *common, "--out", str(root / "cond"),
                     "--conditioning", "full"]) == 0
    assert cli_main(["train", *common, "--out", str(root / "base"),
                     "--conditioning", "none"]) == 0
    assert cli_main([
        "evaluate",
        "--model", str(root / "cond" / "model.ckpt"),
        "--baseline", str(root / "base" / "model.ckpt"),
        "--vocab", str(vocab_dir), "--eval-set", str(books_eval),
        "--out", str(root / "report.json"),
        "--csv", str(root / "per_sample.csv"),
        "--summarizer", "kw", "--seed", str(spec["eval_seed"]),
        "--max-samples", str(spec["eval_max_samples"]),
    ]) == 0
    return _experiment_paths(root)


def _experiment_paths(root: Path) -> dict:
    return {
        "root": root,
        "books_train": root / "books_train",
        "books_eval": root / "books_eval",
        "vocab_dir": root / "vocab",
        "cond": root / "cond",
        "base": root / "base",
        "report": root / "report.json",
    }


@pytest.fixture(scope="session")
def desk_experiment(tmp_path_factory):
    """Desk-scale artifacts, built once (tens of minutes on one CPU) or
    reused from PARAFILL_CACHE_DIR when the experiment spec matches."""
    cache_root = os.environ.get("PARAFILL_CACHE_DIR")
    if cache_root:
        key = json.dumps(EXPERIMENT, sort_keys=True)
        root = Path(cache_root) / "desk"
        stamp = root / "experiment.json"
        if stamp.exists() and stamp.read_text() == key:
            return _experiment_paths(root)
        if root.exists():
            shutil.rmtree(root)
        paths = run_desk_experiment(root, EXPERIMENT)
        stamp.write_text(key)
        return paths
    return run_desk_experiment(tmp_path_factory.mktemp("desk"), EXPERIMENT)
