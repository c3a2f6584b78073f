"""Command-line entry point: preprocess, annotate, build-vocab, train,
generate, evaluate, serve.

Every option can come from a JSON config file (--config, one section per
subcommand); explicit flags win over file values, file values over
defaults. Each run writes an effective-config snapshot next to its
outputs. Exit codes: 0 ok, 1 usage, 2 data error, 3 internal.
"""

from __future__ import annotations

import json
import logging
import sys
from importlib import resources
from pathlib import Path

import click

from . import __version__, assembly, corpus, metrics
from .annotate import annotate_book_document
from .decode import DecodeParams, generate_paragraph
from .errors import DataError
from .model import (
    ModelConfig,
    TrainHyper,
    load_checkpoint,
    make_model,
    save_checkpoint,
    train_model,
)
from .tokenizer import Vocab, train_bpe

log = logging.getLogger(__name__)


def _packaged(name: str) -> Path:
    return Path(str(resources.files("parafill").joinpath("data", name)))


DEFAULTS: dict[str, dict] = {
    "preprocess": {
        "meta": None,
        "genre_map": str(_packaged("genre_map.json")),
        "min_chars": 400,
        "max_chars": 1700,
    },
    "annotate": {"gazetteer": str(_packaged("gazetteer.json")), "keywords": 10},
    "build-vocab": {"vocab_size": 8192},
    "train": {
        "conditioning": "full",
        "epochs": 3,
        "batch_size": 8,
        "context_jitter": 0,
        "block_size": 256,
        "n_layers": 4,
        "n_heads": 4,
        "d_model": 128,
        "dropout": 0.1,
        "lr": 3e-4,
        "weight_decay": 0.01,
        "grad_clip": 1.0,
        "seed": 0,
    },
    "generate": {
        "size": None,
        "strategy": "sample",
        "top_p": 0.9,
        "top_k": None,
        "temperature": 1.0,
        "min_length": None,
        "max_length": None,
        "seed": 0,
        "out": None,
    },
    "evaluate": {
        "summarizer": "kw",
        "strategy": "sample",
        "top_p": 0.9,
        "seed": 0,
        "max_samples": None,
        "csv": None,
        "hist": None,
    },
    "serve": {
        "host": "127.0.0.1",
        "port": 8000,
        "nodes": None,
        "gazetteer": None,
        "webui": None,
    },
}


def _effective(command: str, ctx: click.Context, flags: dict) -> dict:
    file_cfg = (ctx.obj or {}).get(command, {})
    merged = dict(DEFAULTS.get(command, {}))
    merged.update(file_cfg)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _write_snapshot(out_dir: str | Path, command: str, cfg: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {"command": command, "parafill_version": __version__, **cfg}
    with open(out_dir / f"{command.replace('-', '_')}_config.json", "w", encoding="utf-8") as fh:
        json.dump(snapshot, fh, indent=2, sort_keys=True)


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON config file with one section per subcommand.")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def cli(ctx: click.Context, config: str | None, verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    ctx.obj = {}
    if config:
        with open(config, encoding="utf-8") as fh:
            ctx.obj = json.load(fh)


@cli.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--meta", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Metadata sidecar JSONL; defaults to IN/metadata.jsonl.")
@click.option("--genre-map", "genre_map", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--min-chars", type=int, default=None)
@click.option("--max-chars", type=int, default=None)
@click.pass_context
def preprocess(ctx, in_dir, out_dir, meta, genre_map, min_chars, max_chars):
    """Ingest raw novels + metadata sidecar into per-book JSON documents."""
    cfg = _effective("preprocess", ctx, {
        "in": in_dir, "out": out_dir, "meta": meta, "genre_map": genre_map,
        "min_chars": min_chars, "max_chars": max_chars,
    })
    in_dir = Path(cfg["in"])
    out_path = Path(cfg["out"])
    meta_path = Path(cfg["meta"]) if cfg["meta"] else in_dir / "metadata.jsonl"
    if not meta_path.exists():
        raise DataError(f"metadata sidecar not found: {meta_path}")
    genre_table = corpus.load_genre_map(cfg["genre_map"])
    out_path.mkdir(parents=True, exist_ok=True)
    kept = rejected = 0
    with open(meta_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            source = in_dir / record["path"]
            try:
                book = corpus.ingest_book(
                    source.read_bytes(), record, genre_table,
                    cfg["min_chars"], cfg["max_chars"],
                )
            except corpus.BookRejected as exc:
                log.info("rejected %s: %s", record["path"], exc)
                rejected += 1
                continue
            target = out_path / (Path(record["path"]).stem + ".json")
            with open(target, "w", encoding="utf-8") as out_fh:
                json.dump(corpus.book_to_dict(book), out_fh, ensure_ascii=False, indent=1)
            kept += 1
    _write_snapshot(out_path, "preprocess", cfg)
    click.echo(f"preprocess: kept {kept} books, rejected {rejected}")


@cli.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--gazetteer", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--keywords", type=int, default=None)
@click.pass_context
def annotate(ctx, in_dir, gazetteer, keywords):
    """Add entities and summaries to every paragraph, in place."""
    cfg = _effective("annotate", ctx, {"in": in_dir, "gazetteer": gazetteer, "keywords": keywords})
    with open(cfg["gazetteer"], encoding="utf-8") as fh:
        gaz = json.load(fh)
    n_para = 0
    for path in sorted(Path(cfg["in"]).glob("*.json")):
        if path.name.endswith("_config.json"):
            continue
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if "paragraphs" not in doc:
            continue
        annotate_book_document(doc, gaz, cfg["keywords"])
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, ensure_ascii=False, indent=1)
        n_para += len(doc["paragraphs"])
    _write_snapshot(Path(cfg["in"]), "annotate", cfg)
    click.echo(f"annotate: {n_para} paragraphs annotated")


def _load_books(directory: str | Path) -> list[dict]:
    docs = []
    for path in sorted(Path(directory).glob("*.json")):
        if path.name.endswith("_config.json"):
            continue
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if "paragraphs" in doc:
            docs.append(doc)
    if not docs:
        raise DataError(f"no book documents found in {directory}")
    return docs


@cli.command("build-vocab")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--vocab-size", type=int, default=None)
@click.pass_context
def build_vocab(ctx, in_dir, out_dir, vocab_size):
    """Train the BPE vocabulary and record corpus token-length statistics."""
    cfg = _effective("build-vocab", ctx, {"in": in_dir, "out": out_dir, "vocab_size": vocab_size})
    books = _load_books(cfg["in"])
    texts = (" " + p["text"] for doc in books for p in doc["paragraphs"])
    vocab = train_bpe(texts, cfg["vocab_size"])
    out_path = Path(cfg["out"])
    vocab.save(out_path)
    stats = assembly.compute_size_stats(books, vocab)
    with open(out_path / "stats.json", "w", encoding="utf-8") as fh:
        json.dump({"vocab_hash": vocab.content_hash(), "p2_token_length": stats}, fh, indent=2)
    _write_snapshot(out_path, "build-vocab", cfg)
    click.echo(f"build-vocab: {vocab.size} tokens, hash {vocab.content_hash()[:12]}")


@cli.command()
@click.option("--books", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--vocab", "vocab_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--conditioning", type=click.Choice(["full", "none"]), default=None,
              help="'none' trains the unconditioned P1->P2 baseline.")
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--block-size", type=int, default=None)
@click.option("--n-layers", type=int, default=None)
@click.option("--n-heads", type=int, default=None)
@click.option("--d-model", type=int, default=None)
@click.option("--dropout", type=float, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--context-jitter", type=int, default=None,
              help="Per-sample random cut of the P1/P3 budget (varies sample lengths).")
@click.option("--seed", type=int, default=None)
@click.pass_context
def train(ctx, books, vocab_dir, out_dir, conditioning, epochs, batch_size, block_size,
          n_layers, n_heads, d_model, dropout, lr, context_jitter, seed):
    """Train the conditioned model (or the baseline) from scratch."""
    cfg = _effective("train", ctx, {
        "books": books, "vocab": vocab_dir, "out": out_dir, "conditioning": conditioning,
        "epochs": epochs, "batch_size": batch_size, "block_size": block_size,
        "n_layers": n_layers, "n_heads": n_heads, "d_model": d_model,
        "dropout": dropout, "lr": lr, "context_jitter": context_jitter, "seed": seed,
    })
    book_docs = _load_books(cfg["books"])
    vocab = Vocab.load(cfg["vocab"])
    records = list(assembly.iter_records(book_docs))
    conditioned = cfg["conditioning"] == "full"
    dropped: set[str] = set()

    def epoch_samples(epoch: int):
        samples = []
        for record in records:
            rng = assembly.sample_rng(cfg["seed"], record["book_idx"], record["para_idx"], epoch)
            try:
                samples.append(
                    assembly.encode_record_sample(
                        vocab, record, cfg["block_size"], rng, conditioned=conditioned,
                        context_jitter=cfg["context_jitter"],
                    )
                )
            except DataError:
                dropped.add(record["sample_id"])
        return samples

    config = ModelConfig(
        vocab_size=vocab.size, n_layers=cfg["n_layers"], n_heads=cfg["n_heads"],
        d_model=cfg["d_model"], block_size=cfg["block_size"], dropout=cfg["dropout"],
    )
    model = make_model(config, seed=cfg["seed"])
    out_path = Path(cfg["out"])
    out_path.mkdir(parents=True, exist_ok=True)
    hyper = TrainHyper(lr=cfg["lr"], weight_decay=cfg["weight_decay"], grad_clip=cfg["grad_clip"])
    losses = train_model(
        model, epoch_samples, cfg["epochs"], cfg["batch_size"], hyper,
        seed=cfg["seed"], log_path=out_path / "train_log.jsonl",
        progress=lambda row: click.echo(
            f"  step {row['step']} epoch {row['epoch']} loss {row['loss']:.4f}", err=True
        ) if row["step"] % 50 == 0 else None,
    )
    save_checkpoint(
        model, vocab.content_hash(), out_path / "model.ckpt",
        extra={"conditioning": cfg["conditioning"], "epoch_losses": losses,
               "dropped_samples": len(dropped)},
    )
    _write_snapshot(out_path, "train", cfg)
    click.echo(
        f"train: {len(records) - len(dropped)}/{len(records)} samples, "
        f"epoch losses {[round(x, 4) for x in losses]}"
    )


def _decode_bounds(stats: dict | None, size: str | None, block_size: int,
                   min_length, max_length) -> tuple[int, int]:
    if min_length is not None and max_length is not None:
        return int(min_length), int(max_length)
    lo, hi = 8, max(16, block_size // 2)
    if stats:
        rows = [r for c, r in stats.items() if r.get("count", 0) > 0 and (size is None or c == size)]
        if rows:
            lo = min(int(r["p5"]) for r in rows)
            hi = max(int(r["p95"]) for r in rows)
    return (int(min_length) if min_length is not None else max(1, lo),
            int(max_length) if max_length is not None else max(2, hi))


def _load_stats(vocab_dir: str | Path) -> dict | None:
    path = Path(vocab_dir) / "stats.json"
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            return json.load(fh).get("p2_token_length")
    return None


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", "vocab_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--context", "context_file", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSON file with p1, p3, genre, entities, summary.")
@click.option("--size", type=click.Choice(["S", "M", "L"]), default=None)
@click.option("--strategy", type=click.Choice(["greedy", "beam", "sample"]), default=None)
@click.option("--top-p", type=float, default=None)
@click.option("--top-k", type=int, default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--min-length", type=int, default=None)
@click.option("--max-length", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_file", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def generate(ctx, checkpoint, vocab_dir, context_file, size, strategy, top_p, top_k,
             temperature, min_length, max_length, seed, out_file):
    """Generate a middle paragraph for a context file."""
    cfg = _effective("generate", ctx, {
        "checkpoint": checkpoint, "vocab": vocab_dir, "context": context_file,
        "size": size, "strategy": strategy, "top_p": top_p, "top_k": top_k,
        "temperature": temperature, "min_length": min_length, "max_length": max_length,
        "seed": seed, "out": out_file,
    })
    vocab = Vocab.load(cfg["vocab"])
    model, _, _ = load_checkpoint(cfg["checkpoint"], expected_vocab_hash=vocab.content_hash())
    with open(cfg["context"], encoding="utf-8") as fh:
        context = json.load(fh)
    size_value = cfg["size"] or context.get("size") or "M"
    stats = _load_stats(cfg["vocab"])
    lo, hi = _decode_bounds(stats, size_value, model.config.block_size,
                            cfg["min_length"], cfg["max_length"])
    params = DecodeParams(
        strategy=cfg["strategy"], temperature=cfg["temperature"], top_k=cfg["top_k"],
        top_p=cfg["top_p"], min_length=lo, max_length=hi, seed=cfg["seed"],
    )
    summary = context.get("summary", "")
    if isinstance(summary, list):
        summary = ", ".join(summary)
    prefix = assembly.build_generation_prefix(
        vocab,
        p1=assembly.section_tokens(vocab, context.get("p1", "")),
        p3=assembly.section_tokens(vocab, context.get("p3", "")),
        summary=assembly.section_tokens(vocab, summary),
        theme=assembly.section_tokens(vocab, context.get("genre", "")),
        entities=assembly.section_tokens(vocab, assembly.entities_text(context.get("entities", {}))),
        size=corpus.SizeClass(size_value),
        block_size=model.config.block_size,
        reserve=params.max_length + 1,
    )
    result = generate_paragraph(model, vocab, prefix, params)
    if cfg["out"]:
        out_path = Path(cfg["out"])
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(result.text + "\n", encoding="utf-8")
        _write_snapshot(out_path.parent, "generate", cfg)
    click.echo(result.text)
    click.echo(f"[stop: {result.stop_reason}, {len(result.ids)} tokens]", err=True)


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--baseline", "baseline_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", "vocab_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--eval-set", "eval_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_file", required=True, type=click.Path(dir_okay=False))
@click.option("--summarizer", type=click.Choice(["kw", "key_sentence"]), default=None)
@click.option("--strategy", type=click.Choice(["greedy", "beam", "sample"]), default=None)
@click.option("--top-p", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--max-samples", type=int, default=None)
@click.option("--min-length", type=int, default=None)
@click.option("--max-length", type=int, default=None)
@click.option("--csv", "csv_file", type=click.Path(dir_okay=False), default=None)
@click.option("--hist", "hist_dir", type=click.Path(file_okay=False), default=None)
@click.pass_context
def evaluate(ctx, model_path, baseline_path, vocab_dir, eval_dir, out_file, summarizer,
             strategy, top_p, seed, max_samples, min_length, max_length, csv_file, hist_dir):
    """Paired model-vs-baseline evaluation over held-out books."""
    cfg = _effective("evaluate", ctx, {
        "model": model_path, "baseline": baseline_path, "vocab": vocab_dir,
        "eval_set": eval_dir, "out": out_file, "summarizer": summarizer,
        "strategy": strategy, "top_p": top_p, "seed": seed, "max_samples": max_samples,
        "min_length": min_length, "max_length": max_length,
        "csv": csv_file, "hist": hist_dir,
    })
    vocab = Vocab.load(cfg["vocab"])
    model, _, _ = load_checkpoint(cfg["model"], expected_vocab_hash=vocab.content_hash())
    baseline, _, _ = load_checkpoint(cfg["baseline"], expected_vocab_hash=vocab.content_hash())
    records = list(assembly.iter_records(_load_books(cfg["eval_set"])))
    stats = _load_stats(cfg["vocab"])
    lo, hi = _decode_bounds(stats, None, model.config.block_size,
                            cfg.get("min_length"), cfg.get("max_length"))
    params = DecodeParams(strategy=cfg["strategy"], top_p=cfg["top_p"],
                          min_length=lo, max_length=hi, seed=cfg["seed"])
    report_model, report_base = metrics.evaluate_run(
        model, baseline, records, params,
        vocab=vocab, block_size=model.config.block_size, summarizer=cfg["summarizer"],
        model_id=Path(cfg["model"]).name, baseline_id=Path(cfg["baseline"]).name,
        max_samples=cfg["max_samples"],
        progress=lambda done, total: click.echo(f"  evaluated {done}/{total}", err=True)
        if done % 25 == 0 else None,
    )
    comparison = {}
    for key in ("bleu", "rouge1_f", "rouge2_f", "entities_count", "kw_count"):
        pairs = [
            (m[key], b[key])
            for m, b in zip(report_model.per_sample, report_base.per_sample)
            if m.get(key) is not None and b.get(key) is not None
        ]
        if pairs:
            comparison[key] = metrics.paired_bootstrap(
                [m - b for m, b in pairs], seed=cfg["seed"]
            )
    out_path = Path(cfg["out"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "model": report_model.to_dict(),
                "baseline": report_base.to_dict(),
                "comparison": comparison,
            },
            fh, indent=2,
        )
    if cfg["csv"]:
        metrics.write_report_csv(cfg["csv"], report_model)
        base_csv = Path(cfg["csv"])
        metrics.write_report_csv(base_csv.with_name(base_csv.stem + "_baseline.csv"), report_base)
    if cfg["hist"]:
        metrics.render_histograms(
            {"model": report_model, "baseline": report_base}, cfg["hist"]
        )
    _write_snapshot(out_path.parent, "evaluate", cfg)
    for key, row in comparison.items():
        click.echo(f"{key}: mean diff {row['mean']:+.4f} CI [{row['ci_low']:+.4f}, {row['ci_high']:+.4f}]")
    size_m = report_model.aggregates["size_ok"].get("mean")
    size_b = report_base.aggregates["size_ok"].get("mean")
    click.echo(f"size_ok: model {size_m:.3f} baseline {size_b:.3f}")
    click.echo(f"report written to {out_path}")


@cli.command()
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--vocab", "vocab_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--nodes", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--gazetteer", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--webui", type=click.Path(file_okay=False), default=None)
@click.pass_context
def serve(ctx, checkpoint, vocab_dir, host, port, nodes, gazetteer, webui):
    """Run the HTTP service (single binary, or master with a nodes file)."""
    import os

    import uvicorn

    from .service import ServiceSettings, create_app

    cfg = _effective("serve", ctx, {
        "checkpoint": checkpoint, "vocab": vocab_dir, "host": host, "port": port,
        "nodes": nodes, "gazetteer": gazetteer, "webui": webui,
    })
    bind = os.environ.get("BIND_ADDR")
    if bind and host is None and port is None:
        cfg["host"], _, bind_port = bind.partition(":")
        cfg["port"] = int(bind_port or 8000)
    settings = ServiceSettings.from_env(
        model_path=cfg.get("checkpoint"),
        vocab_path=cfg.get("vocab"),
        nodes_file=cfg.get("nodes"),
        gazetteer_path=cfg.get("gazetteer") or str(_packaged("gazetteer.json")),
        webui_dir=cfg.get("webui"),
    )
    app = create_app(settings)
    click.echo(f"serving on {cfg['host']}:{cfg['port']} (role {app.state.role})")
    uvicorn.run(app, host=cfg["host"], port=cfg["port"], log_level="info")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        return 1
    except DataError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        click.echo(f"internal error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
