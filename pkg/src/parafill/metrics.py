"""Generation quality metrics: BLEU, ROUGE-N, control scores
(EntitiesCount, KwCount, size conformance), reference-model perplexity,
and an embedding-cosine similarity, plus the paired model-vs-baseline
evaluation run that produces per-sample and aggregate reports.

Entity and keyword matching is whole-word and case-insensitive. BLEU uses
+1 smoothing on zero higher-order counts; both BLEU and ROUGE are exactly
1 on identical token lists and exactly 0 on disjoint ones.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import assembly
from .annotate import EntitySet
from .corpus import SizeClass, classify_size
from .decode import DecodeParams, generate_paragraph
from .errors import DataError
from .model import TinyLM, text_perplexity
from .tokenizer import Vocab

log = logging.getLogger(__name__)

METRIC_KEYS = (
    "perplexity",
    "bleu",
    "rouge1_f",
    "rouge2_f",
    "entities_count",
    "kw_count",
    "size_ok",
    "emb_sim",
)


def word_tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9']+", text.lower())


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Sequence, references: Sequence[Sequence], max_n: int = 4) -> float:
    """Geometric mean of clipped n-gram precisions times the brevity
    penalty exp(min(0, 1 - r/c)); zero higher-order overlaps get +1
    smoothing. Empty candidates score 0."""
    c = len(candidate)
    if c == 0:
        return 0.0
    if not references:
        raise DataError("bleu needs at least one reference")
    log_precisions: list[float] = []
    for n in range(1, max_n + 1):
        cand_counts = _ngrams(candidate, n)
        total = sum(cand_counts.values())
        if total == 0:
            # Candidate shorter than n: no n-grams to get wrong.
            log_precisions.append(0.0)
            continue
        max_ref: Counter = Counter()
        for ref in references:
            for gram, count in _ngrams(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        overlap = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        if overlap == 0:
            if n == 1:
                return 0.0
            log_precisions.append(math.log(1.0 / (total + 1)))
        else:
            log_precisions.append(math.log(overlap / total))
    ref_lens = [len(r) for r in references]
    r = min(ref_lens, key=lambda L: (abs(L - c), L))
    brevity = math.exp(min(0.0, 1.0 - r / c))
    return brevity * math.exp(sum(log_precisions) / max_n)


def rouge_n(candidate: Sequence, reference: Sequence, n: int) -> dict[str, float]:
    """Clipped n-gram overlap precision/recall/F1."""
    cand_counts = _ngrams(candidate, n)
    ref_counts = _ngrams(reference, n)
    overlap = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
    cand_total = sum(cand_counts.values())
    ref_total = sum(ref_counts.values())
    precision = overlap / cand_total if cand_total else 0.0
    recall = overlap / ref_total if ref_total else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def _contains_whole_word(text: str, phrase: str) -> bool:
    pattern = r"(?<![A-Za-z0-9])" + r"\s+".join(
        re.escape(part) for part in phrase.split()
    ) + r"(?![A-Za-z0-9])"
    return re.search(pattern, text, re.IGNORECASE) is not None


def entities_count(specified: EntitySet | dict, generated: str) -> float | None:
    """Fraction of specified entity names present in the generated text;
    None (excluded from aggregates) when nothing was specified."""
    if isinstance(specified, EntitySet):
        names = specified.all_names()
    else:
        names = []
        for category in ("persons", "locations", "organisations", "misc"):
            names.extend(specified.get(category, []))
    if not names:
        return None
    hits = sum(1 for name in names if _contains_whole_word(generated, name))
    return hits / len(names)


def kw_count(keywords: Sequence[str], generated: str) -> float | None:
    """Same contract as entities_count, over keyword strings."""
    keywords = [k for k in keywords if k]
    if not keywords:
        return None
    hits = sum(1 for kw in keywords if _contains_whole_word(generated, kw))
    return hits / len(keywords)


def size_conformance(requested: SizeClass, generated_text: str) -> bool:
    try:
        return classify_size(len(generated_text)) == requested
    except DataError:
        return False


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0.0:
        return 0.0
    return float(np.dot(a, b) / norm)


def pooled_embedding(model: TinyLM, vocab: Vocab, text: str) -> np.ndarray:
    ids = assembly.section_tokens(vocab, text)
    if not ids:
        raise DataError("cannot embed empty text")
    with torch.no_grad():
        vectors = model.tok_emb.weight[torch.tensor(ids, dtype=torch.long)]
        return vectors.double().mean(dim=0).numpy()


def embedding_similarity(model: TinyLM, vocab: Vocab, text_a: str, text_b: str) -> float:
    """Cosine of mean-pooled token embeddings under the reference model."""
    return cosine(pooled_embedding(model, vocab, text_a), pooled_embedding(model, vocab, text_b))


@dataclass
class MetricReport:
    condition: dict
    per_sample: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    def finalize(self) -> "MetricReport":
        self.aggregates = build_aggregates(self.per_sample)
        return self

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "aggregates": self.aggregates,
            "per_sample": self.per_sample,
        }


def build_aggregates(per_sample: list[dict]) -> dict:
    aggregates: dict = {}
    for key in METRIC_KEYS:
        values = [float(row[key]) for row in per_sample if row.get(key) is not None]
        if not values:
            aggregates[key] = {"count": 0}
            continue
        arr = np.asarray(values, dtype=np.float64)
        counts, edges = np.histogram(arr, bins=10)
        aggregates[key] = {
            "count": int(arr.size),
            "mean": float(arr.mean()),
            "median": float(np.median(arr)),
            "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
        }
    return aggregates


def paired_bootstrap(
    diffs: Sequence[float], n_boot: int = 2000, seed: int = 0
) -> dict[str, float]:
    """Percentile bootstrap of the mean paired difference."""
    arr = np.asarray(list(diffs), dtype=np.float64)
    if arr.size == 0:
        raise DataError("no paired differences to bootstrap")
    rng = np.random.default_rng(seed)
    means = rng.choice(arr, size=(n_boot, arr.size), replace=True).mean(axis=1)
    return {
        "mean": float(arr.mean()),
        "ci_low": float(np.percentile(means, 2.5)),
        "ci_high": float(np.percentile(means, 97.5)),
        "p5": float(np.percentile(means, 5.0)),
        "n": int(arr.size),
    }


def _score_generation(
    generated: str,
    record: dict,
    reference_model: TinyLM,
    vocab: Vocab,
) -> dict:
    true_p2 = record["p2"]
    gen_tokens = word_tokens(generated)
    true_tokens = word_tokens(true_p2)
    return {
        "perplexity": text_perplexity(reference_model, vocab, generated) if gen_tokens else None,
        "bleu": bleu(gen_tokens, [true_tokens]),
        "rouge1_f": rouge_n(gen_tokens, true_tokens, 1)["f1"],
        "rouge2_f": rouge_n(gen_tokens, true_tokens, 2)["f1"],
        "entities_count": entities_count(record["entities"], generated),
        "kw_count": kw_count(record["summaries"].get("kw", []), generated),
        "size_ok": size_conformance(record["size_class"], generated),
        "emb_sim": embedding_similarity(reference_model, vocab, generated, true_p2)
        if gen_tokens
        else None,
    }


def evaluate_run(
    model_under_test: TinyLM,
    baseline_model: TinyLM,
    eval_set: Sequence[dict],
    decode_params: DecodeParams,
    *,
    vocab: Vocab,
    block_size: int,
    summarizer: str = "kw",
    model_id: str = "model",
    baseline_id: str = "baseline",
    baseline_conditioned: bool = False,
    max_samples: int | None = None,
    progress=None,
) -> tuple[MetricReport, MetricReport]:
    """Generate P2 under both models for every held-out record (paired
    seeds, identical decode parameters) and score all metrics against the
    true P2. The baseline model doubles as the fluency/embedding reference.
    """
    records = list(eval_set)
    if max_samples is not None:
        records = records[:max_samples]
    if not records:
        raise DataError("empty eval set")

    def make_condition(which_id: str, conditioned: bool) -> dict:
        return {
            "model_id": which_id,
            "decode_params": asdict(decode_params),
            "summarizer_kind": summarizer,
            "conditioned": conditioned,
        }

    report_model = MetricReport(condition=make_condition(model_id, True))
    report_base = MetricReport(condition=make_condition(baseline_id, baseline_conditioned))
    reserve = decode_params.max_length + 1
    skipped = 0
    for idx, record in enumerate(records):
        seed = int(
            np.random.SeedSequence([decode_params.seed, idx, 0xE7A1]).generate_state(1)[0]
        )
        params = decode_params.replace(seed=seed)
        try:
            rows = {}
            for which, mdl, conditioned in (
                ("model", model_under_test, True),
                ("baseline", baseline_model, baseline_conditioned),
            ):
                prefix = assembly.build_generation_prefix(
                    vocab,
                    p1=assembly.section_tokens(vocab, record["p1"]),
                    p3=assembly.section_tokens(vocab, record["p3"]),
                    summary=assembly.section_tokens(
                        vocab, assembly.summary_text(record["summaries"], summarizer)
                    ),
                    theme=assembly.section_tokens(vocab, record["genre"]),
                    entities=assembly.section_tokens(
                        vocab, assembly.entities_text(record["entities"])
                    ),
                    size=record["size_class"],
                    block_size=block_size,
                    reserve=reserve,
                    conditioned=conditioned,
                )
                result = generate_paragraph(mdl, vocab, prefix, params)
                rows[which] = {
                    "sample_id": record["sample_id"],
                    "stop_reason": result.stop_reason,
                    "gen_chars": len(result.text),
                    **_score_generation(result.text, record, baseline_model, vocab),
                }
        except DataError as exc:
            skipped += 1
            log.warning("skipping %s: %s", record["sample_id"], exc)
            continue
        report_model.per_sample.append(rows["model"])
        report_base.per_sample.append(rows["baseline"])
        if progress:
            progress(idx + 1, len(records))
    if not report_model.per_sample:
        raise DataError("no evaluable records in eval set")
    report_model.condition["skipped"] = skipped
    report_base.condition["skipped"] = skipped
    return report_model.finalize(), report_base.finalize()


def write_report_json(path: str | Path, reports: dict[str, MetricReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({k: r.to_dict() for k, r in reports.items()}, fh, indent=2)


def write_report_csv(path: str | Path, report: MetricReport) -> None:
    keys = ["sample_id", "stop_reason", "gen_chars", *METRIC_KEYS]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(keys) + "\n")
        for row in report.per_sample:
            cells = []
            for key in keys:
                value = row.get(key)
                if isinstance(value, bool):
                    value = int(value)
                cells.append("" if value is None else str(value))
            fh.write(",".join(cells) + "\n")


def render_histograms(
    reports: dict[str, MetricReport], out_dir: str | Path, fmt: str = "png"
) -> list[Path]:
    """One figure per metric with all conditions overlaid (optional)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for key in METRIC_KEYS:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        plotted = False
        for name, report in reports.items():
            values = [
                float(r[key]) for r in report.per_sample if r.get(key) is not None
            ]
            if values:
                ax.hist(values, bins=20, alpha=0.55, label=name)
                plotted = True
        if not plotted:
            plt.close(fig)
            continue
        ax.set_title(key)
        ax.legend()
        fig.tight_layout()
        path = out_dir / f"{key}.{fmt}"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
