"""Packing conditioning records into fixed-size model samples.

Training layout: [P3] P3 [Sum] Sum [T] Theme [Ent] Entities [Size]
[P1] P1 [P2] P2 <|endoftext|> <pad>... where [Size] is one of [S]/[M]/[L].
The loss mask covers exactly the P2 content tokens plus the terminal
end-of-text token. Generation prefixes stop right after [P2].

When the sample is over budget, P1 truncates on the left and P3 on the
right, with 2/3 of the remaining space going to P1; budget a side cannot
use transfers to the other side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import SizeClass
from .errors import DataError
from .tokenizer import Vocab

# Segment kinds, in id order 0..6.
SEG_P1, SEG_P2, SEG_P3, SEG_SUM, SEG_THEME, SEG_ENT, SEG_SIZE = range(7)
N_SEGMENTS = 7

SUMMARY_SLOTS = ("kw", "key_sentence", "ext1", "ext2")


@dataclass
class TrainingSample:
    ids: list[int]
    segments: list[int]
    loss_mask: list[bool]
    attention_len: int


@dataclass
class GenerationPrefix:
    ids: list[int]
    segments: list[int]
    reserved: int


def truncate_context(
    p1: Sequence[int], p3: Sequence[int], remaining: int
) -> tuple[list[int], list[int]]:
    """Fit P1 (keep its suffix) and P3 (keep its prefix) into `remaining`
    tokens, allocating 2/3 to P1; unused budget moves to the other side."""
    if remaining < 0:
        raise DataError(f"negative context budget: {remaining}")
    budget_p1 = (2 * remaining) // 3
    budget_p3 = remaining - budget_p1
    surplus_p1 = max(0, budget_p1 - len(p1))
    surplus_p3 = max(0, budget_p3 - len(p3))
    keep_p1 = min(len(p1), budget_p1 + surplus_p3)
    keep_p3 = min(len(p3), budget_p3 + surplus_p1)
    p1_out = list(p1[len(p1) - keep_p1 :]) if keep_p1 else []
    p3_out = list(p3[:keep_p3])
    return p1_out, p3_out


def _sections(
    vocab: Vocab,
    p1: Sequence[int],
    p3: Sequence[int],
    summary: Sequence[int],
    theme: Sequence[int],
    entities: Sequence[int],
    size: SizeClass,
    conditioned: bool,
) -> list[tuple[int, Sequence[int], int]]:
    """(separator id, content ids, segment id) per section, in layout order."""
    sid = vocab.special_id
    if conditioned:
        return [
            (sid("[P3]"), p3, SEG_P3),
            (sid("[Sum]"), summary, SEG_SUM),
            (sid("[T]"), theme, SEG_THEME),
            (sid("[Ent]"), entities, SEG_ENT),
            (sid(f"[{size.value}]"), (), SEG_SIZE),
            (sid("[P1]"), p1, SEG_P1),
        ]
    return [(sid("[P1]"), p1, SEG_P1)]


def build_training_sample(
    vocab: Vocab,
    p1: Sequence[int],
    p2: Sequence[int],
    p3: Sequence[int],
    summary: Sequence[int],
    theme: Sequence[int],
    entities: Sequence[int],
    size: SizeClass,
    block_size: int,
    conditioned: bool = True,
    context_cut: int = 0,
) -> TrainingSample:
    """Pack one record into a padded block with segments and loss mask.

    context_cut shrinks the P1/P3 budget below the natural block fill; the
    training loop jitters it per sample so end-of-text positions vary and
    the model has to learn paragraph length relative to [P2] rather than
    reading it off the absolute position.
    """
    if not p2:
        raise DataError("sample dropped: empty P2")
    n_separators = 6 if conditioned else 1
    fixed = n_separators + 1  # section markers + [P2]
    if conditioned:
        fixed += len(summary) + len(theme) + len(entities)
    fixed += len(p2) + 1  # content + <|endoftext|>
    if fixed > block_size:
        raise DataError(
            f"sample dropped: P2 exceeds budget ({fixed} fixed tokens > block {block_size})"
        )
    budget = max(0, block_size - fixed - max(0, context_cut))
    p1_fit, p3_fit = _fit_context(p1, p3, budget, conditioned)

    ids: list[int] = []
    segments: list[int] = []
    for sep, content, seg in _sections(vocab, p1_fit, p3_fit, summary, theme, entities, size, conditioned):
        ids.append(sep)
        segments.append(seg)
        ids.extend(content)
        segments.extend([seg] * len(content))
    p2_marker_pos = len(ids)
    ids.append(vocab.special_id("[P2]"))
    segments.append(SEG_P2)
    ids.extend(p2)
    segments.extend([SEG_P2] * len(p2))
    ids.append(vocab.eos_id)
    segments.append(SEG_P2)

    attention_len = len(ids)
    loss_mask = [False] * attention_len
    for k in range(p2_marker_pos + 1, attention_len):
        loss_mask[k] = True

    pad = block_size - attention_len
    ids.extend([vocab.pad_id] * pad)
    segments.extend([SEG_P2] * pad)
    loss_mask.extend([False] * pad)
    return TrainingSample(ids=ids, segments=segments, loss_mask=loss_mask, attention_len=attention_len)


def _fit_context(
    p1: Sequence[int], p3: Sequence[int], remaining: int, conditioned: bool
) -> tuple[list[int], list[int]]:
    if conditioned:
        return truncate_context(p1, p3, remaining)
    # No [P3] section: the whole budget belongs to P1.
    keep = min(len(p1), remaining)
    return (list(p1[len(p1) - keep :]) if keep else [], [])


def build_generation_prefix(
    vocab: Vocab,
    p1: Sequence[int],
    p3: Sequence[int],
    summary: Sequence[int],
    theme: Sequence[int],
    entities: Sequence[int],
    size: SizeClass,
    block_size: int,
    reserve: int,
    conditioned: bool = True,
) -> GenerationPrefix:
    """Same layout as a training sample through [P2], leaving `reserve`
    positions free for the generated paragraph."""
    if reserve < 1:
        raise DataError(f"reserve must be >= 1, got {reserve}")
    n_separators = 6 if conditioned else 1
    fixed = n_separators + 1
    if conditioned:
        fixed += len(summary) + len(theme) + len(entities)
    remaining = block_size - fixed - reserve
    if remaining < 0:
        raise DataError(
            f"context too large: fixed part {fixed} + reserve {reserve} exceeds block {block_size}"
        )
    p1_fit, p3_fit = _fit_context(p1, p3, remaining, conditioned)
    ids: list[int] = []
    segments: list[int] = []
    for sep, content, seg in _sections(vocab, p1_fit, p3_fit, summary, theme, entities, size, conditioned):
        ids.append(sep)
        segments.append(seg)
        ids.extend(content)
        segments.extend([seg] * len(content))
    ids.append(vocab.special_id("[P2]"))
    segments.append(SEG_P2)
    return GenerationPrefix(ids=ids, segments=segments, reserved=reserve)


def choose_summary(summaries: dict, rng: np.random.Generator) -> str:
    """Uniformly pick one non-empty summary slot; empty string if none."""
    options: list[str] = []
    for slot in SUMMARY_SLOTS:
        value = summaries.get(slot)
        if isinstance(value, list):
            if value:
                options.append(", ".join(value))
        elif value:
            options.append(str(value))
    if not options:
        return ""
    return options[int(rng.integers(len(options)))]


def summary_text(summaries: dict, slot: str) -> str:
    """Render one named summary slot as section text."""
    value = summaries.get(slot)
    if isinstance(value, list):
        return ", ".join(value)
    return str(value) if value else ""


def entities_text(entities: dict) -> str:
    """Names joined by ', ' in category order persons, locations,
    organisations, misc."""
    names: list[str] = []
    for category in ("persons", "locations", "organisations", "misc"):
        names.extend(entities.get(category, []))
    return ", ".join(names)


def section_tokens(vocab: Vocab, text: str) -> list[int]:
    """Encode section text with a leading space so words keep the same
    token form they have mid-paragraph."""
    text = text.strip()
    return vocab.encode(" " + text) if text else []


def sample_rng(seed: int, book_idx: int, para_idx: int, epoch: int) -> np.random.Generator:
    """Independent per-sample stream, stable across workers."""
    return np.random.default_rng(np.random.SeedSequence([seed, book_idx, para_idx, epoch]))


def iter_records(book_docs: Sequence[dict]) -> Iterable[dict]:
    """Flatten annotated book documents into (P1, P2, P3, metadata) records."""
    for book_idx, doc in enumerate(book_docs):
        paragraphs = doc["paragraphs"]
        genre = doc["metadata"].get("genre") or ""
        title = doc["metadata"].get("title", f"book{book_idx}")
        for k, para in enumerate(paragraphs):
            yield {
                "book_idx": book_idx,
                "book_title": title,
                "para_idx": para["index"],
                "sample_id": f"{book_idx}:{para['index']}",
                "p1": paragraphs[k - 1]["text"] if k > 0 else "",
                "p2": para["text"],
                "p3": paragraphs[k + 1]["text"] if k + 1 < len(paragraphs) else "",
                "genre": genre,
                "size_class": SizeClass(para["size_class"]),
                "entities": para.get("entities", {}),
                "summaries": para.get("summaries", {}),
            }


def encode_record_sample(
    vocab: Vocab,
    record: dict,
    block_size: int,
    rng: np.random.Generator,
    conditioned: bool = True,
    summarizer: str | None = None,
    context_jitter: int = 0,
) -> TrainingSample:
    """Tokenize one record and pack it; `summarizer` pins a summary slot
    instead of sampling one; `context_jitter` draws a per-sample context
    cut in [0, jitter] from the record's stream."""
    if summarizer is None:
        summary = choose_summary(record["summaries"], rng)
    else:
        summary = summary_text(record["summaries"], summarizer)
    cut = int(rng.integers(0, context_jitter + 1)) if context_jitter > 0 else 0
    return build_training_sample(
        vocab,
        p1=section_tokens(vocab, record["p1"]),
        p2=section_tokens(vocab, record["p2"]),
        p3=section_tokens(vocab, record["p3"]),
        summary=section_tokens(vocab, summary),
        theme=section_tokens(vocab, record["genre"]),
        entities=section_tokens(vocab, entities_text(record["entities"])),
        size=record["size_class"],
        block_size=block_size,
        conditioned=conditioned,
        context_cut=cut,
    )


def compute_size_stats(book_docs: Sequence[dict], vocab: Vocab) -> dict:
    """Per-size-class percentiles of P2 token lengths, stored with the vocab
    and used for generation reserves and decode length bounds."""
    lengths: dict[str, list[int]] = {s.value: [] for s in SizeClass}
    for record in iter_records(book_docs):
        lengths[record["size_class"].value].append(len(section_tokens(vocab, record["p2"])))
    stats = {}
    for cls, values in lengths.items():
        if values:
            arr = np.asarray(values)
            stats[cls] = {
                "count": int(arr.size),
                "p5": int(np.percentile(arr, 5, method="lower")),
                "p50": int(np.percentile(arr, 50, method="nearest")),
                "p95": int(np.percentile(arr, 95, method="higher")),
            }
        else:
            stats[cls] = {"count": 0, "p5": 0, "p50": 0, "p95": 0}
    return stats


def sample_to_json_line(sample: TrainingSample) -> str:
    """Deterministic debug dump row: one JSON object per sample."""
    return json.dumps(
        {
            "ids": sample.ids,
            "segments": sample.segments,
            "mask": [int(b) for b in sample.loss_mask],
        },
        separators=(",", ":"),
    )
