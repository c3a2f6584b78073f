"""Generation strategies over next-token distributions: greedy, beam
search with repetition controls, and temperature/top-k/nucleus sampling,
with min/max length bounds and end-of-text stopping.

All strategies consume a decoding session (anything with logits(),
advance(), fork(), vocab_size and remaining) so they run identically over
the real transformer and over hand-built table models in tests. Ties break
toward the lower token id everywhere, and sampling draws come from a
per-call seeded generator, so decoding is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import DataError


class Session(Protocol):
    vocab_size: int

    def logits(self) -> np.ndarray: ...

    def advance(self, token_id: int) -> None: ...

    def fork(self) -> "Session": ...

    @property
    def remaining(self) -> int: ...


@dataclass
class DecodeParams:
    strategy: str = "sample"
    temperature: float = 1.0
    top_k: int | None = None
    top_p: float | None = 0.9
    num_beams: int = 1
    repetition_penalty: float = 1.0
    no_repeat_ngram_size: int | None = None
    min_length: int = 1
    max_length: int = 128
    seed: int = 0
    length_norm_alpha: float = 0.7

    def __post_init__(self) -> None:
        if self.strategy not in ("greedy", "beam", "sample"):
            raise DataError(f"unknown strategy: {self.strategy!r}")
        if self.min_length > self.max_length:
            raise DataError(f"min_length {self.min_length} > max_length {self.max_length}")
        if self.top_p is not None and not (0.0 < self.top_p <= 1.0):
            raise DataError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.temperature <= 0.0:
            raise DataError(f"temperature must be > 0, got {self.temperature}")
        if self.repetition_penalty < 1.0:
            raise DataError(f"repetition_penalty must be >= 1, got {self.repetition_penalty}")
        if self.num_beams < 1:
            raise DataError(f"num_beams must be >= 1, got {self.num_beams}")

    def replace(self, **kwargs) -> "DecodeParams":
        data = self.__dict__ | kwargs
        return DecodeParams(**data)


@dataclass
class GenerationResult:
    ids: list[int]
    text: str
    stop_reason: str  # "eos" | "max_length"
    score: float = 0.0  # cumulative log-probability, eos step included


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits.astype(np.float64) - np.max(logits)
    exp = np.exp(shifted)
    return exp / exp.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits.astype(np.float64) - np.max(logits)
    return shifted - np.log(np.exp(shifted).sum())


def apply_temperature(logits: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0.0:
        raise DataError(f"temperature must be > 0, got {temperature}")
    return logits.astype(np.float64) / temperature


def apply_repetition_penalty(
    logits: np.ndarray, generated_ids: Sequence[int], penalty: float
) -> np.ndarray:
    """Discourage already-generated ids: positive logits divide by the
    penalty, negative ones multiply (sign-dependent convention)."""
    out = logits.astype(np.float64).copy()
    for token in set(generated_ids):
        if out[token] > 0:
            out[token] /= penalty
        else:
            out[token] *= penalty
    return out


def no_repeat_ngram_mask(generated_ids: Sequence[int], n: int | None) -> set[int]:
    """Ids that would complete an n-gram already present in the history."""
    if not n or n < 1:
        return set()
    ids = list(generated_ids)
    if len(ids) < n:
        return set()
    suffix = ids[len(ids) - (n - 1) :] if n > 1 else []
    forbidden: set[int] = set()
    for i in range(len(ids) - n + 1):
        if ids[i : i + n - 1] == suffix:
            forbidden.add(ids[i + n - 1])
    return forbidden


def top_k_filter(probs: np.ndarray, k: int) -> np.ndarray:
    """Keep the k most probable ids (ties toward lower id), renormalized."""
    if k < 1:
        raise DataError(f"top_k must be >= 1, got {k}")
    probs = probs.astype(np.float64)
    if k >= probs.shape[0]:
        return probs / probs.sum()
    order = np.argsort(-probs, kind="stable")
    out = np.zeros_like(probs)
    keep = order[:k]
    out[keep] = probs[keep]
    return out / out.sum()


def nucleus_filter(probs: np.ndarray, p: float) -> np.ndarray:
    """Keep the smallest probability-sorted set with cumulative mass >= p
    (ties toward lower id), zero the rest, renormalize."""
    if p <= 0.0:
        raise DataError(f"top_p must be > 0, got {p}")
    if p > 1.0:
        raise DataError(f"top_p must be <= 1, got {p}")
    probs = probs.astype(np.float64)
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    cutoff = int(np.searchsorted(csum, p, side="left"))
    cutoff = min(cutoff, probs.shape[0] - 1)
    keep = order[: cutoff + 1]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def _step_logits(
    raw: np.ndarray,
    generated: Sequence[int],
    params: DecodeParams,
    eos_id: int,
    forbidden_ids: Iterable[int],
    use_temperature: bool,
) -> np.ndarray:
    logits = raw.astype(np.float64)
    if use_temperature:
        logits = apply_temperature(logits, params.temperature)
    if params.repetition_penalty != 1.0:
        logits = apply_repetition_penalty(logits, generated, params.repetition_penalty)
    blocked = set(forbidden_ids) | no_repeat_ngram_mask(generated, params.no_repeat_ngram_size)
    if len(generated) < params.min_length:
        blocked.add(eos_id)
    if blocked:
        logits = logits.copy()
        logits[sorted(blocked)] = -np.inf
    return logits


def _effective_max(session: Session, params: DecodeParams) -> int:
    max_len = min(params.max_length, session.remaining)
    if max_len < params.min_length:
        raise DataError(
            f"cannot generate: min_length {params.min_length} exceeds available space {max_len}"
        )
    return max_len


def greedy_decode(
    session: Session,
    params: DecodeParams,
    eos_id: int,
    forbidden_ids: Iterable[int] = (),
) -> GenerationResult:
    """Argmax at every step (ties toward lower id); stops at end-of-text
    (never before min_length) or max_length."""
    max_len = _effective_max(session, params)
    generated: list[int] = []
    score = 0.0
    while len(generated) < max_len:
        logits = _step_logits(
            session.logits(), generated, params, eos_id, forbidden_ids, use_temperature=False
        )
        token = int(np.argmax(logits))
        score += float(log_softmax(logits)[token])
        if token == eos_id:
            return GenerationResult(generated, "", "eos", score)
        generated.append(token)
        if len(generated) < max_len:
            session.advance(token)
    return GenerationResult(generated, "", "max_length", score)


def sample_decode(
    session: Session,
    params: DecodeParams,
    eos_id: int,
    forbidden_ids: Iterable[int] = (),
) -> GenerationResult:
    """Per step: temperature, repetition penalty, n-gram mask, top-k,
    nucleus, then one categorical draw from the call's own generator."""
    rng = np.random.default_rng(params.seed)
    max_len = _effective_max(session, params)
    generated: list[int] = []
    score = 0.0
    while len(generated) < max_len:
        logits = _step_logits(
            session.logits(), generated, params, eos_id, forbidden_ids, use_temperature=True
        )
        probs = softmax(logits)
        if params.top_k is not None:
            probs = top_k_filter(probs, params.top_k)
        if params.top_p is not None:
            probs = nucleus_filter(probs, params.top_p)
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        token = int(np.searchsorted(cdf, rng.random(), side="right"))
        score += float(np.log(probs[token]))
        if token == eos_id:
            return GenerationResult(generated, "", "eos", score)
        generated.append(token)
        if len(generated) < max_len:
            session.advance(token)
    return GenerationResult(generated, "", "max_length", score)


@dataclass
class _Hypothesis:
    session: Session
    ids: list[int] = field(default_factory=list)
    logprob: float = 0.0
    pending: int | None = None  # chosen token not yet pushed into the session


def _norm_score(logprob: float, length: int, alpha: float) -> float:
    return logprob / max(1, length) ** alpha


def beam_search(
    session: Session,
    params: DecodeParams,
    eos_id: int,
    forbidden_ids: Iterable[int] = (),
) -> GenerationResult:
    """Keep the num_beams most probable hypotheses per step. A hypothesis
    finishes (and retires its beam slot) when end-of-text is its most
    probable continuation; the search stops once num_beams hypotheses have
    finished or max_length is reached. Finished hypotheses are compared by
    score/len^alpha; with num_beams=1 this reduces exactly to greedy."""
    if params.num_beams < 1:
        raise DataError(f"num_beams must be >= 1, got {params.num_beams}")
    max_len = _effective_max(session, params)
    alpha = params.length_norm_alpha
    live: list[_Hypothesis] = [_Hypothesis(session=session)]
    finished: list[tuple[float, list[int], float]] = []

    for _ in range(max_len):
        pool: list[tuple[float, int, int]] = []  # (cum logprob, hyp idx, token)
        for h_idx, hyp in enumerate(live):
            if hyp.pending is not None:
                hyp.session.advance(hyp.pending)
                hyp.pending = None
            logits = _step_logits(
                hyp.session.logits(), hyp.ids, params, eos_id, forbidden_ids,
                use_temperature=False,
            )
            logp = log_softmax(logits)
            if int(np.argmax(logp)) == eos_id:
                cum = hyp.logprob + float(logp[eos_id])
                finished.append((_norm_score(cum, len(hyp.ids), alpha), list(hyp.ids), cum))
                continue
            width = min(params.num_beams, logp.shape[0])
            top = np.argpartition(-logp, width - 1)[:width] if width < logp.shape[0] else np.arange(logp.shape[0])
            for token in top:
                if int(token) != eos_id and np.isfinite(logp[token]):
                    pool.append((hyp.logprob + float(logp[token]), h_idx, int(token)))
        if len(finished) >= params.num_beams or not pool:
            break
        # Deterministic order: higher score first, then lower token id.
        pool.sort(key=lambda c: (-c[0], c[2]))
        next_live: list[_Hypothesis] = []
        claimed: set[int] = set()
        for cum, h_idx, token in pool:
            if len(next_live) >= params.num_beams:
                break
            parent = live[h_idx]
            # The first child reuses the parent's session; siblings fork it
            # (nothing has advanced yet, so forks share the prefix).
            if h_idx in claimed:
                child_session = parent.session.fork()
            else:
                child_session = parent.session
                claimed.add(h_idx)
            next_live.append(
                _Hypothesis(
                    session=child_session,
                    ids=parent.ids + [token],
                    logprob=cum,
                    pending=token,
                )
            )
        if not next_live:
            break
        live = next_live

    if finished:
        finished.sort(key=lambda f: (-f[0], f[1]))
        norm, ids, raw = finished[0]
        return GenerationResult(list(ids), "", "eos", raw)
    best = max(
        live,
        key=lambda h: (_norm_score(h.logprob, len(h.ids), alpha), [-i for i in h.ids]),
    )
    return GenerationResult(list(best.ids), "", "max_length", best.logprob)


def generate(
    session: Session,
    params: DecodeParams,
    eos_id: int,
    forbidden_ids: Iterable[int] = (),
) -> GenerationResult:
    if params.strategy == "greedy":
        return greedy_decode(session, params, eos_id, forbidden_ids)
    if params.strategy == "beam":
        return beam_search(session, params, eos_id, forbidden_ids)
    return sample_decode(session, params, eos_id, forbidden_ids)


def generate_paragraph(model, vocab, prefix, params: DecodeParams) -> GenerationResult:
    """Decode a paragraph from an assembled prefix: special tokens other
    than end-of-text are hard-masked, and the result is detokenized."""
    from .model import DecodeSession

    session = DecodeSession(model, prefix.ids, prefix.segments)
    forbidden = sorted(vocab.special_ids - {vocab.eos_id})
    result = generate(session, params, eos_id=vocab.eos_id, forbidden_ids=forbidden)
    result.text = vocab.decode(result.ids, skip_special=True).strip()
    return result
