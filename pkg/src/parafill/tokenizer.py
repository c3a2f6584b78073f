"""Byte-level BPE tokenizer with the conditioning special tokens.

The base alphabet is all 256 byte values, so any input encodes and
decode(encode(x)) == x exactly. Merges are learned per pre-token unit
(a word with its single leading space, a digit run, a punctuation run, or
a whitespace run) and never span units, so encoding one word is
independent of its neighbors. Special tokens sit at the top of the id
space and are never produced by merging; plain text never encodes to a
special id.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from pathlib import Path
from typing import Iterable

from .errors import DataError

SPECIAL_TOKENS = (
    "[P1]",
    "[P2]",
    "[P3]",
    "[Sum]",
    "[T]",
    "[Ent]",
    "[S]",
    "[M]",
    "[L]",
    "<|endoftext|>",
    "<pad>",
)
EOS_TOKEN = "<|endoftext|>"
PAD_TOKEN = "<pad>"
MIN_VOCAB = 256 + len(SPECIAL_TOKENS)

# One optional leading space binds to the following letter/digit/punct run;
# remaining whitespace forms its own units.
_PRETOKEN_RE = re.compile(r" ?[A-Za-z]+| ?[0-9]+| ?[^\sA-Za-z0-9]+|\s+(?!\S)|\s+")


def pretokenize(text: str) -> list[str]:
    return _PRETOKEN_RE.findall(text)


def _bytes_to_printable() -> dict[int, str]:
    # Bijective byte -> printable char map so merges and vocab serialize
    # as readable text files.
    keep = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(0xA1, 0xAD))
        + list(range(0xAE, 0x100))
    )
    mapping = {}
    offset = 0
    for b in range(256):
        if b in keep:
            mapping[b] = chr(b)
        else:
            mapping[b] = chr(256 + offset)
            offset += 1
    return mapping


_BYTE_TO_CHAR = _bytes_to_printable()
_CHAR_TO_BYTE = {c: b for b, c in _BYTE_TO_CHAR.items()}


def _render(token: bytes) -> str:
    return "".join(_BYTE_TO_CHAR[b] for b in token)


def _unrender(text: str) -> bytes:
    return bytes(_CHAR_TO_BYTE[c] for c in text)


class Vocab:
    """Immutable trained vocabulary: 256 byte tokens, learned merges, then
    the special tokens at the highest ids."""

    def __init__(self, merges: list[tuple[bytes, bytes]]):
        self.merges = list(merges)
        self.id_to_bytes: list[bytes] = [bytes([b]) for b in range(256)]
        self._merge_rank: dict[tuple[bytes, bytes], int] = {}
        merged_to_id: dict[bytes, int] = {bytes([b]): b for b in range(256)}
        for rank, (left, right) in enumerate(self.merges):
            token = left + right
            if token.decode("utf-8", errors="ignore") in SPECIAL_TOKENS:
                raise DataError(f"merge output collides with special token: {token!r}")
            self._merge_rank[(left, right)] = rank
            self.id_to_bytes.append(token)
            merged_to_id[token] = 256 + rank
        self._bytes_to_id = merged_to_id
        self.special_to_id = {
            name: 256 + len(self.merges) + k for k, name in enumerate(SPECIAL_TOKENS)
        }
        self._id_to_special = {v: k for k, v in self.special_to_id.items()}
        self._unit_cache: dict[str, tuple[int, ...]] = {}

    @property
    def size(self) -> int:
        return 256 + len(self.merges) + len(SPECIAL_TOKENS)

    @property
    def eos_id(self) -> int:
        return self.special_to_id[EOS_TOKEN]

    @property
    def pad_id(self) -> int:
        return self.special_to_id[PAD_TOKEN]

    def special_id(self, name: str) -> int:
        return self.special_to_id[name]

    @property
    def special_ids(self) -> set[int]:
        return set(self.special_to_id.values())

    def token_to_id(self) -> dict[str, int]:
        """Rendered token string -> id, including special tokens."""
        table = {_render(tok): i for i, tok in enumerate(self.id_to_bytes)}
        table.update(self.special_to_id)
        return table

    def _encode_unit(self, unit: str) -> tuple[int, ...]:
        cached = self._unit_cache.get(unit)
        if cached is not None:
            return cached
        parts = [bytes([b]) for b in unit.encode("utf-8")]
        while len(parts) > 1:
            best_rank = None
            best_pos = -1
            for k in range(len(parts) - 1):
                rank = self._merge_rank.get((parts[k], parts[k + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_pos = k
            if best_rank is None:
                break
            pair = (parts[best_pos], parts[best_pos + 1])
            merged: list[bytes] = []
            k = 0
            while k < len(parts):
                if k < len(parts) - 1 and (parts[k], parts[k + 1]) == pair:
                    merged.append(parts[k] + parts[k + 1])
                    k += 2
                else:
                    merged.append(parts[k])
                    k += 1
            parts = merged
        ids = tuple(self._bytes_to_id[p] for p in parts)
        self._unit_cache[unit] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for unit in pretokenize(text):
            ids.extend(self._encode_unit(unit))
        return ids

    def decode(self, ids: Iterable[int], skip_special: bool = False) -> str:
        chunks: list[bytes] = []
        for i in ids:
            if 0 <= i < 256 + len(self.merges):
                chunks.append(self.id_to_bytes[i])
            elif i in self._id_to_special:
                if not skip_special:
                    chunks.append(self._id_to_special[i].encode("utf-8"))
            else:
                raise DataError(f"unknown token id: {i}")
        return b"".join(chunks).decode("utf-8", errors="replace")

    def content_hash(self) -> str:
        payload = json.dumps(
            {
                "merges": [[_render(a), _render(b)] for a, b in self.merges],
                "specials": list(SPECIAL_TOKENS),
                "vocab_size": self.size,
            },
            sort_keys=True,
        ).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "merges.txt", "w", encoding="utf-8") as fh:
            fh.write("#version: parafill-bpe-1\n")
            for left, right in self.merges:
                fh.write(f"{_render(left)} {_render(right)}\n")
        with open(directory / "vocab.json", "w", encoding="utf-8") as fh:
            json.dump(self.token_to_id(), fh, ensure_ascii=False, indent=0)

    @classmethod
    def load(cls, directory: str | Path) -> "Vocab":
        directory = Path(directory)
        merges_path = directory / "merges.txt"
        if not merges_path.exists():
            raise DataError(f"no merges file at {merges_path}")
        merges: list[tuple[bytes, bytes]] = []
        with open(merges_path, encoding="utf-8") as fh:
            header = fh.readline()
            if not header.startswith("#version: parafill-bpe-1"):
                raise DataError(f"unsupported merges file version: {header.strip()!r}")
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                left, sep, right = line.partition(" ")
                if not sep:
                    raise DataError(f"malformed merges line: {line!r}")
                merges.append((_unrender(left), _unrender(right)))
        vocab = cls(merges)
        vocab_json = directory / "vocab.json"
        if vocab_json.exists():
            with open(vocab_json, encoding="utf-8") as fh:
                stored = json.load(fh)
            if stored != vocab.token_to_id():
                raise DataError("vocab.json does not match merges.txt")
        return vocab


def train_bpe(corpus: Iterable[str], target_vocab: int) -> Vocab:
    """Learn BPE merges until the vocabulary reaches target_vocab.

    The most frequent adjacent pair merges first; ties break toward the
    lexicographically smallest (left bytes, right bytes) pair, so training
    is deterministic. Stops early if no pair occurs twice.
    """
    if target_vocab < MIN_VOCAB:
        raise DataError(f"target_vocab must be at least {MIN_VOCAB}, got {target_vocab}")
    unit_freqs: Counter[tuple[bytes, ...]] = Counter()
    for text in corpus:
        for unit in pretokenize(text):
            unit_freqs[tuple(bytes([b]) for b in unit.encode("utf-8"))] += 1
    if not unit_freqs:
        raise DataError("empty corpus: nothing to train on")

    num_merges = target_vocab - MIN_VOCAB
    merges: list[tuple[bytes, bytes]] = []
    sequences: dict[tuple[bytes, ...], int] = dict(unit_freqs)
    for _ in range(num_merges):
        pair_freqs: Counter[tuple[bytes, bytes]] = Counter()
        for seq, freq in sequences.items():
            for pair in zip(seq, seq[1:]):
                pair_freqs[pair] += freq
        if not pair_freqs:
            break
        top = max(pair_freqs.values())
        pair = min(p for p, c in pair_freqs.items() if c == top)
        merges.append(pair)
        merged_token = pair[0] + pair[1]
        new_sequences: dict[tuple[bytes, ...], int] = {}
        for seq, freq in sequences.items():
            if len(seq) > 1:
                out: list[bytes] = []
                k = 0
                while k < len(seq):
                    if k < len(seq) - 1 and (seq[k], seq[k + 1]) == pair:
                        out.append(merged_token)
                        k += 2
                    else:
                        out.append(seq[k])
                        k += 1
                seq = tuple(out)
            new_sequences[seq] = new_sequences.get(seq, 0) + freq
        sequences = new_sequences
    return Vocab(merges)
