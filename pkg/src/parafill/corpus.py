"""Novel ingestion: boilerplate stripping, genre mapping, language filtering,
and sentence-safe splitting into bounded paragraphs with size classes.

Every retained paragraph is 400-1700 characters, starts at a sentence start
and ends at a sentence end. Size buckets are half-open so classification is
total: S = [400, 800), M = [800, 1400), L = [1400, 1700].
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import BookRejected, DataError

log = logging.getLogger(__name__)

MIN_PARAGRAPH_CHARS = 400
MAX_PARAGRAPH_CHARS = 1700

# Gutenberg-convention banner lines; both are configurable per call.
DEFAULT_START_MARKER = r"\*\*\*\s*START OF (?:THIS|THE) PROJECT GUTENBERG EBOOK.*"
DEFAULT_END_MARKER = r"\*\*\*\s*END OF (?:THIS|THE) PROJECT GUTENBERG EBOOK.*"

DEFAULT_ABBREVIATIONS = frozenset(
    {
        "mr", "mrs", "ms", "dr", "prof", "rev", "hon", "st", "jr", "sr",
        "capt", "col", "gen", "lt", "sgt", "maj", "mt", "vs", "etc", "no",
        "vol", "ch", "fig", "e.g", "i.e",
    }
)


class SizeClass(str, Enum):
    S = "S"
    M = "M"
    L = "L"


@dataclass
class BookMetadata:
    author: str
    title: str
    language: str
    theme: list[str] = field(default_factory=list)
    genre: str | None = None


@dataclass
class Paragraph:
    index: int
    text: str
    char_count: int
    size_class: SizeClass


@dataclass
class Book:
    metadata: BookMetadata
    paragraphs: list[Paragraph] = field(default_factory=list)


def classify_size(char_count: int) -> SizeClass:
    """Bucket a paragraph character count into S, M, or L."""
    if 400 <= char_count < 800:
        return SizeClass.S
    if 800 <= char_count < 1400:
        return SizeClass.M
    if 1400 <= char_count <= 1700:
        return SizeClass.L
    raise DataError(f"unclassifiable size: {char_count}")


def is_english(language: str) -> bool:
    lang = language.strip().lower()
    return lang in ("en", "eng", "english") or lang.startswith("en-")


# Sentence boundary: terminator run, optional closing quotes/brackets,
# whitespace, then a capital or an opening quote/bracket.
_BOUNDARY_RE = re.compile(
    r"[.!?]+[\"'”’)\]]*\s+(?=[\"'“‘(\[]?[A-Z])"
)
_TRAILING_WORD_RE = re.compile(r"([A-Za-z][A-Za-z.]*)[.!?]+[\"'”’)\]]*\s*$")


def split_sentences(
    text: str, abbreviations: frozenset[str] | set[str] = DEFAULT_ABBREVIATIONS
) -> list[str]:
    """Rule-based sentence segmentation.

    Splits after . ! ? (plus closing quotes) when followed by whitespace and
    a capital or opening quote, unless the preceding word is a known
    abbreviation or a single-letter initial.
    """
    text = re.sub(r"\s+", " ", text).strip()
    if not text:
        return []
    sentences: list[str] = []
    start = 0
    for match in _BOUNDARY_RE.finditer(text):
        candidate = text[start : match.end()].rstrip()
        word = _TRAILING_WORD_RE.search(candidate)
        if word is not None and candidate.rstrip()[-1] == ".":
            token = word.group(1).rstrip(".")
            is_initial = len(token) == 1 and token.isupper()
            if token.lower() in abbreviations or is_initial:
                continue
        sentences.append(candidate)
        start = match.end()
    tail = text[start:].strip()
    if tail:
        # Only a terminated tail counts as a complete sentence.
        if re.search(r"[.!?][\"'”’)\]]*$", tail):
            sentences.append(tail)
        else:
            log.warning("dropping unterminated trailing fragment (%d chars)", len(tail))
    return sentences


def parse_book(
    raw: str | bytes,
    meta: dict,
    start_marker: str = DEFAULT_START_MARKER,
    end_marker: str = DEFAULT_END_MARKER,
) -> tuple[BookMetadata, str]:
    """Decode a raw book, strip header/footer banners, unwrap line-wrapping.

    Returns the metadata (genre unset) and the cleaned text: logical
    paragraphs separated by blank lines in the source are joined internally
    with single spaces and separated by one blank line in the output.
    """
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise BookRejected(f"undecodable input: {exc}") from exc
    if "language" not in meta or not str(meta.get("language", "")).strip():
        raise BookRejected("missing language tag")
    if not raw.strip():
        raise BookRejected("empty book")

    lines = raw.splitlines()
    start_re = re.compile(start_marker)
    end_re = re.compile(end_marker)
    start_idx = 0
    end_idx = len(lines)
    for i, line in enumerate(lines):
        if start_re.search(line):
            start_idx = i + 1
            break
    for j in range(len(lines) - 1, -1, -1):
        if end_re.search(lines[j]):
            end_idx = j
            break
    body_lines = lines[start_idx:end_idx]

    paragraphs: list[str] = []
    current: list[str] = []
    for line in body_lines:
        if line.strip():
            current.append(line.strip())
        elif current:
            paragraphs.append(" ".join(current))
            current = []
    if current:
        paragraphs.append(" ".join(current))
    text = "\n\n".join(re.sub(r"\s+", " ", p).strip() for p in paragraphs)
    if not text:
        raise BookRejected("empty book")

    theme = meta.get("theme", meta.get("subjects", []))
    if isinstance(theme, str):
        theme = [theme]
    metadata = BookMetadata(
        author=str(meta.get("author", "")),
        title=str(meta.get("title", "")),
        language=str(meta["language"]),
        theme=[str(t) for t in theme],
    )
    return metadata, text


def map_genre(subject_tags: Iterable[str], mapping: dict[str, str]) -> str | None:
    """First canonical genre whose tag (by mapping-table order) is present.

    Tag comparison is case-insensitive; absence is a value, not an error.
    """
    tags = {t.strip().lower() for t in subject_tags}
    for tag, genre in mapping.items():
        if tag.strip().lower() in tags:
            return genre
    return None


def filter_books(books: Iterable[Book]) -> list[Book]:
    """Retain English books with a mapped genre."""
    return [
        b
        for b in books
        if is_english(b.metadata.language) and b.metadata.genre is not None
    ]


def split_paragraphs(
    text: str,
    min_chars: int = MIN_PARAGRAPH_CHARS,
    max_chars: int = MAX_PARAGRAPH_CHARS,
    abbreviations: frozenset[str] | set[str] = DEFAULT_ABBREVIATIONS,
) -> list[Paragraph]:
    """Greedily regroup sentences into paragraphs of min_chars..max_chars.

    Sentences are never cut. Blank-line boundaries in the input (as emitted
    by parse_book) are preferred break points: a chunk that has reached
    min_chars flushes there, so source paragraph structure survives where
    it can. A chunk still under min_chars keeps absorbing sentences
    (merging forward across boundaries); when absorbing the next sentence
    would overflow max_chars on a chunk that never reached min_chars, the
    short chunk is dropped with a warning, as is a lone sentence over
    max_chars and an undersized final chunk.
    """
    segments = [seg for seg in text.split("\n\n") if seg.strip()]
    if not segments:
        log.warning("no complete sentences found; nothing to split")
        return []

    paragraphs: list[Paragraph] = []
    current: list[str] = []
    current_len = 0

    def flush() -> None:
        nonlocal current, current_len
        joined = " ".join(current)
        paragraphs.append(
            Paragraph(
                index=len(paragraphs),
                text=joined,
                char_count=len(joined),
                size_class=classify_size(len(joined)),
            )
        )
        current = []
        current_len = 0

    any_sentence = False
    for segment in segments:
        for sentence in split_sentences(segment, abbreviations):
            any_sentence = True
            slen = len(sentence)
            if slen > max_chars:
                log.warning("discarding %d-char sentence longer than max %d", slen, max_chars)
                continue
            joined_len = current_len + (1 if current else 0) + slen
            if current and joined_len > max_chars:
                if current_len >= min_chars:
                    flush()
                else:
                    log.warning(
                        "dropping %d-char chunk: under min %d and unmergeable",
                        current_len, min_chars,
                    )
                    current = []
                current.append(sentence)
                current_len = slen
            else:
                current.append(sentence)
                current_len = joined_len
        if current_len >= min_chars:
            flush()
    if current:
        log.warning("dropping undersized %d-char final chunk", current_len)
    if not any_sentence:
        log.warning("no complete sentences found; nothing to split")
    return paragraphs


def ingest_book(
    raw: str | bytes,
    meta: dict,
    genre_map: dict[str, str],
    min_chars: int = MIN_PARAGRAPH_CHARS,
    max_chars: int = MAX_PARAGRAPH_CHARS,
    start_marker: str = DEFAULT_START_MARKER,
    end_marker: str = DEFAULT_END_MARKER,
) -> Book:
    """parse -> map genre -> split; raises BookRejected for unusable input."""
    metadata, text = parse_book(raw, meta, start_marker, end_marker)
    metadata.genre = map_genre(metadata.theme, genre_map)
    book = Book(metadata=metadata)
    if not filter_books([book]):
        raise BookRejected(
            f"filtered out: language={metadata.language!r} genre={metadata.genre!r}"
        )
    book.paragraphs = split_paragraphs(text, min_chars, max_chars)
    return book


def book_to_dict(book: Book) -> dict:
    return {
        "metadata": {
            "author": book.metadata.author,
            "title": book.metadata.title,
            "language": book.metadata.language,
            "theme": list(book.metadata.theme),
            "genre": book.metadata.genre,
        },
        "paragraphs": [
            {
                "index": p.index,
                "text": p.text,
                "size": p.char_count,
                "size_class": p.size_class.value,
            }
            for p in book.paragraphs
        ],
    }


def book_from_dict(doc: dict) -> Book:
    md = doc["metadata"]
    return Book(
        metadata=BookMetadata(
            author=md["author"],
            title=md["title"],
            language=md["language"],
            theme=list(md.get("theme", [])),
            genre=md.get("genre"),
        ),
        paragraphs=[
            Paragraph(
                index=p["index"],
                text=p["text"],
                char_count=p["size"],
                size_class=SizeClass(p["size_class"]),
            )
            for p in doc["paragraphs"]
        ],
    )


def load_genre_map(path: str | Path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        mapping = json.load(fh)
    if not isinstance(mapping, dict):
        raise DataError(f"genre map {path} must be a JSON object of tag -> genre")
    return mapping


def load_book_documents(directory: str | Path) -> list[dict]:
    """Load every per-book JSON document in a directory, sorted by filename."""
    docs = []
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise DataError(f"no book documents found in {directory}")
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            docs.append(json.load(fh))
    return docs
