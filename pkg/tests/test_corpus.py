"""Corpus ingestion tests: parsing, genre mapping, filtering, and
sentence-safe paragraph splitting."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parafill import corpus
from parafill.corpus import (
    Book,
    BookMetadata,
    SizeClass,
    classify_size,
    filter_books,
    map_genre,
    parse_book,
    split_paragraphs,
    split_sentences,
)
from parafill.errors import BookRejected, DataError

GENRE_TABLE = {
    "Science fiction": "sci-fi",
    "Adventure stories": "adventure",
    "Detective and mystery stories": "mystery",
    "Love stories": "romance",
    "Historical fiction": "historical",
    "Fantasy fiction": "fantasy",
    "Horror tales": "horror",
    "Western stories": "western",
    "Humorous stories": "humor",
    "Fiction": "fiction",
}

META = {"author": "A. Writer", "title": "The Test", "language": "en", "theme": ["Fiction"]}


def make_sentence(n_chars: int, tag: int) -> str:
    """Deterministic sentence of exactly n_chars, capital start, period end."""
    head = f"Chapter {tag} began"
    body = head
    while len(body) < n_chars - 1:
        body += " word"
    return body[: n_chars - 1].rstrip() + ("x" * (n_chars - 1 - len(body[: n_chars - 1].rstrip()))) + "."


class TestParseBook:
    def test_markers_golden(self):
        # Hand-built sample: banner lines around a known body.
        lines = [
            "The Project Gutenberg eBook of The Test",
            "Title: The Test",
            "",
            "*** START OF THE PROJECT GUTENBERG EBOOK THE TEST ***",
            "",
            "It was a dark and stormy",
            "night in the harbour town.",
            "",
            "The lighthouse keeper watched",
            "the waves.",
            "",
            "*** END OF THE PROJECT GUTENBERG EBOOK THE TEST ***",
            "",
            "License text here.",
        ]
        meta, text = parse_book("\n".join(lines), META)
        assert text == (
            "It was a dark and stormy night in the harbour town.\n\n"
            "The lighthouse keeper watched the waves."
        )
        assert meta.language == "en"
        assert meta.theme == ["Fiction"]

    def test_no_markers_identity(self):
        _, text = parse_book("One  line with   extra spaces.", META)
        assert text == "One line with extra spaces."

    def test_empty_stream(self):
        with pytest.raises(BookRejected, match="empty book"):
            parse_book("   \n\n  ", META)

    def test_undecodable(self):
        with pytest.raises(BookRejected, match="undecodable"):
            parse_book(b"\xff\xfe\x00 invalid \x80", META)

    def test_missing_language(self):
        with pytest.raises(BookRejected, match="language"):
            parse_book("Some text.", {"author": "x", "title": "y", "theme": []})

    def test_unwrap_joins_wrapped_lines(self):
        _, text = parse_book("first line\nsecond line\n\nnext para", META)
        assert text == "first line second line\n\nnext para"


class TestMapGenre:
    def test_table_lookup(self):
        assert map_genre(["Science fiction", "Adventure stories"], GENRE_TABLE) == "sci-fi"

    def test_table_order_wins(self):
        # First matching table entry, not first tag.
        assert map_genre(["Western stories", "Love stories"], GENRE_TABLE) == "romance"

    def test_empty_tags(self):
        assert map_genre([], GENRE_TABLE) is None

    def test_no_match(self):
        assert map_genre(["Cookbooks"], GENRE_TABLE) is None

    def test_case_insensitive(self):
        assert map_genre(["science FICTION"], GENRE_TABLE) == "sci-fi"


def _book(lang: str, genre: str | None) -> Book:
    return Book(metadata=BookMetadata(author="a", title="t", language=lang, genre=genre))


class TestFilterBooks:
    def test_counts(self):
        books = [
            _book("en", "fiction"),
            _book("fr", "fiction"),
            _book("en", "sci-fi"),
            _book("de", "fiction"),
            _book("English", "romance"),
        ]
        assert len(filter_books(books)) == 3

    def test_identity(self):
        books = [_book("en", "fiction"), _book("en", "sci-fi")]
        assert filter_books(books) == books

    def test_empty(self):
        assert filter_books([]) == []

    def test_genre_required(self):
        assert filter_books([_book("en", None)]) == []

    def test_idempotent(self):
        books = [_book("en", "fiction"), _book("fr", None), _book("en", None)]
        once = filter_books(books)
        assert filter_books(once) == once


class TestClassifySize:
    @pytest.mark.parametrize(
        "count,expected",
        [(600, SizeClass.S), (1000, SizeClass.M), (400, SizeClass.S),
         (800, SizeClass.M), (1400, SizeClass.L), (1700, SizeClass.L),
         (799, SizeClass.S), (1399, SizeClass.M)],
    )
    def test_buckets(self, count, expected):
        assert classify_size(count) == expected

    @pytest.mark.parametrize("count", [0, 399, 1701, -5])
    def test_out_of_range(self, count):
        with pytest.raises(DataError, match="unclassifiable"):
            classify_size(count)


class TestSplitSentences:
    def test_basic(self):
        got = split_sentences('He saw Alice. "Stop!" she cried. Then silence.')
        assert got == ['He saw Alice.', '"Stop!" she cried.', 'Then silence.']

    def test_abbreviations(self):
        got = split_sentences("Mr. Holmes met Dr. Watson. They left.")
        assert got == ["Mr. Holmes met Dr. Watson.", "They left."]

    def test_initials(self):
        got = split_sentences("J. Smith arrived. He sat down.")
        assert got == ["J. Smith arrived.", "He sat down."]

    def test_no_complete_sentence(self):
        assert split_sentences("just a fragment without an end") == []


class TestSplitParagraphs:
    def test_ten_200_char_sentences(self):
        # Brute-force bounds oracle over the emitted list.
        sentences = [make_sentence(200, i) for i in range(10)]
        text = " ".join(sentences)
        paras = split_paragraphs(text)
        assert paras, "expected at least one paragraph"
        for p in paras:
            assert 400 <= p.char_count <= 1700
            assert p.char_count == len(p.text)
            assert classify_size(p.char_count) == p.size_class
        # Every source sentence appears exactly once, in order.
        joined = " ".join(p.text for p in paras)
        assert joined == text

    def test_single_500_char_sentence(self):
        text = make_sentence(500, 1)
        paras = split_paragraphs(text)
        assert len(paras) == 1
        assert paras[0].size_class == SizeClass.S
        assert paras[0].text == text

    def test_oversize_sentence_discarded(self, caplog):
        text = make_sentence(2000, 1)
        with caplog.at_level("WARNING"):
            paras = split_paragraphs(text)
        assert paras == []
        assert any("discarding" in r.message for r in caplog.records)

    def test_zero_sentences_warns(self, caplog):
        with caplog.at_level("WARNING"):
            assert split_paragraphs("no terminator here at all") == []

    def test_indices_contiguous(self):
        text = " ".join(make_sentence(300, i) for i in range(20))
        paras = split_paragraphs(text)
        assert [p.index for p in paras] == list(range(len(paras)))

    def test_short_tail_absorbed(self):
        # A trailing 100-char sentence merges into the open chunk.
        text = make_sentence(500, 1) + " " + make_sentence(100, 2)
        paras = split_paragraphs(text)
        assert len(paras) == 1
        assert paras[0].char_count == 601

    def test_short_tail_dropped(self, caplog):
        # The tail cannot join the 1650-char chunk without overflowing max.
        text = make_sentence(1650, 1) + " " + make_sentence(100, 2)
        with caplog.at_level("WARNING"):
            paras = split_paragraphs(text)
        assert len(paras) == 1
        assert paras[0].char_count == 1650
        assert any("undersized" in r.message for r in caplog.records)

    @settings(max_examples=40, deadline=None)
    @given(
        lengths=st.lists(st.integers(min_value=60, max_value=1600), min_size=1, max_size=25)
    )
    def test_property_bounds_and_order(self, lengths):
        sentences = [make_sentence(n, i) for i, n in enumerate(lengths)]
        text = " ".join(sentences)
        paras = split_paragraphs(text)
        for p in paras:
            assert 400 <= p.char_count <= 1700
            assert classify_size(p.char_count) == p.size_class
        # Retained sentences keep source order and are never duplicated.
        remaining = text
        for p in paras:
            idx = remaining.find(p.text)
            assert idx >= 0
            remaining = remaining[idx + len(p.text) :]

    def test_blank_line_boundaries_preferred(self):
        # Source paragraphs over min_chars survive as distinct chunks.
        text = make_sentence(500, 1) + "\n\n" + make_sentence(900, 2)
        paras = split_paragraphs(text)
        assert [(p.char_count, p.size_class) for p in paras] == [
            (500, SizeClass.S), (900, SizeClass.M)
        ]

    def test_short_source_paragraph_merges_forward(self):
        text = make_sentence(150, 1) + "\n\n" + make_sentence(400, 2)
        paras = split_paragraphs(text)
        assert len(paras) == 1
        assert paras[0].char_count == 551

    def test_deterministic(self):
        raw = "\n".join(["Some wrapped line of text", "continuing here."] * 120)
        meta1, text1 = parse_book(raw, META)
        meta2, text2 = parse_book(raw, META)
        assert text1 == text2
        assert split_paragraphs(text1) == split_paragraphs(text2)


class TestIngest:
    def test_round_trip_document(self):
        text = " ".join(make_sentence(220, i) for i in range(12))
        book = corpus.ingest_book(text, META, GENRE_TABLE)
        doc = corpus.book_to_dict(book)
        assert doc["metadata"]["genre"] == "fiction"
        assert corpus.book_from_dict(doc) == book
        for p in doc["paragraphs"]:
            assert set(p) == {"index", "text", "size", "size_class"}

    def test_filtered_language(self):
        text = make_sentence(500, 1)
        with pytest.raises(BookRejected, match="filtered out"):
            corpus.ingest_book(text, {**META, "language": "fr"}, GENRE_TABLE)
