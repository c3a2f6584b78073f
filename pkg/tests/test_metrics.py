"""Metric tests: hand-worked BLEU/ROUGE values, control-metric contracts,
embedding cosine against a dot-product recomputation, bootstrap, and the
paired evaluation run."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from parafill import assembly
from parafill.annotate import EntitySet
from parafill.corpus import SizeClass
from parafill.decode import DecodeParams
from parafill.errors import DataError
from parafill.metrics import (
    MetricReport,
    bleu,
    build_aggregates,
    cosine,
    embedding_similarity,
    entities_count,
    evaluate_run,
    kw_count,
    paired_bootstrap,
    pooled_embedding,
    rouge_n,
    size_conformance,
    word_tokens,
    write_report_csv,
)
from parafill.model import ModelConfig, make_model
from parafill.tokenizer import MIN_VOCAB, train_bpe


class TestBleu:
    def test_identity(self):
        tokens = "the storm swept the harbour".split()
        assert bleu(tokens, [tokens]) == pytest.approx(1.0, abs=1e-12)

    def test_empty_candidate(self):
        assert bleu([], [["a", "b"]]) == 0.0

    def test_hand_worked_brevity(self):
        # Precisions all 1; BP = exp(1 - 6/3) = e^-1.
        got = bleu("the cat sat".split(), ["the cat sat on the mat".split()], max_n=3)
        assert got == pytest.approx(math.exp(-1.0), abs=1e-6)

    def test_token_disjoint_zero(self):
        assert bleu("a b c".split(), ["x y z".split()]) == 0.0

    def test_smoothing_on_zero_higher_order(self):
        # Unigrams overlap, no bigram overlap: p2 smoothed to 1/(n2+1).
        got = bleu("a c b".split(), ["a b c d".split()], max_n=2)
        p1 = 3 / 3
        p2 = 1 / (2 + 1)
        bp = math.exp(1 - 4 / 3)
        assert got == pytest.approx(bp * math.sqrt(p1 * p2), abs=1e-9)

    def test_clipping(self):
        # "the the the" vs "the cat": unigram overlap clipped at 1.
        got = bleu(["the", "the", "the"], [["the", "cat"]], max_n=1)
        bp = math.exp(1 - 2 / 3) if 2 > 3 else 1.0
        assert got == pytest.approx(bp * (1 / 3), abs=1e-9)

    def test_multiple_references_max_clip(self):
        got = bleu(["a", "b"], [["a"], ["b"]], max_n=1)
        assert got == pytest.approx(math.exp(1 - 1 / 2) if False else 1.0, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(
        cand=st.lists(st.sampled_from("abcde"), max_size=12),
        ref=st.lists(st.sampled_from("abcde"), min_size=1, max_size=12),
    )
    def test_property_bounds(self, cand, ref):
        score = bleu(cand, [ref])
        assert 0.0 <= score <= 1.0


class TestRouge:
    def test_identity(self):
        tokens = "a b c".split()
        assert rouge_n(tokens, tokens, 1)["f1"] == pytest.approx(1.0)
        assert rouge_n(tokens, tokens, 2)["f1"] == pytest.approx(1.0)

    def test_disjoint(self):
        out = rouge_n("a b".split(), "c d".split(), 1)
        assert out == {"precision": 0.0, "recall": 0.0, "f1": 0.0}

    def test_hand_worked(self):
        out = rouge_n("a b c".split(), "a b d".split(), 1)
        assert out["precision"] == pytest.approx(2 / 3, abs=1e-9)
        assert out["recall"] == pytest.approx(2 / 3, abs=1e-9)
        assert out["f1"] == pytest.approx(2 / 3, abs=1e-9)

    def test_empty_candidate(self):
        assert rouge_n([], "a b".split(), 1)["f1"] == 0.0


class TestControlMetrics:
    def test_entities_half(self):
        spec = EntitySet(persons=["Alice", "Bob"])
        assert entities_count(spec, "Alice walked alone.") == pytest.approx(0.5)

    def test_entities_none_when_empty(self):
        assert entities_count(EntitySet(), "anything") is None
        assert entities_count({"persons": []}, "anything") is None

    def test_entities_full(self):
        spec = {"persons": ["Alice"], "locations": ["London"]}
        assert entities_count(spec, "Alice went to london!") == pytest.approx(1.0)

    def test_whole_word_matching(self):
        spec = {"persons": ["Ann"]}
        assert entities_count(spec, "Annex and banner.") == 0.0
        assert entities_count(spec, "Then Ann, smiling.") == 1.0

    def test_multiword_and_punctuation(self):
        spec = {"locations": ["New York"]}
        assert entities_count(spec, "He loved New  York deeply.") == 1.0

    def test_kw_count_mirrors(self):
        assert kw_count(["storm", "harbour"], "The storm came.") == pytest.approx(0.5)
        assert kw_count([], "anything") is None
        assert kw_count(["a b"], "big a b c") == 1.0

    def test_monotone_append(self):
        spec = {"persons": ["Alice", "Bob"]}
        base = "Alice spoke."
        assert entities_count(spec, base + " Bob answered.") >= entities_count(spec, base)

    @settings(max_examples=40, deadline=None)
    @given(names=st.lists(st.sampled_from(["Ada", "Finn", "Lyra"]), min_size=1,
                          max_size=3, unique=True),
           present=st.integers(0, 3))
    def test_property_fraction(self, names, present):
        text = " and ".join(names[: min(present, len(names))]) + " arrived."
        value = entities_count({"misc": names}, text)
        assert value == pytest.approx(min(present, len(names)) / len(names))


class TestSizeConformance:
    def test_match(self):
        assert size_conformance(SizeClass.S, "x" * 600) is True

    def test_mismatch(self):
        assert size_conformance(SizeClass.S, "x" * 1000) is False

    def test_out_of_range(self):
        assert size_conformance(SizeClass.S, "x" * 300) is False
        assert size_conformance(SizeClass.L, "x" * 2000) is False


@pytest.fixture(scope="module")
def tiny_world():
    corpus = [
        "the storm swept over the harbour and the keeper watched",
        "Alice met Bob beside the lighthouse during the storm",
        "the keeper trimmed the lantern while waves battered the jetty",
    ]
    vocab = train_bpe([" " + t for t in corpus], MIN_VOCAB + 80)
    config = ModelConfig(vocab_size=vocab.size, n_layers=1, n_heads=2, d_model=16,
                         block_size=96, dropout=0.0)
    model = make_model(config, seed=0)
    return vocab, model


class TestEmbeddingSimilarity:
    def test_identical_texts(self, tiny_world):
        vocab, model = tiny_world
        assert embedding_similarity(model, vocab, "the storm", "the storm") == pytest.approx(1.0)

    def test_antipodal_vectors(self):
        x = np.array([0.3, -1.2, 2.0])
        assert cosine(x, -x) == pytest.approx(-1.0)
        assert cosine(x, x) == pytest.approx(1.0)
        assert cosine(x, np.zeros(3)) == 0.0

    def test_matches_recomputation(self, tiny_world):
        vocab, model = tiny_world
        a, b = "the storm swept", "the keeper watched"
        got = embedding_similarity(model, vocab, a, b)
        va = pooled_embedding(model, vocab, a)
        vb = pooled_embedding(model, vocab, b)
        want = float(np.dot(va, vb) / (np.linalg.norm(va) * np.linalg.norm(vb)))
        assert got == pytest.approx(want, abs=1e-6)

    def test_pooled_is_token_mean(self, tiny_world):
        vocab, model = tiny_world
        ids = assembly.section_tokens(vocab, "the storm")
        want = model.tok_emb.weight[torch.tensor(ids)].detach().double().mean(0).numpy()
        np.testing.assert_allclose(pooled_embedding(model, vocab, "the storm"), want)


class TestBootstrapAndAggregates:
    def test_positive_diffs_exclude_zero(self):
        rng = np.random.default_rng(0)
        diffs = rng.normal(0.3, 0.05, size=100)
        out = paired_bootstrap(diffs, seed=1)
        assert out["ci_low"] > 0
        assert out["mean"] == pytest.approx(diffs.mean())

    def test_centered_diffs_straddle_zero(self):
        rng = np.random.default_rng(2)
        diffs = rng.normal(0.0, 1.0, size=200)
        out = paired_bootstrap(diffs, seed=3)
        assert out["ci_low"] < 0 < out["ci_high"]

    def test_histogram_partitions_samples(self):
        rows = [{"bleu": v} for v in np.linspace(0, 1, 37)]
        agg = build_aggregates(rows)
        assert sum(agg["bleu"]["histogram"]["counts"]) == 37
        assert agg["bleu"]["count"] == 37

    def test_none_excluded(self):
        rows = [{"kw_count": None}, {"kw_count": 0.5}, {"kw_count": 1.0}]
        agg = build_aggregates(rows)
        assert agg["kw_count"]["count"] == 2
        assert agg["kw_count"]["mean"] == pytest.approx(0.75)


def _eval_records(n: int = 4) -> list[dict]:
    texts = [
        "the storm swept over the harbour and the keeper watched the waves",
        "Alice met Bob beside the lighthouse during the grey storm",
        "the keeper trimmed the lantern while waves battered the jetty",
        "storm clouds gathered while Alice watched the harbour lights",
    ]
    records = []
    for i, text in enumerate(texts[:n]):
        records.append(
            {
                "book_idx": 0,
                "book_title": "fixture",
                "para_idx": i,
                "sample_id": f"0:{i}",
                "p1": texts[(i - 1) % len(texts)],
                "p2": text,
                "p3": texts[(i + 1) % len(texts)],
                "genre": "fiction",
                "size_class": SizeClass.S,
                "entities": {"persons": ["Alice"], "locations": [],
                             "organisations": [], "misc": []},
                "summaries": {"kw": ["storm", "harbour"], "key_sentence": text,
                              "ext1": None, "ext2": None},
            }
        )
    return records


class TestEvaluateRun:
    def test_identical_models_zero_diffs(self, tiny_world):
        vocab, model = tiny_world
        params = DecodeParams(strategy="sample", min_length=2, max_length=10, seed=11)
        report_a, report_b = evaluate_run(
            model, model, _eval_records(), params,
            vocab=vocab, block_size=96, summarizer="kw", baseline_conditioned=True,
        )
        assert len(report_a.per_sample) == len(report_b.per_sample) == 4
        for row_a, row_b in zip(report_a.per_sample, report_b.per_sample):
            for key in ("bleu", "rouge1_f", "entities_count", "kw_count", "perplexity"):
                assert row_a[key] == row_b[key]

    def test_report_shape_and_csv(self, tiny_world, tmp_path):
        vocab, model = tiny_world
        other = make_model(model.config, seed=99)
        params = DecodeParams(strategy="sample", min_length=2, max_length=10, seed=12)
        report_a, report_b = evaluate_run(
            model, other, _eval_records(), params,
            vocab=vocab, block_size=96, summarizer="kw",
            model_id="A", baseline_id="B",
        )
        assert report_a.condition["model_id"] == "A"
        assert report_a.condition["summarizer_kind"] == "kw"
        row = report_a.per_sample[0]
        for key in ("sample_id", "perplexity", "bleu", "rouge1_f", "rouge2_f",
                    "entities_count", "kw_count", "size_ok", "emb_sim"):
            assert key in row
        assert row["perplexity"] >= 1.0
        path = tmp_path / "rows.csv"
        write_report_csv(path, report_a)
        lines = path.read_text().splitlines()
        assert len(lines) == 5  # header + 4 rows

    def test_empty_eval_set(self, tiny_world):
        vocab, model = tiny_world
        with pytest.raises(DataError, match="empty eval set"):
            evaluate_run(model, model, [], DecodeParams(), vocab=vocab, block_size=96)


class TestHistogramRendering:
    def test_renders_one_figure_per_populated_metric(self, tmp_path):
        rows = [
            {"sample_id": "x", "bleu": 0.1 * i, "rouge1_f": 0.05 * i, "rouge2_f": None,
             "entities_count": None, "kw_count": None, "perplexity": 10.0 + i,
             "size_ok": i % 2 == 0, "emb_sim": 0.5}
            for i in range(6)
        ]
        from parafill.metrics import render_histograms

        report = MetricReport(condition={"model_id": "m"}, per_sample=rows).finalize()
        written = render_histograms({"m": report}, tmp_path)
        names = {p.name for p in written}
        assert "bleu.png" in names and "perplexity.png" in names
        assert "kw_count.png" not in names  # all-None metrics are skipped
        for path in written:
            assert path.stat().st_size > 0


class TestWordTokens:
    def test_lowercase_and_punctuation(self):
        assert word_tokens("The cat, sat!") == ["the", "cat", "sat"]

    def test_keeps_contractions(self):
        assert word_tokens("don't stop") == ["don't", "stop"]
