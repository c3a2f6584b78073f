"""Paragraph annotation: four-category named entities, TextRank keywords,
and an extractive key-sentence summary.

NER is rule-based: capitalized token runs away from sentence starts plus
gazetteer matches, with an honorific rule for persons. Keywords come from
damped centrality over a word co-occurrence graph (window 2). POS filtering
is approximated by a stop-word list plus a suffix heuristic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .corpus import Paragraph, split_sentences

DEFAULT_HONORIFICS = frozenset({"mr", "mrs", "dr", "miss", "sir", "lady"})
DEFAULT_N_KEYWORDS = 10
ENTITY_CATEGORIES = ("persons", "locations", "organisations", "misc")

TEXTRANK_DAMPING = 0.85
TEXTRANK_TOL = 1e-6
TEXTRANK_MAX_ITER = 100
TEXTRANK_WINDOW = 2

STOP_WORDS = frozenset(
    """a about above after again against all am an and any are as at be because
    been before being below between both but by cannot could did do does doing
    down during each few for from further had has have having he her here hers
    herself him himself his how i if in into is it its itself just me more most
    my myself no nor not now of off on once only or other our ours ourselves
    out over own same she should so some such than that the their theirs them
    themselves then there these they this those through to too under until up
    upon very was we were what when where which while who whom why will with
    would you your yours yourself yourselves shall may might must let us o er
    ye thee thou thy thus hence whilst though although whether either neither
    also however therefore yet ever never one two still even much many
    every another such beneath beyond toward towards within without among
    amongst besides alongside around behind across near onto unto
    amid amidst atop despite""".split()
)

_WORD_RE = re.compile(r"[A-Za-z][A-Za-z'’-]*")


@dataclass
class EntitySet:
    persons: list[str] = field(default_factory=list)
    locations: list[str] = field(default_factory=list)
    organisations: list[str] = field(default_factory=list)
    misc: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, list[str]]:
        return {
            "persons": list(self.persons),
            "locations": list(self.locations),
            "organisations": list(self.organisations),
            "misc": list(self.misc),
        }

    def all_names(self) -> list[str]:
        return self.persons + self.locations + self.organisations + self.misc


@dataclass
class SummarySet:
    keywords: list[str] = field(default_factory=list)
    key_sentence: str = ""

    def as_dict(self) -> dict:
        # ext1/ext2 are reserved slots for pluggable neural summarizers.
        return {
            "kw": list(self.keywords),
            "key_sentence": self.key_sentence,
            "ext1": None,
            "ext2": None,
        }


@dataclass
class WordGraph:
    nodes: list[str]
    edges: dict[tuple[str, str], int]
    scores: dict[str, float]


def _is_candidate(word: str) -> bool:
    # Noun/adjective approximation: drop closed-class words, -ly adverbs,
    # and longer -ed verb forms (loses a few nouns like "creed"; accepted).
    lower = word.lower()
    if lower in STOP_WORDS or len(lower) < 3:
        return False
    if lower.endswith("ly") or (len(lower) >= 5 and lower.endswith("ed")):
        return False
    return lower.isalpha()


def extract_entities(
    text: str,
    gazetteer: dict[str, list[str]] | None = None,
    honorifics: frozenset[str] | set[str] = DEFAULT_HONORIFICS,
) -> EntitySet:
    """Detect persons/locations/organisations/misc names in a paragraph.

    Candidates are runs of capitalized tokens that do not start a sentence,
    plus any gazetteer match anywhere. The gazetteer decides the category;
    otherwise an honorific before the run marks a person, else misc.
    """
    gazetteer = gazetteer or {}
    gaz_lookup: dict[str, str] = {}
    for category in ENTITY_CATEGORIES:
        for name in gazetteer.get(category, []):
            gaz_lookup.setdefault(name.casefold(), category)

    found: dict[str, list[str]] = {c: [] for c in ENTITY_CATEGORIES}
    seen: dict[str, str] = {}  # casefolded name -> category

    def add(category: str, surface: str) -> None:
        key = surface.casefold()
        if key not in seen:
            seen[key] = category
            found[category].append(surface)

    # A name already placed in a specific category never re-enters misc.
    misc_pending: list[str] = []

    for sentence in split_sentences(text):
        tokens = [(m.group(0), m.start()) for m in _WORD_RE.finditer(sentence)]
        i = 0
        while i < len(tokens):
            word, _ = tokens[i]
            lower = word.rstrip(".").lower()
            is_cap = word[0].isupper() and word.lower() != "i" and lower not in honorifics
            if i == 0 or not is_cap:
                i += 1
                continue
            run = [word]
            j = i + 1
            while j < len(tokens):
                nxt = tokens[j][0]
                if nxt[0].isupper() and nxt.lower() != "i" and nxt.rstrip(".").lower() not in honorifics:
                    run.append(nxt)
                    j += 1
                else:
                    break
            surface = " ".join(run)
            if surface.casefold() in gaz_lookup:
                add(gaz_lookup[surface.casefold()], surface)
            elif tokens[i - 1][0].rstrip(".").lower() in honorifics:
                add("persons", surface)
            else:
                misc_pending.append(surface)
            i = j

    # Gazetteer names match anywhere, including sentence starts.
    for name, category in gaz_lookup.items():
        pattern = re.compile(r"(?<![A-Za-z])" + re.escape(name) + r"(?![A-Za-z])", re.IGNORECASE)
        match = pattern.search(text)
        if match:
            add(category, match.group(0))

    for surface in misc_pending:
        add("misc", surface)

    return EntitySet(**found)


def build_word_graph(
    text: str, window: int = TEXTRANK_WINDOW
) -> tuple[WordGraph, list[tuple[str | None, int, int]]]:
    """Co-occurrence graph over candidate words, plus the token stream as
    (lowercased word or None, start, end) spans for phrase merging."""
    stream: list[tuple[str | None, int, int]] = []
    for m in _WORD_RE.finditer(text):
        word = m.group(0).lower()
        stream.append((word if _is_candidate(word) else None, m.start(), m.end()))
    nodes: list[str] = []
    node_set: set[str] = set()
    for word, _, _ in stream:
        if word is not None and word not in node_set:
            node_set.add(word)
            nodes.append(word)
    edges: dict[tuple[str, str], int] = {}
    for i, (a, _, _) in enumerate(stream):
        if a is None:
            continue
        for j in range(i + 1, min(i + window, len(stream))):
            b = stream[j][0]
            if b is None or b == a:
                continue
            key = (a, b) if a < b else (b, a)
            edges[key] = edges.get(key, 0) + 1
    graph = WordGraph(nodes=nodes, edges=edges, scores={})
    return graph, stream


def score_word_graph(
    graph: WordGraph,
    damping: float = TEXTRANK_DAMPING,
    tol: float = TEXTRANK_TOL,
    max_iter: int = TEXTRANK_MAX_ITER,
) -> dict[str, float]:
    """Damped centrality by power iteration; scores sum to 1.

    Mass from isolated (degree-zero) words is redistributed uniformly so the
    distribution stays normalized.
    """
    nodes = graph.nodes
    n = len(nodes)
    if n == 0:
        return {}
    index = {w: k for k, w in enumerate(nodes)}
    degree = [0.0] * n
    for (a, b), count in graph.edges.items():
        degree[index[a]] += count
        degree[index[b]] += count
    scores = [1.0 / n] * n
    for _ in range(max_iter):
        incoming = [0.0] * n
        dangling = 0.0
        for k, score in enumerate(scores):
            if degree[k] == 0.0:
                dangling += score
        for (a, b), count in graph.edges.items():
            ia, ib = index[a], index[b]
            incoming[ia] += count / degree[ib] * scores[ib]
            incoming[ib] += count / degree[ia] * scores[ia]
        new_scores = [
            (1.0 - damping) / n + damping * (incoming[k] + dangling / n) for k in range(n)
        ]
        delta = sum(abs(new_scores[k] - scores[k]) for k in range(n))
        scores = new_scores
        if delta < tol:
            break
    graph.scores = {w: scores[index[w]] for w in nodes}
    return graph.scores


def textrank_keywords(text: str, n: int = DEFAULT_N_KEYWORDS) -> list[str]:
    """Top-n keywords by graph centrality. Distinct winners that sit next
    to each other in the text (whitespace between them only) merge into a
    multiword keyphrase; units rank by their best member's score."""
    graph, stream = build_word_graph(text)
    if not graph.nodes:
        return []
    scores = score_word_graph(graph)
    first_pos: dict[str, int] = {}
    for pos, (word, _, _) in enumerate(stream):
        if word is not None and word not in first_pos:
            first_pos[word] = pos
    ranked = sorted(graph.nodes, key=lambda w: (-scores[w], first_pos[w]))
    selected = set(ranked[: min(n, len(ranked))])

    units: list[tuple[str, float, int]] = []
    seen_units: set[str] = set()
    i = 0
    while i < len(stream):
        word = stream[i][0]
        if word not in selected:
            i += 1
            continue
        run = [word]
        j = i
        while j + 1 < len(stream):
            nxt, nxt_start, _ = stream[j + 1]
            gap = text[stream[j][2] : nxt_start]
            if nxt in selected and nxt not in run and gap.strip() == "":
                run.append(nxt)
                j += 1
            else:
                break
        phrase = " ".join(run)
        if phrase not in seen_units:
            seen_units.add(phrase)
            units.append((phrase, max(scores[w] for w in run), i))
        i = j + 1
    units.sort(key=lambda u: (-u[1], u[2]))
    return [u[0] for u in units[:n]]


def extract_key_sentence(paragraph: Paragraph | str) -> str:
    """The sentence with the highest total word-centrality score.

    Ties break toward the earliest sentence; a paragraph whose words all
    score zero falls back to its first sentence.
    """
    text = paragraph.text if isinstance(paragraph, Paragraph) else paragraph
    sentences = split_sentences(text)
    if not sentences:
        return text.strip()
    graph, _ = build_word_graph(text)
    scores = score_word_graph(graph) if graph.nodes else {}
    best_idx = 0
    best_score = -1.0
    for idx, sentence in enumerate(sentences):
        total = sum(
            scores.get(m.group(0).lower(), 0.0) for m in _WORD_RE.finditer(sentence)
        )
        if total > best_score:
            best_score = total
            best_idx = idx
    return sentences[best_idx]


def annotate_paragraph(
    paragraph: Paragraph | str,
    gazetteer: dict[str, list[str]] | None = None,
    n_keywords: int = DEFAULT_N_KEYWORDS,
) -> tuple[EntitySet, SummarySet]:
    text = paragraph.text if isinstance(paragraph, Paragraph) else paragraph
    entities = extract_entities(text, gazetteer)
    summary = SummarySet(
        keywords=textrank_keywords(text, n_keywords),
        key_sentence=extract_key_sentence(text),
    )
    return entities, summary


def annotate_book_document(
    doc: dict,
    gazetteer: dict[str, list[str]] | None = None,
    n_keywords: int = DEFAULT_N_KEYWORDS,
) -> dict:
    """Add entities and summaries to every paragraph of a per-book document."""
    for para in doc["paragraphs"]:
        entities, summary = annotate_paragraph(para["text"], gazetteer, n_keywords)
        para["entities"] = entities.as_dict()
        para["summaries"] = summary.as_dict()
    return doc
