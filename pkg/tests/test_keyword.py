from __future__ import annotations

import io
import math
import random
import re
from datetime import date

import pytest
from hypothesis import given, strategies as st

from litnav.corpus import Field, validate_document
from litnav.keyword import EmptyQuery, KeywordIndex, plan_query
from randcorpus import NOW, random_corpus, random_query

# --- independent scoring oracle ----------------------------------------------

ORACLE_STOPWORDS = {
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from",
    "has", "have", "in", "is", "it", "its", "of", "on", "or", "that", "the",
    "to", "was", "were", "will", "with", "this", "which", "can", "do", "does",
    "not", "no", "we", "our", "you", "your", "they", "their", "he", "she",
    "his", "her", "what", "when", "where", "who", "how", "why",
}
ORACLE_WEIGHTS = {"authors": 3.0, "title": 2.5, "abstract": 1.5, "body": 0.5}
ORACLE_TIEBREAK = 0.1
ORACLE_TAU = 730.0


def oracle_tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def oracle_field_tokens(doc) -> dict[str, list[str]]:
    return {
        "authors": oracle_tokens(", ".join(doc.authors)),
        "title": oracle_tokens(doc.title),
        "abstract": oracle_tokens(doc.abstract),
        "body": oracle_tokens(doc.body or ""),
    }


def oracle_plan(query: str) -> list[tuple[tuple[str, ...], float]]:
    tokens = oracle_tokens(query)
    plan: list[tuple[tuple[str, ...], float]] = []
    seen: set[tuple[str, ...]] = set()
    for n in (1, 2, 3):
        for i in range(len(tokens) - n + 1):
            gram = tuple(tokens[i : i + n])
            if gram in seen:
                continue
            seen.add(gram)
            if n == 1 and gram[0] in ORACLE_STOPWORDS:
                plan.append((gram, 0.25))
            else:
                plan.append((gram, float(n)))
    return plan


def oracle_phrase_count(tokens: list[str], gram: tuple[str, ...]) -> int:
    n = len(gram)
    return sum(1 for i in range(len(tokens) - n + 1) if tuple(tokens[i : i + n]) == gram)


def oracle_total(doc, query: str, now: date) -> float:
    fields = oracle_field_tokens(doc)
    match_total = 0.0
    for gram, boost in oracle_plan(query):
        scores = {}
        for name, weight in ORACLE_WEIGHTS.items():
            count = oracle_phrase_count(fields[name], gram)
            if count == 0:
                scores[name] = 0.0
            elif name == "body":
                scores[name] = weight * count / (count + 1)
            else:
                scores[name] = weight
        best = max(scores.values())
        if best > 0:
            match_total += boost * (best + ORACLE_TIEBREAK * (sum(scores.values()) - best))
    if match_total == 0.0:
        return 0.0
    prior = (1.0 + math.log(1.0 + doc.citation_count)) * math.exp(
        -(now - doc.published_at).days / ORACLE_TAU
    )
    return match_total * prior


def oracle_search(docs, query: str, k: int, now: date) -> list[tuple[str, float]]:
    scored = [(d, oracle_total(d, query, now)) for d in docs]
    scored = [(d, s) for d, s in scored if s > 0.0]
    scored.sort(key=lambda t: (-t[1], -t[0].published_at.toordinal(), t[0].id))
    return [(d.id, s) for d, s in scored[:k]]


# --- fixtures -----------------------------------------------------------------


def make_doc(**overrides):
    raw = {
        "id": "d1",
        "title": "Neural Ranking",
        "abstract": "About search.",
        "body": "Long body text here.",
        "authors": ["Ada Lovelace"],
        "published_at": "2024-01-01",
        "citation_count": 0,
    }
    raw.update(overrides)
    return validate_document(raw, now=NOW)


def index_of(*docs) -> KeywordIndex:
    index = KeywordIndex()
    for doc in docs:
        index.index_document(doc)
    return index


# --- query planning -----------------------------------------------------------


def test_plan_two_token_query() -> None:
    plan = plan_query("neural ranking")
    grams = [(ng.tokens, ng.boost) for ng in plan.ngrams]
    assert (("neural",), 1.0) in grams
    assert (("ranking",), 1.0) in grams
    assert (("neural", "ranking"), 2.0) in grams
    assert len(grams) == 3


def test_plan_stopword_unigram_boost() -> None:
    plan = plan_query("a")
    assert [(ng.tokens, ng.boost) for ng in plan.ngrams] == [(("a",), 0.25)]


def test_plan_five_token_query_has_twelve_ngrams() -> None:
    plan = plan_query("one two three four five")
    assert len(plan.ngrams) == 12


def test_plan_deduplicates_repeated_ngrams() -> None:
    plan = plan_query("to be to be")
    grams = [ng.tokens for ng in plan.ngrams]
    assert len(grams) == len(set(grams))
    assert ("to", "be") in grams


def test_plan_empty_query_raises() -> None:
    with pytest.raises(EmptyQuery):
        plan_query("  !! ")


def test_plan_boosts_increase_with_n() -> None:
    plan = plan_query("knowledge graph embedding model")
    by_n = {}
    for ng in plan.ngrams:
        by_n.setdefault(ng.n, set()).add(ng.boost)
    assert by_n[1] == {1.0} and by_n[2] == {2.0} and by_n[3] == {3.0}


# --- field scores ---------------------------------------------------------------


def test_title_match_scores_constant_weight() -> None:
    index = index_of(make_doc())
    assert index.field_match_score("d1", Field.TITLE, ("neural",)) == 2.5


def test_non_adjacent_bigram_scores_zero() -> None:
    doc = make_doc(title="Neural Deep Ranking")
    index = index_of(doc)
    assert index.field_match_score("d1", Field.TITLE, ("neural", "ranking")) == 0.0
    assert index.field_match_score("d1", Field.TITLE, ("neural", "deep")) == 2.5


def test_body_tf_saturates() -> None:
    doc = make_doc(body="graph")
    index = index_of(doc)
    assert index.field_match_score("d1", Field.BODY, ("graph",)) == pytest.approx(0.25)
    doc3 = make_doc(id="d2", body="graph graph graph")
    index.index_document(doc3)
    assert index.field_match_score("d2", Field.BODY, ("graph",)) == pytest.approx(0.5 * 0.75)


# --- scoring ---------------------------------------------------------------------


def test_citation_prior_ratio() -> None:
    a = make_doc(id="a", citation_count=100)
    b = make_doc(id="b", citation_count=0)
    index = index_of(a, b)
    results = {r.doc_id: r.score for r in index.search("neural", 2, now=NOW)}
    assert results["a"] / results["b"] == pytest.approx(1 + math.log(101), rel=1e-9)


def test_phrase_match_beats_split_unigrams() -> None:
    a = make_doc(id="a", title="Neural Ranking Models")
    b = make_doc(id="b", title="Ranking The Neural Way")
    index = index_of(a, b)
    results = index.search("neural ranking", 2, now=NOW)
    assert [r.doc_id for r in results] == ["a", "b"]


def test_author_only_match_wins_author_field() -> None:
    doc = make_doc(title="Graph Models", authors=["Neural Smith"])
    index = index_of(doc)
    (result,) = index.search("smith", 1, now=NOW)
    winning = [s.winning_field for s in result.breakdown.ngrams if s.combined > 0]
    assert winning == [Field.AUTHORS]


def test_zero_match_docs_excluded() -> None:
    index = index_of(make_doc(), make_doc(id="d2", title="Protein Folding"))
    results = index.search("protein", 10, now=NOW)
    assert [r.doc_id for r in results] == ["d2"]


def test_ties_break_by_newer_date_then_id() -> None:
    old = make_doc(id="old", published_at="2020-01-01")
    new = make_doc(id="new", published_at="2024-01-01")
    twin = make_doc(id="aaa", published_at="2024-01-01")
    index = index_of(old, new, twin)
    results = index.search("neural", 3, now=NOW)
    assert [r.doc_id for r in results] == ["aaa", "new", "old"]


def test_breakdown_reconstructs_total() -> None:
    docs = random_corpus(seed=5, n_docs=20)
    index = index_of(*docs)
    for r in index.search("neural ranking model", 20, now=NOW):
        assert r.breakdown.reconstruct() == pytest.approx(r.score, rel=1e-9)
        assert r.breakdown.total == pytest.approx(
            r.breakdown.match_total * r.breakdown.prior, rel=1e-9
        )


def test_search_k_validates() -> None:
    with pytest.raises(ValueError):
        index_of(make_doc()).search("neural", 0)


# --- index maintenance -------------------------------------------------------------


def test_reindex_same_version_is_noop() -> None:
    doc = make_doc()
    index = index_of(doc)
    before = index.search("neural", 5, now=NOW)
    assert index.index_document(doc) is False
    assert index.search("neural", 5, now=NOW) == before


def test_new_version_replaces_postings() -> None:
    index = index_of(make_doc(title="Neural Ranking"))
    index.index_document(make_doc(version=2, title="Protein Folding"))
    assert index.search("neural", 5, now=NOW) == []
    assert [r.doc_id for r in index.search("protein", 5, now=NOW)] == ["d1"]


def test_older_version_ignored() -> None:
    index = index_of(make_doc(version=2))
    assert index.index_document(make_doc(version=1, title="Other Words")) is False
    assert [r.doc_id for r in index.search("neural", 5, now=NOW)] == ["d1"]


# --- ordering properties -------------------------------------------------------------


def test_dismax_never_decreases_when_a_field_improves() -> None:
    plain = make_doc(id="p", title="Graph Models", abstract="graph methods.")
    richer = make_doc(id="r", title="Graph Models", abstract="graph methods.", body="graph")
    index = index_of(plain, richer)
    scores = {r.doc_id: r.score for r in index.search("graph", 2, now=NOW)}
    assert scores["r"] >= scores["p"]


def test_longer_phrase_match_strictly_raises_score() -> None:
    with_phrase = make_doc(id="w", abstract="deep neural ranking methods.")
    without = make_doc(id="o", abstract="ranking neural deep methods.")
    index = index_of(with_phrase, without)
    scores = {r.doc_id: r.score for r in index.search("neural ranking", 2, now=NOW)}
    assert scores["w"] > scores["o"]


@given(
    st.integers(min_value=0, max_value=10_000),
    st.integers(min_value=0, max_value=10_000),
)
def test_prior_strictly_increases_with_citations(c1: int, c2: int) -> None:
    a = make_doc(id="a", citation_count=c1)
    b = make_doc(id="b", citation_count=c2)
    index = index_of(a, b)
    scores = {r.doc_id: r.score for r in index.search("neural", 2, now=NOW)}
    if c1 < c2:
        assert scores["a"] < scores["b"]
    elif c1 > c2:
        assert scores["a"] > scores["b"]
    else:
        assert scores["a"] == scores["b"]


@given(st.integers(min_value=0, max_value=3000), st.integers(min_value=0, max_value=3000))
def test_prior_strictly_decreases_with_age(age1: int, age2: int) -> None:
    from datetime import timedelta

    a = make_doc(id="a", published_at=(NOW - timedelta(days=age1)).isoformat())
    b = make_doc(id="b", published_at=(NOW - timedelta(days=age2)).isoformat())
    index = index_of(a, b)
    scores = {r.doc_id: r.score for r in index.search("neural", 2, now=NOW)}
    if age1 < age2:
        assert scores["a"] > scores["b"]
    elif age1 > age2:
        assert scores["a"] < scores["b"]


# --- oracle equivalence ---------------------------------------------------------------


def test_search_matches_brute_force_oracle_small() -> None:
    docs = random_corpus(seed=11, n_docs=30)
    index = index_of(*docs)
    rng = random.Random(99)
    for _ in range(40):
        query = random_query(rng)
        got = [(r.doc_id, r.score) for r in index.search(query, 30, now=NOW)]
        want = oracle_search(docs, query, 30, NOW)
        assert [g[0] for g in got] == [w[0] for w in want], query
        for (_, gs), (_, ws) in zip(got, want):
            assert gs == pytest.approx(ws, rel=1e-12)


# --- persistence ------------------------------------------------------------------------


def test_save_load_roundtrip_preserves_rankings() -> None:
    docs = random_corpus(seed=21, n_docs=25)
    index = index_of(*docs)
    buffer = io.BytesIO()
    index.save(buffer)
    buffer.seek(0)
    loaded = KeywordIndex.load(buffer)
    rng = random.Random(3)
    for _ in range(10):
        query = random_query(rng)
        got = [(r.doc_id, r.score) for r in loaded.search(query, 10, now=NOW)]
        want = [(r.doc_id, r.score) for r in index.search(query, 10, now=NOW)]
        assert got == want


def test_loaded_index_supports_reindexing() -> None:
    index = index_of(make_doc())
    buffer = io.BytesIO()
    index.save(buffer)
    buffer.seek(0)
    loaded = KeywordIndex.load(buffer)
    loaded.index_document(make_doc(version=2, title="Protein Folding"))
    assert loaded.search("neural", 5, now=NOW) == []
    assert [r.doc_id for r in loaded.search("protein folding", 5, now=NOW)] == ["d1"]


def test_load_rejects_bad_magic() -> None:
    with pytest.raises(ValueError):
        KeywordIndex.load(io.BytesIO(b"WRONGMAG" + b"\x00" * 32))
