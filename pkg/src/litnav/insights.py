"""Query understanding and corpus analytics.

A multinomial Bayes classifier routes queries (question / keyword / other),
keyword queries get an auto-generated question form, questions are answered
by sentence retrieval with chunk context, analytics templates are matched
against recognized concepts, and concept popularity is counted per calendar
month as distinct mentioning documents on a shared axis.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from datetime import date
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import (
    AnnotationKind,
    Document,
    StandoffAnnotation,
    chunk_sentences,
    segment_sentences,
)
from .kg import KnowledgeGraph, find_concepts_in_query
from .tokens import tokenize
from .vector import GranularIndices, Granularity

WH_WORDS = frozenset(
    ["what", "which", "how", "why", "when", "who", "is", "are", "does", "can"]
)
QUESTION_MARK_FEATURE = "__question_mark__"
WH_START_FEATURE = "__wh_start__"
BUNDLED_QUERY_DATA = "data/queries.tsv"


class QueryLabel(str, Enum):
    QUESTION = "question"
    KEYWORD = "keyword"
    OTHER = "other"


class InsufficientClasses(ValueError):
    pass


class NotAKeywordQuery(ValueError):
    pass


class UnknownConcept(KeyError):
    pass


@dataclass(frozen=True)
class QueryKind:
    kind: QueryLabel
    probability: float


def query_features(text: str) -> list[str]:
    """Unigrams plus the question-mark and wh-start pseudo-tokens."""
    tokens = tokenize(text)
    features = list(tokens)
    if "?" in text:
        features.append(QUESTION_MARK_FEATURE)
    if tokens and tokens[0] in WH_WORDS:
        features.append(WH_START_FEATURE)
    return features


@dataclass(frozen=True, eq=True)
class BayesModel:
    """Multinomial Bayes with add-one smoothing over the training vocabulary."""

    log_priors: tuple[tuple[QueryLabel, float], ...]
    log_likelihoods: tuple[tuple[QueryLabel, tuple[tuple[str, float], ...]], ...]
    vocabulary: frozenset[str]

    def classes(self) -> list[QueryLabel]:
        return [label for label, _ in self.log_priors]

    def prior(self, label: QueryLabel) -> float:
        return dict(self.log_priors)[label]

    def likelihoods(self, label: QueryLabel) -> dict[str, float]:
        return {f: v for lbl, pairs in self.log_likelihoods if lbl == label for f, v in pairs}


def train_classifier(
    labeled: Sequence[tuple[str, QueryLabel | str]]
) -> BayesModel:
    """Fit priors and smoothed per-class feature likelihoods from counts.

    Training depends only on feature counts, so any permutation of the rows
    produces an identical model. Raises InsufficientClasses when fewer than
    two distinct labels are present.
    """
    rows = [(text, QueryLabel(label)) for text, label in labeled]
    labels = sorted({label for _, label in rows}, key=lambda l: l.value)
    if len(labels) < 2:
        raise InsufficientClasses(f"need >= 2 classes, got {len(labels)}")

    counts: dict[QueryLabel, dict[str, int]] = {label: {} for label in labels}
    class_rows: dict[QueryLabel, int] = {label: 0 for label in labels}
    vocabulary: set[str] = set()
    for text, label in rows:
        class_rows[label] += 1
        for feature in query_features(text):
            vocabulary.add(feature)
            counts[label][feature] = counts[label].get(feature, 0) + 1

    vocab = frozenset(vocabulary)
    log_priors = tuple(
        (label, math.log(class_rows[label] / len(rows))) for label in labels
    )
    log_likelihoods = []
    for label in labels:
        total = sum(counts[label].values())
        denom = total + len(vocab)
        pairs = tuple(
            (feature, math.log((counts[label].get(feature, 0) + 1) / denom))
            for feature in sorted(vocab)
        )
        log_likelihoods.append((label, pairs))
    return BayesModel(log_priors, tuple(log_likelihoods), vocab)


def classify_query(model: BayesModel, q: str) -> QueryKind:
    """Argmax posterior over the classes; degenerate input → OTHER at max prior.

    Features never seen in training are ignored; when nothing remains the
    query carries no evidence at all and the degenerate rule applies.
    """
    features = [f for f in query_features(q) if f in model.vocabulary]
    if not features:
        return QueryKind(QueryLabel.OTHER, max(math.exp(p) for _, p in model.log_priors))

    scores: dict[QueryLabel, float] = {}
    for label in model.classes():
        likelihood = model.likelihoods(label)
        scores[label] = model.prior(label) + sum(likelihood[f] for f in features)
    peak = max(scores.values())
    total = sum(math.exp(s - peak) for s in scores.values())
    best = min(scores, key=lambda label: (-scores[label], label.value))
    return QueryKind(best, math.exp(scores[best] - peak) / total)


def auto_question(q: str, model: BayesModel) -> str:
    """Rewrite a keyword query as "What is <q>?" (lowercased, trimmed)."""
    kind = classify_query(model, q)
    if kind.kind is not QueryLabel.KEYWORD:
        raise NotAKeywordQuery(f"classified as {kind.kind.value}: {q!r}")
    return f"What is {q.strip().lower()}?"


def load_labeled_queries(path: str | Path | None = None) -> list[tuple[str, QueryLabel]]:
    """Read `text<TAB>label` rows; defaults to the bundled 200-example set."""
    if path is None:
        text = (resources.files("litnav") / BUNDLED_QUERY_DATA).read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    rows = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            query, label = line.split("\t")
        except ValueError as exc:
            raise ValueError(f"line {line_no}: expected text<TAB>label") from exc
        rows.append((query, QueryLabel(label)))
    return rows


# ---------------------------------------------------------------------------
# question answering by sentence retrieval


@dataclass(frozen=True)
class AnswerSentence:
    doc_id: str
    sentence: str
    context: str
    similarity: float

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "sentence": self.sentence,
            "context": self.context,
            "similarity": self.similarity,
        }


def answer_sentences(
    indices: GranularIndices,
    docs_by_id: Mapping[str, Document],
    question: str,
    k: int = 5,
    ef: int | None = None,
) -> list[AnswerSentence]:
    """Top-k sentences for the question, each with its enclosing chunk text.

    Raises EmptyIndex when no sentences are indexed.
    """
    hits = indices.search(question, Granularity.SENTENCE, k, ef)
    answers = []
    for hit in hits:
        ref = hit.ref
        doc = docs_by_id[ref.doc_id]
        field_text = doc.field_text(ref.field)
        sentence = field_text[ref.start_char : ref.end_char]
        context = sentence
        spans = segment_sentences(field_text, doc_id=doc.id, field=ref.field)
        for chunk in chunk_sentences(spans, indices.chunk_size):
            if chunk.start_char <= ref.start_char and ref.end_char <= chunk.end_char:
                context = field_text[chunk.start_char : chunk.end_char]
                break
        answers.append(AnswerSentence(ref.doc_id, sentence, context, hit.similarity))
    return answers


# ---------------------------------------------------------------------------
# analytics template matching


TEMPLATE_TYPE_WORDS = ("datasets", "methods", "models", "metrics", "tasks")

_TYPE_QUERY = re.compile(
    r"^\s*which\s+(?P<type>" + "|".join(TEMPLATE_TYPE_WORDS) + r")\b"
    r".*\b(?:for|in)\s+(?P<tail>.+)$",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class AnalyticsSpec:
    concepts: tuple[str, ...]
    bucket: str = "month"

    def to_record(self) -> dict:
        return {"concepts": list(self.concepts), "bucket": self.bucket}


def match_template(q: str, kg: KnowledgeGraph) -> AnalyticsSpec | None:
    """Fire on ≥2 recognized concepts, or on "which <type> … for|in <concept>"."""
    concepts = find_concepts_in_query(q, kg)
    if len(concepts) >= 2:
        return AnalyticsSpec(tuple(concepts))
    m = _TYPE_QUERY.match(q)
    if m:
        tail_concepts = find_concepts_in_query(m.group("tail"), kg)
        if tail_concepts:
            return AnalyticsSpec(tuple(tail_concepts))
    return None


# ---------------------------------------------------------------------------
# contrastive popularity


@dataclass(frozen=True)
class PopularityBucket:
    period: str
    mention_doc_count: int


@dataclass(frozen=True)
class PopularitySeries:
    concept_id: str
    buckets: tuple[PopularityBucket, ...]

    def to_record(self) -> dict:
        return {
            "concept_id": self.concept_id,
            "series": [
                {"period": b.period, "count": b.mention_doc_count} for b in self.buckets
            ],
        }


def _period_of(day: date, bucket: str) -> str:
    if bucket == "year":
        return f"{day.year:04d}"
    return f"{day.year:04d}-{day.month:02d}"


def _axis(dates: Sequence[date], bucket: str) -> list[str]:
    """Contiguous periods from the earliest to the latest date, inclusive."""
    if not dates:
        return []
    lo, hi = min(dates), max(dates)
    if bucket == "year":
        return [f"{y:04d}" for y in range(lo.year, hi.year + 1)]
    periods = []
    year, month = lo.year, lo.month
    while (year, month) <= (hi.year, hi.month):
        periods.append(f"{year:04d}-{month:02d}")
        month += 1
        if month == 13:
            year, month = year + 1, 1
    return periods


def contrastive_popularity(
    concepts: Sequence[str],
    corpus: Sequence[Document],
    annotations: Iterable[StandoffAnnotation],
    kg: KnowledgeGraph,
    *,
    bucket: str = "month",
) -> list[PopularitySeries]:
    """Distinct mentioning documents per calendar period, shared axis.

    A document counts toward a concept's period when it has at least one
    linked-mention annotation whose payload is that concept id. Unknown
    concept ids raise UnknownConcept.
    """
    if bucket not in ("month", "year"):
        raise ValueError(f"bucket must be 'month' or 'year', got {bucket!r}")
    for concept_id in concepts:
        if kg.concept(concept_id) is None:
            raise UnknownConcept(concept_id)

    docs_by_id = {doc.id: doc for doc in corpus}
    axis = _axis([doc.published_at for doc in corpus], bucket)
    wanted = set(concepts)

    mentioned: dict[str, dict[str, set[str]]] = {c: {} for c in wanted}
    for ann in annotations:
        if ann.kind is not AnnotationKind.CONCEPT_LINK or ann.payload not in wanted:
            continue
        doc = docs_by_id.get(ann.doc_id)
        if doc is None:
            continue
        period = _period_of(doc.published_at, bucket)
        mentioned[ann.payload].setdefault(period, set()).add(doc.id)

    return [
        PopularitySeries(
            concept_id,
            tuple(
                PopularityBucket(period, len(mentioned[concept_id].get(period, set())))
                for period in axis
            ),
        )
        for concept_id in concepts
    ]
