"""Modular hybrid recommendations from user-tagged documents.

Four scoring modules — content similarity to the tag centroid, two-hop
citation proximity, tagged-author frequency, and global popularity — are
normalized per tag by leave-one-out fitting (z-score + logistic squash, with
a min-max fallback for tiny or degenerate samples) and combined by a
weighted average. Candidates come from a recent-publication window only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from enum import Enum
from typing import Collection, Iterable, Mapping, Sequence

import numpy as np

from .corpus import Document
from .embedding import Embedder, EmptyText, HashingEmbedder
from .kg import KnowledgeGraph, Relation, document_node_id
from .vector import document_text

DEFAULT_WINDOW_DAYS = 30
DIRECT_CITATION_SCORE = 1.0
INDIRECT_CITATION_SCORE = 0.5


class Module(str, Enum):
    CONTENT = "content"
    CITATION = "citation"
    AUTHOR = "author"
    POPULARITY = "popularity"


class EmptyTag(ValueError):
    pass


class DuplicateTaggedDoc(ValueError):
    pass


class NoActiveModules(ValueError):
    pass


def _embed_or_zero(embedder: Embedder, text: str) -> np.ndarray:
    try:
        return embedder.embed(text)
    except EmptyText:
        return np.zeros(embedder.dim)


def centroid_of(docs: Sequence[Document], embedder: Embedder) -> np.ndarray:
    """Renormalized mean of the documents' embeddings (zero if degenerate)."""
    total = np.zeros(embedder.dim)
    for doc in docs:
        total += _embed_or_zero(embedder, document_text(doc))
    norm = float(np.linalg.norm(total))
    return total / norm if norm > 1e-12 else np.zeros(embedder.dim)


@dataclass(eq=False)
class TagProfile:
    """One user tag: the tagged documents and their embedding centroid."""

    user_id: str
    tag_name: str
    docs: tuple[Document, ...]
    centroid: np.ndarray
    created_at: dict[str, datetime]
    embedder: Embedder = field(repr=False, default_factory=HashingEmbedder)

    @classmethod
    def build(
        cls,
        user_id: str,
        tag_name: str,
        docs: Sequence[Document],
        *,
        embedder: Embedder | None = None,
        created_at: Mapping[str, datetime] | None = None,
    ) -> "TagProfile":
        if not docs:
            raise EmptyTag(f"tag {tag_name!r} has no documents")
        ids = [doc.id for doc in docs]
        if len(set(ids)) != len(ids):
            raise DuplicateTaggedDoc(f"tag {tag_name!r} repeats a document")
        embedder = embedder or HashingEmbedder()
        stamps = dict(created_at) if created_at else {}
        now = datetime.now(timezone.utc)
        return cls(
            user_id=user_id,
            tag_name=tag_name,
            docs=tuple(docs),
            centroid=centroid_of(docs, embedder),
            created_at={doc.id: stamps.get(doc.id, now) for doc in docs},
            embedder=embedder,
        )

    @property
    def doc_ids(self) -> tuple[str, ...]:
        return tuple(doc.id for doc in self.docs)

    def with_doc(self, doc: Document, created_at: datetime | None = None) -> "TagProfile":
        if doc.id in self.created_at:
            raise DuplicateTaggedDoc(f"{doc.id} already in tag {self.tag_name!r}")
        docs = self.docs + (doc,)
        stamps = {**self.created_at, doc.id: created_at or datetime.now(timezone.utc)}
        return replace(
            self, docs=docs, centroid=centroid_of(docs, self.embedder), created_at=stamps
        )

    def without(self, doc_id: str) -> "TagProfile":
        docs = tuple(doc for doc in self.docs if doc.id != doc_id)
        if not docs:
            raise EmptyTag(f"removing {doc_id} would empty tag {self.tag_name!r}")
        stamps = {k: v for k, v in self.created_at.items() if k != doc_id}
        return replace(
            self, docs=docs, centroid=centroid_of(docs, self.embedder), created_at=stamps
        )


# ---------------------------------------------------------------------------
# candidate pool


def candidate_pool(
    corpus: Iterable[Document],
    tagged_ids: Collection[str],
    *,
    now: date,
    window_days: int = DEFAULT_WINDOW_DAYS,
) -> list[Document]:
    """Untagged docs published within the closed window [now − window_days, now]."""
    tagged = set(tagged_ids)
    pool = [
        doc
        for doc in corpus
        if doc.id not in tagged and 0 <= (now - doc.published_at).days <= window_days
    ]
    pool.sort(key=lambda doc: doc.id)
    return pool


# ---------------------------------------------------------------------------
# per-module raw scores


def content_scores(profile: TagProfile, pool: Sequence[Document]) -> dict[str, float]:
    """raw(d) = cosine(tag centroid, document embedding)."""
    return {
        doc.id: float(
            np.dot(profile.centroid, _embed_or_zero(profile.embedder, document_text(doc)))
        )
        for doc in pool
    }


def _citation_neighbors(kg: KnowledgeGraph) -> dict[str, set[str]]:
    """Undirected adjacency over cites edges, in document-node id space."""
    adjacency: dict[str, set[str]] = {}
    for edge in kg.edges():
        if edge.relation is Relation.CITES:
            adjacency.setdefault(edge.src, set()).add(edge.dst)
            adjacency.setdefault(edge.dst, set()).add(edge.src)
    return adjacency


def citation_scores(
    profile: TagProfile | Collection[str],
    pool: Sequence[Document],
    kg: KnowledgeGraph,
) -> dict[str, float]:
    """1.0 for a direct cites link to a tagged doc (either direction), 0.5 for
    a link through one intermediate document, else 0."""
    tagged_ids = profile.doc_ids if isinstance(profile, TagProfile) else profile
    tagged = {document_node_id(doc_id) for doc_id in tagged_ids}
    adjacency = _citation_neighbors(kg)

    scores: dict[str, float] = {}
    for doc in pool:
        node = document_node_id(doc.id)
        neighbors = adjacency.get(node, set())
        if neighbors & tagged:
            scores[doc.id] = DIRECT_CITATION_SCORE
        elif any(adjacency.get(x, set()) & tagged for x in neighbors):
            scores[doc.id] = INDIRECT_CITATION_SCORE
        else:
            scores[doc.id] = 0.0
    return scores


def _normalize_name(name: str) -> str:
    return " ".join(name.split()).lower()


def author_scores(profile: TagProfile, pool: Sequence[Document]) -> dict[str, float]:
    """raw(d) = Σ over d's authors of (tagged docs by that author) / |tag|."""
    freq: dict[str, int] = {}
    for doc in profile.docs:
        for author in {_normalize_name(a) for a in doc.authors}:
            freq[author] = freq.get(author, 0) + 1
    n_tagged = len(profile.docs)
    return {
        doc.id: sum(freq.get(a, 0) for a in {_normalize_name(a) for a in doc.authors})
        / n_tagged
        for doc in pool
    }


def popularity_scores(
    pool: Sequence[Document], tag_counts: Mapping[str, int] | None = None
) -> dict[str, float]:
    """raw(d) = ln(1 + citation_count) + global tag count."""
    tag_counts = tag_counts or {}
    return {
        doc.id: math.log(1 + doc.citation_count) + tag_counts.get(doc.id, 0)
        for doc in pool
    }


# ---------------------------------------------------------------------------
# normalization


def logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass(frozen=True)
class Normalizer:
    """Maps one module's raw scores to [0, 1].

    Fitted mode squashes z-scores through a logistic, so each document's
    normalized score is independent of the rest of the batch. Fallback mode
    (LOO sample too small or zero spread) min-max scales the batch, constant
    0.5 when the batch itself is flat.
    """

    module: Module
    mean: float
    stddev: float
    fallback: bool

    def normalize(self, raw: Mapping[str, float]) -> dict[str, float]:
        if not self.fallback:
            return {
                doc_id: logistic((x - self.mean) / self.stddev)
                for doc_id, x in raw.items()
            }
        if not raw:
            return {}
        lo, hi = min(raw.values()), max(raw.values())
        if hi == lo:
            return {doc_id: 0.5 for doc_id in raw}
        return {doc_id: (x - lo) / (hi - lo) for doc_id, x in raw.items()}


def _loo_raw_score(
    module: Module,
    profile: TagProfile,
    held_out: Document,
    kg: KnowledgeGraph | None,
    tag_counts: Mapping[str, int] | None,
) -> float:
    rest = profile.without(held_out.id)
    if module is Module.CONTENT:
        return content_scores(rest, [held_out])[held_out.id]
    if module is Module.CITATION:
        graph = kg or KnowledgeGraph()
        return citation_scores(rest, [held_out], graph)[held_out.id]
    if module is Module.AUTHOR:
        return author_scores(rest, [held_out])[held_out.id]
    return popularity_scores([held_out], tag_counts)[held_out.id]


def fit_normalizer(
    module: Module,
    profile: TagProfile,
    *,
    kg: KnowledgeGraph | None = None,
    tag_counts: Mapping[str, int] | None = None,
) -> Normalizer:
    """Score each tagged doc against the profile minus itself, fit mean/stddev.

    Standard deviation is the population value over the leave-one-out sample.
    """
    if len(profile.docs) < 2:
        return Normalizer(module, 0.0, 0.0, fallback=True)
    sample = [
        _loo_raw_score(module, profile, doc, kg, tag_counts) for doc in profile.docs
    ]
    mean = sum(sample) / len(sample)
    stddev = math.sqrt(sum((x - mean) ** 2 for x in sample) / len(sample))
    if stddev == 0.0:
        return Normalizer(module, mean, 0.0, fallback=True)
    return Normalizer(module, mean, stddev, fallback=False)


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class ModuleScore:
    module: Module
    doc_id: str
    raw: float
    normalized: float

    def to_record(self) -> dict:
        return {
            "module": self.module.value,
            "raw": self.raw,
            "normalized": self.normalized,
        }


@dataclass(frozen=True)
class Recommendation:
    doc_id: str
    score: float
    published_at: date
    modules: tuple[ModuleScore, ...]

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "score": self.score,
            "published_at": self.published_at.isoformat(),
            "modules": [m.to_record() for m in self.modules],
        }


DEFAULT_WEIGHTS = {module: 1.0 for module in Module}


def score_modules(
    profile: TagProfile,
    pool: Sequence[Document],
    *,
    kg: KnowledgeGraph | None = None,
    tag_counts: Mapping[str, int] | None = None,
) -> dict[Module, dict[str, ModuleScore]]:
    """Raw-score the pool per module, then normalize with the fitted
    (or fallback) normalizer of that module."""
    graph = kg or KnowledgeGraph()
    raw_by_module = {
        Module.CONTENT: content_scores(profile, pool),
        Module.CITATION: citation_scores(profile, pool, graph),
        Module.AUTHOR: author_scores(profile, pool),
        Module.POPULARITY: popularity_scores(pool, tag_counts),
    }
    scored: dict[Module, dict[str, ModuleScore]] = {}
    for module, raw in raw_by_module.items():
        normalizer = fit_normalizer(module, profile, kg=graph, tag_counts=tag_counts)
        normalized = normalizer.normalize(raw)
        scored[module] = {
            doc_id: ModuleScore(module, doc_id, raw[doc_id], normalized[doc_id])
            for doc_id in raw
        }
    return scored


def aggregate(
    scored: Mapping[Module, Mapping[str, ModuleScore]],
    docs_by_id: Mapping[str, Document],
    *,
    weights: Mapping[Module, float] | None = None,
    k: int = 10,
) -> list[Recommendation]:
    """final(d) = Σ_m weight_m · normalized_m(d) / Σ_m weight_m; top-k.

    Ties order newer publication first, then by doc id. Weights default to
    1.0 per module; a partial map overrides only the named modules.
    """
    merged = {**DEFAULT_WEIGHTS, **(weights or {})}
    for module, weight in merged.items():
        if weight < 0:
            raise ValueError(f"negative weight for {module.value}: {weight}")
    total_weight = sum(merged.values())
    if total_weight <= 0:
        raise NoActiveModules("all module weights are zero")

    doc_ids = sorted({doc_id for per_doc in scored.values() for doc_id in per_doc})
    results = []
    for doc_id in doc_ids:
        contributions = []
        final = 0.0
        for module in Module:
            ms = scored.get(module, {}).get(doc_id)
            if ms is None:
                ms = ModuleScore(module, doc_id, 0.0, 0.0)
            contributions.append(ms)
            final += merged[module] * ms.normalized
        final /= total_weight
        doc = docs_by_id[doc_id]
        results.append(Recommendation(doc_id, final, doc.published_at, tuple(contributions)))
    results.sort(key=lambda r: (-r.score, -r.published_at.toordinal(), r.doc_id))
    return results[:k]


def recommend(
    corpus: Iterable[Document],
    profile: TagProfile,
    *,
    now: date,
    kg: KnowledgeGraph | None = None,
    tag_counts: Mapping[str, int] | None = None,
    weights: Mapping[Module, float] | None = None,
    k: int = 10,
    window_days: int = DEFAULT_WINDOW_DAYS,
) -> list[Recommendation]:
    """Pool recent untagged docs, score all modules, and aggregate top-k."""
    pool = candidate_pool(corpus, profile.doc_ids, now=now, window_days=window_days)
    if not pool:
        return []
    scored = score_modules(profile, pool, kg=kg, tag_counts=tag_counts)
    return aggregate(scored, {doc.id: doc for doc in pool}, weights=weights, k=k)
