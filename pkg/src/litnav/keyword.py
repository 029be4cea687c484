"""Inverted-index keyword retrieval with explainable scoring.

Ranking combines six heuristics: contiguous query n-grams as phrase terms
(n ≤ 3), boost linear in n-gram length (stopword unigrams damped), constant
per-field scores for metadata matches with a bounded tf score for the body,
dismax across fields with a small tiebreak, and a citation/recency prior
multiplied into the match total.

Index persistence ("NAVKIDX1" format, little-endian, str = u32 length +
UTF-8 bytes):

    magic "NAVKIDX1" | u32 format_version=1
    f64 weight_authors | f64 weight_title | f64 weight_abstract | f64 weight_body
    f64 dismax_tiebreak | f64 recency_tau_days | f64 stopword_boost | u32 max_n
    u32 doc_count
    per doc: str doc_id | u32 version | u32 published_ordinal | u32 citation_count
    u32 field_count
    per field: str field_name | u32 token_count
      per token: str token | u32 entry_count
        per entry: u32 doc_index | u32 position_count | u32 × positions
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from datetime import date, datetime, timezone
from typing import BinaryIO

from .corpus import Document, Field
from .tokens import tokenize

MAGIC = b"NAVKIDX1"

# The fifty most query-like English function words; unigrams made of these
# carry little ranking signal and get a damped boost.
STOPWORDS = frozenset(
    """a an and are as at be but by for from has have in is it its of on or
    that the to was were will with this which can do does not no we our you
    your they their he she his her what when where who how why""".split()
)

DEFAULT_FIELD_WEIGHTS: dict[Field, float] = {
    Field.AUTHORS: 3.0,
    Field.TITLE: 2.5,
    Field.ABSTRACT: 1.5,
    Field.BODY: 0.5,
}
DISMAX_TIEBREAK = 0.1
RECENCY_TAU_DAYS = 730.0
STOPWORD_BOOST = 0.25
MAX_NGRAM = 3

_FIELDS = (Field.AUTHORS, Field.TITLE, Field.ABSTRACT, Field.BODY)


class EmptyQuery(ValueError):
    pass


@dataclass(frozen=True)
class Ngram:
    tokens: tuple[str, ...]
    boost: float

    @property
    def n(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class QueryPlan:
    raw_query: str
    ngrams: tuple[Ngram, ...]


def plan_query(
    q: str, *, max_n: int = MAX_NGRAM, stopword_boost: float = STOPWORD_BOOST
) -> QueryPlan:
    """All contiguous token n-grams (n ≤ max_n), each exactly once.

    boost(n) = n, except stopword unigrams which get `stopword_boost`.
    """
    tokens = tokenize(q)
    if not tokens:
        raise EmptyQuery(f"no tokens in query {q!r}")
    ngrams: list[Ngram] = []
    seen: set[tuple[str, ...]] = set()
    for n in range(1, min(max_n, len(tokens)) + 1):
        for i in range(len(tokens) - n + 1):
            gram = tuple(tokens[i : i + n])
            if gram in seen:
                continue
            seen.add(gram)
            if n == 1 and gram[0] in STOPWORDS:
                boost = stopword_boost
            else:
                boost = float(n)
            ngrams.append(Ngram(gram, boost))
    return QueryPlan(raw_query=q, ngrams=tuple(ngrams))


@dataclass(frozen=True)
class NgramScore:
    ngram: tuple[str, ...]
    boost: float
    field_scores: dict[Field, float]
    winning_field: Field | None
    combined: float

    def to_record(self) -> dict:
        return {
            "ngram": list(self.ngram),
            "boost": self.boost,
            "field_scores": {f.value: s for f, s in self.field_scores.items()},
            "winning_field": self.winning_field.value if self.winning_field else None,
            "combined": self.combined,
        }


@dataclass(frozen=True)
class ScoreBreakdown:
    ngrams: tuple[NgramScore, ...]
    citation_component: float
    recency_component: float
    match_total: float
    prior: float
    total: float

    def reconstruct(self) -> float:
        """Recompute the total from the parts; equals `total` within 1e-9."""
        match = sum(s.boost * s.combined for s in self.ngrams)
        return match * self.citation_component * self.recency_component

    def to_record(self) -> dict:
        return {
            "ngrams": [s.to_record() for s in self.ngrams],
            "citation_component": self.citation_component,
            "recency_component": self.recency_component,
            "match_total": self.match_total,
            "prior": self.prior,
            "total": self.total,
        }


@dataclass(frozen=True)
class RankedResult:
    doc_id: str
    score: float
    breakdown: ScoreBreakdown

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "score": self.score,
            "breakdown": self.breakdown.to_record(),
        }


@dataclass
class _DocMeta:
    version: int
    published_at: date
    citation_count: int


class KeywordIndex:
    """Positional inverted index over the four document fields."""

    def __init__(
        self,
        *,
        field_weights: dict[Field, float] | None = None,
        dismax_tiebreak: float = DISMAX_TIEBREAK,
        recency_tau_days: float = RECENCY_TAU_DAYS,
        stopword_boost: float = STOPWORD_BOOST,
        max_n: int = MAX_NGRAM,
    ):
        self.field_weights = dict(field_weights or DEFAULT_FIELD_WEIGHTS)
        if any(w <= 0 for w in self.field_weights.values()):
            raise ValueError("field weights must be positive")
        self.dismax_tiebreak = dismax_tiebreak
        self.recency_tau_days = recency_tau_days
        self.stopword_boost = stopword_boost
        self.max_n = max_n
        # postings[field][token][doc_id] -> sorted token positions
        self._postings: dict[Field, dict[str, dict[str, list[int]]]] = {
            f: {} for f in _FIELDS
        }
        self._meta: dict[str, _DocMeta] = {}
        self._field_tokens: dict[str, dict[Field, list[str]]] = {}

    def __len__(self) -> int:
        return len(self._meta)

    def doc_ids(self) -> list[str]:
        return sorted(self._meta)

    # --- indexing -----------------------------------------------------------

    def index_document(self, doc: Document) -> bool:
        """Add or refresh one document; no-op for an already-indexed version.

        Returns True when postings changed.
        """
        existing = self._meta.get(doc.id)
        if existing is not None and existing.version >= doc.version:
            return False
        if existing is not None:
            self._remove(doc.id)
        field_tokens: dict[Field, list[str]] = {}
        for field in _FIELDS:
            tokens = tokenize(doc.field_text(field))
            field_tokens[field] = tokens
            bucket = self._postings[field]
            for pos, token in enumerate(tokens):
                bucket.setdefault(token, {}).setdefault(doc.id, []).append(pos)
        self._field_tokens[doc.id] = field_tokens
        self._meta[doc.id] = _DocMeta(doc.version, doc.published_at, doc.citation_count)
        return True

    def _remove(self, doc_id: str) -> None:
        for field, tokens in self._field_tokens.pop(doc_id, {}).items():
            bucket = self._postings[field]
            for token in set(tokens):
                entries = bucket.get(token)
                if entries is not None:
                    entries.pop(doc_id, None)
                    if not entries:
                        del bucket[token]
        self._meta.pop(doc_id, None)

    # --- scoring ------------------------------------------------------------

    def _phrase_count(self, field: Field, doc_id: str, tokens: tuple[str, ...]) -> int:
        """Occurrences of `tokens` at adjacent positions in one field."""
        position_lists: list[list[int]] = []
        for token in tokens:
            by_doc = self._postings[field].get(token)
            if by_doc is None or doc_id not in by_doc:
                return 0
            position_lists.append(by_doc[doc_id])
        if len(position_lists) == 1:
            return len(position_lists[0])
        rest = [set(p) for p in position_lists[1:]]
        return sum(
            1
            for p in position_lists[0]
            if all((p + off) in s for off, s in enumerate(rest, start=1))
        )

    def field_match_score(self, doc_id: str, field: Field, tokens: tuple[str, ...]) -> float:
        """Constant weight for metadata phrase presence; bounded tf for body."""
        count = self._phrase_count(field, doc_id, tokens)
        if count == 0:
            return 0.0
        weight = self.field_weights[field]
        if field is Field.BODY:
            return weight * (count / (count + 1))
        return weight

    def _prior(self, meta: _DocMeta, now: date) -> tuple[float, float]:
        citation = 1.0 + math.log(1.0 + meta.citation_count)
        age_days = (now - meta.published_at).days
        recency = math.exp(-age_days / self.recency_tau_days)
        return citation, recency

    def score_document(
        self, doc_id: str, plan: QueryPlan, *, now: date | None = None
    ) -> ScoreBreakdown:
        now = now or datetime.now(timezone.utc).date()
        meta = self._meta[doc_id]
        per_ngram: list[NgramScore] = []
        match_total = 0.0
        for ngram in plan.ngrams:
            scores = {
                field: self.field_match_score(doc_id, field, ngram.tokens)
                for field in _FIELDS
            }
            best_field = max(_FIELDS, key=lambda f: scores[f])
            best = scores[best_field]
            if best == 0.0:
                per_ngram.append(NgramScore(ngram.tokens, ngram.boost, scores, None, 0.0))
                continue
            combined = best + self.dismax_tiebreak * (sum(scores.values()) - best)
            match_total += ngram.boost * combined
            per_ngram.append(NgramScore(ngram.tokens, ngram.boost, scores, best_field, combined))
        citation, recency = self._prior(meta, now)
        prior = citation * recency
        return ScoreBreakdown(
            ngrams=tuple(per_ngram),
            citation_component=citation,
            recency_component=recency,
            match_total=match_total,
            prior=prior,
            total=match_total * prior,
        )

    def search(self, q: str, k: int, *, now: date | None = None) -> list[RankedResult]:
        """Top-k by total score; ties broken by newer published_at then doc id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        now = now or datetime.now(timezone.utc).date()
        plan = plan_query(q, max_n=self.max_n, stopword_boost=self.stopword_boost)
        candidates: set[str] = set()
        for ngram in plan.ngrams:
            first = ngram.tokens[0]
            for field in _FIELDS:
                by_doc = self._postings[field].get(first)
                if not by_doc:
                    continue
                for doc_id in by_doc:
                    if doc_id not in candidates and self._phrase_count(
                        field, doc_id, ngram.tokens
                    ):
                        candidates.add(doc_id)
        scored = []
        for doc_id in candidates:
            breakdown = self.score_document(doc_id, plan, now=now)
            if breakdown.match_total > 0.0:
                scored.append(RankedResult(doc_id, breakdown.total, breakdown))
        scored.sort(
            key=lambda r: (
                -r.score,
                -self._meta[r.doc_id].published_at.toordinal(),
                r.doc_id,
            )
        )
        return scored[:k]

    # --- persistence ("NAVKIDX1") --------------------------------------------

    def save(self, fh: BinaryIO) -> None:
        def put_str(s: str) -> None:
            raw = s.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)

        fh.write(MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(
            struct.pack(
                "<4d",
                *(self.field_weights[f] for f in _FIELDS),
            )
        )
        fh.write(
            struct.pack(
                "<3dI",
                self.dismax_tiebreak,
                self.recency_tau_days,
                self.stopword_boost,
                self.max_n,
            )
        )
        doc_order = sorted(self._meta)
        doc_index = {doc_id: i for i, doc_id in enumerate(doc_order)}
        fh.write(struct.pack("<I", len(doc_order)))
        for doc_id in doc_order:
            meta = self._meta[doc_id]
            put_str(doc_id)
            fh.write(
                struct.pack(
                    "<III", meta.version, meta.published_at.toordinal(), meta.citation_count
                )
            )
        fh.write(struct.pack("<I", len(_FIELDS)))
        for field in _FIELDS:
            put_str(field.value)
            bucket = self._postings[field]
            fh.write(struct.pack("<I", len(bucket)))
            for token in sorted(bucket):
                put_str(token)
                entries = bucket[token]
                fh.write(struct.pack("<I", len(entries)))
                for doc_id in sorted(entries):
                    positions = entries[doc_id]
                    fh.write(struct.pack("<II", doc_index[doc_id], len(positions)))
                    fh.write(struct.pack(f"<{len(positions)}I", *positions))

    @classmethod
    def load(cls, fh: BinaryIO) -> "KeywordIndex":
        def get_str() -> str:
            (length,) = struct.unpack("<I", fh.read(4))
            return fh.read(length).decode("utf-8")

        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"bad index header: {magic!r}")
        (fmt,) = struct.unpack("<I", fh.read(4))
        if fmt != 1:
            raise ValueError(f"unsupported index format version {fmt}")
        weights = struct.unpack("<4d", fh.read(32))
        tiebreak, tau, stop_boost, max_n = struct.unpack("<3dI", fh.read(28))
        index = cls(
            field_weights=dict(zip(_FIELDS, weights)),
            dismax_tiebreak=tiebreak,
            recency_tau_days=tau,
            stopword_boost=stop_boost,
            max_n=max_n,
        )
        (doc_count,) = struct.unpack("<I", fh.read(4))
        doc_order: list[str] = []
        for _ in range(doc_count):
            doc_id = get_str()
            version, ordinal, citations = struct.unpack("<III", fh.read(12))
            index._meta[doc_id] = _DocMeta(version, date.fromordinal(ordinal), citations)
            doc_order.append(doc_id)
        (field_count,) = struct.unpack("<I", fh.read(4))
        for _ in range(field_count):
            field = Field(get_str())
            bucket = index._postings[field]
            (token_count,) = struct.unpack("<I", fh.read(4))
            for _ in range(token_count):
                token = get_str()
                (entry_count,) = struct.unpack("<I", fh.read(4))
                entries: dict[str, list[int]] = {}
                for _ in range(entry_count):
                    doc_i, n_pos = struct.unpack("<II", fh.read(8))
                    positions = list(struct.unpack(f"<{n_pos}I", fh.read(4 * n_pos)))
                    entries[doc_order[doc_i]] = positions
                bucket[token] = entries
        # Rebuild per-document token lists from positions so later reindexing
        # of a newer version can strip the old postings.
        for doc_id in doc_order:
            index._field_tokens[doc_id] = {f: [] for f in _FIELDS}
        for field in _FIELDS:
            slots: dict[str, dict[int, str]] = {}
            for token, entries in index._postings[field].items():
                for doc_id, positions in entries.items():
                    at = slots.setdefault(doc_id, {})
                    for p in positions:
                        at[p] = token
            for doc_id, at in slots.items():
                index._field_tokens[doc_id][field] = [at[p] for p in sorted(at)]
        return index
