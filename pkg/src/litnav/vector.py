"""Three-granularity vector indices and reciprocal-rank fusion.

Sentences and chunks of every document's abstract and body, and one vector
per document (title + abstract), each live in their own HNSW index. Keys
resolve back to character spans, so any hit can be shown as text. Keyword and
vector rankings merge by reciprocal rank fusion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Document, Field, chunk_sentences, segment_sentences
from .embedding import Embedder, EmptyText, HashingEmbedder
from .hnsw import HnswIndex

RRF_OFFSET = 60
DEFAULT_CHUNK_SENTENCES = 10

# Fields whose sentences and chunks are indexed.
SEGMENTED_FIELDS = (Field.ABSTRACT, Field.BODY)


class Granularity(str, Enum):
    SENTENCE = "sentence"
    CHUNK = "chunk"
    DOCUMENT = "document"


@dataclass(frozen=True)
class SpanRef:
    """Where an indexed vector came from; documents span title + abstract."""

    doc_id: str
    granularity: Granularity
    field: Field | None = None
    start_char: int = 0
    end_char: int = 0
    ordinal: int = 0

    def resolve(self, doc: Document) -> str:
        if self.granularity is Granularity.DOCUMENT:
            return document_text(doc)
        return doc.field_text(self.field)[self.start_char : self.end_char]

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "granularity": self.granularity.value,
            "field": self.field.value if self.field is not None else None,
            "start_char": self.start_char,
            "end_char": self.end_char,
            "ordinal": self.ordinal,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SpanRef":
        return cls(
            doc_id=rec["doc_id"],
            granularity=Granularity(rec["granularity"]),
            field=Field(rec["field"]) if rec.get("field") else None,
            start_char=int(rec.get("start_char", 0)),
            end_char=int(rec.get("end_char", 0)),
            ordinal=int(rec.get("ordinal", 0)),
        )


@dataclass(frozen=True)
class VectorHit:
    key: str
    similarity: float
    ref: SpanRef


def document_text(doc: Document) -> str:
    """The text embedded for document-granularity vectors."""
    return f"{doc.title}\n\n{doc.abstract}" if doc.abstract else doc.title


def sentence_key(doc_id: str, field: Field, ordinal: int) -> str:
    return f"{doc_id}@s:{field.value}:{ordinal}"


def chunk_key(doc_id: str, field: Field, ordinal: int) -> str:
    return f"{doc_id}@c:{field.value}:{ordinal}"


class GranularIndices:
    """Sentence, chunk, and document HNSW indices plus the key→span table."""

    def __init__(
        self,
        *,
        embedder: Embedder | None = None,
        m: int = 16,
        ef_construction: int = 200,
        seed: int = 0,
        chunk_size: int = DEFAULT_CHUNK_SENTENCES,
    ):
        self.embedder = embedder or HashingEmbedder()
        self.chunk_size = chunk_size
        dim = self.embedder.dim
        self.sentence_index = HnswIndex(dim, m, ef_construction, seed=seed)
        self.chunk_index = HnswIndex(dim, m, ef_construction, seed=seed + 1)
        self.document_index = HnswIndex(dim, m, ef_construction, seed=seed + 2)
        self._refs: dict[str, SpanRef] = {}

    def _index_of(self, granularity: Granularity) -> HnswIndex:
        return {
            Granularity.SENTENCE: self.sentence_index,
            Granularity.CHUNK: self.chunk_index,
            Granularity.DOCUMENT: self.document_index,
        }[granularity]

    def ref(self, key: str) -> SpanRef:
        return self._refs[key]

    def _insert(
        self,
        index: HnswIndex,
        key: str,
        text: str,
        ref: SpanRef,
        *,
        skip_existing: bool = False,
    ) -> int:
        """Embed and insert unless the text has no tokens; returns 1 if stored."""
        if skip_existing and key in index:
            return 0
        try:
            vec = self.embedder.embed(text)
        except EmptyText:
            return 0
        index.insert(key, vec)
        self._refs[key] = ref
        return 1

    def index_document(
        self, doc: Document, *, skip_existing: bool = False
    ) -> dict[Granularity, int]:
        """Insert all spans of one document; returns per-granularity counts.

        With skip_existing, keys already present are left untouched, so a
        partially indexed document can be finished by calling again.
        """
        counts = {g: 0 for g in Granularity}
        for field in SEGMENTED_FIELDS:
            text = doc.field_text(field)
            spans = segment_sentences(text, doc_id=doc.id, field=field)
            for span in spans:
                ref = SpanRef(
                    doc.id, Granularity.SENTENCE, field,
                    span.start_char, span.end_char, span.ordinal,
                )
                counts[Granularity.SENTENCE] += self._insert(
                    self.sentence_index,
                    sentence_key(doc.id, field, span.ordinal),
                    text[span.start_char : span.end_char],
                    ref,
                    skip_existing=skip_existing,
                )
            for chunk in chunk_sentences(spans, self.chunk_size):
                ref = SpanRef(
                    doc.id, Granularity.CHUNK, field,
                    chunk.start_char, chunk.end_char, chunk.ordinal,
                )
                counts[Granularity.CHUNK] += self._insert(
                    self.chunk_index,
                    chunk_key(doc.id, field, chunk.ordinal),
                    text[chunk.start_char : chunk.end_char],
                    ref,
                    skip_existing=skip_existing,
                )
        counts[Granularity.DOCUMENT] += self._insert(
            self.document_index,
            doc.id,
            document_text(doc),
            SpanRef(doc.id, Granularity.DOCUMENT),
            skip_existing=skip_existing,
        )
        return counts

    def search(
        self,
        query: str,
        granularity: Granularity = Granularity.DOCUMENT,
        k: int = 10,
        ef: int | None = None,
    ) -> list[VectorHit]:
        """Embed the query and return the top-k spans at one granularity.

        Raises EmptyIndex when nothing has been indexed at that granularity.
        """
        index = self._index_of(granularity)
        vec = self.embedder.embed(query)
        return [
            VectorHit(key, sim, self._refs[key])
            for key, sim in index.knn(vec, k, ef)
        ]

    def document_ranking(self, query: str, k: int, ef: int | None = None) -> list[str]:
        """Doc ids from the document-granularity index, best first."""
        return [hit.ref.doc_id for hit in self.search(query, Granularity.DOCUMENT, k, ef)]

    # --- persistence -------------------------------------------------------

    _FILES = {
        Granularity.SENTENCE: "sentences.idx",
        Granularity.CHUNK: "chunks.idx",
        Granularity.DOCUMENT: "documents.idx",
    }

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for granularity, name in self._FILES.items():
            with open(directory / name, "wb") as fh:
                self._index_of(granularity).save(fh)
        with open(directory / "spans.jsonl", "w", encoding="utf-8") as fh:
            for key in sorted(self._refs):
                rec = {"key": key, **self._refs[key].to_record()}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        meta = {"chunk_size": self.chunk_size}
        (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")

    @classmethod
    def load(
        cls, directory: str | Path, *, embedder: Embedder | None = None
    ) -> "GranularIndices":
        directory = Path(directory)
        meta_path = directory / "meta.json"
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        indices = cls(
            embedder=embedder, chunk_size=meta.get("chunk_size", DEFAULT_CHUNK_SENTENCES)
        )
        for granularity, name in cls._FILES.items():
            with open(directory / name, "rb") as fh:
                loaded = HnswIndex.load(fh)
            if granularity is Granularity.SENTENCE:
                indices.sentence_index = loaded
            elif granularity is Granularity.CHUNK:
                indices.chunk_index = loaded
            else:
                indices.document_index = loaded
        with open(directory / "spans.jsonl", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    indices._refs[rec["key"]] = SpanRef.from_record(rec)
        return indices


def build_indices(
    corpus: Iterable[Document],
    *,
    embedder: Embedder | None = None,
    m: int = 16,
    ef_construction: int = 200,
    seed: int = 0,
    chunk_size: int = DEFAULT_CHUNK_SENTENCES,
) -> GranularIndices:
    """Index a corpus in iteration order; same order and seed → same graphs."""
    indices = GranularIndices(
        embedder=embedder,
        m=m,
        ef_construction=ef_construction,
        seed=seed,
        chunk_size=chunk_size,
    )
    for doc in corpus:
        indices.index_document(doc)
    return indices


@dataclass(frozen=True)
class FusedResult:
    doc_id: str
    score: float
    keyword_rank: int | None = None
    vector_rank: int | None = None


def fuse(
    keyword_ranking: Sequence[str],
    vector_ranking: Sequence[str],
    k: int,
    *,
    offset: int = RRF_OFFSET,
) -> list[FusedResult]:
    """Reciprocal rank fusion: score(d) = Σ_lists 1/(offset + rank), 1-based.

    Top-k by fused score; exact ties order by doc id.
    """
    keyword_pos: dict[str, int] = {}
    for i, doc_id in enumerate(keyword_ranking):
        keyword_pos.setdefault(doc_id, i + 1)
    vector_pos: dict[str, int] = {}
    for i, doc_id in enumerate(vector_ranking):
        vector_pos.setdefault(doc_id, i + 1)
    fused = []
    for doc_id in sorted(set(keyword_pos) | set(vector_pos)):
        score = 0.0
        for pos in (keyword_pos.get(doc_id), vector_pos.get(doc_id)):
            if pos is not None:
                score += 1.0 / (offset + pos)
        fused.append(
            FusedResult(doc_id, score, keyword_pos.get(doc_id), vector_pos.get(doc_id))
        )
    fused.sort(key=lambda r: (-r.score, r.doc_id))
    return fused[:k]
