"""Stage handlers that wire the processing pipeline to the stores and indices.

An Ingestor owns one set of stores and one pipeline. Batches are registered
up front — every submitted document immediately joins the citation-link
catalog — so the outcome of every stage depends only on the document and the
registered corpus, never on scheduling order. All handlers are idempotent:
annotations deduplicate on their span key, graph inserts are upserts, and
both indices skip work already done for the same document version.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from typing import Iterable

from .corpus import (
    AnnotationKind,
    AnnotationStore,
    Document,
    DocumentError,
    DocumentStore,
    Field,
    StandoffAnnotation,
    validate_document,
)
from .embedding import Embedder, HashingEmbedder
from .keyword import KeywordIndex
from .kg import (
    KGEdge,
    KnowledgeGraph,
    Relation,
    document_node_id,
    link_mention,
    recognize_mentions,
    seed_concepts,
)
from .pipeline import (
    DEFAULT_BASE_DELAY,
    DEFAULT_MAX_RETRIES,
    DEFAULT_WORKERS,
    FaultInjector,
    Pipeline,
    PipelineTicket,
    Stage,
)
from .refparse import (
    CitationRecord,
    TitleCatalog,
    UnparseableReference,
    extract_reference_section,
    parse_reference,
    sanitize,
    split_references,
)
from .vector import GranularIndices


@dataclass
class Stores:
    """Everything the ingest stages read and write."""

    documents: DocumentStore = field(default_factory=DocumentStore)
    annotations: AnnotationStore = field(default_factory=AnnotationStore)
    graph: KnowledgeGraph = field(default_factory=KnowledgeGraph)
    keyword_index: KeywordIndex = field(default_factory=KeywordIndex)
    vector_indices: GranularIndices = field(default_factory=GranularIndices)

    @classmethod
    def with_seed_concepts(cls, **kwargs) -> "Stores":
        return cls(graph=KnowledgeGraph(seed_concepts()), **kwargs)


@dataclass(frozen=True)
class RejectedRecord:
    line: int
    error: str


class Ingestor:
    """Runs documents through the staged pipeline against one set of stores."""

    def __init__(
        self,
        stores: Stores | None = None,
        *,
        embedder: Embedder | None = None,
        max_retries: int = DEFAULT_MAX_RETRIES,
        base_delay: float = DEFAULT_BASE_DELAY,
        workers: int = DEFAULT_WORKERS,
        fault_injector: FaultInjector | None = None,
        link_threshold: float = 0.9,
        year_tolerance: int = 1,
        concept_window_tokens: int = 20,
        concept_string_weight: float = 0.6,
        concept_embed_weight: float = 0.4,
        concept_link_threshold: float = 0.75,
    ):
        self.stores = stores if stores is not None else Stores()
        self.embedder = embedder or getattr(self.stores.vector_indices, "embedder", None) or HashingEmbedder()
        self.link_threshold = link_threshold
        self.year_tolerance = year_tolerance
        self.concept_window_tokens = concept_window_tokens
        self.concept_string_weight = concept_string_weight
        self.concept_embed_weight = concept_embed_weight
        self.concept_link_threshold = concept_link_threshold
        self._registry: dict[str, Document] = {d.id: d for d in self.stores.documents.all()}
        self._catalog: TitleCatalog | None = None
        self._registry_lock = threading.Lock()
        self._keyword_lock = threading.Lock()
        self._vector_lock = threading.Lock()
        self.pipeline = Pipeline(
            {
                Stage.PARSE: self._parse,
                Stage.REF_EXTRACT: self._ref_extract,
                Stage.REF_LINK: self._ref_link,
                Stage.NER: self._ner,
                Stage.CONCEPT_LINK: self._concept_link,
                Stage.EMBED: self._embed,
                Stage.INDEX_KEYWORD: self._index_keyword,
                Stage.INDEX_VECTOR: self._index_vector,
            },
            max_retries=max_retries,
            base_delay=base_delay,
            workers=workers,
            fault_injector=fault_injector,
        )

    # --- batch entry points -----------------------------------------------------

    def submit(self, docs: Iterable[Document]) -> list[PipelineTicket]:
        """Register a batch and queue every document.

        Registration makes each document a possible citation-link target for
        the whole batch before any stage runs, keeping link results
        independent of execution order.
        """
        batch = list(docs)
        with self._registry_lock:
            for doc in batch:
                known = self._registry.get(doc.id)
                if known is None or doc.version >= known.version:
                    self._registry[doc.id] = doc
            self._catalog = None
        return self.pipeline.submit_all(batch)

    def submit_records(
        self, records: Iterable[tuple[int, dict]]
    ) -> tuple[list[PipelineTicket], list[RejectedRecord]]:
        """Validate (line, raw) pairs; queue the valid ones, report the rest."""
        docs: list[Document] = []
        rejected: list[RejectedRecord] = []
        for line, raw in records:
            try:
                docs.append(validate_document(raw))
            except DocumentError as exc:
                rejected.append(RejectedRecord(line, str(exc)))
        return self.submit(docs), rejected

    def ingest(self, docs: Iterable[Document]) -> list[PipelineTicket]:
        """Submit a batch and drain the pipeline."""
        tickets = self.submit(docs)
        self.pipeline.drain()
        return tickets

    # --- shared lookups -----------------------------------------------------------

    def _known_doc(self, doc_id: str) -> Document | None:
        with self._registry_lock:
            return self._registry.get(doc_id)

    def _link_catalog(self) -> TitleCatalog:
        with self._registry_lock:
            if self._catalog is None:
                self._catalog = TitleCatalog(
                    self._registry.values(),
                    threshold=self.link_threshold,
                    year_tolerance=self.year_tolerance,
                )
            return self._catalog

    def _citations(self, doc: Document) -> list[tuple[CitationRecord, int, int]]:
        """Parsed citations with their body-coordinate spans.

        Entry text comes back whitespace-collapsed, so each entry is located
        in the section again with a whitespace-insensitive search; entries
        arrive in document order, letting the cursor disambiguate repeats.
        """
        body = doc.body or ""
        section_span = extract_reference_section(body)
        if section_span is None:
            return []
        start, end = section_span
        section = body[start:end]
        seen: set[str] = set()
        out: list[tuple[CitationRecord, int, int]] = []
        cursor = 0
        for raw in split_references(section, doc_id=doc.id):
            pattern = re.compile(r"\s+".join(re.escape(word) for word in raw.text.split()))
            match = pattern.search(section, cursor) or pattern.search(section)
            if match is not None:
                cursor = match.end()
            try:
                candidate = parse_reference(raw)
            except UnparseableReference:
                continue
            record = sanitize(candidate, seen_titles=seen)
            if record is None or match is None:
                continue
            out.append((record, start + match.start(), start + match.end()))
        return out

    # --- stage handlers -----------------------------------------------------------

    def _parse(self, doc: Document) -> None:
        self.stores.documents.put(doc)
        self.stores.graph.add_document(doc)

    def _ref_extract(self, doc: Document) -> None:
        for record, span_start, span_end in self._citations(doc):
            self.stores.annotations.add(
                StandoffAnnotation(
                    doc_id=doc.id,
                    doc_version=doc.version,
                    field=Field.BODY,
                    start_char=span_start,
                    end_char=span_end,
                    kind=AnnotationKind.CITATION_MARKER,
                    payload=json.dumps(record.to_record(), sort_keys=True),
                    producer_stage=Stage.REF_EXTRACT.value,
                )
            )

    def _ref_link(self, doc: Document) -> None:
        catalog = self._link_catalog()
        for record, _, _ in self._citations(doc):
            decision = catalog.link(record)
            target = decision.doc_id
            if target is None or target == doc.id:
                continue
            target_doc = self._known_doc(target)
            if target_doc is not None:
                self.stores.graph.add_document(target_doc)
            self.stores.graph.add_edge(
                KGEdge(
                    document_node_id(doc.id),
                    document_node_id(target),
                    Relation.CITES,
                    weight=decision.similarity,
                )
            )

    def _ner(self, doc: Document) -> None:
        for mention in recognize_mentions(doc, self.stores.graph.gazetteer()):
            self.stores.annotations.add(
                StandoffAnnotation(
                    doc_id=doc.id,
                    doc_version=doc.version,
                    field=mention.field,
                    start_char=mention.start_char,
                    end_char=mention.end_char,
                    kind=AnnotationKind.CONCEPT_MENTION,
                    payload=mention.gazetteer_hit or "",
                    producer_stage=Stage.NER.value,
                )
            )

    def _concept_link(self, doc: Document) -> None:
        for mention in recognize_mentions(doc, self.stores.graph.gazetteer()):
            outcome = link_mention(
                mention,
                doc,
                self.stores.graph,
                self.embedder,
                window_tokens=self.concept_window_tokens,
                string_weight=self.concept_string_weight,
                embed_weight=self.concept_embed_weight,
                threshold=self.concept_link_threshold,
            )
            if outcome.linked_concept is None:
                continue
            self.stores.annotations.add(
                StandoffAnnotation(
                    doc_id=doc.id,
                    doc_version=doc.version,
                    field=mention.field,
                    start_char=mention.start_char,
                    end_char=mention.end_char,
                    kind=AnnotationKind.CONCEPT_LINK,
                    payload=outcome.linked_concept,
                    producer_stage=Stage.CONCEPT_LINK.value,
                )
            )
            self.stores.graph.add_edge(
                KGEdge(document_node_id(doc.id), outcome.linked_concept, Relation.MENTIONS)
            )

    def _embed(self, doc: Document) -> None:
        payload = {"fields": ["title", "abstract"], "dim": getattr(self.embedder, "dim", None)}
        self.stores.annotations.add(
            StandoffAnnotation(
                doc_id=doc.id,
                doc_version=doc.version,
                field=Field.TITLE,
                start_char=0,
                end_char=len(doc.title),
                kind=AnnotationKind.EMBEDDING_REF,
                payload=json.dumps(payload, sort_keys=True),
                producer_stage=Stage.EMBED.value,
            )
        )

    def _index_keyword(self, doc: Document) -> None:
        with self._keyword_lock:
            self.stores.keyword_index.index_document(doc)

    def _index_vector(self, doc: Document) -> None:
        with self._vector_lock:
            self.stores.vector_indices.index_document(doc, skip_existing=True)
