"""One data directory holding everything the service and CLI persist.

Layout::

    <dir>/documents.jsonl     validated documents, one record per line
    <dir>/annotations.jsonl   standoff annotations
    <dir>/graph.jsonl         knowledge-graph nodes and edges
    <dir>/keyword.idx         positional inverted index (binary)
    <dir>/vectors/            per-granularity vector indices
    <dir>/tickets.jsonl       pipeline ticket outcomes, appended per batch
    <dir>/user_log.jsonl      tag/note write-ahead log (owned by UserStore)
    <dir>/user_snapshot.json  tag/note snapshot (owned by UserStore)

Loading tolerates missing files — each piece falls back to a fresh, empty
store built from the settings — so a directory that has only ever seen
``nav ingest`` still opens cleanly for every other command.
"""

from __future__ import annotations

import json
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .config import Settings
from .corpus import (
    AnnotationStore,
    DocumentStore,
    documents_to_jsonl,
    read_jsonl_documents,
    validate_document,
)
from .embedding import HashingEmbedder
from .ingest import Ingestor, Stores
from .keyword import KeywordIndex
from .kg import KnowledgeGraph, seed_concepts
from .pipeline import FaultInjector
from .store import UserStore
from .vector import GranularIndices

DOCUMENTS_FILE = "documents.jsonl"
ANNOTATIONS_FILE = "annotations.jsonl"
GRAPH_FILE = "graph.jsonl"
KEYWORD_FILE = "keyword.idx"
VECTORS_DIR = "vectors"
TICKETS_FILE = "tickets.jsonl"


def embedder_for(settings: Settings) -> HashingEmbedder:
    return HashingEmbedder(settings.vector_dim)


def build_stores(settings: Settings) -> Stores:
    """Fresh stores with the seed concept gazetteer and configured geometry."""
    return Stores.with_seed_concepts(
        keyword_index=_fresh_keyword_index(settings),
        vector_indices=_fresh_vector_indices(settings),
    )


def _fresh_keyword_index(settings: Settings) -> KeywordIndex:
    return KeywordIndex(
        dismax_tiebreak=settings.keyword_dismax_tiebreak,
        recency_tau_days=settings.keyword_recency_tau_days,
        stopword_boost=settings.keyword_stopword_boost,
        max_n=settings.keyword_max_ngram,
    )


def _fresh_vector_indices(settings: Settings) -> GranularIndices:
    return GranularIndices(
        embedder=embedder_for(settings),
        m=settings.vector_m,
        ef_construction=settings.vector_ef_construction,
        seed=settings.vector_seed,
        chunk_size=settings.vector_chunk_size,
    )


def make_ingestor(
    stores: Stores,
    settings: Settings,
    *,
    workers: int | None = None,
    fault_injector: FaultInjector | None = None,
) -> Ingestor:
    """An Ingestor over ``stores`` with every knob taken from ``settings``."""
    return Ingestor(
        stores,
        embedder=embedder_for(settings),
        max_retries=settings.pipeline_max_retries,
        base_delay=settings.pipeline_base_delay,
        workers=workers if workers is not None else settings.pipeline_workers,
        fault_injector=fault_injector,
        link_threshold=settings.link_title_threshold,
        year_tolerance=settings.link_year_tolerance,
        concept_window_tokens=settings.concept_context_tokens,
        concept_string_weight=settings.concept_string_weight,
        concept_embed_weight=settings.concept_embed_weight,
        concept_link_threshold=settings.concept_link_threshold,
    )


def save_stores(stores: Stores, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    docs = sorted(stores.documents.all(), key=lambda d: d.id)
    (directory / DOCUMENTS_FILE).write_text(documents_to_jsonl(docs), encoding="utf-8")
    (directory / ANNOTATIONS_FILE).write_text(
        stores.annotations.export_jsonl(), encoding="utf-8"
    )
    (directory / GRAPH_FILE).write_text(stores.graph.export_jsonl(), encoding="utf-8")
    with open(directory / KEYWORD_FILE, "wb") as fh:
        stores.keyword_index.save(fh)
    stores.vector_indices.save(directory / VECTORS_DIR)


def load_stores(directory: str | Path, settings: Settings) -> Stores:
    directory = Path(directory)
    documents = DocumentStore()
    doc_path = directory / DOCUMENTS_FILE
    if doc_path.exists():
        for _, raw in read_jsonl_documents(doc_path.read_text(encoding="utf-8")):
            documents.put(validate_document(raw))

    annotations = AnnotationStore()
    ann_path = directory / ANNOTATIONS_FILE
    if ann_path.exists():
        annotations.load_jsonl(ann_path.read_text(encoding="utf-8"))

    graph_path = directory / GRAPH_FILE
    if graph_path.exists():
        graph = KnowledgeGraph()
        graph.load_jsonl(graph_path.read_text(encoding="utf-8"))
    else:
        graph = KnowledgeGraph(seed_concepts())

    keyword_path = directory / KEYWORD_FILE
    if keyword_path.exists():
        with open(keyword_path, "rb") as fh:
            keyword_index = KeywordIndex.load(fh)
    else:
        keyword_index = _fresh_keyword_index(settings)

    vectors_path = directory / VECTORS_DIR
    if vectors_path.exists():
        vector_indices = GranularIndices.load(vectors_path, embedder=embedder_for(settings))
    else:
        vector_indices = _fresh_vector_indices(settings)

    return Stores(
        documents=documents,
        annotations=annotations,
        graph=graph,
        keyword_index=keyword_index,
        vector_indices=vector_indices,
    )


def clone_stores(stores: Stores, settings: Settings) -> Stores:
    """An independent copy made through the same files a restart would read."""
    with tempfile.TemporaryDirectory(prefix="nav-clone-") as tmp:
        save_stores(stores, tmp)
        return load_stores(tmp, settings)


@dataclass
class Workspace:
    """A settings-bound handle on one data directory."""

    directory: Path
    settings: Settings

    @classmethod
    def open(cls, settings: Settings, directory: str | Path | None = None) -> "Workspace":
        return cls(Path(directory if directory is not None else settings.storage_dir), settings)

    def load(self) -> Stores:
        return load_stores(self.directory, self.settings)

    def save(self, stores: Stores) -> None:
        save_stores(stores, self.directory)

    def user_store(self) -> UserStore:
        return UserStore(self.directory)

    def append_tickets(self, records: list[dict]) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        with open(self.directory / TICKETS_FILE, "a", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def tickets(self) -> list[dict]:
        path = self.directory / TICKETS_FILE
        if not path.exists():
            return []
        return [
            json.loads(line)
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
