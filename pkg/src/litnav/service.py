"""The application facade and its versioned HTTP surface.

``Navigator`` owns the loaded stores and answers every operation with
JSON-ready dicts, raising ``ApiError`` with an HTTP status for anything a
caller got wrong. ``create_app`` wraps it in a thin FastAPI layer: routes
parse parameters, call one Navigator method, and let the exception handler
shape errors — no logic lives in the routes.

Reads run concurrently against one immutable stores snapshot. Ingest builds
a fresh snapshot on a private copy and swaps the reference atomically when
the batch has drained, so a reader never observes a half-ingested corpus.
Tag and note writes are serialized by the user store's single writer.
"""

from __future__ import annotations

import json
import threading
from datetime import datetime, timezone
from importlib import resources
from typing import Callable, Mapping

from fastapi import Body, FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .config import Settings
from .corpus import AnnotationKind, Document
from .experts import experts as rank_experts
from .insights import (
    QueryLabel,
    UnknownConcept,
    answer_sentences,
    classify_query,
    contrastive_popularity,
    load_labeled_queries,
    match_template,
    train_classifier,
)
from .ingest import Stores
from .kg import concept_id, document_node_id, Relation
from .recommend import Module, TagProfile, recommend
from .store import (
    DuplicateTag,
    EmptyNoteText,
    StoreError,
    UnknownNote,
    UnknownTag,
    UserStore,
)
from .vector import EmptyText, Granularity, fuse
from .workspace import Workspace, clone_stores, embedder_for, make_ingestor

MODES = ("keyword", "vector", "hybrid")
GRANULARITIES = tuple(g.value for g in Granularity)
ANSWER_SENTENCES = 5


class ApiError(Exception):
    """An error the HTTP layer reports verbatim with its status code."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


def parse_jsonl_lines(text: str) -> tuple[list[tuple[int, dict]], list[dict]]:
    """Split a JSONL ingest body into (line, record) pairs and per-line rejects."""
    records: list[tuple[int, dict]] = []
    rejected: list[dict] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            rejected.append({"line": lineno, "error": f"invalid JSON: {exc.msg}"})
            continue
        if not isinstance(raw, dict):
            rejected.append({"line": lineno, "error": "record must be a JSON object"})
            continue
        records.append((lineno, raw))
    return records, rejected


class Navigator:
    """Every user-facing operation over one set of loaded stores."""

    def __init__(
        self,
        stores: Stores,
        users: UserStore,
        settings: Settings | None = None,
        *,
        workspace: Workspace | None = None,
        clock: Callable[[], datetime] | None = None,
    ):
        self.settings = settings or Settings()
        self.users = users
        self.workspace = workspace
        self._stores = stores
        self._clock = clock or _utc_now
        self._embedder = embedder_for(self.settings)
        self._classifier = train_classifier(load_labeled_queries())
        self._ingest_lock = threading.Lock()
        self._tickets: list[dict] = list(workspace.tickets()) if workspace else []

    # --- helpers -----------------------------------------------------------------

    @property
    def stores(self) -> Stores:
        return self._stores

    def _today(self):
        return self._clock().date()

    def _docs_by_id(self, stores: Stores) -> dict[str, Document]:
        return {doc.id: doc for doc in stores.documents.all()}

    def _require_doc(self, stores: Stores, doc_id: str) -> Document:
        doc = stores.documents.get(doc_id)
        if doc is None:
            raise ApiError(404, f"unknown document {doc_id!r}")
        return doc

    def _module_weights(self, overrides: Mapping[str, float] | None) -> dict[Module, float]:
        s = self.settings
        weights = {
            Module.CONTENT: s.recommend_weight_content,
            Module.CITATION: s.recommend_weight_citation,
            Module.AUTHOR: s.recommend_weight_author,
            Module.POPULARITY: s.recommend_weight_popularity,
        }
        for name, value in (overrides or {}).items():
            try:
                weights[Module(name)] = float(value)
            except ValueError:
                raise ApiError(400, f"unknown recommender module {name!r}") from None
        return weights

    # --- search -------------------------------------------------------------------

    def search(
        self,
        q: str,
        *,
        mode: str = "keyword",
        granularity: str = "document",
        k: int | None = None,
    ) -> dict:
        stores = self._stores
        if not q or not q.strip():
            raise ApiError(400, "empty query")
        if mode not in MODES:
            raise ApiError(400, f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
        if granularity not in GRANULARITIES:
            raise ApiError(
                400,
                f"unknown granularity {granularity!r}; expected one of {', '.join(GRANULARITIES)}",
            )
        if mode in ("keyword", "hybrid") and granularity != "document":
            raise ApiError(400, f"{mode} search supports granularity=document only")
        k = self.settings.search_default_k if k is None else k
        if k < 1:
            raise ApiError(400, "k must be >= 1")

        kind = classify_query(self._classifier, q)
        payload: dict = {
            "query": q,
            "mode": mode,
            "granularity": granularity,
            "k": k,
            "query_kind": {"kind": kind.kind.value, "probability": kind.probability},
            "results": self._results(stores, q, mode, granularity, k),
        }
        if kind.kind is QueryLabel.QUESTION:
            docs_by_id = self._docs_by_id(stores)
            answers = answer_sentences(
                stores.vector_indices,
                docs_by_id,
                q,
                k=ANSWER_SENTENCES,
                ef=self.settings.vector_ef_search,
            )
            payload["answers"] = [a.to_record() for a in answers]
        template = match_template(q, stores.graph)
        if template is not None:
            payload["analytics"] = template.to_record()
        return payload

    def _results(
        self, stores: Stores, q: str, mode: str, granularity: str, k: int
    ) -> list[dict]:
        try:
            if mode == "keyword":
                ranked = stores.keyword_index.search(q, k, now=self._today())
                return [r.to_record() for r in ranked]
            if mode == "vector":
                docs_by_id = self._docs_by_id(stores)
                hits = stores.vector_indices.search(
                    q, Granularity(granularity), k, ef=self.settings.vector_ef_search
                )
                out = []
                for hit in hits:
                    doc = docs_by_id.get(hit.ref.doc_id)
                    out.append(
                        {
                            "doc_id": hit.ref.doc_id,
                            "key": hit.key,
                            "similarity": hit.similarity,
                            "span": hit.ref.to_record(),
                            "text": hit.ref.resolve(doc) if doc is not None else "",
                        }
                    )
                return out
            keyword_ids = [
                r.doc_id for r in stores.keyword_index.search(q, k, now=self._today())
            ]
            vector_ids = stores.vector_indices.document_ranking(
                q, k, ef=self.settings.vector_ef_search
            )
            fused = fuse(keyword_ids, vector_ids, k, offset=self.settings.search_rrf_offset)
            return [
                {
                    "doc_id": f.doc_id,
                    "score": f.score,
                    "keyword_rank": f.keyword_rank,
                    "vector_rank": f.vector_rank,
                }
                for f in fused
            ]
        except EmptyText:
            raise ApiError(400, "query has no indexable terms") from None

    # --- experts ------------------------------------------------------------------

    def experts(self, q: str, *, k: int | None = None) -> dict:
        stores = self._stores
        if not q or not q.strip():
            raise ApiError(400, "empty query")
        k = self.settings.search_default_k if k is None else k
        if k < 1:
            raise ApiError(400, "k must be >= 1")
        s = self.settings
        try:
            ranked = rank_experts(
                stores.vector_indices,
                stores.documents.all(),
                q,
                k,
                k_docs=s.experts_k_docs,
                gamma=s.experts_gamma,
                beta=s.experts_beta,
                ef=s.vector_ef_search,
            )
        except EmptyText:
            raise ApiError(400, "query has no indexable terms") from None
        return {"query": q, "k": k, "experts": [e.to_record() for e in ranked]}

    # --- recommendations ------------------------------------------------------------

    def recommendations(
        self,
        user_id: str,
        *,
        k: int = 10,
        weights: Mapping[str, float] | None = None,
    ) -> dict:
        stores = self._stores
        if not self.users.known_user(user_id):
            raise ApiError(404, f"unknown user {user_id!r}")
        if k < 1:
            raise ApiError(400, "k must be >= 1")
        module_weights = self._module_weights(weights)
        corpus = stores.documents.all()
        docs_by_id = {doc.id: doc for doc in corpus}
        tag_counts = self.users.tag_counts()
        tags_payload = []
        for tag_name, tags in self.users.tags_by_name(user_id).items():
            tagged = [docs_by_id[t.doc_id] for t in tags if t.doc_id in docs_by_id]
            if not tagged:
                continue
            profile = TagProfile.build(
                user_id,
                tag_name,
                tagged,
                embedder=self._embedder,
                created_at={t.doc_id: t.created_at for t in tags},
            )
            ranked = recommend(
                corpus,
                profile,
                now=self._today(),
                kg=stores.graph,
                tag_counts=tag_counts,
                weights=module_weights,
                k=k,
                window_days=self.settings.recommend_window_days,
            )
            tags_payload.append(
                {
                    "tag_name": tag_name,
                    "tagged_doc_ids": [t.doc_id for t in tags],
                    "recommendations": [r.to_record() for r in ranked],
                }
            )
        return {"user_id": user_id, "tags": tags_payload}

    # --- analytics ------------------------------------------------------------------

    def analytics_popularity(self, concepts: list[str], *, bucket: str | None = None) -> dict:
        stores = self._stores
        if not concepts:
            raise ApiError(400, "at least one concept is required")
        bucket = bucket or self.settings.analytics_bucket
        if bucket not in ("month", "year"):
            raise ApiError(400, f"bucket must be month or year, got {bucket!r}")
        resolved = [self._resolve_concept(stores, c) for c in concepts]
        series = contrastive_popularity(
            resolved,
            stores.documents.all(),
            stores.annotations.snapshot(),
            stores.graph,
            bucket=bucket,
        )
        return {
            "bucket": bucket,
            "concepts": resolved,
            "series": [s.to_record() for s in series],
        }

    def _resolve_concept(self, stores: Stores, name_or_id: str) -> str:
        if stores.graph.concept(name_or_id) is not None:
            return name_or_id
        as_id = concept_id(name_or_id)
        if stores.graph.concept(as_id) is not None:
            return as_id
        raise ApiError(404, f"unknown concept {name_or_id!r}")

    # --- documents and graph ----------------------------------------------------------

    def document(self, doc_id: str) -> dict:
        stores = self._stores
        doc = self._require_doc(stores, doc_id)
        node = document_node_id(doc_id)
        cites, cited_by, concepts = [], [], []
        for edge in stores.graph.edges():
            if edge.relation is Relation.CITES and edge.src == node:
                cites.append(edge.dst.removeprefix("document:"))
            elif edge.relation is Relation.CITES and edge.dst == node:
                cited_by.append(edge.src.removeprefix("document:"))
            elif edge.relation is Relation.MENTIONS and edge.src == node:
                concepts.append(edge.dst)
        counts: dict[str, int] = {}
        for ann in stores.annotations.for_doc(doc_id, doc.version):
            counts[ann.kind.value] = counts.get(ann.kind.value, 0) + 1
        return {
            "document": doc.to_record(),
            "cites": sorted(cites),
            "cited_by": sorted(cited_by),
            "concepts": sorted(concepts),
            "annotation_counts": counts,
        }

    def kg_concepts(self, *, prefix: str | None = None, limit: int | None = None) -> dict:
        stores = self._stores
        concepts = stores.graph.concepts()
        if prefix:
            needle = prefix.lower()
            concepts = [
                c
                for c in concepts
                if c.id.startswith(prefix) or c.canonical_name.lower().startswith(needle)
            ]
        concepts = sorted(concepts, key=lambda c: c.id)
        if limit is not None:
            if limit < 1:
                raise ApiError(400, "limit must be >= 1")
            concepts = concepts[:limit]
        return {"concepts": [c.to_record() for c in concepts]}

    def kg_stats(self) -> dict:
        stores = self._stores
        kinds: dict[str, int] = {}
        for node in stores.graph.nodes():
            kinds[node.kind.value] = kinds.get(node.kind.value, 0) + 1
        relations: dict[str, int] = {}
        for edge in stores.graph.edges():
            relations[edge.relation.value] = relations.get(edge.relation.value, 0) + 1
        type_dist = {
            t.value: n for t, n in sorted(
                stores.graph.concept_type_distribution().items(), key=lambda kv: kv[0].value
            )
        }
        return {
            "nodes": len(stores.graph.nodes()),
            "edges": stores.graph.edge_count(),
            "node_kinds": kinds,
            "relations": relations,
            "concept_types": type_dist,
        }

    # --- tags ---------------------------------------------------------------------

    def create_tag(self, payload: Mapping) -> dict:
        user_id = _field(payload, "user_id")
        tag_name = _field(payload, "tag_name")
        doc_id = _field(payload, "doc_id")
        self._require_doc(self._stores, doc_id)
        try:
            tag = self.users.add_tag(user_id, tag_name, doc_id)
        except DuplicateTag as exc:
            raise ApiError(409, str(exc)) from None
        except StoreError as exc:
            raise ApiError(400, str(exc)) from None
        return {"tag": tag.to_record()}

    def list_tags(self, *, user_id: str | None = None, doc_id: str | None = None) -> dict:
        tags = self.users.tags(user_id=user_id, doc_id=doc_id)
        return {"tags": [t.to_record() for t in tags]}

    def delete_tag(self, user_id: str, tag_name: str, doc_id: str) -> dict:
        try:
            self.users.delete_tag(user_id, tag_name, doc_id)
        except UnknownTag as exc:
            raise ApiError(404, str(exc.args[0])) from None
        return {"deleted": True}

    # --- notes ---------------------------------------------------------------------

    def create_note(self, payload: Mapping) -> dict:
        user_id = _field(payload, "user_id")
        text = _field(payload, "text", allow_blank=True)
        doc_id = payload.get("doc_id")
        if doc_id is not None:
            doc_id = str(doc_id)
            self._require_doc(self._stores, doc_id)
        try:
            note = self.users.add_note(user_id, text, doc_id=doc_id)
        except (EmptyNoteText, StoreError) as exc:
            raise ApiError(400, str(exc)) from None
        return {"note": note.to_record()}

    def list_notes(self, *, user_id: str | None = None, doc_id: str | None = None) -> dict:
        notes = self.users.notes(user_id=user_id, doc_id=doc_id)
        return {"notes": [n.to_record() for n in notes]}

    def delete_note(self, note_id: int) -> dict:
        try:
            self.users.delete_note(note_id)
        except UnknownNote as exc:
            raise ApiError(404, str(exc.args[0])) from None
        return {"deleted": True}

    # --- ingest ---------------------------------------------------------------------

    def ingest_lines(self, text: str) -> dict:
        """Validate and ingest a JSONL batch on a private copy, then swap."""
        with self._ingest_lock:
            staged = clone_stores(self._stores, self.settings)
            ingestor = make_ingestor(staged, self.settings)
            records, rejected = parse_jsonl_lines(text)
            tickets, invalid = ingestor.submit_records(records)
            rejected.extend({"line": r.line, "error": r.error} for r in invalid)
            rejected.sort(key=lambda r: r["line"])
            ingestor.pipeline.drain()

            accepted = [
                {
                    "doc_id": t.doc_id,
                    "version": t.doc_version,
                    "status": t.status.value,
                }
                for t in tickets
            ]
            ticket_records = [t.to_record() for t in ingestor.pipeline.tickets()]
            self._tickets.extend(ticket_records)
            self._stores = staged
            if self.workspace is not None:
                self.workspace.save(staged)
                self.workspace.append_tickets(ticket_records)
            return {"accepted": accepted, "rejected": rejected}

    # --- operator views ------------------------------------------------------------

    def ticket_records(self, doc_id: str | None = None) -> list[dict]:
        records = list(self._tickets)
        if doc_id is not None:
            records = [r for r in records if r["doc_id"] == doc_id]
        return records

    def stats(self) -> dict:
        stores = self._stores
        by_status: dict[str, int] = {}
        for rec in self._tickets:
            by_status[rec["status"]] = by_status.get(rec["status"], 0) + 1
        return {
            "documents": len(stores.documents.all()),
            "annotations": len(stores.annotations.snapshot()),
            "kg": self.kg_stats(),
            "tickets": by_status,
            "users": len(self.users.users()),
            "tags": len(self.users.tags()),
            "notes": len(self.users.notes()),
        }


def _field(payload: Mapping, name: str, *, allow_blank: bool = False) -> str:
    value = payload.get(name)
    if value is None:
        raise ApiError(400, f"{name} is required")
    value = str(value)
    if not allow_blank and not value.strip():
        raise ApiError(400, f"{name} must be non-empty")
    return value


def load_schema(name: str) -> dict:
    """One of the published response schemas, by file stem."""
    path = resources.files("litnav").joinpath(f"schemas/{name}.json")
    return json.loads(path.read_text(encoding="utf-8"))


def create_app(nav: Navigator) -> FastAPI:
    """The /v1 HTTP API over one Navigator."""
    app = FastAPI(title="AI literature navigator", version="1.0")
    app.state.navigator = nav

    @app.exception_handler(ApiError)
    async def on_api_error(request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"error": {"status": exc.status, "message": exc.message}},
        )

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        where = ".".join(str(p) for p in first.get("loc", ()))
        message = f"invalid request: {where}: {first.get('msg', 'validation failed')}"
        return JSONResponse(
            status_code=400, content={"error": {"status": 400, "message": message}}
        )

    @app.get("/v1/search")
    def search(
        q: str = "",
        mode: str = "keyword",
        granularity: str = "document",
        k: int | None = None,
    ):
        return nav.search(q, mode=mode, granularity=granularity, k=k)

    @app.get("/v1/experts")
    def experts(q: str = "", k: int | None = None):
        return nav.experts(q, k=k)

    @app.get("/v1/recommendations")
    def recommendations(
        user_id: str = "",
        k: int = 10,
        w_content: float | None = None,
        w_citation: float | None = None,
        w_author: float | None = None,
        w_popularity: float | None = None,
    ):
        if not user_id.strip():
            raise ApiError(400, "user_id is required")
        overrides = {
            name: value
            for name, value in (
                ("content", w_content),
                ("citation", w_citation),
                ("author", w_author),
                ("popularity", w_popularity),
            )
            if value is not None
        }
        return nav.recommendations(user_id, k=k, weights=overrides or None)

    @app.get("/v1/analytics/popularity")
    def analytics_popularity(
        concept: list[str] = Query(default=[]), bucket: str | None = None
    ):
        return nav.analytics_popularity(concept, bucket=bucket)

    @app.get("/v1/documents/{doc_id}")
    def document(doc_id: str):
        return nav.document(doc_id)

    @app.get("/v1/kg/concepts")
    def kg_concepts(prefix: str | None = None, limit: int | None = None):
        return nav.kg_concepts(prefix=prefix, limit=limit)

    @app.get("/v1/kg/stats")
    def kg_stats():
        return nav.kg_stats()

    @app.get("/v1/tags")
    def list_tags(user_id: str | None = None, doc_id: str | None = None):
        return nav.list_tags(user_id=user_id, doc_id=doc_id)

    @app.post("/v1/tags", status_code=201)
    def create_tag(payload: dict = Body(...)):
        return nav.create_tag(payload)

    @app.delete("/v1/tags")
    def delete_tag(user_id: str = "", tag_name: str = "", doc_id: str = ""):
        return nav.delete_tag(user_id, tag_name, doc_id)

    @app.get("/v1/notes")
    def list_notes(user_id: str | None = None, doc_id: str | None = None):
        return nav.list_notes(user_id=user_id, doc_id=doc_id)

    @app.post("/v1/notes", status_code=201)
    def create_note(payload: dict = Body(...)):
        return nav.create_note(payload)

    @app.delete("/v1/notes/{note_id}")
    def delete_note(note_id: int):
        return nav.delete_note(note_id)

    @app.post("/v1/ingest")
    async def ingest(request: Request):
        body = await request.body()
        return await run_in_threadpool(nav.ingest_lines, body.decode("utf-8"))

    return app
