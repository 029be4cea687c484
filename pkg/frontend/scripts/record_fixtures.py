"""Record HTTP response fixtures for the UI contract tests.

Builds a small corpus, serves it with the real application in-process, and
replays the exact request flows the UI performs — searches, the tag/untag
round-trips around recommendation refreshes, analytics, and the error paths.
Each response body is written verbatim to tests/fixtures/ so the UI tests can
run against recorded traffic with no backend running.

Run from the repository root:

    python3 frontend/scripts/record_fixtures.py
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

from fastapi.testclient import TestClient

from litnav.config import Settings
from litnav.corpus import validate_document
from litnav.service import Navigator, create_app
from litnav.store import UserStore
from litnav.workspace import build_stores, make_ingestor

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

# Frozen so the recommendation window never drifts away from the corpus dates.
FIXED_NOW = datetime(2026, 8, 18, 12, 0, 0, tzinfo=timezone.utc)

DOCS = [
    {
        "id": "doc-kg-a",
        "title": "Knowledge Graph Construction from Research Papers",
        "authors": ["Mei Lin", "Omar Farouk"],
        "published_at": "2026-05-04",
        "source": "arxiv",
        "abstract": "We construct a knowledge graph from parsed research papers.",
        "body": (
            "A knowledge graph links concepts mentioned across papers. "
            "We extract entities, resolve aliases, and store typed edges. "
            "The resulting knowledge graph supports concept-level queries. "
            "Coverage grows as more papers mention each concept."
        ),
        "citation_count": 40,
        "categories": ["cs.IR"],
    },
    {
        "id": "doc-kg-b",
        "title": "Scalable Knowledge Graph Queries for Science",
        "authors": ["Mei Lin"],
        "published_at": "2026-08-06",
        "source": "arxiv",
        "abstract": "Query planning over a scientific knowledge graph.",
        "body": (
            "We study latency of knowledge graph traversals at desk scale. "
            "A compact adjacency layout answers two-hop queries in "
            "microseconds. The knowledge graph index fits in memory."
        ),
        "references_raw": (
            "[1] Mei Lin, Omar Farouk. Knowledge Graph Construction from "
            "Research Papers. 2026."
        ),
        "citation_count": 8,
        "categories": ["cs.IR"],
    },
    {
        "id": "doc-ir-a",
        "title": "Neural Ranking Models for Literature Search",
        "authors": ["Priya Natarajan", "Ben Okafor"],
        "published_at": "2026-05-18",
        "source": "openreview",
        "abstract": "Ranking models tuned for literature search workloads.",
        "body": (
            "Literature search benefits from learned ranking. We compare "
            "lexical scoring with dense ranking models and measure recall "
            "on held-out queries. Ranking quality improves with modest "
            "training data."
        ),
        "citation_count": 22,
        "categories": ["cs.IR"],
    },
    {
        "id": "doc-ir-b",
        "title": "Sparse and Dense Retrieval at Desk Scale",
        "authors": ["Priya Natarajan"],
        "published_at": "2026-08-02",
        "source": "arxiv",
        "abstract": "Hybrid retrieval tuned for a single-machine corpus.",
        "body": (
            "We combine sparse and dense retrieval for literature search. "
            "Fusion of the two rankings beats either alone. Desk-scale "
            "corpora need no sharding."
        ),
        "references_raw": (
            "[1] Priya Natarajan, Ben Okafor. Neural Ranking Models for "
            "Literature Search. 2026."
        ),
        "citation_count": 3,
        "categories": ["cs.IR"],
    },
    {
        "id": "doc-ex-a",
        "title": "Expert Finding by Citation Voting",
        "authors": ["Omar Farouk"],
        "published_at": "2026-04-22",
        "source": "openreview",
        "abstract": "Expert finding from citation-weighted authorship.",
        "body": (
            "Expert finding ranks authors by the documents that mention a "
            "topic. Citations act as votes. We evaluate expert finding "
            "against editorial board membership."
        ),
        "citation_count": 31,
        "categories": ["cs.DL"],
    },
    {
        "id": "doc-qa-a",
        "title": "Compute Budgets for Pretraining Language Models",
        "authors": ["Ben Okafor", "Sofia Reyes"],
        "published_at": "2026-08-09",
        "source": "blog",
        "abstract": "Measured compute budgets for small-scale pretraining.",
        "body": (
            "How many GPUs does pretraining need in practice? Pretraining a "
            "mid-size language model uses eight GPUs for two weeks. We "
            "report throughput per accelerator and the total energy drawn. "
            "Question answering over these notes saves rereading them."
        ),
        "citation_count": 2,
        "categories": ["cs.LG"],
    },
    {
        "id": "doc-tag-x",
        "title": "Interactive Tagging for Personal Research Libraries",
        "authors": ["Sofia Reyes"],
        "published_at": "2026-08-11",
        "source": "arxiv",
        "abstract": "Tagging workflows for a personal paper library.",
        "body": (
            "Tags group papers by project. We log tag actions and replay "
            "them to rebuild reading lists. Lightweight tagging beats "
            "folder hierarchies for recall of old material."
        ),
        "citation_count": 1,
        "categories": ["cs.HC"],
    },
    {
        "id": "doc-old-a",
        "title": "Early Retrieval Systems in Digital Archives",
        "authors": ["Ben Okafor"],
        "published_at": "2026-02-14",
        "source": "other",
        "abstract": "A survey of early archive retrieval systems.",
        "body": (
            "Digital archives shipped retrieval long before the web. We "
            "survey index structures and query languages of early systems."
        ),
        "citation_count": 12,
        "categories": ["cs.DL"],
    },
]


def save(name: str, status: int, payload: object) -> None:
    path = FIXTURES / name
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {"status": status, "body": payload}
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(f"  wrote {path.relative_to(FIXTURES.parent.parent)} (status {status})")


def main() -> None:
    settings = Settings(pipeline_workers=1)
    stores = build_stores(settings)
    make_ingestor(stores, settings).ingest([validate_document(d) for d in DOCS])
    users = UserStore()
    users.add_tag("demo", "ranking", "doc-ir-a")
    nav = Navigator(stores, users, settings, clock=lambda: FIXED_NOW)

    client = TestClient(create_app(nav))
    doc_ids: set[str] = set()

    def collect(payload: object) -> None:
        if isinstance(payload, dict):
            for key, value in payload.items():
                if key == "doc_id" and isinstance(value, str):
                    doc_ids.add(value)
                else:
                    collect(value)
        elif isinstance(payload, list):
            for item in payload:
                collect(item)

    def record(name: str, response) -> dict:
        body = response.json()
        save(name, response.status_code, body)
        collect(body)
        return body

    print("recording fixtures:")

    record(
        "search_keyword.json",
        client.get(
            "/v1/search",
            params={"q": "literature search ranking", "mode": "keyword", "k": 10},
        ),
    )
    record(
        "search_question.json",
        client.get(
            "/v1/search",
            params={
                "q": "How many GPUs are needed to pretrain a language model?",
                "mode": "hybrid",
                "k": 10,
            },
        ),
    )
    record(
        "search_concept.json",
        client.get(
            "/v1/search",
            params={"q": "knowledge graph", "mode": "keyword", "k": 10},
        ),
    )
    record(
        "error_400.json",
        client.get("/v1/search", params={"q": "   ", "mode": "keyword"}),
    )

    record(
        "recommendations_before.json",
        client.get("/v1/recommendations", params={"user_id": "demo", "k": 10}),
    )
    record(
        "tag_created.json",
        client.post(
            "/v1/tags",
            json={"user_id": "demo", "tag_name": "reading-list", "doc_id": "doc-tag-x"},
        ),
    )
    record(
        "error_409.json",
        client.post(
            "/v1/tags",
            json={"user_id": "demo", "tag_name": "reading-list", "doc_id": "doc-tag-x"},
        ),
    )
    record("tags_after.json", client.get("/v1/tags", params={"user_id": "demo"}))
    record(
        "recommendations_after.json",
        client.get("/v1/recommendations", params={"user_id": "demo", "k": 10}),
    )
    record(
        "tag_deleted.json",
        client.request(
            "DELETE",
            "/v1/tags",
            json={"user_id": "demo", "tag_name": "reading-list", "doc_id": "doc-tag-x"},
        ),
    )
    record(
        "recommendations_untag.json",
        client.get("/v1/recommendations", params={"user_id": "demo", "k": 10}),
    )

    record(
        "analytics.json",
        client.get(
            "/v1/analytics/popularity",
            params=[("concept", "knowledge graph"), ("concept", "expert finding")],
        ),
    )
    record("kg_stats.json", client.get("/v1/kg/stats"))

    for doc_id in sorted(doc_ids):
        record(f"documents/{doc_id}.json", client.get(f"/v1/documents/{doc_id}"))

    print(f"done: {len(doc_ids)} document fixtures plus flow recordings")


if __name__ == "__main__":
    main()
