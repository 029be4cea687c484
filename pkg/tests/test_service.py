"""HTTP gateway: routing, validation, schema conformance, module parity."""

from datetime import datetime, timezone

import jsonschema
import pytest
from fastapi.testclient import TestClient

from randcorpus import random_corpus

from litnav.config import Settings
from litnav.corpus import validate_document
from litnav.experts import experts as rank_experts
from litnav.insights import answer_sentences, contrastive_popularity
from litnav.recommend import Module, TagProfile, recommend
from litnav.service import Navigator, create_app, load_schema
from litnav.store import UserStore
from litnav.vector import fuse
from litnav.workspace import Workspace, build_stores, make_ingestor

SETTINGS = Settings()
FIXED_NOW = datetime(2026, 8, 18, 12, 0, 0, tzinfo=timezone.utc)


def fixed_clock() -> datetime:
    return FIXED_NOW


ALPHA = validate_document(
    {
        "id": "p-alpha",
        "title": "Transformer Models for Image Classification",
        "authors": ["Ada One", "Raj Patel"],
        "published_at": "2024-03-10",
        "abstract": "We study the attention mechanism for image classification.",
        "body": (
            "Transformer architectures dominate image classification today.\n\n"
            "References\n"
            "[1] R. Vega, T. Iwai. Deep Residual Learning Strategies for Vision. "
            "CVPR, 2020.\n"
        ),
        "citation_count": 40,
    }
)
BETA = validate_document(
    {
        "id": "p-beta",
        "title": "Deep Residual Learning Strategies for Vision",
        "authors": ["R. Vega", "T. Iwai"],
        "published_at": "2020-06-01",
        "abstract": "A convolutional neural network study for vision tasks.",
        "citation_count": 120,
    }
)
GAMMA = validate_document(
    {
        "id": "p-gamma",
        "title": "Bert Compression Without Accuracy Loss",
        "authors": ["Ada One"],
        "published_at": "2023-11-20",
        "abstract": "Compressing bert while keeping transformer accuracy.",
        "citation_count": 15,
    }
)
# Published inside the recommender's freshness window relative to FIXED_NOW.
FRESH = [
    validate_document(rec)
    for rec in (
        {
            "id": "p-fresh-distill",
            "title": "Distilling Bert Into Tiny Students",
            "authors": ["Mei Lin"],
            "published_at": "2026-08-10",
            "abstract": "Distillation compresses bert models without accuracy loss.",
            "citation_count": 3,
        },
        {
            "id": "p-fresh-sparse",
            "title": "Sparse Attention for Long Documents",
            "authors": ["Ada One"],
            "published_at": "2026-08-05",
            "abstract": "An efficient transformer attention mechanism for long inputs.",
            "citation_count": 5,
        },
        {
            "id": "p-fresh-convnet",
            "title": "Image Classification With Convnets Revisited",
            "authors": ["R. Vega"],
            "published_at": "2026-07-28",
            "abstract": "A convolutional neural network baseline for image classification.",
            "citation_count": 2,
        },
        {
            "id": "p-fresh-roses",
            "title": "A Gardening Almanac for Roses",
            "authors": ["P. Bloom"],
            "published_at": "2026-08-01",
            "abstract": "Soil preparation and pruning schedules for rose beds.",
            "citation_count": 0,
        },
    )
]


@pytest.fixture(scope="module")
def navigator():
    stores = build_stores(SETTINGS)
    docs = [ALPHA, BETA, GAMMA, *FRESH] + random_corpus(17, 24)
    make_ingestor(stores, SETTINGS).ingest(docs)
    return Navigator(stores, UserStore(), SETTINGS, clock=fixed_clock)


@pytest.fixture(scope="module")
def client(navigator):
    return TestClient(create_app(navigator))


def check(resp, status: int, schema: str | None = None) -> dict:
    assert resp.status_code == status, resp.text
    payload = resp.json()
    if schema is not None:
        jsonschema.validate(payload, load_schema(schema))
    return payload


def check_error(resp, status: int) -> str:
    payload = check(resp, status, "error")
    return payload["error"]["message"]


# --- search -------------------------------------------------------------------------


def test_keyword_search_returns_ranked_docs_with_breakdowns(client):
    payload = check(
        client.get("/v1/search", params={"q": "image classification"}), 200, "search"
    )
    assert payload["mode"] == "keyword"
    ids = [r["doc_id"] for r in payload["results"]]
    # Both studies that use the phrase rank; the newer one gets the recency edge.
    assert ids.index("p-fresh-convnet") < ids.index("p-alpha")
    top = payload["results"][0]
    b = top["breakdown"]
    reconstructed = (
        sum(s["boost"] * s["combined"] for s in b["ngrams"])
        * b["citation_component"]
        * b["recency_component"]
    )
    assert reconstructed == pytest.approx(top["score"], abs=1e-9)


def test_vector_sentence_search_resolves_span_text(client, navigator):
    payload = check(
        client.get(
            "/v1/search",
            params={"q": "compressing language models", "mode": "vector",
                    "granularity": "sentence", "k": 4},
        ),
        200,
        "search",
    )
    assert len(payload["results"]) == 4
    for hit in payload["results"]:
        doc = navigator.stores.documents.get(hit["doc_id"])
        field = hit["span"]["field"]
        start, end = hit["span"]["start_char"], hit["span"]["end_char"]
        assert hit["text"] == doc.field_text(_field_of(field))[start:end]
        assert hit["text"].strip()


def _field_of(value):
    from litnav.corpus import Field

    return Field(value)


def test_hybrid_equals_offline_fusion_of_the_two_modes(client):
    k = 7
    kw = check(client.get("/v1/search", params={"q": "neural networks", "k": k}), 200, "search")
    vec = check(
        client.get(
            "/v1/search",
            params={"q": "neural networks", "mode": "vector", "granularity": "document", "k": k},
        ),
        200,
        "search",
    )
    hybrid = check(
        client.get("/v1/search", params={"q": "neural networks", "mode": "hybrid", "k": k}),
        200,
        "search",
    )
    fused = fuse(
        [r["doc_id"] for r in kw["results"]],
        [r["doc_id"] for r in vec["results"]],
        k,
        offset=SETTINGS.search_rrf_offset,
    )
    assert [r["doc_id"] for r in hybrid["results"]] == [f.doc_id for f in fused]
    for got, want in zip(hybrid["results"], fused):
        assert got["score"] == pytest.approx(want.score)
        assert got["keyword_rank"] == want.keyword_rank
        assert got["vector_rank"] == want.vector_rank


def test_question_attaches_answer_sentences(client, navigator):
    q = "what is a convolutional neural network?"
    payload = check(client.get("/v1/search", params={"q": q}), 200, "search")
    assert payload["query_kind"]["kind"] == "question"
    stores = navigator.stores
    docs_by_id = {d.id: d for d in stores.documents.all()}
    expected = [a.to_record() for a in answer_sentences(stores.vector_indices, docs_by_id, q, k=5)]
    assert payload["answers"] == expected


def test_keyword_statement_has_no_answers_attached(client):
    payload = check(client.get("/v1/search", params={"q": "image classification"}), 200, "search")
    assert payload["query_kind"]["kind"] == "keyword"
    assert "answers" not in payload


def test_template_query_attaches_analytics_reference(client):
    payload = check(
        client.get("/v1/search", params={"q": "transformer vs cnn"}), 200, "search"
    )
    assert "analytics" in payload
    assert payload["analytics"]["concepts"] == [
        "concept:transformer",
        "concept:convolutional-neural-network",
    ]


def test_empty_query_is_400(client):
    assert "empty query" in check_error(client.get("/v1/search", params={"q": "  "}), 400)
    assert "empty query" in check_error(client.get("/v1/search"), 400)


def test_unknown_mode_and_granularity_are_400(client):
    assert "mode" in check_error(
        client.get("/v1/search", params={"q": "x", "mode": "fuzzy"}), 400
    )
    assert "granularity" in check_error(
        client.get("/v1/search", params={"q": "x", "granularity": "paragraph"}), 400
    )


@pytest.mark.parametrize("mode", ["keyword", "hybrid"])
@pytest.mark.parametrize("granularity", ["chunk", "sentence"])
def test_doc_level_modes_reject_finer_granularity(client, mode, granularity):
    message = check_error(
        client.get("/v1/search", params={"q": "x", "mode": mode, "granularity": granularity}),
        400,
    )
    assert "granularity=document" in message


def test_non_integer_k_is_400_not_422(client):
    check_error(client.get("/v1/search", params={"q": "x", "k": "many"}), 400)


def test_identical_searches_return_identical_payloads(client):
    params = {"q": "bert compression", "mode": "hybrid", "k": 5}
    first = client.get("/v1/search", params=params)
    second = client.get("/v1/search", params=params)
    assert first.content == second.content


# --- experts ------------------------------------------------------------------------


def test_experts_endpoint_matches_direct_module_invocation(client, navigator):
    payload = check(client.get("/v1/experts", params={"q": "image classification", "k": 5}), 200, "experts")
    stores = navigator.stores
    expected = rank_experts(
        stores.vector_indices,
        stores.documents.all(),
        "image classification",
        5,
        k_docs=SETTINGS.experts_k_docs,
        gamma=SETTINGS.experts_gamma,
        beta=SETTINGS.experts_beta,
    )
    assert payload["experts"] == [e.to_record() for e in expected]
    names = [e["author_name"] for e in payload["experts"]]
    assert any(n in names for n in ("raj patel", "r. vega"))
    assert all(e["supporting_docs"] for e in payload["experts"])


def test_experts_empty_query_is_400(client):
    check_error(client.get("/v1/experts", params={"q": ""}), 400)


# --- tags, notes, recommendations -----------------------------------------------------


@pytest.fixture()
def fresh_client():
    stores = build_stores(SETTINGS)
    make_ingestor(stores, SETTINGS).ingest(
        [ALPHA, BETA, GAMMA, *FRESH] + random_corpus(29, 8)
    )
    nav = Navigator(stores, UserStore(), SETTINGS, clock=fixed_clock)
    return TestClient(create_app(nav)), nav


def test_tag_lifecycle_and_recommendation_trigger(fresh_client):
    client, nav = fresh_client

    created = check(
        client.post("/v1/tags", json={"user_id": "ada", "tag_name": "nlp", "doc_id": "p-gamma"}),
        201,
        "tag",
    )
    assert created["tag"]["doc_id"] == "p-gamma"

    dup = client.post("/v1/tags", json={"user_id": "ada", "tag_name": "nlp", "doc_id": "p-gamma"})
    check_error(dup, 409)

    recs = check(client.get("/v1/recommendations", params={"user_id": "ada"}), 200, "recommendations")
    assert [t["tag_name"] for t in recs["tags"]] == ["nlp"]
    ranked = recs["tags"][0]["recommendations"]
    assert ranked, "tagging a document must activate recommendations for that tag"
    assert all("content" in [m["module"] for m in r["modules"]] for r in ranked)
    recommended = [r["doc_id"] for r in ranked]
    assert "p-gamma" not in recommended
    assert "p-fresh-distill" in recommended  # closest fresh doc to the tagged one

    check(
        client.request("DELETE", "/v1/tags",
                       params={"user_id": "ada", "tag_name": "nlp", "doc_id": "p-gamma"}),
        200,
        "deleted",
    )
    after = check(client.get("/v1/recommendations", params={"user_id": "ada"}), 200, "recommendations")
    assert after["tags"] == []


def test_recommendations_match_direct_module_invocation(fresh_client):
    client, nav = fresh_client
    client.post("/v1/tags", json={"user_id": "ada", "tag_name": "nlp", "doc_id": "p-gamma"})
    client.post("/v1/tags", json={"user_id": "ada", "tag_name": "nlp", "doc_id": "p-alpha"})

    payload = check(client.get("/v1/recommendations", params={"user_id": "ada", "k": 6}), 200, "recommendations")

    stores = nav.stores
    corpus = stores.documents.all()
    tags = nav.users.tags(user_id="ada")
    profile = TagProfile.build(
        "ada",
        "nlp",
        [stores.documents.get(t.doc_id) for t in tags],
        embedder=nav._embedder,
        created_at={t.doc_id: t.created_at for t in tags},
    )
    expected = recommend(
        corpus,
        profile,
        now=FIXED_NOW.date(),
        kg=stores.graph,
        tag_counts=nav.users.tag_counts(),
        weights={m: 1.0 for m in Module},
        k=6,
        window_days=SETTINGS.recommend_window_days,
    )
    assert payload["tags"][0]["recommendations"] == [r.to_record() for r in expected]


def test_recommendation_weight_overrides_are_passed_through(fresh_client):
    client, nav = fresh_client
    client.post("/v1/tags", json={"user_id": "ada", "tag_name": "nlp", "doc_id": "p-gamma"})

    payload = check(
        client.get(
            "/v1/recommendations",
            params={"user_id": "ada", "k": 4, "w_content": 2.5, "w_popularity": 0.0},
        ),
        200,
        "recommendations",
    )
    stores = nav.stores
    tags = nav.users.tags(user_id="ada")
    profile = TagProfile.build(
        "ada", "nlp", [stores.documents.get(t.doc_id) for t in tags],
        embedder=nav._embedder,
        created_at={t.doc_id: t.created_at for t in tags},
    )
    expected = recommend(
        stores.documents.all(),
        profile,
        now=FIXED_NOW.date(),
        kg=stores.graph,
        tag_counts=nav.users.tag_counts(),
        weights={Module.CONTENT: 2.5, Module.CITATION: 1.0, Module.AUTHOR: 1.0,
                 Module.POPULARITY: 0.0},
        k=4,
        window_days=SETTINGS.recommend_window_days,
    )
    assert payload["tags"][0]["recommendations"] == [r.to_record() for r in expected]


def test_unknown_user_is_404_but_known_user_with_no_tags_is_empty(fresh_client):
    client, _ = fresh_client
    check_error(client.get("/v1/recommendations", params={"user_id": "nobody"}), 404)

    note = client.post("/v1/notes", json={"user_id": "carol", "text": "general plan"})
    assert note.status_code == 201
    payload = check(client.get("/v1/recommendations", params={"user_id": "carol"}), 200, "recommendations")
    assert payload == {"user_id": "carol", "tags": []}


def test_tagging_an_unknown_document_is_404(fresh_client):
    client, _ = fresh_client
    check_error(
        client.post("/v1/tags", json={"user_id": "ada", "tag_name": "x", "doc_id": "p-missing"}),
        404,
    )


def test_tag_body_validation_is_400(fresh_client):
    client, _ = fresh_client
    check_error(client.post("/v1/tags", json={"user_id": "ada", "tag_name": "x"}), 400)
    check_error(client.post("/v1/tags", json={"user_id": " ", "tag_name": "x", "doc_id": "p-alpha"}), 400)


def test_tags_listing_filters(fresh_client):
    client, _ = fresh_client
    client.post("/v1/tags", json={"user_id": "ada", "tag_name": "a", "doc_id": "p-alpha"})
    client.post("/v1/tags", json={"user_id": "bob", "tag_name": "b", "doc_id": "p-alpha"})
    client.post("/v1/tags", json={"user_id": "ada", "tag_name": "a", "doc_id": "p-beta"})

    all_tags = check(client.get("/v1/tags"), 200, "tags")
    assert len(all_tags["tags"]) == 3
    ada = check(client.get("/v1/tags", params={"user_id": "ada"}), 200, "tags")
    assert {t["doc_id"] for t in ada["tags"]} == {"p-alpha", "p-beta"}
    on_alpha = check(client.get("/v1/tags", params={"doc_id": "p-alpha"}), 200, "tags")
    assert {t["user_id"] for t in on_alpha["tags"]} == {"ada", "bob"}


def test_delete_unknown_tag_is_404(fresh_client):
    client, _ = fresh_client
    check_error(
        client.request("DELETE", "/v1/tags",
                       params={"user_id": "ada", "tag_name": "x", "doc_id": "p-alpha"}),
        404,
    )


def test_note_lifecycle(fresh_client):
    client, _ = fresh_client
    created = check(
        client.post("/v1/notes", json={"user_id": "ada", "text": "read later", "doc_id": "p-beta"}),
        201,
        "note",
    )
    assert created["note"]["id"] == 1
    project = check(client.post("/v1/notes", json={"user_id": "ada", "text": "survey plan"}), 201, "note")
    assert project["note"]["doc_id"] is None

    notes = check(client.get("/v1/notes", params={"user_id": "ada"}), 200, "notes")
    assert [n["id"] for n in notes["notes"]] == [1, 2]
    on_beta = check(client.get("/v1/notes", params={"doc_id": "p-beta"}), 200, "notes")
    assert [n["text"] for n in on_beta["notes"]] == ["read later"]

    check(client.delete("/v1/notes/1"), 200, "deleted")
    check_error(client.delete("/v1/notes/1"), 404)


def test_note_validation_errors(fresh_client):
    client, _ = fresh_client
    check_error(client.post("/v1/notes", json={"user_id": "ada", "text": "  "}), 400)
    check_error(client.post("/v1/notes", json={"text": "orphan"}), 400)
    check_error(
        client.post("/v1/notes", json={"user_id": "ada", "text": "x", "doc_id": "p-missing"}),
        404,
    )


# --- analytics ------------------------------------------------------------------------


def test_popularity_accepts_names_and_ids_and_shares_the_axis(client, navigator):
    payload = check(
        client.get(
            "/v1/analytics/popularity",
            params=[("concept", "transformer"), ("concept", "concept:bert")],
        ),
        200,
        "analytics_popularity",
    )
    assert payload["concepts"] == ["concept:transformer", "concept:bert"]
    axes = [[b["period"] for b in s["series"]] for s in payload["series"]]
    assert axes[0] == axes[1], "every series must share one time axis"

    stores = navigator.stores
    expected = contrastive_popularity(
        ["concept:transformer", "concept:bert"],
        stores.documents.all(),
        stores.annotations.snapshot(),
        stores.graph,
        bucket="month",
    )
    assert payload["series"] == [s.to_record() for s in expected]
    by_id = {s["concept_id"]: s for s in payload["series"]}
    bert_march = {b["period"]: b["count"] for b in by_id["concept:bert"]["series"]}
    assert bert_march["2023-11"] >= 1  # the bert compression study


def test_popularity_validation_errors(client):
    check_error(client.get("/v1/analytics/popularity"), 400)
    check_error(
        client.get("/v1/analytics/popularity", params={"concept": "warp drive"}), 404
    )
    check_error(
        client.get("/v1/analytics/popularity", params={"concept": "bert", "bucket": "week"}),
        400,
    )


# --- documents and graph ----------------------------------------------------------------


def test_document_detail_reports_citation_links(client):
    alpha = check(client.get("/v1/documents/p-alpha"), 200, "document")
    assert alpha["document"]["title"] == ALPHA.title
    assert alpha["cites"] == ["p-beta"]
    assert "concept:image-classification" in alpha["concepts"]
    assert alpha["annotation_counts"]["citation_marker"] == 1

    beta = check(client.get("/v1/documents/p-beta"), 200, "document")
    assert beta["cited_by"] == ["p-alpha"]


def test_unknown_document_is_404(client):
    check_error(client.get("/v1/documents/p-missing"), 404)


def test_kg_concepts_prefix_filter(client):
    payload = check(client.get("/v1/kg/concepts", params={"prefix": "concept:bert"}), 200, "kg_concepts")
    assert "concept:bert" in [c["id"] for c in payload["concepts"]]
    named = check(client.get("/v1/kg/concepts", params={"prefix": "transform", "limit": 5}), 200, "kg_concepts")
    assert named["concepts"]
    assert all(c["canonical_name"].lower().startswith("transform") for c in named["concepts"])


def test_kg_stats_counts_node_kinds(client, navigator):
    payload = check(client.get("/v1/kg/stats"), 200, "kg_stats")
    assert payload["node_kinds"]["document"] == len(navigator.stores.documents.all())
    assert payload["concept_types"]
    assert sum(payload["concept_types"].values()) == payload["node_kinds"]["concept"]
    assert payload["nodes"] == sum(payload["node_kinds"].values())


# --- ingest -----------------------------------------------------------------------------


def test_ingest_accepts_good_lines_and_rejects_bad_ones(fresh_client):
    client, _ = fresh_client
    body = "\n".join(
        [
            '{"id": "p-new", "title": "Streaming Retrieval at Desk Scale",'
            ' "authors": ["N. Ohta"], "published_at": "2025-05-01"}',
            '{"id": "p-bad", "title": "", "authors": [], "published_at": "2025-01-01"}',
            "not json at all",
        ]
    )
    payload = check(client.post("/v1/ingest", content=body), 200, "ingest")
    assert [(r["doc_id"], r["status"]) for r in payload["accepted"]] == [("p-new", "complete")]
    assert [r["line"] for r in payload["rejected"]] == [2, 3]
    assert "title" in payload["rejected"][0]["error"]
    assert "JSON" in payload["rejected"][1]["error"]

    detail = check(client.get("/v1/documents/p-new"), 200, "document")
    assert detail["document"]["title"] == "Streaming Retrieval at Desk Scale"
    found = check(client.get("/v1/search", params={"q": "streaming retrieval"}), 200, "search")
    assert found["results"][0]["doc_id"] == "p-new"


def test_ingested_version_supersedes_in_search(fresh_client):
    client, _ = fresh_client
    v2 = (
        '{"id": "p-gamma", "version": 2, "title": "Quantized Adapters for Small Models",'
        ' "authors": ["Ada One"], "published_at": "2023-11-20",'
        ' "abstract": "quantized adapters replace full fine-tuning"}'
    )
    check(client.post("/v1/ingest", content=v2), 200, "ingest")
    hits = check(client.get("/v1/search", params={"q": "quantized adapters"}), 200, "search")
    assert hits["results"][0]["doc_id"] == "p-gamma"
    stale = check(client.get("/v1/search", params={"q": "bert compression"}), 200, "search")
    assert "p-gamma" not in [r["doc_id"] for r in stale["results"]]


# --- persistence across restart -----------------------------------------------------------


def test_restart_from_workspace_preserves_user_data_and_answers(tmp_path):
    ws = Workspace.open(SETTINGS, tmp_path)
    stores = build_stores(SETTINGS)
    make_ingestor(stores, SETTINGS).ingest([ALPHA, BETA, GAMMA])
    ws.save(stores)

    users = ws.user_store()
    nav = Navigator(stores, users, SETTINGS, workspace=ws, clock=fixed_clock)
    client = TestClient(create_app(nav))
    client.post("/v1/tags", json={"user_id": "ada", "tag_name": "nlp", "doc_id": "p-gamma"})
    client.post("/v1/notes", json={"user_id": "ada", "text": "note", "doc_id": "p-alpha"})
    client.post(
        "/v1/ingest",
        content='{"id": "p-late", "title": "Late Addition", "authors": ["Z"],'
        ' "published_at": "2025-02-01"}',
    )
    before_tags = client.get("/v1/tags").json()
    before_notes = client.get("/v1/notes").json()
    before_search = client.get("/v1/search", params={"q": "late addition"}).json()
    users.close()

    restarted = Navigator(ws.load(), ws.user_store(), SETTINGS, workspace=ws, clock=fixed_clock)
    client2 = TestClient(create_app(restarted))
    assert client2.get("/v1/tags").json() == before_tags
    assert client2.get("/v1/notes").json() == before_notes
    assert client2.get("/v1/search", params={"q": "late addition"}).json() == before_search
    assert [t["doc_id"] for t in restarted.ticket_records()] == ["p-late"]
