"""Checks for the `nav` command line, invoked in-process via its main()."""

from __future__ import annotations

import json

import pytest
from jsonschema import validate
from randcorpus import random_corpus

from litnav.cli import main
from litnav.corpus import documents_to_jsonl, validate_document
from litnav.service import load_schema
from litnav.store import UserStore

DOCS = random_corpus(101, 10)
RECENT = validate_document(
    {
        "id": "doc-recent",
        "title": "Streaming Index Maintenance for Fresh Corpora",
        "abstract": "We maintain retrieval indices under continuous updates.",
        "body": "Streaming updates keep indices fresh without full rebuilds.",
        "authors": ["Noor Haddad"],
        "published_at": "2026-08-05",
        "citation_count": 2,
        "source": "arxiv",
        "categories": ["cs.IR"],
    }
)


def run(capsys, *argv: str) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_corpus(path, docs) -> str:
    corpus_file = path / "corpus.jsonl"
    corpus_file.write_text(documents_to_jsonl(docs), encoding="utf-8")
    return str(corpus_file)


@pytest.fixture(scope="module")
def ingested_dir(tmp_path_factory):
    """A data directory populated once by `nav ingest`."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "navdata"
    corpus_file = write_corpus(root, DOCS + [RECENT])
    code = main(["ingest", corpus_file, "--data", str(data)])
    assert code == 0
    return str(data)


def test_ingest_reports_one_outcome_line_per_record(tmp_path, capsys):
    corpus_file = tmp_path / "batch.jsonl"
    lines = [json.dumps(d.to_record()) for d in DOCS[:3]]
    lines.append("{not json")
    lines.append('["a", "list"]')
    lines.append(json.dumps({"id": "doc-bad", "title": "No Abstract Anywhere"}))
    corpus_file.write_text("\n".join(lines) + "\n", encoding="utf-8")

    code, out, err = run(capsys, "ingest", str(corpus_file), "--data", str(tmp_path / "d"))
    assert code == 1
    records = [json.loads(line) for line in out.splitlines()]
    accepted = [r for r in records if "doc_id" in r]
    rejected = [r for r in records if "error" in r]
    assert [r["doc_id"] for r in accepted] == [d.id for d in DOCS[:3]]
    assert all(r["status"] == "complete" for r in accepted)
    assert [r["line"] for r in rejected] == [4, 5, 6]
    assert "invalid JSON" in rejected[0]["error"]
    assert "3 rejected" in err


def test_ingest_missing_file_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "ingest", str(tmp_path / "nope.jsonl"), "--data", str(tmp_path))
    assert code == 2
    assert "no such file" in err


def test_ingest_persists_store_files(ingested_dir):
    import os

    names = set(os.listdir(ingested_dir))
    assert {"documents.jsonl", "annotations.jsonl", "graph.jsonl", "keyword.idx", "tickets.jsonl"} <= names
    assert "vectors" in names


def test_status_prints_one_json_object_per_ticket(ingested_dir, capsys):
    code, out, _ = run(capsys, "status", "--data", ingested_dir)
    assert code == 0
    records = [json.loads(line) for line in out.splitlines()]
    assert {r["doc_id"] for r in records} == {d.id for d in DOCS} | {RECENT.id}
    assert all(r["status"] == "complete" for r in records)
    assert all("attempts" in r and "current_stage" in r for r in records)


def test_status_doc_filter(ingested_dir, capsys):
    code, out, _ = run(capsys, "status", "--doc", "doc-0002", "--data", ingested_dir)
    assert code == 0
    records = [json.loads(line) for line in out.splitlines()]
    assert records and all(r["doc_id"] == "doc-0002" for r in records)


def test_search_output_is_schema_valid_and_deterministic(ingested_dir, capsys):
    query = DOCS[0].title.split()[0].lower()
    code, out, _ = run(capsys, "search", query, "--k", "5", "--data", ingested_dir)
    assert code == 0
    payload = json.loads(out)
    validate(payload, load_schema("search"))
    assert payload["query"] == query
    assert payload["mode"] == "keyword"
    scores = [r["score"] for r in payload["results"]]
    assert scores == sorted(scores, reverse=True)

    code, out2, _ = run(capsys, "search", query, "--k", "5", "--data", ingested_dir)
    assert code == 0
    assert out2 == out


def test_search_rejects_empty_query(ingested_dir, capsys):
    code, _, err = run(capsys, "search", "", "--data", ingested_dir)
    assert code == 1
    assert "empty query" in err


def test_search_rejects_unknown_mode(ingested_dir, capsys):
    code, _, err = run(capsys, "search", "indexing", "--mode", "psychic", "--data", ingested_dir)
    assert code == 1
    assert "unknown mode" in err


def test_experts_output_is_schema_valid(ingested_dir, capsys):
    code, out, _ = run(capsys, "experts", "retrieval indices", "--k", "5", "--data", ingested_dir)
    assert code == 0
    payload = json.loads(out)
    validate(payload, load_schema("experts"))
    assert all(e["supporting_docs"] for e in payload["experts"])


def test_recommend_for_tagged_user(ingested_dir, capsys):
    store = UserStore(ingested_dir)
    store.add_tag("alice", "indexing", DOCS[0].id)

    code, out, _ = run(capsys, "recommend", "alice", "--k", "5", "--data", ingested_dir)
    assert code == 0
    payload = json.loads(out)
    validate(payload, load_schema("recommendations"))
    assert payload["user_id"] == "alice"
    assert [t["tag_name"] for t in payload["tags"]] == ["indexing"]


def test_recommend_unknown_user_exits_1(ingested_dir, capsys):
    code, _, err = run(capsys, "recommend", "nobody", "--data", ingested_dir)
    assert code == 1
    assert "unknown user" in err


def test_stats_counts_corpus_and_tickets(ingested_dir, capsys):
    code, out, _ = run(capsys, "stats", "--data", ingested_dir)
    assert code == 0
    payload = json.loads(out)
    assert payload["documents"] == len(DOCS) + 1
    assert payload["tickets"]["complete"] == len(DOCS) + 1
    assert payload["kg"]["node_kinds"]["document"] == len(DOCS) + 1


def test_index_rebuilds_derived_stores(tmp_path, capsys):
    data = tmp_path / "navdata"
    corpus_file = write_corpus(tmp_path, DOCS)
    assert run(capsys, "ingest", corpus_file, "--data", str(data))[0] == 0
    query = DOCS[1].title.split()[0].lower()
    code, before, _ = run(capsys, "search", query, "--data", str(data))
    assert code == 0

    (data / "keyword.idx").unlink()
    (data / "graph.jsonl").unlink()
    code, out, _ = run(capsys, "index", "--data", str(data))
    assert code == 0
    summary = json.loads(out)
    assert summary["documents"] == len(DOCS)
    assert summary["reindexed"] == len(DOCS)

    code, after, _ = run(capsys, "search", query, "--data", str(data))
    assert code == 0
    assert after == before


def test_config_file_controls_defaults_and_storage(tmp_path, capsys, monkeypatch):
    store_dir = tmp_path / "configured-store"
    config = tmp_path / "nav.conf"
    config.write_text(
        f"storage.dir = {store_dir}\nsearch.default_k = 3\n", encoding="utf-8"
    )
    corpus_file = write_corpus(tmp_path, DOCS[:4])
    assert run(capsys, "ingest", corpus_file, "--config", str(config))[0] == 0
    assert (store_dir / "documents.jsonl").exists()

    query = DOCS[0].title.split()[0].lower()
    code, out, _ = run(capsys, "search", query, "--config", str(config))
    assert code == 0
    assert json.loads(out)["k"] == 3

    monkeypatch.setenv("NAV_CONFIG", str(config))
    code, out, _ = run(capsys, "stats")
    assert code == 0
    assert json.loads(out)["documents"] == 4


def test_data_flag_overrides_configured_storage(tmp_path, capsys):
    config = tmp_path / "nav.conf"
    config.write_text(f"storage.dir = {tmp_path / 'ignored'}\n", encoding="utf-8")
    data = tmp_path / "explicit"
    corpus_file = write_corpus(tmp_path, DOCS[:2])
    assert run(capsys, "ingest", corpus_file, "--config", str(config), "--data", str(data))[0] == 0
    assert (data / "documents.jsonl").exists()
    assert not (tmp_path / "ignored").exists()


def test_bad_config_exits_2(tmp_path, capsys):
    config = tmp_path / "nav.conf"
    config.write_text("search.defualt_k = 3\n", encoding="utf-8")
    code, _, err = run(capsys, "stats", "--config", str(config))
    assert code == 2
    assert "config error" in err
