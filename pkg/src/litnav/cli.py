"""Operator command line.

Verbs::

    nav ingest FILE [--workers N]    validate + ingest a JSONL batch, persist results
    nav status [--doc ID]            ticket outcomes, one JSON object per line
    nav index                        rebuild every derived store from documents.jsonl
    nav search QUERY [...]           run a search exactly as /v1/search would
    nav experts QUERY [--k N]        rank authors for a topic query
    nav recommend USER [--k N]       per-tag recommendations for a user
    nav stats                        corpus / index / user-store counters
    nav serve [--port P] [--host H]  run the HTTP API

Every verb accepts ``--config FILE`` (falling back to the NAV_CONFIG
environment variable, then to built-in defaults) and ``--data DIR`` to
override the configured storage directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Callable, Sequence

from .config import ConfigError, Settings, load_config
from .service import ApiError, Navigator, create_app, parse_jsonl_lines
from .workspace import Workspace, build_stores, make_ingestor


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nav", description="Literature navigator operator commands."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def verb(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="FILE", help="config file (key=value lines)")
        p.add_argument("--data", metavar="DIR", help="override the storage directory")
        return p

    p = verb("ingest", "Validate and ingest a JSONL document batch.")
    p.add_argument("file", metavar="FILE", help="JSONL file, one document per line")
    p.add_argument("--workers", type=int, help="pipeline worker threads")

    p = verb("status", "Print ticket outcomes, one JSON object per line.")
    p.add_argument("--doc", metavar="ID", help="only tickets for this document id")

    verb("index", "Rebuild keyword/vector/graph stores from documents.jsonl.")

    p = verb("search", "Search the corpus.")
    p.add_argument("query", metavar="QUERY")
    p.add_argument("--mode", default="keyword", help="keyword, vector, or hybrid")
    p.add_argument(
        "--granularity", default="document", help="document, chunk, or sentence"
    )
    p.add_argument("--k", type=int, help="number of results")

    p = verb("experts", "Rank authors for a topic query.")
    p.add_argument("query", metavar="QUERY")
    p.add_argument("--k", type=int, help="number of authors")

    p = verb("recommend", "Print per-tag recommendations for a user.")
    p.add_argument("user", metavar="USER")
    p.add_argument("--k", type=int, default=10, help="results per tag")

    verb("stats", "Print corpus, index, and user-store counters.")

    p = verb("serve", "Run the HTTP API.")
    p.add_argument("--port", type=int, help="listen port")
    p.add_argument("--host", help="listen address")

    return parser


def _settings(args: argparse.Namespace) -> Settings:
    settings = load_config(args.config)
    if args.data:
        settings = dataclasses.replace(settings, storage_dir=args.data)
    return settings


def _navigator(args: argparse.Namespace) -> Navigator:
    settings = _settings(args)
    ws = Workspace.open(settings)
    return Navigator(ws.load(), ws.user_store(), settings, workspace=ws)


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_ingest(args: argparse.Namespace) -> int:
    settings = _settings(args)
    path = Path(args.file)
    if not path.is_file():
        print(f"nav ingest: no such file: {path}", file=sys.stderr)
        return 2
    ws = Workspace.open(settings)
    stores = ws.load()
    ingestor = make_ingestor(stores, settings, workers=args.workers)
    records, rejected = parse_jsonl_lines(path.read_text(encoding="utf-8"))
    tickets, invalid = ingestor.submit_records(records)
    rejected.extend({"line": r.line, "error": r.error} for r in invalid)
    rejected.sort(key=lambda r: r["line"])
    ingestor.pipeline.drain()

    ticket_records = [t.to_record() for t in ingestor.pipeline.tickets()]
    ws.save(stores)
    ws.append_tickets(ticket_records)

    for ticket in tickets:
        print(
            json.dumps(
                {
                    "doc_id": ticket.doc_id,
                    "version": ticket.doc_version,
                    "status": ticket.status.value,
                },
                sort_keys=True,
            )
        )
    for reject in rejected:
        print(json.dumps(reject, sort_keys=True))
    complete = sum(1 for t in tickets if t.status.value == "complete")
    print(
        f"ingested {complete}/{len(tickets)} documents, {len(rejected)} rejected lines",
        file=sys.stderr,
    )
    return 0 if complete == len(tickets) and not rejected else 1


def cmd_status(args: argparse.Namespace) -> int:
    ws = Workspace.open(_settings(args))
    for record in ws.tickets():
        if args.doc is None or record["doc_id"] == args.doc:
            print(json.dumps(record, sort_keys=True))
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    settings = _settings(args)
    ws = Workspace.open(settings)
    docs = sorted(ws.load().documents.all(), key=lambda d: d.id)
    stores = build_stores(settings)
    ingestor = make_ingestor(stores, settings)
    tickets = ingestor.ingest(docs)
    ws.save(stores)
    _emit(
        {
            "documents": len(docs),
            "reindexed": sum(1 for t in tickets if t.status.value == "complete"),
            "annotations": len(stores.annotations.snapshot()),
        }
    )
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    nav = _navigator(args)
    _emit(nav.search(args.query, mode=args.mode, granularity=args.granularity, k=args.k))
    return 0


def cmd_experts(args: argparse.Namespace) -> int:
    nav = _navigator(args)
    _emit(nav.experts(args.query, k=args.k))
    return 0


def cmd_recommend(args: argparse.Namespace) -> int:
    nav = _navigator(args)
    _emit(nav.recommendations(args.user, k=args.k))
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    _emit(_navigator(args).stats())
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    settings = _settings(args)
    nav = _navigator(args)
    uvicorn.run(
        create_app(nav),
        host=args.host or settings.service_host,
        port=args.port or settings.service_port,
        log_level="warning",
    )
    return 0


HANDLERS: dict[str, Callable[[argparse.Namespace], int]] = {
    "ingest": cmd_ingest,
    "status": cmd_status,
    "index": cmd_index,
    "search": cmd_search,
    "experts": cmd_experts,
    "recommend": cmd_recommend,
    "stats": cmd_stats,
    "serve": cmd_serve,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"nav: config error: {exc}", file=sys.stderr)
        return 2
    except ApiError as exc:
        print(f"nav: {exc.message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
