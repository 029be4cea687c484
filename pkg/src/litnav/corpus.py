"""Canonical document model, sentence/chunk segmentation, and standoff annotations."""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field as dc_field, replace
from datetime import date, datetime, timezone
from enum import Enum
from typing import Iterable, Iterator


class Source(str, Enum):
    ARXIV = "arxiv"
    OPENREVIEW = "openreview"
    BLOG = "blog"
    OTHER = "other"


class Field(str, Enum):
    """Document fields that annotations and spans may reference."""

    TITLE = "title"
    ABSTRACT = "abstract"
    AUTHORS = "authors"
    BODY = "body"


class AnnotationKind(str, Enum):
    CONCEPT_MENTION = "concept_mention"
    CONCEPT_LINK = "concept_link"
    CITATION_MARKER = "citation_marker"
    EMBEDDING_REF = "embedding_ref"


class DocumentError(ValueError):
    """Base class for document validation failures."""


class MissingField(DocumentError):
    def __init__(self, name: str):
        super().__init__(f"missing required field: {name}")
        self.name = name


class InvalidDate(DocumentError):
    pass


class EmptyTitle(DocumentError):
    pass


class InvalidField(DocumentError):
    def __init__(self, name: str, reason: str):
        super().__init__(f"invalid field {name}: {reason}")
        self.name = name
        self.reason = reason


class VersionMismatch(ValueError):
    pass


class SpanOutOfBounds(ValueError):
    pass


class InvalidSize(ValueError):
    pass


# Separator used to render the authors list as one annotatable text field.
AUTHORS_JOIN = ", "

_WS_RUN = re.compile(r"\s+")


def _collapse_ws(text: str) -> str:
    return _WS_RUN.sub(" ", text).strip()


@dataclass(frozen=True)
class Document:
    """One catalog record. Immutable after validation; safe to share across threads."""

    id: str
    title: str
    authors: tuple[str, ...]
    published_at: date
    version: int = 1
    source: Source = Source.OTHER
    abstract: str = ""
    body: str | None = None
    references_raw: str | None = None
    categories: tuple[str, ...] = ()
    citation_count: int = 0
    url: str | None = None

    def field_text(self, field: Field) -> str:
        """Text of the referenced field; authors render joined by AUTHORS_JOIN."""
        if field is Field.TITLE:
            return self.title
        if field is Field.ABSTRACT:
            return self.abstract
        if field is Field.AUTHORS:
            return AUTHORS_JOIN.join(self.authors)
        if field is Field.BODY:
            return self.body or ""
        raise ValueError(f"unknown field: {field}")

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "version": self.version,
            "source": self.source.value,
            "title": self.title,
            "abstract": self.abstract,
            "authors": list(self.authors),
            "published_at": self.published_at.isoformat(),
            "categories": list(self.categories),
            "citation_count": self.citation_count,
        }
        if self.body is not None:
            rec["body"] = self.body
        if self.references_raw is not None:
            rec["references_raw"] = self.references_raw
        if self.url is not None:
            rec["url"] = self.url
        return rec


def _parse_date(value) -> date:
    if isinstance(value, date) and not isinstance(value, datetime):
        return value
    if isinstance(value, datetime):
        return value.date()
    if isinstance(value, str):
        try:
            return date.fromisoformat(value[:10]) if "T" in value else date.fromisoformat(value)
        except ValueError as exc:
            raise InvalidDate(f"not an ISO-8601 date: {value!r}") from exc
    raise InvalidDate(f"not a date: {value!r}")


def validate_document(raw: dict, *, now: date | None = None) -> Document:
    """Validate one ingest record and return an immutable Document.

    Whitespace runs are collapsed in title and author names only; the body is
    preserved verbatim. Raises MissingField, InvalidDate, EmptyTitle, or
    InvalidField on invariant violations.
    """
    for name in ("id", "title", "authors", "published_at"):
        if name not in raw or raw[name] is None:
            raise MissingField(name)

    doc_id = str(raw["id"]).strip()
    if not doc_id:
        raise InvalidField("id", "must be non-empty")

    title = _collapse_ws(str(raw["title"]))
    if not title:
        raise EmptyTitle(f"document {doc_id!r} has an empty title")

    authors_raw = raw["authors"]
    if isinstance(authors_raw, str):
        raise InvalidField("authors", "must be a list of names")
    authors = tuple(_collapse_ws(str(a)) for a in authors_raw)
    if any(not a for a in authors):
        raise InvalidField("authors", "author names must be non-empty")

    published = _parse_date(raw["published_at"])
    today = now or datetime.now(timezone.utc).date()
    if published > today:
        raise InvalidDate(f"published_at {published.isoformat()} is in the future")

    version = int(raw.get("version", 1))
    if version < 1:
        raise InvalidField("version", "must be >= 1")

    citation_count = int(raw.get("citation_count", 0))
    if citation_count < 0:
        raise InvalidField("citation_count", "must be non-negative")

    try:
        source = Source(raw.get("source", "other"))
    except ValueError:
        raise InvalidField("source", f"unknown source {raw.get('source')!r}")

    body = raw.get("body")
    refs = raw.get("references_raw")
    url = raw.get("url")
    return Document(
        id=doc_id,
        version=version,
        source=source,
        title=title,
        abstract=str(raw.get("abstract", "")),
        authors=authors,
        body=str(body) if body is not None else None,
        references_raw=str(refs) if refs is not None else None,
        published_at=published,
        categories=tuple(str(c) for c in raw.get("categories", ())),
        citation_count=citation_count,
        url=str(url) if url is not None else None,
    )


@dataclass(frozen=True)
class SentenceSpan:
    doc_id: str
    field: Field
    start_char: int
    end_char: int
    ordinal: int


@dataclass(frozen=True)
class ChunkSpan:
    doc_id: str
    field: Field
    start_char: int
    end_char: int
    ordinal: int
    sentence_ordinals: range


# Tokens before a period that never end a sentence.
ABBREVIATIONS = ("et al", "e.g", "i.e", "fig", "eq", "vs", "cf")

_DECIMAL = re.compile(r"^\d+(\.\d+)?$")


def _is_boundary(text: str, i: int) -> bool:
    """True if the terminator at text[i] ends a sentence.

    Rule: '.', '!' or '?' followed by whitespace and an uppercase letter or
    digit starts a new sentence, unless the token before a period is a single
    letter, a bundled abbreviation, or a decimal number.
    """
    ch = text[i]
    j = i + 1
    if j >= len(text) or not text[j].isspace():
        return False
    while j < len(text) and text[j].isspace():
        j += 1
    if j >= len(text) or not (text[j].isupper() or text[j].isdigit()):
        return False
    if ch != ".":
        return True
    # Inspect the token immediately before the period.
    k = i
    while k > 0 and not text[k - 1].isspace():
        k -= 1
    token = text[k:i]
    if len(token) == 1 and token.isalpha():
        return False
    if _DECIMAL.match(token):
        return False
    prefix = text[:i].lower()
    for abbr in ABBREVIATIONS:
        if prefix.endswith(abbr):
            before = i - len(abbr)
            if before == 0 or not (text[before - 1].isalnum()):
                return False
    return True


def segment_sentences(
    text: str, *, doc_id: str = "", field: Field = Field.BODY
) -> list[SentenceSpan]:
    """Split one field's text into ordered, whitespace-trimmed sentence spans."""
    if not text:
        return []
    breaks = [i + 1 for i, ch in enumerate(text) if ch in ".!?" and _is_boundary(text, i)]
    pieces = []
    prev = 0
    for b in breaks:
        pieces.append((prev, b))
        prev = b
    pieces.append((prev, len(text)))

    spans: list[SentenceSpan] = []
    for start, end in pieces:
        while start < end and text[start].isspace():
            start += 1
        while end > start and text[end - 1].isspace():
            end -= 1
        if start < end:
            spans.append(SentenceSpan(doc_id, field, start, end, len(spans)))
    return spans


def chunk_sentences(spans: list[SentenceSpan], size: int = 10) -> list[ChunkSpan]:
    """Group consecutive sentences into chunks of `size`; the last may be shorter."""
    if size < 1:
        raise InvalidSize(f"chunk size must be >= 1, got {size}")
    chunks: list[ChunkSpan] = []
    for i in range(0, len(spans), size):
        group = spans[i : i + size]
        chunks.append(
            ChunkSpan(
                doc_id=group[0].doc_id,
                field=group[0].field,
                start_char=group[0].start_char,
                end_char=group[-1].end_char,
                ordinal=len(chunks),
                sentence_ordinals=range(group[0].ordinal, group[-1].ordinal + 1),
            )
        )
    return chunks


@dataclass(frozen=True)
class StandoffAnnotation:
    """A label bound to a character span of one document field at one version."""

    doc_id: str
    doc_version: int
    field: Field
    start_char: int
    end_char: int
    kind: AnnotationKind
    payload: str
    producer_stage: str

    def key(self) -> tuple:
        # Uniqueness key: payload is excluded on purpose; one producer stage
        # emits at most one label per (kind, span) of a document version.
        return (
            self.doc_id,
            self.doc_version,
            self.kind,
            self.field,
            self.start_char,
            self.end_char,
            self.producer_stage,
        )

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "doc_version": self.doc_version,
            "field": self.field.value,
            "start_char": self.start_char,
            "end_char": self.end_char,
            "kind": self.kind.value,
            "payload": self.payload,
            "producer_stage": self.producer_stage,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "StandoffAnnotation":
        return cls(
            doc_id=rec["doc_id"],
            doc_version=int(rec["doc_version"]),
            field=Field(rec["field"]),
            start_char=int(rec["start_char"]),
            end_char=int(rec["end_char"]),
            kind=AnnotationKind(rec["kind"]),
            payload=str(rec["payload"]),
            producer_stage=rec["producer_stage"],
        )


def resolve_annotation(doc: Document, ann: StandoffAnnotation) -> str:
    """Return the exact substring the annotation labels."""
    if ann.doc_version != doc.version:
        raise VersionMismatch(
            f"annotation targets version {ann.doc_version}, document is at {doc.version}"
        )
    text = doc.field_text(ann.field)
    if not (0 <= ann.start_char < ann.end_char <= len(text)):
        raise SpanOutOfBounds(
            f"span ({ann.start_char}, {ann.end_char}) outside field "
            f"{ann.field.value!r} of length {len(text)}"
        )
    return text[ann.start_char : ann.end_char]


def resolve_span(doc: Document, field: Field, start: int, end: int) -> str:
    text = doc.field_text(field)
    if not (0 <= start < end <= len(text)):
        raise SpanOutOfBounds(f"span ({start}, {end}) outside field of length {len(text)}")
    return text[start:end]


class AnnotationStore:
    """Append-only annotation set, deduplicated on the uniqueness key.

    Single writer, many readers: reads return snapshots, all methods take the
    internal lock, and stored annotations are immutable.
    """

    def __init__(self):
        self._by_key: dict[tuple, StandoffAnnotation] = {}
        self._lock = threading.Lock()

    def add(self, ann: StandoffAnnotation) -> bool:
        """Insert one annotation; returns False for a duplicate key (no-op)."""
        with self._lock:
            key = ann.key()
            if key in self._by_key:
                return False
            self._by_key[key] = ann
            return True

    def add_all(self, anns: Iterable[StandoffAnnotation]) -> int:
        return sum(1 for a in anns if self.add(a))

    def for_doc(
        self,
        doc_id: str,
        version: int | None = None,
        kind: AnnotationKind | None = None,
    ) -> list[StandoffAnnotation]:
        with self._lock:
            out = [
                a
                for a in self._by_key.values()
                if a.doc_id == doc_id
                and (version is None or a.doc_version == version)
                and (kind is None or a.kind == kind)
            ]
        out.sort(key=lambda a: (a.doc_version, a.field.value, a.start_char, a.kind.value))
        return out

    def by_kind(self, kind: AnnotationKind) -> list[StandoffAnnotation]:
        with self._lock:
            return [a for a in self._by_key.values() if a.kind == kind]

    def snapshot(self) -> frozenset[StandoffAnnotation]:
        with self._lock:
            return frozenset(self._by_key.values())

    def __len__(self) -> int:
        with self._lock:
            return len(self._by_key)

    def export_jsonl(self) -> str:
        anns = sorted(self.snapshot(), key=lambda a: a.key())
        return "".join(json.dumps(a.to_record(), sort_keys=True) + "\n" for a in anns)

    def load_jsonl(self, text: str) -> int:
        count = 0
        for line in text.splitlines():
            line = line.strip()
            if line:
                count += int(self.add(StandoffAnnotation.from_record(json.loads(line))))
        return count


class DocumentStore:
    """Thread-safe catalog keyed by document id; keeps the highest version only."""

    def __init__(self):
        self._docs: dict[str, Document] = {}
        self._lock = threading.Lock()

    def put(self, doc: Document) -> bool:
        """Store doc unless a same-or-newer version is already present."""
        with self._lock:
            current = self._docs.get(doc.id)
            if current is not None and current.version >= doc.version:
                return False
            self._docs[doc.id] = doc
            return True

    def get(self, doc_id: str) -> Document | None:
        with self._lock:
            return self._docs.get(doc_id)

    def ids(self) -> list[str]:
        with self._lock:
            return sorted(self._docs)

    def all(self) -> list[Document]:
        with self._lock:
            return [self._docs[k] for k in sorted(self._docs)]

    def __len__(self) -> int:
        with self._lock:
            return len(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        with self._lock:
            return doc_id in self._docs


def read_jsonl_documents(text: str) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) pairs from UTF-8 JSONL ingest input."""
    for i, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if line:
            yield i, json.loads(line)


def documents_to_jsonl(docs: Iterable[Document]) -> str:
    return "".join(json.dumps(d.to_record(), sort_keys=True) + "\n" for d in docs)
