"""Reference-section extraction, citation parsing, and catalog linking.

The parser is deliberately rule-based: bibliography entries are split on
index markers, the author block is the text up to the first period ending a
name-like token run, the title is the longest sentence-like segment that
follows, and linking works by normalized edit distance over a rare-token
prefiltered candidate set.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from datetime import date
from typing import Iterable

from .corpus import Document

LINK_THRESHOLD = 0.90
YEAR_TOLERANCE = 1
RARE_TOKEN_DF = 100
MIN_REFERENCE_CHARS = 20


class UnparseableReference(ValueError):
    pass


@dataclass(frozen=True)
class RawReference:
    doc_id: str
    text: str
    ordinal: int


@dataclass(frozen=True)
class CitationRecord:
    id: str
    source_doc_id: str
    authors: tuple[str, ...]
    title: str
    year: int | None = None
    venue: str | None = None
    linked_doc_id: str | None = None
    link_similarity: float = 0.0

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "source_doc_id": self.source_doc_id,
            "authors": list(self.authors),
            "title": self.title,
            "year": self.year,
            "venue": self.venue,
            "linked_doc_id": self.linked_doc_id,
            "link_similarity": self.link_similarity,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CitationRecord":
        return cls(
            id=rec["id"],
            source_doc_id=rec["source_doc_id"],
            authors=tuple(rec.get("authors", ())),
            title=rec["title"],
            year=rec.get("year"),
            venue=rec.get("venue"),
            linked_doc_id=rec.get("linked_doc_id"),
            link_similarity=rec.get("link_similarity", 0.0),
        )


# --- reference-section extraction --------------------------------------------

_HEADING = re.compile(
    r"^[#\s]*(?:[0-9]+[.)]?\s*|[ivxlc]+[.)]\s*)?(?:references|bibliography)\s*:?\s*$",
    re.IGNORECASE | re.MULTILINE,
)


def extract_reference_section(body: str) -> tuple[int, int] | None:
    """Span from after the last references/bibliography heading to end of body."""
    last = None
    for match in _HEADING.finditer(body):
        last = match
    if last is None:
        return None
    start = last.end()
    if start < len(body) and body[start] == "\n":
        start += 1
    return (start, len(body))


# --- splitting ----------------------------------------------------------------

_MARKER_STYLES = (
    re.compile(r"^[ \t]*\[\d+\]", re.MULTILINE),
    re.compile(r"^[ \t]*\d+\.\s", re.MULTILINE),
    re.compile(r"^[A-Z][A-Za-z'\-]+(?:,\s|\s+and\s)", re.MULTILINE),
)


def split_references(section: str, *, doc_id: str = "") -> list[RawReference]:
    """Split a reference section into entries; short fragments are dropped.

    Marker styles are tried in order — bracketed index, bare numeric index,
    author-year line start — with blank-line separation as the fallback.
    """
    if not section.strip():
        return []
    pieces: list[str] | None = None
    for style in _MARKER_STYLES:
        starts = [m.start() for m in style.finditer(section)]
        if starts:
            pieces = [
                section[s:e] for s, e in zip(starts, starts[1:] + [len(section)])
            ]
            break
    if pieces is None:
        pieces = re.split(r"\n\s*\n", section)
    refs = []
    for ordinal, piece in enumerate(pieces):
        text = " ".join(piece.split())
        if len(text) >= MIN_REFERENCE_CHARS:
            refs.append(RawReference(doc_id=doc_id, text=text, ordinal=ordinal))
    return refs


# --- parsing -------------------------------------------------------------------

_LEADING_MARKER = re.compile(r"^\s*(?:\[\d+\]|\d+\.)\s*")
_YEAR_TOKEN = re.compile(r"(?<!\d)(19\d\d|20\d\d)(?!\d)")
_PAREN_YEAR = re.compile(r"\(\s*(?:19|20)\d\d[a-z]?\s*\)")

# Lowercase words that legitimately appear inside author lists.
_NAME_PARTICLES = frozenset(
    {"and", "et", "al", "van", "von", "de", "der", "den", "la", "le", "di", "da", "del"}
)

_VENUE_MARKERS = ("in ", "proceedings", "journal", "arxiv", "acm ", "ieee ", "advances in")


def _name_like(block: str) -> bool:
    """True if every alphabetic word is capitalized or a known name particle."""
    saw_name = False
    for word in block.replace(",", " ").replace(";", " ").split():
        head = word[0]
        if head.isupper():
            saw_name = True
        elif head.isalpha() and word.rstrip(".").lower() not in _NAME_PARTICLES:
            return False
    return saw_name


_INITIAL_WORD = re.compile(r"^(?:[A-Z]\.)+,?$|^[A-Z]\.?,?$")
_TRAILING_COMMA_INITIAL = re.compile(r",\s*[A-Z]$")


def _author_list_continues(rest: str) -> bool:
    """After 'Surname, X.' — do the next words still read like author names?"""
    words = rest.split()
    if not words:
        return False
    w1 = words[0]
    if _PAREN_YEAR.match(w1):
        return False  # "(2019)" after an initial closes an author-year list
    if (
        w1.endswith((",", ";"))
        or _INITIAL_WORD.match(w1)
        or w1.rstrip(".").lower() in ("and", "et")
    ):
        return True
    if len(words) > 1:
        w2 = words[1]
        if (
            w2.endswith((",", ";"))
            or _INITIAL_WORD.match(w2)
            or w2.rstrip(".").lower() in ("and", "et")
        ):
            return True
    return False


def _author_block_end(text: str) -> int | None:
    """Index of the period ending the author block, or None if there is none."""
    for i, ch in enumerate(text):
        if ch != ".":
            continue
        k = i
        while k > 0 and not text[k - 1].isspace():
            k -= 1
        token = text[k:i]
        followed_by_space = i + 1 < len(text) and text[i + 1].isspace()
        if len(token) == 1 and token.isalpha() and token.isupper():
            # An initial. In surname-first lists ("Manning, C.") the final
            # initial's period doubles as the block terminator when the text
            # that follows stops reading like names.
            block = text[:i]
            if (
                followed_by_space
                and _TRAILING_COMMA_INITIAL.search(block)
                and _name_like(block)
                and not _author_list_continues(text[i + 1 :].strip())
            ):
                rest = text[i + 1 :].strip()
                if len(rest.split()) >= 2:
                    return i
            continue
        if token.rstrip(".").lower() == "et":
            continue
        if not followed_by_space and i + 1 < len(text):
            continue  # mid-token period ("arXiv:1301.3781")
        block = text[:i]
        if not _name_like(block):
            return None
        rest = text[i + 1 :].strip()
        if len(rest.split()) < 2:
            return None
        return i
    return None


def _split_segments(text: str) -> list[str]:
    """Sentence-like segments: split on periods not belonging to initials."""
    breaks = []
    for i, ch in enumerate(text):
        if ch != ".":
            continue
        k = i
        while k > 0 and not text[k - 1].isspace():
            k -= 1
        token = text[k:i]
        if len(token) == 1 and token.isalpha() and token.isupper():
            continue
        if token.rstrip(".").lower() == "et":
            continue
        if i + 1 < len(text) and not text[i + 1].isspace():
            continue  # mid-token period ("arXiv:1301.3781")
        breaks.append(i)
    segments = []
    prev = 0
    for b in breaks + [len(text)]:
        piece = text[prev:b].strip(" .\t\n")
        if piece:
            segments.append(piece)
        prev = b + 1
    return segments


_INITIALS_CHUNK = re.compile(r"^(?:[A-Z]\.\s*)+$|^[A-Z]\.?$")


def _split_names(group: str) -> list[str]:
    """One 'and'-free author group into names.

    Comma chunks that are bare initials indicate surname-first style
    ("Devlin, J., Chang, M."), where surname and initials re-pair; otherwise
    every comma chunk is a full name ("J. Devlin, M. Chang").
    """
    chunks = [c.strip() for c in group.split(",") if c.strip()]
    if len(chunks) <= 1:
        return chunks
    if any(_INITIALS_CHUNK.match(c) for c in chunks):
        names = []
        i = 0
        while i < len(chunks):
            if (
                i + 1 < len(chunks)
                and _INITIALS_CHUNK.match(chunks[i + 1])
                and not _INITIALS_CHUNK.match(chunks[i])
            ):
                names.append(chunks[i] + ", " + chunks[i + 1])
                i += 2
            else:
                names.append(chunks[i])
                i += 1
        return names
    return chunks


def _clean_authors(block: str) -> tuple[str, ...]:
    block = _PAREN_YEAR.sub(" ", block)
    block = " ".join(block.split()).strip(" ,;")
    if not block:
        return ()
    names: list[str] = []
    for group in re.split(r";\s*|\s+and\s+", block):
        names.extend(_split_names(group))
    return tuple(n.strip(" ,;") for n in names if n.strip(" ,;"))


def parse_reference(raw: RawReference) -> CitationRecord:
    """Heuristic field extraction: authors block, then title, year, venue."""
    text = _LEADING_MARKER.sub("", raw.text).strip()
    year_match = _YEAR_TOKEN.search(text)
    year = int(year_match.group(1)) if year_match else None

    block_end = _author_block_end(text)
    if block_end is None:
        authors: tuple[str, ...] = ()
        rest = text
    else:
        authors = _clean_authors(text[:block_end])
        rest = text[block_end + 1 :].strip()

    year_str = year_match.group(1) if year_match else None
    candidates = []
    for idx, segment in enumerate(_split_segments(rest)):
        bare = segment.strip(" ,;:")
        if not re.search(r"[A-Za-z]", bare):
            continue
        if year_str and _PAREN_YEAR.sub(" ", bare).replace(year_str, "").strip(" ,;:()") == "":
            continue  # segment is only the year
        candidates.append((idx, segment))
    title_pool = [
        (idx, seg)
        for idx, seg in candidates
        if not seg.lower().startswith(_VENUE_MARKERS)
    ] or candidates
    if not title_pool:
        raise UnparseableReference(f"no title segment in {raw.text!r}")
    title_idx, title = max(title_pool, key=lambda t: (len(t[1]), -t[0]))

    tail = [seg for idx, seg in candidates if idx > title_idx]
    venue = None
    if tail:
        joined = ". ".join(tail)
        if year_str:
            joined = joined.replace(year_str, " ")
        joined = re.sub(r"\s+", " ", joined).strip(" ,;:.()")
        venue = joined or None

    current_year = date.today().year
    if year is not None and year > current_year + 1:
        year = None
    return CitationRecord(
        id=f"{raw.doc_id}#ref{raw.ordinal}",
        source_doc_id=raw.doc_id,
        authors=authors,
        title=title.strip(" ,;"),
        year=year,
        venue=venue,
    )


# --- sanitization ---------------------------------------------------------------


def normalize_title(title: str, *, casefold: bool = False) -> str:
    """Strip punctuation runs and collapse whitespace; case kept unless asked."""
    cleaned = re.sub(r"[^0-9A-Za-z\s]+", " ", title)
    cleaned = " ".join(cleaned.split())
    return cleaned.lower() if casefold else cleaned


_URL_ONLY = re.compile(r"^(?:https?://|www\.)\S+$", re.IGNORECASE)


def sanitize(
    candidate: CitationRecord, *, seen_titles: set[str] | None = None
) -> CitationRecord | None:
    """Reject junk candidates; valid records pass through unchanged.

    `seen_titles` carries normalized titles already accepted for the same
    source document, so duplicates get rejected.
    """
    title = candidate.title.strip()
    tokens = normalize_title(title).split()
    if len(tokens) < 3:
        return None
    if title.isupper() and len(tokens) <= 2:
        return None
    if _URL_ONLY.match(title):
        return None
    key = normalize_title(title)
    if seen_titles is not None:
        if key in seen_titles:
            return None
        seen_titles.add(key)
    return candidate


# --- linking ---------------------------------------------------------------------


def levenshtein(a: str, b: str) -> int:
    """Classic edit distance, two-row dynamic programming."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (ca != cb),
                )
            )
        previous = current
    return previous[-1]


def title_similarity(a: str, b: str) -> float:
    """1 − levenshtein/max(len) over normalized lowercase titles."""
    na = normalize_title(a, casefold=True)
    nb = normalize_title(b, casefold=True)
    if not na and not nb:
        return 1.0
    longest = max(len(na), len(nb))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(na, nb) / longest


@dataclass(frozen=True)
class LinkDecision:
    doc_id: str | None
    similarity: float
    candidate_count: int = 0


class TitleCatalog:
    """Read-only normalized-title index with a rare-token prefilter."""

    def __init__(
        self,
        docs: Iterable[Document],
        *,
        rare_token_df: int = RARE_TOKEN_DF,
        threshold: float = LINK_THRESHOLD,
        year_tolerance: int = YEAR_TOLERANCE,
    ):
        self.rare_token_df = rare_token_df
        self.threshold = threshold
        self.year_tolerance = year_tolerance
        self._titles: dict[str, str] = {}
        self._years: dict[str, int] = {}
        self._citations: dict[str, int] = {}
        self._token_docs: dict[str, set[str]] = {}
        for doc in docs:
            norm = normalize_title(doc.title, casefold=True)
            self._titles[doc.id] = norm
            self._years[doc.id] = doc.published_at.year
            self._citations[doc.id] = doc.citation_count
            for token in set(norm.split()):
                self._token_docs.setdefault(token, set()).add(doc.id)

    def __len__(self) -> int:
        return len(self._titles)

    def candidates(self, norm_title: str) -> set[str]:
        found: set[str] = set()
        for token in set(norm_title.split()):
            docs = self._token_docs.get(token)
            if docs is not None and len(docs) <= self.rare_token_df:
                found.update(docs)
        return found

    def link(self, record: CitationRecord) -> LinkDecision:
        """Best catalog match by title similarity, linked iff it clears the bar."""
        norm = normalize_title(record.title, casefold=True)
        pool = self.candidates(norm)
        if not pool:
            return LinkDecision(None, 0.0, 0)
        best_id = None
        best_key: tuple[float, int, str] | None = None
        best_sim = 0.0
        for doc_id in pool:
            sim = title_similarity_norm(norm, self._titles[doc_id])
            key = (-sim, -self._citations[doc_id], doc_id)
            if best_key is None or key < best_key:
                best_key = key
                best_id = doc_id
                best_sim = sim
        assert best_id is not None
        year_ok = (
            record.year is None
            or abs(record.year - self._years[best_id]) <= self.year_tolerance
        )
        if best_sim >= self.threshold and year_ok:
            return LinkDecision(best_id, best_sim, len(pool))
        return LinkDecision(None, best_sim, len(pool))


def title_similarity_norm(na: str, nb: str) -> float:
    """Similarity over already-normalized strings."""
    if na == nb:
        return 1.0
    longest = max(len(na), len(nb))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(na, nb) / longest


def link_citation(record: CitationRecord, catalog: TitleCatalog) -> CitationRecord:
    """Return the record with link fields filled from the catalog decision."""
    decision = catalog.link(record)
    return replace(
        record, linked_doc_id=decision.doc_id, link_similarity=decision.similarity
    )


def parse_bibliography(doc_id: str, section: str) -> list[CitationRecord]:
    """split → parse → sanitize for one document's reference section."""
    seen: set[str] = set()
    records = []
    for raw in split_references(section, doc_id=doc_id):
        try:
            candidate = parse_reference(raw)
        except UnparseableReference:
            continue
        record = sanitize(candidate, seen_titles=seen)
        if record is not None:
            records.append(record)
    return records
