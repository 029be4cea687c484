"""Concept recognition, linking, and the typed knowledge graph.

Recognition is exact gazetteer matching (leftmost-longest over token
boundaries) instead of a trained tagger; linking scores each candidate with a
weighted blend of string similarity and context-embedding similarity and
accepts the best candidate above a threshold. Concepts, people, and documents
live in one embedded graph store with per-relation endpoint constraints.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from typing import Iterable

from .corpus import Document, Field
from .embedding import Embedder, cosine
from .refparse import levenshtein
from .tokens import tokenize, tokenize_with_spans

DEFAULT_STRING_WEIGHT = 0.6
DEFAULT_EMBED_WEIGHT = 0.4
DEFAULT_LINK_THRESHOLD = 0.75
DEFAULT_CONTEXT_TOKENS = 20
DEFAULT_MIN_SUPPORT = 3

# Fields scanned for concept mentions, in output order.
MENTION_FIELDS = (Field.TITLE, Field.ABSTRACT, Field.BODY)


class ConceptType(str, Enum):
    METHOD = "method"
    TASK = "task"
    DATASET = "dataset"
    METRIC = "metric"
    ORGANIZATION = "organization"
    OTHER = "other"


class CreatedFrom(str, Enum):
    SEED = "seed"
    PROMOTED_CANDIDATE = "promoted_candidate"


class NodeKind(str, Enum):
    CONCEPT = "concept"
    PERSON = "person"
    DOCUMENT = "document"


class Relation(str, Enum):
    AUTHORED = "authored"
    CITES = "cites"
    MENTIONS = "mentions"
    RELATED_TO = "related_to"


class UnknownEndpoint(KeyError):
    pass


class KindConstraintViolation(ValueError):
    pass


class DuplicateConceptName(ValueError):
    pass


def concept_id(canonical_name: str) -> str:
    """Stable node id derived from the canonical name's token sequence."""
    return "concept:" + "-".join(tokenize(canonical_name))


def person_id(name: str) -> str:
    return "person:" + "-".join(tokenize(name))


def document_node_id(doc_id: str) -> str:
    return f"document:{doc_id}"


@dataclass(frozen=True)
class Concept:
    id: str
    canonical_name: str
    aliases: tuple[str, ...]
    concept_type: ConceptType
    created_from: CreatedFrom = CreatedFrom.SEED

    def phrases(self) -> tuple[str, ...]:
        return (self.canonical_name,) + self.aliases

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "canonical_name": self.canonical_name,
            "aliases": list(self.aliases),
            "concept_type": self.concept_type.value,
            "created_from": self.created_from.value,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Concept":
        return cls(
            id=rec["id"],
            canonical_name=rec["canonical_name"],
            aliases=tuple(rec.get("aliases", ())),
            concept_type=ConceptType(rec["concept_type"]),
            created_from=CreatedFrom(rec.get("created_from", "seed")),
        )


def make_concept(
    canonical_name: str,
    concept_type: ConceptType | str,
    aliases: Iterable[str] = (),
    *,
    created_from: CreatedFrom = CreatedFrom.SEED,
) -> Concept:
    alias_tuple = tuple(a.strip() for a in aliases if a.strip())
    return Concept(
        id=concept_id(canonical_name),
        canonical_name=canonical_name.strip(),
        aliases=alias_tuple,
        concept_type=ConceptType(concept_type),
        created_from=created_from,
    )


def load_gazetteer_file(path) -> list[Concept]:
    """Parse a `canonical_name<TAB>type<TAB>alias1|alias2...` concept list."""
    concepts: list[Concept] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise ValueError(f"line {lineno}: expected name<TAB>type[<TAB>aliases]")
        name, ctype = parts[0].strip(), parts[1].strip()
        aliases = parts[2].split("|") if len(parts) > 2 and parts[2] else []
        key = name.casefold()
        if key in seen:
            raise DuplicateConceptName(f"line {lineno}: {name!r} already defined")
        seen.add(key)
        concepts.append(make_concept(name, ctype, aliases))
    return concepts


def seed_concepts() -> list[Concept]:
    """The bundled curated concept list (about a thousand entries)."""
    path = resources.files("litnav").joinpath("data/concepts.tsv")
    with resources.as_file(path) as p:
        return load_gazetteer_file(p)


class Gazetteer:
    """Token-sequence phrase table over concept names and aliases.

    When two concepts claim the same phrase, the lexicographically smaller
    concept id keeps it, independent of insertion order.
    """

    def __init__(self, concepts: Iterable[Concept] = ()):
        self._phrases: dict[tuple[str, ...], str] = {}
        self.max_tokens = 0
        for concept in concepts:
            self.add(concept)

    def add(self, concept: Concept) -> None:
        for phrase in concept.phrases():
            key = tuple(tokenize(phrase))
            if not key:
                continue
            holder = self._phrases.get(key)
            if holder is None or concept.id < holder:
                self._phrases[key] = concept.id
            self.max_tokens = max(self.max_tokens, len(key))

    def lookup(self, token_key: tuple[str, ...]) -> str | None:
        return self._phrases.get(token_key)

    def __len__(self) -> int:
        return len(self._phrases)


@dataclass(frozen=True)
class Mention:
    """One recognized concept occurrence; surface is the exact span text."""

    doc_id: str
    field: Field
    start_char: int
    end_char: int
    surface: str
    gazetteer_hit: str | None = None


def recognize_text(
    text: str, gazetteer: Gazetteer, *, doc_id: str = "", field: Field = Field.BODY
) -> list[Mention]:
    """Leftmost-longest, non-overlapping gazetteer matches over one text."""
    mentions: list[Mention] = []
    if not text or not len(gazetteer):
        return mentions
    toks = tokenize_with_spans(text)
    i = 0
    n = len(toks)
    while i < n:
        hit_len = 0
        hit_id = None
        limit = min(gazetteer.max_tokens, n - i)
        for length in range(limit, 0, -1):
            key = tuple(t[0] for t in toks[i : i + length])
            found = gazetteer.lookup(key)
            if found is not None:
                hit_len, hit_id = length, found
                break
        if hit_id is None:
            i += 1
            continue
        start = toks[i][1]
        end = toks[i + hit_len - 1][2]
        mentions.append(
            Mention(
                doc_id=doc_id,
                field=field,
                start_char=start,
                end_char=end,
                surface=text[start:end],
                gazetteer_hit=hit_id,
            )
        )
        i += hit_len
    return mentions


def recognize_mentions(doc: Document, gazetteer: Gazetteer) -> list[Mention]:
    """Gazetteer mentions over title, abstract, and body, in (field, start) order."""
    mentions: list[Mention] = []
    for field in MENTION_FIELDS:
        mentions.extend(
            recognize_text(doc.field_text(field), gazetteer, doc_id=doc.id, field=field)
        )
    return mentions


@dataclass(frozen=True)
class LinkOutcome:
    mention: Mention
    linked_concept: str | None
    score: float
    string_sim: float
    embed_sim: float


def _string_similarity(surface: str, concept: Concept) -> float:
    """Best-case 1 − normalized edit distance over names and aliases."""
    s = surface.casefold()
    best = 0.0
    for phrase in concept.phrases():
        p = phrase.casefold()
        longest = max(len(s), len(p))
        if longest == 0:
            continue
        sim = 1.0 - levenshtein(s, p) / longest
        if sim > best:
            best = sim
    return best


def _context_window(text: str, start: int, end: int, window_tokens: int) -> str:
    """The mention plus up to `window_tokens` tokens on each side."""
    toks = tokenize_with_spans(text)
    if not toks:
        return text[start:end]
    first = 0
    while first < len(toks) and toks[first][2] <= start:
        first += 1
    last = first
    while last + 1 < len(toks) and toks[last + 1][1] < end:
        last += 1
    lo = max(0, first - window_tokens)
    hi = min(len(toks) - 1, last + window_tokens)
    return text[toks[lo][1] : toks[hi][2]]


def link_mention(
    mention: Mention,
    doc: Document,
    kg: "KnowledgeGraph",
    embedder: Embedder,
    *,
    window_tokens: int = DEFAULT_CONTEXT_TOKENS,
    string_weight: float = DEFAULT_STRING_WEIGHT,
    embed_weight: float = DEFAULT_EMBED_WEIGHT,
    threshold: float = DEFAULT_LINK_THRESHOLD,
) -> LinkOutcome:
    """Score candidates sharing a surface token; link the best if it clears τ.

    score = string_weight·string_sim + embed_weight·(embed_sim+1)/2, with
    embed_sim the cosine between the embedded ±window context and the
    embedded candidate canonical name. Ties prefer the smaller concept id.
    """
    surface_tokens = set(tokenize(mention.surface))
    candidates = kg.concepts_sharing_tokens(surface_tokens)
    if not candidates:
        return LinkOutcome(mention, None, 0.0, 0.0, 0.0)

    context = _context_window(
        doc.field_text(mention.field), mention.start_char, mention.end_char, window_tokens
    )
    context_vec = embedder.embed(context)

    best: tuple[float, float, float, str] | None = None
    for concept in sorted(candidates, key=lambda c: c.id):
        string_sim = _string_similarity(mention.surface, concept)
        embed_sim = cosine(context_vec, embedder.embed(concept.canonical_name))
        score = string_weight * string_sim + embed_weight * (embed_sim + 1.0) / 2.0
        if best is None or score > best[0]:
            best = (score, string_sim, embed_sim, concept.id)

    score, string_sim, embed_sim, winner = best
    linked = winner if score >= threshold else None
    return LinkOutcome(mention, linked, score, string_sim, embed_sim)


def propose_concept(
    unlinked: Iterable[Mention], min_support: int = DEFAULT_MIN_SUPPORT
) -> list[Concept]:
    """Stage new-concept candidates from repeated unlinked surfaces.

    A normalized surface becomes a candidate when seen at least `min_support`
    times across at least two distinct documents. Candidates are returned for
    review, never inserted.
    """
    groups: dict[str, list[Mention]] = {}
    for mention in unlinked:
        key = " ".join(tokenize(mention.surface))
        if key:
            groups.setdefault(key, []).append(mention)
    candidates = []
    for key in sorted(groups):
        group = groups[key]
        if len(group) >= min_support and len({m.doc_id for m in group}) >= 2:
            candidates.append(
                make_concept(key, ConceptType.OTHER, created_from=CreatedFrom.PROMOTED_CANDIDATE)
            )
    return candidates


@dataclass(frozen=True)
class KGNode:
    id: str
    kind: NodeKind
    payload: dict

    def to_record(self) -> dict:
        return {"id": self.id, "kind": self.kind.value, "payload": self.payload}

    @classmethod
    def from_record(cls, rec: dict) -> "KGNode":
        return cls(id=rec["id"], kind=NodeKind(rec["kind"]), payload=dict(rec.get("payload", {})))


@dataclass(frozen=True)
class KGEdge:
    src: str
    dst: str
    relation: Relation
    weight: float | None = None

    def key(self) -> tuple[str, str, str]:
        return (self.src, self.dst, self.relation.value)

    def to_record(self) -> dict:
        rec = {"src": self.src, "dst": self.dst, "relation": self.relation.value}
        if self.weight is not None:
            rec["weight"] = self.weight
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "KGEdge":
        return cls(
            src=rec["src"],
            dst=rec["dst"],
            relation=Relation(rec["relation"]),
            weight=rec.get("weight"),
        )


# Relations with fixed endpoint kinds; related_to is unconstrained.
_EDGE_KIND_RULES: dict[Relation, tuple[NodeKind, NodeKind]] = {
    Relation.AUTHORED: (NodeKind.PERSON, NodeKind.DOCUMENT),
    Relation.CITES: (NodeKind.DOCUMENT, NodeKind.DOCUMENT),
    Relation.MENTIONS: (NodeKind.DOCUMENT, NodeKind.CONCEPT),
}


class KnowledgeGraph:
    """Embedded typed graph: single writer, snapshot reads, stable string ids."""

    def __init__(self, concepts: Iterable[Concept] = ()):
        self._lock = threading.Lock()
        self._nodes: dict[str, KGNode] = {}
        self._edges: dict[tuple[str, str, str], KGEdge] = {}
        self._concepts: dict[str, Concept] = {}
        self._names: dict[str, str] = {}  # casefolded canonical name -> concept id
        self._gazetteer: Gazetteer | None = None
        self._token_index: dict[str, set[str]] | None = None
        for concept in concepts:
            self.upsert_concept(concept)

    # --- mutation ---------------------------------------------------------

    def upsert_concept(self, concept: Concept) -> Concept:
        """Insert a concept or merge new aliases into an existing one."""
        with self._lock:
            key = concept.canonical_name.casefold()
            owner = self._names.get(key)
            if owner is not None and owner != concept.id:
                raise DuplicateConceptName(
                    f"{concept.canonical_name!r} already names concept {owner}"
                )
            existing = self._concepts.get(concept.id)
            if existing is None:
                if concept.id in self._nodes:
                    raise KindConstraintViolation(
                        f"node {concept.id} exists with kind "
                        f"{self._nodes[concept.id].kind.value}"
                    )
                stored = concept
            else:
                if existing.canonical_name.casefold() != key:
                    raise DuplicateConceptName(
                        f"concept {concept.id} is named {existing.canonical_name!r}"
                    )
                merged = existing.aliases + tuple(
                    a
                    for a in concept.aliases
                    if a.casefold() not in {x.casefold() for x in existing.phrases()}
                )
                stored = replace(existing, aliases=merged)
            self._concepts[stored.id] = stored
            self._names[key] = stored.id
            self._nodes[stored.id] = KGNode(stored.id, NodeKind.CONCEPT, stored.to_record())
            self._gazetteer = None
            self._token_index = None
            return stored

    def upsert_node(self, node: KGNode) -> None:
        """Idempotent node insert; concept payloads merge via upsert_concept."""
        if node.kind is NodeKind.CONCEPT:
            self.upsert_concept(Concept.from_record({**node.payload, "id": node.id}))
            return
        with self._lock:
            existing = self._nodes.get(node.id)
            if existing is not None and existing.kind is not node.kind:
                raise KindConstraintViolation(
                    f"node {node.id} exists with kind {existing.kind.value}"
                )
            self._nodes[node.id] = node

    def add_edge(self, edge: KGEdge) -> bool:
        """Insert one edge; False when (src, dst, relation) already exists."""
        with self._lock:
            src = self._nodes.get(edge.src)
            dst = self._nodes.get(edge.dst)
            if src is None:
                raise UnknownEndpoint(edge.src)
            if dst is None:
                raise UnknownEndpoint(edge.dst)
            rule = _EDGE_KIND_RULES.get(edge.relation)
            if rule is not None and (src.kind, dst.kind) != rule:
                raise KindConstraintViolation(
                    f"{edge.relation.value} must be {rule[0].value}->{rule[1].value}, "
                    f"got {src.kind.value}->{dst.kind.value}"
                )
            key = edge.key()
            if key in self._edges:
                return False
            self._edges[key] = edge
            return True

    def add_document(self, doc: Document) -> None:
        """Document node, author person nodes, and authored edges in one step."""
        self.upsert_node(
            KGNode(
                document_node_id(doc.id),
                NodeKind.DOCUMENT,
                {"doc_id": doc.id, "title": doc.title, "published_at": doc.published_at.isoformat()},
            )
        )
        for author in doc.authors:
            pid = person_id(author)
            self.upsert_node(KGNode(pid, NodeKind.PERSON, {"name": author}))
            self.add_edge(KGEdge(pid, document_node_id(doc.id), Relation.AUTHORED))

    # --- reads ---------------------------------------------------------------

    def node(self, node_id: str) -> KGNode | None:
        with self._lock:
            return self._nodes.get(node_id)

    def nodes(self) -> list[KGNode]:
        with self._lock:
            return sorted(self._nodes.values(), key=lambda n: n.id)

    def edges(self) -> list[KGEdge]:
        with self._lock:
            return [self._edges[k] for k in sorted(self._edges)]

    def concept(self, cid: str) -> Concept | None:
        with self._lock:
            return self._concepts.get(cid)

    def concepts(self) -> list[Concept]:
        with self._lock:
            return sorted(self._concepts.values(), key=lambda c: c.id)

    def __len__(self) -> int:
        with self._lock:
            return len(self._nodes)

    def edge_count(self) -> int:
        with self._lock:
            return len(self._edges)

    def gazetteer(self) -> Gazetteer:
        with self._lock:
            if self._gazetteer is None:
                self._gazetteer = Gazetteer(self._concepts.values())
            return self._gazetteer

    def concepts_sharing_tokens(self, tokens: set[str]) -> list[Concept]:
        """Concepts whose names or aliases share at least one token."""
        with self._lock:
            if self._token_index is None:
                index: dict[str, set[str]] = {}
                for concept in self._concepts.values():
                    for phrase in concept.phrases():
                        for token in tokenize(phrase):
                            index.setdefault(token, set()).add(concept.id)
                self._token_index = index
            ids: set[str] = set()
            for token in tokens:
                ids.update(self._token_index.get(token, ()))
            return [self._concepts[cid] for cid in ids]

    def concept_type_distribution(self) -> dict[ConceptType, int]:
        """Exact concept counts per type; all types present, zero-filled."""
        counts = {ctype: 0 for ctype in ConceptType}
        with self._lock:
            for concept in self._concepts.values():
                counts[concept.concept_type] += 1
        return counts

    def validate(self) -> None:
        """Full-scan constraint check; raises on the first violation."""
        with self._lock:
            names_seen: set[str] = set()
            for concept in self._concepts.values():
                key = concept.canonical_name.casefold()
                if key in names_seen:
                    raise DuplicateConceptName(concept.canonical_name)
                names_seen.add(key)
                if any(not a for a in concept.aliases):
                    raise ValueError(f"empty alias on {concept.id}")
            for edge in self._edges.values():
                src = self._nodes.get(edge.src)
                dst = self._nodes.get(edge.dst)
                if src is None or dst is None:
                    raise UnknownEndpoint(edge.src if src is None else edge.dst)
                rule = _EDGE_KIND_RULES.get(edge.relation)
                if rule is not None and (src.kind, dst.kind) != rule:
                    raise KindConstraintViolation(edge.relation.value)

    # --- persistence ----------------------------------------------------------

    def export_jsonl(self) -> str:
        """Nodes (sorted by id) then edges (sorted by key), one record per line."""
        lines = [json.dumps(n.to_record(), sort_keys=True) for n in self.nodes()]
        lines += [json.dumps(e.to_record(), sort_keys=True) for e in self.edges()]
        return "".join(line + "\n" for line in lines)

    def load_jsonl(self, text: str) -> int:
        count = 0
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "relation" in rec:
                count += int(self.add_edge(KGEdge.from_record(rec)))
            else:
                self.upsert_node(KGNode.from_record(rec))
                count += 1
        return count


def find_concepts_in_query(q: str, kg: KnowledgeGraph) -> list[str]:
    """Concept ids recognized in the query, deduplicated in first-seen order."""
    seen: set[str] = set()
    ordered: list[str] = []
    for mention in recognize_text(q, kg.gazetteer()):
        cid = mention.gazetteer_hit
        if cid is not None and cid not in seen:
            seen.add(cid)
            ordered.append(cid)
    return ordered
