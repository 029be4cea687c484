"""Document-centric expert retrieval.

Documents are retrieved for a query from the document-granularity vector
index; each retrieved document casts an exponentially rank-decayed vote for
its authors, and prolific authors are damped so that a large corpus footprint
alone does not dominate focused expertise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import Document
from .vector import GranularIndices

DEFAULT_K_DOCS = 50
DEFAULT_GAMMA = 0.85
DEFAULT_BETA = 0.5


@dataclass(frozen=True)
class ExpertScore:
    """One ranked expert with the evidence that produced the score."""

    author_name: str
    raw_votes: float
    damped_score: float
    supporting_docs: tuple[tuple[str, int], ...]  # (doc_id, 0-based rank)

    def to_record(self) -> dict:
        return {
            "author_name": self.author_name,
            "raw_votes": self.raw_votes,
            "damped_score": self.damped_score,
            "supporting_docs": [
                {"doc_id": doc_id, "rank": rank} for doc_id, rank in self.supporting_docs
            ],
        }


def normalize_author(name: str) -> str:
    """Author identity: lowercased, runs of whitespace collapsed to one space."""
    return " ".join(name.split()).lower()


def publication_counts(corpus: Sequence[Document]) -> dict[str, int]:
    """Documents per normalized author name across the whole corpus."""
    counts: dict[str, int] = {}
    for doc in corpus:
        for author in {normalize_author(a) for a in doc.authors}:
            counts[author] = counts.get(author, 0) + 1
    return counts


def retrieve_for_expertise(
    indices: GranularIndices,
    query: str,
    k_docs: int = DEFAULT_K_DOCS,
    ef: int | None = None,
) -> list[str]:
    """Doc ids nearest the query in the document index, best first.

    Raises EmptyIndex when no documents are indexed.
    """
    return indices.document_ranking(query, k_docs, ef)


def vote(
    ranked_docs: Sequence[str],
    authorship: Mapping[str, Sequence[str]],
    gamma: float = DEFAULT_GAMMA,
) -> dict[str, float]:
    """raw_votes(a) = Σ over retrieved docs d authored by a of gamma^rank(d).

    Ranks are 0-based positions in `ranked_docs`. An author listed twice on
    one document still casts a single vote for it. Authors with no retrieved
    documents are absent from the result.
    """
    votes: dict[str, float] = {}
    for rank, doc_id in enumerate(ranked_docs):
        weight = gamma**rank
        for author in {normalize_author(a) for a in authorship[doc_id]}:
            votes[author] = votes.get(author, 0.0) + weight
    return votes


def damp_prolific(raw_votes: float, pub_count: float, beta: float = DEFAULT_BETA) -> float:
    """damped = raw_votes / (1 + ln(pub_count))^beta; pub_count ≥ 1."""
    if pub_count < 1:
        raise ValueError(f"pub_count must be >= 1, got {pub_count}")
    return raw_votes / (1.0 + math.log(pub_count)) ** beta


def experts(
    indices: GranularIndices,
    corpus: Sequence[Document],
    query: str,
    k: int = 10,
    *,
    k_docs: int = DEFAULT_K_DOCS,
    gamma: float = DEFAULT_GAMMA,
    beta: float = DEFAULT_BETA,
    ef: int | None = None,
) -> list[ExpertScore]:
    """Retrieve → vote → damp → rank; top-k experts with supporting evidence.

    Sorted by damped_score descending, ties by raw_votes descending, then by
    author name. Raises EmptyIndex when no documents are indexed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = retrieve_for_expertise(indices, query, k_docs, ef)
    authorship = {doc.id: doc.authors for doc in corpus}
    raw = vote(ranked, authorship, gamma)
    pubs = publication_counts(corpus)

    supporting: dict[str, list[tuple[str, int]]] = {}
    for rank, doc_id in enumerate(ranked):
        for author in {normalize_author(a) for a in authorship[doc_id]}:
            supporting.setdefault(author, []).append((doc_id, rank))

    scored = [
        ExpertScore(
            author_name=author,
            raw_votes=raw_votes,
            damped_score=damp_prolific(raw_votes, pubs[author], beta),
            supporting_docs=tuple(sorted(supporting[author], key=lambda dr: dr[1])),
        )
        for author, raw_votes in raw.items()
    ]
    scored.sort(key=lambda e: (-e.damped_score, -e.raw_votes, e.author_name))
    return scored[:k]
