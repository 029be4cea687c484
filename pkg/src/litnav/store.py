"""Durable user data: tags and notes behind an append-only log.

Every mutation is appended to ``user_log.jsonl`` before it is applied in
memory, so replaying the log reconstructs the exact state — timestamps and
note ids are recorded in the log rather than re-derived. ``compact()`` folds
the log into ``user_snapshot.json`` and truncates it; opening a store reads
the snapshot (if any) and replays whatever the log still holds on top.

A store opened without a directory keeps everything in memory, which is what
unit tests and throwaway sessions want. Mutations are serialized through one
lock (single writer); reads take the same lock briefly to copy.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

LOG_FILE = "user_log.jsonl"
SNAPSHOT_FILE = "user_snapshot.json"


class StoreError(ValueError):
    pass


class DuplicateTag(StoreError):
    """The (user_id, tag_name, doc_id) triple already exists."""


class UnknownTag(KeyError):
    pass


class UnknownNote(KeyError):
    pass


class EmptyNoteText(StoreError):
    pass


def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


def _parse_ts(text: str) -> datetime:
    return datetime.fromisoformat(text)


@dataclass(frozen=True)
class Tag:
    user_id: str
    tag_name: str
    doc_id: str
    created_at: datetime

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.user_id, self.tag_name, self.doc_id)

    def to_record(self) -> dict:
        return {
            "user_id": self.user_id,
            "tag_name": self.tag_name,
            "doc_id": self.doc_id,
            "created_at": self.created_at.isoformat(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Tag":
        return cls(
            user_id=rec["user_id"],
            tag_name=rec["tag_name"],
            doc_id=rec["doc_id"],
            created_at=_parse_ts(rec["created_at"]),
        )


@dataclass(frozen=True)
class Note:
    id: int
    user_id: str
    doc_id: str | None
    text: str
    created_at: datetime
    updated_at: datetime

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise EmptyNoteText("note text must be non-empty")
        if self.updated_at < self.created_at:
            raise StoreError("updated_at must not precede created_at")

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "user_id": self.user_id,
            "doc_id": self.doc_id,
            "text": self.text,
            "created_at": self.created_at.isoformat(),
            "updated_at": self.updated_at.isoformat(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Note":
        return cls(
            id=int(rec["id"]),
            user_id=rec["user_id"],
            doc_id=rec.get("doc_id"),
            text=rec["text"],
            created_at=_parse_ts(rec["created_at"]),
            updated_at=_parse_ts(rec["updated_at"]),
        )


class UserStore:
    """Tags and notes with write-ahead persistence and replay recovery."""

    def __init__(
        self,
        directory: str | Path | None = None,
        *,
        clock: Callable[[], datetime] | None = None,
    ):
        self._clock = clock or _utc_now
        self._lock = threading.Lock()
        self._tags: dict[tuple[str, str, str], Tag] = {}
        self._notes: dict[int, Note] = {}
        self._users: set[str] = set()
        self._next_note_id = 1
        self._dir = Path(directory) if directory is not None else None
        self._log = None
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
            self._load_snapshot()
            self._replay_log()
            self._log = (self._dir / LOG_FILE).open("a", encoding="utf-8")

    # --- persistence ------------------------------------------------------------

    def _load_snapshot(self) -> None:
        path = self._dir / SNAPSHOT_FILE
        if not path.exists():
            return
        snap = json.loads(path.read_text(encoding="utf-8"))
        for rec in snap.get("tags", ()):
            tag = Tag.from_record(rec)
            self._tags[tag.triple] = tag
        for rec in snap.get("notes", ()):
            note = Note.from_record(rec)
            self._notes[note.id] = note
        self._users.update(snap.get("users", ()))
        self._next_note_id = int(snap.get("next_note_id", 1))

    def _replay_log(self) -> None:
        path = self._dir / LOG_FILE
        if not path.exists():
            return
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self._apply(json.loads(line))

    def _append(self, op: dict) -> None:
        if self._log is not None:
            self._log.write(json.dumps(op, sort_keys=True) + "\n")
            self._log.flush()

    def _apply(self, op: dict) -> None:
        kind = op["op"]
        if kind == "tag_add":
            tag = Tag.from_record(op)
            self._tags[tag.triple] = tag
            self._users.add(tag.user_id)
        elif kind == "tag_del":
            self._tags.pop((op["user_id"], op["tag_name"], op["doc_id"]), None)
        elif kind == "note_add":
            note = Note.from_record({**op, "updated_at": op["created_at"]})
            self._notes[note.id] = note
            self._users.add(note.user_id)
            self._next_note_id = max(self._next_note_id, note.id + 1)
        elif kind == "note_update":
            note = self._notes[int(op["id"])]
            self._notes[note.id] = replace(
                note, text=op["text"], updated_at=_parse_ts(op["updated_at"])
            )
        elif kind == "note_del":
            self._notes.pop(int(op["id"]), None)
        else:
            raise StoreError(f"unknown log op {kind!r}")

    def compact(self) -> None:
        """Fold the log into the snapshot and truncate it."""
        if self._dir is None:
            return
        with self._lock:
            snap = {
                "tags": [t.to_record() for t in self._sorted_tags()],
                "notes": [self._notes[i].to_record() for i in sorted(self._notes)],
                "users": sorted(self._users),
                "next_note_id": self._next_note_id,
            }
            tmp = self._dir / (SNAPSHOT_FILE + ".tmp")
            tmp.write_text(json.dumps(snap, indent=2, sort_keys=True), encoding="utf-8")
            tmp.replace(self._dir / SNAPSHOT_FILE)
            if self._log is not None:
                self._log.close()
            self._log = (self._dir / LOG_FILE).open("w", encoding="utf-8")

    def close(self) -> None:
        if self._log is not None:
            self._log.close()
            self._log = None

    # --- tags ---------------------------------------------------------------------

    def add_tag(self, user_id: str, tag_name: str, doc_id: str) -> Tag:
        _require("user_id", user_id)
        _require("tag_name", tag_name)
        _require("doc_id", doc_id)
        with self._lock:
            triple = (user_id, tag_name, doc_id)
            if triple in self._tags:
                raise DuplicateTag(f"{user_id!r} already tagged {doc_id!r} as {tag_name!r}")
            tag = Tag(user_id, tag_name, doc_id, self._clock())
            self._append({"op": "tag_add", **tag.to_record()})
            self._tags[triple] = tag
            self._users.add(user_id)
            return tag

    def delete_tag(self, user_id: str, tag_name: str, doc_id: str) -> None:
        with self._lock:
            triple = (user_id, tag_name, doc_id)
            if triple not in self._tags:
                raise UnknownTag(f"no tag {tag_name!r} by {user_id!r} on {doc_id!r}")
            self._append(
                {"op": "tag_del", "user_id": user_id, "tag_name": tag_name, "doc_id": doc_id}
            )
            del self._tags[triple]

    def tags(self, *, user_id: str | None = None, doc_id: str | None = None) -> list[Tag]:
        with self._lock:
            out = self._sorted_tags()
        if user_id is not None:
            out = [t for t in out if t.user_id == user_id]
        if doc_id is not None:
            out = [t for t in out if t.doc_id == doc_id]
        return out

    def _sorted_tags(self) -> list[Tag]:
        return sorted(self._tags.values(), key=lambda t: (t.created_at, t.triple))

    def tags_by_name(self, user_id: str) -> dict[str, list[Tag]]:
        """A user's tags grouped by tag name, each group in creation order."""
        grouped: dict[str, list[Tag]] = {}
        for tag in self.tags(user_id=user_id):
            grouped.setdefault(tag.tag_name, []).append(tag)
        return dict(sorted(grouped.items()))

    def tag_counts(self) -> dict[str, int]:
        """Tags per document across all users (popularity signal)."""
        with self._lock:
            counts: dict[str, int] = {}
            for tag in self._tags.values():
                counts[tag.doc_id] = counts.get(tag.doc_id, 0) + 1
            return counts

    # --- notes --------------------------------------------------------------------

    def add_note(self, user_id: str, text: str, doc_id: str | None = None) -> Note:
        _require("user_id", user_id)
        with self._lock:
            now = self._clock()
            note = Note(self._next_note_id, user_id, doc_id, text, now, now)
            self._append(
                {
                    "op": "note_add",
                    "id": note.id,
                    "user_id": note.user_id,
                    "doc_id": note.doc_id,
                    "text": note.text,
                    "created_at": note.created_at.isoformat(),
                }
            )
            self._notes[note.id] = note
            self._users.add(user_id)
            self._next_note_id += 1
            return note

    def update_note(self, note_id: int, text: str) -> Note:
        with self._lock:
            note = self._notes.get(note_id)
            if note is None:
                raise UnknownNote(f"no note with id {note_id}")
            updated_at = max(self._clock(), note.created_at)
            updated = replace(note, text=text, updated_at=updated_at)
            self._append(
                {
                    "op": "note_update",
                    "id": note_id,
                    "text": text,
                    "updated_at": updated_at.isoformat(),
                }
            )
            self._notes[note_id] = updated
            return updated

    def delete_note(self, note_id: int) -> None:
        with self._lock:
            if note_id not in self._notes:
                raise UnknownNote(f"no note with id {note_id}")
            self._append({"op": "note_del", "id": note_id})
            del self._notes[note_id]

    def get_note(self, note_id: int) -> Note:
        with self._lock:
            note = self._notes.get(note_id)
        if note is None:
            raise UnknownNote(f"no note with id {note_id}")
        return note

    def notes(
        self, *, user_id: str | None = None, doc_id: str | None = None
    ) -> list[Note]:
        with self._lock:
            out = [self._notes[i] for i in sorted(self._notes)]
        if user_id is not None:
            out = [n for n in out if n.user_id == user_id]
        if doc_id is not None:
            out = [n for n in out if n.doc_id == doc_id]
        return out

    # --- users ---------------------------------------------------------------------

    def known_user(self, user_id: str) -> bool:
        """True once the user has ever created a tag or note, even if deleted."""
        with self._lock:
            return user_id in self._users

    def users(self) -> list[str]:
        with self._lock:
            return sorted(self._users)


def _require(name: str, value: str) -> None:
    if not isinstance(value, str) or not value.strip():
        raise StoreError(f"{name} must be a non-empty string")


def replay(ops: Iterable[dict]) -> UserStore:
    """Build an in-memory store from raw log records (deterministic)."""
    store = UserStore()
    for op in ops:
        store._apply(op)
    return store
