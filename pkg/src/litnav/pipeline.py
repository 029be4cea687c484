"""Staged, at-least-once document processing with per-document state tracking.

An in-process work queue feeds a pool of workers; each work item runs one
stage of one document version. Stages execute in a fixed order per document,
distinct documents proceed in parallel. Retryable failures requeue with
exponential backoff up to a cap, then dead-letter; fatal failures dead-letter
immediately. Stage handlers must be idempotent: delivery is at-least-once, so
a stage may run more than once for the same (doc_id, version).
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Callable, Iterable, Mapping

from .corpus import Document

DEFAULT_MAX_RETRIES = 3
DEFAULT_BASE_DELAY = 0.1  # seconds
DEFAULT_WORKERS = 1


class Stage(str, Enum):
    PARSE = "parse"
    REF_EXTRACT = "ref_extract"
    REF_LINK = "ref_link"
    NER = "ner"
    CONCEPT_LINK = "concept_link"
    EMBED = "embed"
    INDEX_KEYWORD = "index_keyword"
    INDEX_VECTOR = "index_vector"
    DONE = "done"


STAGE_ORDER: tuple[Stage, ...] = tuple(Stage)
#: Stages that execute a handler; DONE is a terminal marker, never executed.
WORK_STAGES: tuple[Stage, ...] = STAGE_ORDER[:-1]
_STAGE_INDEX = {stage: i for i, stage in enumerate(STAGE_ORDER)}


def next_stage(stage: Stage) -> Stage:
    if stage is Stage.DONE:
        raise ValueError("done has no successor")
    return STAGE_ORDER[_STAGE_INDEX[stage] + 1]


class TicketStatus(str, Enum):
    PENDING = "pending"
    IN_FLIGHT = "in_flight"
    FAILED = "failed"
    DEAD_LETTER = "dead_letter"
    COMPLETE = "complete"


class StageResult(str, Enum):
    OK = "ok"
    RETRYABLE_ERROR = "retryable_error"
    FATAL_ERROR = "fatal_error"


class FailureAction(str, Enum):
    REQUEUE = "requeue"
    DEAD_LETTER = "dead_letter"


class StageMismatch(RuntimeError):
    """The ticket is not at the requested stage or not in a runnable status."""


class UnknownDocument(KeyError):
    """No ticket exists for the requested document."""


class RetryableStageError(RuntimeError):
    """Transient stage failure; the stage will be retried with backoff."""


class FatalStageError(RuntimeError):
    """Permanent stage failure; the ticket dead-letters immediately."""


def backoff_delay(attempt: int, base_delay: float) -> float:
    """Requeue delay after the attempt-th failure: base_delay doubled each time."""
    if attempt < 1:
        raise ValueError("attempt must be >= 1")
    return base_delay * (2 ** (attempt - 1))


@dataclass
class PipelineTicket:
    """Mutable processing state of one document version.

    Owned and mutated by the pipeline; attempts[s] never exceeds
    max_retries + 1, and status is COMPLETE exactly when current_stage is DONE.
    """

    doc_id: str
    doc_version: int
    current_stage: Stage = Stage.PARSE
    attempts: dict[Stage, int] = field(default_factory=dict)
    status: TicketStatus = TicketStatus.PENDING
    enqueued_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    updated_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "doc_version": self.doc_version,
            "current_stage": self.current_stage.value,
            "attempts": {stage.value: n for stage, n in sorted(self.attempts.items(), key=lambda kv: _STAGE_INDEX[kv[0]])},
            "status": self.status.value,
            "enqueued_at": self.enqueued_at.isoformat(),
            "updated_at": self.updated_at.isoformat(),
        }


@dataclass(frozen=True)
class _WorkItem:
    ready_at: float
    seq: int
    doc_id: str
    version: int


Handler = Callable[[Document], None]
#: Called after the handler as (doc_id, version, stage, attempt); raising
#: RetryableStageError here emulates a worker that finished its work but died
#: before acknowledging — the at-least-once failure mode.
FaultInjector = Callable[[str, int, Stage, int], None]


class Pipeline:
    """In-process staged queue: submit documents, drain, inspect tickets.

    All public methods are thread-safe. Stages of one (doc_id, version) are
    serialized by the worker pool; distinct documents run concurrently.
    The injected clock/sleeper pair is honored by the single-worker driver,
    which makes retry timing fully controllable in tests; multi-worker
    draining waits on real time.
    """

    def __init__(
        self,
        handlers: Mapping[Stage, Handler] | None = None,
        *,
        max_retries: int = DEFAULT_MAX_RETRIES,
        base_delay: float = DEFAULT_BASE_DELAY,
        workers: int = DEFAULT_WORKERS,
        fault_injector: FaultInjector | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        if max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if base_delay < 0:
            raise ValueError("base_delay must be >= 0")
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.handlers: dict[Stage, Handler] = dict(handlers or {})
        self.max_retries = max_retries
        self.base_delay = base_delay
        self.workers = workers
        self.fault_injector = fault_injector
        self._clock = clock
        self._sleeper = sleeper

        self._cond = threading.Condition()
        self._tickets: dict[tuple[str, int], PipelineTicket] = {}
        self._docs: dict[tuple[str, int], Document] = {}
        self._latest: dict[str, int] = {}
        self._queue: list[_WorkItem] = []
        self._busy: set[str] = set()
        self._executing = 0
        self._seq = 0
        self._history: dict[tuple[str, int], list[tuple[Stage, StageResult]]] = {}

    # --- operations -----------------------------------------------------------

    def submit(self, doc: Document) -> PipelineTicket:
        """Queue one document version from the first stage.

        Resubmitting a version already known is a no-op returning its existing
        ticket; a higher version starts a fresh run from the first stage.
        """
        key = (doc.id, doc.version)
        with self._cond:
            existing = self._tickets.get(key)
            if existing is not None:
                return existing
            ticket = PipelineTicket(doc_id=doc.id, doc_version=doc.version)
            self._tickets[key] = ticket
            self._docs[key] = doc
            self._latest[doc.id] = max(doc.version, self._latest.get(doc.id, doc.version))
            self._push_locked(doc.id, doc.version, 0.0)
            return ticket

    def execute_stage(self, ticket: PipelineTicket, stage: Stage) -> StageResult:
        """Run one stage's handler for the ticket's document.

        Requires stage == ticket.current_stage and a runnable status (pending
        or failed); otherwise StageMismatch. On OK the ticket advances to the
        next stage (COMPLETE once it reaches the terminal marker). Typed
        handler errors map to the corresponding StageResult; anything else a
        handler raises is treated as fatal.
        """
        key = (ticket.doc_id, ticket.doc_version)
        with self._cond:
            stored = self._tickets.get(key)
            if stored is None:
                raise UnknownDocument(ticket.doc_id)
            ticket = stored
            if stage is not ticket.current_stage or ticket.status not in (
                TicketStatus.PENDING,
                TicketStatus.FAILED,
            ):
                raise StageMismatch(
                    f"{ticket.doc_id} v{ticket.doc_version} is at "
                    f"{ticket.current_stage.value}/{ticket.status.value}, "
                    f"cannot execute {stage.value}"
                )
            ticket.status = TicketStatus.IN_FLIGHT
            ticket.updated_at = datetime.now(timezone.utc)
            attempt = ticket.attempts.get(stage, 0) + 1
            doc = self._docs[key]

        handler = self.handlers.get(stage)
        result = StageResult.OK
        try:
            if handler is not None:
                handler(doc)
            if self.fault_injector is not None:
                self.fault_injector(doc.id, doc.version, stage, attempt)
        except RetryableStageError:
            result = StageResult.RETRYABLE_ERROR
        except Exception:
            result = StageResult.FATAL_ERROR

        with self._cond:
            if result is StageResult.OK:
                ticket.current_stage = next_stage(stage)
                if ticket.current_stage is Stage.DONE:
                    ticket.status = TicketStatus.COMPLETE
                else:
                    ticket.status = TicketStatus.PENDING
            elif result is StageResult.RETRYABLE_ERROR:
                ticket.status = TicketStatus.FAILED
            else:
                ticket.status = TicketStatus.DEAD_LETTER
            ticket.updated_at = datetime.now(timezone.utc)
            self._history.setdefault(key, []).append((stage, result))
            self._cond.notify_all()
        return result

    def handle_failure(self, ticket: PipelineTicket, stage: Stage) -> FailureAction:
        """Account one retryable failure: requeue with backoff or dead-letter.

        The attempt counter for the stage is incremented; while it stays
        within max_retries the ticket requeues after base_delay doubled per
        failure, otherwise it dead-letters.
        """
        key = (ticket.doc_id, ticket.doc_version)
        with self._cond:
            stored = self._tickets.get(key)
            if stored is None:
                raise UnknownDocument(ticket.doc_id)
            ticket = stored
            if ticket.status is not TicketStatus.FAILED or stage is not ticket.current_stage:
                raise StageMismatch(
                    f"{ticket.doc_id} v{ticket.doc_version} is at "
                    f"{ticket.current_stage.value}/{ticket.status.value}, "
                    f"cannot account a failure of {stage.value}"
                )
            ticket.attempts[stage] = ticket.attempts.get(stage, 0) + 1
            attempt = ticket.attempts[stage]
            ticket.updated_at = datetime.now(timezone.utc)
            if attempt <= self.max_retries:
                ticket.status = TicketStatus.PENDING
                self._push_locked(ticket.doc_id, ticket.doc_version, backoff_delay(attempt, self.base_delay))
                return FailureAction.REQUEUE
            ticket.status = TicketStatus.DEAD_LETTER
            self._cond.notify_all()
            return FailureAction.DEAD_LETTER

    def status(self, doc_id: str) -> PipelineTicket:
        """Ticket of the highest submitted version of the document."""
        with self._cond:
            version = self._latest.get(doc_id)
            if version is None:
                raise UnknownDocument(doc_id)
            return self._tickets[(doc_id, version)]

    def tickets(self) -> list[PipelineTicket]:
        """All tickets, ordered by (doc_id, version)."""
        with self._cond:
            return [self._tickets[k] for k in sorted(self._tickets)]

    def history(self, doc_id: str, version: int) -> tuple[tuple[Stage, StageResult], ...]:
        """Chronological (stage, result) execution log of one document version."""
        with self._cond:
            return tuple(self._history.get((doc_id, version), ()))

    # --- driving --------------------------------------------------------------

    def submit_all(self, docs: Iterable[Document]) -> list[PipelineTicket]:
        return [self.submit(doc) for doc in docs]

    def drain(self) -> None:
        """Process queued work until the queue is empty and nothing is running."""
        if self.workers == 1:
            self._drain_serial()
        else:
            threads = [
                threading.Thread(target=self._worker_loop, name=f"pipeline-worker-{i}", daemon=True)
                for i in range(self.workers)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

    def process(self, docs: Iterable[Document]) -> list[PipelineTicket]:
        """Submit a batch, drain, and return the batch tickets."""
        tickets = self.submit_all(docs)
        self.drain()
        return tickets

    # --- internals --------------------------------------------------------------

    def _push_locked(self, doc_id: str, version: int, delay: float) -> None:
        self._seq += 1
        self._queue.append(_WorkItem(self._clock() + delay, self._seq, doc_id, version))
        self._cond.notify_all()

    def _pop_earliest_locked(self) -> _WorkItem | None:
        """Earliest item by (ready_at, seq), regardless of readiness."""
        if not self._queue:
            return None
        item = min(self._queue, key=lambda w: (w.ready_at, w.seq))
        self._queue.remove(item)
        return item

    def _pop_runnable_locked(self, now: float) -> _WorkItem | None:
        """Earliest ready item whose document is not already executing."""
        best: _WorkItem | None = None
        for item in self._queue:
            if item.ready_at > now or item.doc_id in self._busy:
                continue
            if best is None or (item.ready_at, item.seq) < (best.ready_at, best.seq):
                best = item
        if best is not None:
            self._queue.remove(best)
        return best

    def _drain_serial(self) -> None:
        while True:
            with self._cond:
                item = self._pop_earliest_locked()
            if item is None:
                return
            gap = item.ready_at - self._clock()
            if gap > 0:
                self._sleeper(gap)
            self._run_item(item)

    def _worker_loop(self) -> None:
        while True:
            with self._cond:
                while True:
                    now = self._clock()
                    item = self._pop_runnable_locked(now)
                    if item is not None:
                        self._busy.add(item.doc_id)
                        self._executing += 1
                        break
                    if not self._queue and self._executing == 0:
                        self._cond.notify_all()
                        return
                    future = [w.ready_at for w in self._queue if w.doc_id not in self._busy]
                    timeout = max(min(future) - now, 0.001) if future else None
                    self._cond.wait(timeout)
            try:
                self._run_item(item)
            finally:
                with self._cond:
                    self._busy.discard(item.doc_id)
                    self._executing -= 1
                    self._cond.notify_all()

    def _run_item(self, item: _WorkItem) -> None:
        with self._cond:
            ticket = self._tickets.get((item.doc_id, item.version))
        if ticket is None or ticket.status not in (TicketStatus.PENDING, TicketStatus.FAILED):
            return
        stage = ticket.current_stage
        try:
            result = self.execute_stage(ticket, stage)
        except StageMismatch:
            return
        if result is StageResult.OK:
            with self._cond:
                if ticket.status is TicketStatus.PENDING:
                    self._push_locked(item.doc_id, item.version, 0.0)
        elif result is StageResult.RETRYABLE_ERROR:
            try:
                self.handle_failure(ticket, stage)
            except StageMismatch:
                # Someone drove the ticket through a direct op call between
                # our execute and this accounting; their path owns it now.
                pass
