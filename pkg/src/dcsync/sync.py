"""Admission control for reads and writes under four synchronization protocols.

All protocols share one mechanism: a worker submits an operation, the
scheduler checks the protocol's predicate against the chunk metadata, and
either executes it on the spot or parks it until some later execution makes
the predicate true. The predicates only look at counters that never decrease,
so a parked operation never needs to be un-admitted.

========  ==========================================  ===================================
protocol  read r_i[pi_j][a] admitted when              write w_i[pi_i][a] admitted when
========  ==========================================  ===================================
bsp       every chunk is at iteration a-1              every worker read every chunk at a
rcwc      chunk j is at iteration a-1                  every worker read chunk i at a
delay=d   chunk j is at iteration >= a-d-1             min reader iteration of chunk i >= a-d
async     always                                       always
========  ==========================================  ===================================
"""
from __future__ import annotations

import enum
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from dcsync.history import READ, WRITE, AccessOp, History
from dcsync.modeldb import ParameterDatabase


class Protocol(enum.Enum):
    BSP = "bsp"
    DATA_CENTRIC = "rcwc"
    BOUNDED_DELAY = "delay"
    FULLY_ASYNC = "async"


@dataclass(frozen=True)
class ProtocolConfig:
    kind: Protocol
    delta: int = 0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "ProtocolConfig":
        """``bsp``, ``rcwc``, ``delay=<d>`` or ``async``."""
        text = text.strip().lower()
        if text.startswith("delay="):
            try:
                d = int(text.split("=", 1)[1])
            except ValueError:
                raise ValueError(f"bad delay in {text!r}") from None
            return cls(Protocol.BOUNDED_DELAY, d)
        try:
            return cls(Protocol(text))
        except ValueError:
            raise ValueError(f"unknown protocol {text!r}; expected bsp, rcwc, delay=<d> or async") from None

    @property
    def effective_delta(self) -> int | None:
        """Delay bound in iterations; None means unbounded."""
        if self.kind is Protocol.FULLY_ASYNC:
            return None
        if self.kind is Protocol.BOUNDED_DELAY:
            return self.delta
        return 0

    def __str__(self) -> str:
        if self.kind is Protocol.BOUNDED_DELAY:
            return f"delay={self.delta}"
        return self.kind.value


BSP = ProtocolConfig(Protocol.BSP)
DATA_CENTRIC = ProtocolConfig(Protocol.DATA_CENTRIC)
FULLY_ASYNC = ProtocolConfig(Protocol.FULLY_ASYNC)


def bounded_delay(delta: int) -> ProtocolConfig:
    return ProtocolConfig(Protocol.BOUNDED_DELAY, delta)


def admit_read(protocol: ProtocolConfig, db: ParameterDatabase, worker: int,
               partition: int, it: int) -> bool:
    if it < 1:
        raise ValueError("iterations start at 1")
    kind = protocol.kind
    if kind is Protocol.FULLY_ASYNC:
        return True
    if kind is Protocol.BSP:
        return all(c.chunk_iteration == it - 1 for c in db.chunks)
    chunk_it = db.chunks[partition].chunk_iteration
    if kind is Protocol.DATA_CENTRIC:
        return chunk_it == it - 1
    return chunk_it >= it - protocol.delta - 1


def admit_write(protocol: ProtocolConfig, db: ParameterDatabase, worker: int, it: int) -> bool:
    if it < 1:
        raise ValueError("iterations start at 1")
    kind = protocol.kind
    if kind is Protocol.FULLY_ASYNC:
        return True
    if kind is Protocol.BSP:
        return all(r >= it for c in db.chunks for r in c.read_iterations)
    reads = db.chunks[worker].read_iterations
    if kind is Protocol.DATA_CENTRIC:
        return all(r >= it for r in reads)
    return min(reads) >= it - protocol.delta


@dataclass
class BarrierState:
    barrier_iteration: int
    reads_done: np.ndarray  # [reader, partition]
    writes_done: np.ndarray


def barrier_state(db: ParameterDatabase, it: int) -> BarrierState:
    """Which reads and writes of iteration ``it`` have executed, derived from chunk metadata."""
    p = db.num_partitions
    reads = np.array([[db.chunks[j].read_iterations[k] >= it for j in range(p)] for k in range(p)])
    writes = np.array([c.chunk_iteration >= it for c in db.chunks])
    return BarrierState(it, reads, writes)


class Halted(Exception):
    """The run stopped; the worker should exit without further operations."""


class Aborted(RuntimeError):
    pass


class DeadlockError(RuntimeError):
    def __init__(self, msg: str, pending: list["PendingOp"]):
        super().__init__(msg)
        self.pending = pending


@dataclass(eq=False)
class PendingOp:
    kind: str
    worker: int
    partition: int
    iteration: int
    values: np.ndarray | None = None  # payload for writes
    event: threading.Event = field(default_factory=threading.Event)
    result: np.ndarray | None = None
    outcome: str = "pending"  # pending | done | halted | aborted

    def __str__(self) -> str:
        return f"{self.kind} worker={self.worker} partition={self.partition} iter={self.iteration}"


class Scheduler:
    """Single serialization point between workers and the parameter database.

    ``on_frontier(f)`` is called, under the lock, each time the writes of
    iteration ``f`` have executed on every chunk; returning True stops the
    run. Workers that are blocked or that submit afterwards get :class:`Halted`.
    """

    def __init__(self, db: ParameterDatabase, protocol: ProtocolConfig,
                 on_frontier: Callable[[int], bool] | None = None, record: bool = True):
        self.db = db
        self.protocol = protocol
        self.on_frontier = on_frontier
        self.record = record
        self.ops: list[AccessOp] = []
        self.pending: list[PendingOp] = []
        self.active = set(range(db.num_partitions))
        self.halted = False
        self.abort_reason: BaseException | None = None
        self.executed = 0
        self.last_progress = time.monotonic()
        self.max_write_lead = 0
        self._frontier = db.frontier()
        self._lock = threading.Lock()

    # -- worker-facing -------------------------------------------------------

    def read(self, worker: int, partition: int, it: int) -> np.ndarray:
        return self._submit(PendingOp(READ, worker, partition, it))

    def write(self, worker: int, it: int, values) -> None:
        self._submit(PendingOp(WRITE, worker, worker, it, np.asarray(values, dtype=np.float64)))

    def retire(self, worker: int) -> None:
        with self._lock:
            self.active.discard(worker)
            self._check_deadlock()

    # -- core --------------------------------------------------------------------

    def admissible(self, op: PendingOp) -> bool:
        if op.kind == READ:
            return admit_read(self.protocol, self.db, op.worker, op.partition, op.iteration)
        return admit_write(self.protocol, self.db, op.worker, op.iteration)

    def offer(self, op: PendingOp) -> bool:
        """Execute ``op`` now if admissible (True), otherwise park it (False)."""
        with self._lock:
            if self.abort_reason is not None:
                raise Aborted("run aborted") from self.abort_reason
            if self.halted:
                raise Halted
            if self.admissible(op):
                self._run_cascade(op)
                return True
            self.pending.append(op)
            self._check_deadlock()
            return False

    def _submit(self, op: PendingOp):
        self.offer(op)
        op.event.wait()
        if op.outcome == "done":
            return op.result
        if op.outcome == "halted":
            raise Halted
        raise Aborted("run aborted") from self.abort_reason

    def _run_cascade(self, first: PendingOp) -> None:
        queue = deque([first])
        while queue:
            op = queue.popleft()
            executed = self._execute(op)
            if self.halted:
                for rest in queue:
                    self._finish(rest, "halted")
                return
            queue.extend(self.on_executed(executed))

    def _execute(self, op: PendingOp) -> AccessOp:
        db = self.db
        if op.kind == READ:
            op.result, acc = db.execute_read(op.worker, op.partition, op.iteration)
        else:
            lead = op.iteration - self._frontier
            if lead > self.max_write_lead:
                self.max_write_lead = lead
            acc = db.execute_write(op.worker, op.iteration, op.values)
        self.executed += 1
        self.last_progress = time.monotonic()
        if self.record:
            self.ops.append(acc)
        self._finish(op, "done")
        if op.kind == WRITE:
            self._advance_frontier()
        return acc

    def _advance_frontier(self) -> None:
        f = self.db.frontier()
        while self._frontier < f and not self.halted:
            self._frontier += 1
            stop = self.on_frontier(self._frontier) if self.on_frontier else False
            if self.protocol.effective_delta is None:
                self.db.prune_before(self._frontier)
            if stop:
                self._halt()

    def on_executed(self, op: AccessOp) -> list[PendingOp]:
        """Remove and return, in deferral order, the parked ops that ``op`` made admissible."""
        if not self.pending:
            return []
        global_pred = self.protocol.kind is Protocol.BSP
        woken, keep = [], []
        for p in self.pending:
            touched = global_pred or p.partition == op.partition
            (woken if touched and self.admissible(p) else keep).append(p)
        self.pending = keep
        return woken

    def _finish(self, op: PendingOp, outcome: str) -> None:
        op.outcome = outcome
        op.event.set()

    def _halt(self) -> None:
        self.halted = True
        for p in self.pending:
            self._finish(p, "halted")
        self.pending = []

    def _check_deadlock(self) -> None:
        if self.halted or self.abort_reason is not None or not self.pending:
            return
        waiting = {p.worker for p in self.pending}
        if self.active and waiting >= self.active:
            dump = [str(p) for p in self.pending]
            self._abort_locked(DeadlockError(
                "every live worker is blocked; pending: " + "; ".join(dump), list(self.pending)))

    def abort(self, reason: BaseException) -> None:
        with self._lock:
            self._abort_locked(reason)

    def _abort_locked(self, reason: BaseException) -> None:
        if self.abort_reason is None:
            self.abort_reason = reason
        for p in self.pending:
            self._finish(p, "aborted")
        self.pending = []

    def idle_seconds(self) -> float:
        return time.monotonic() - self.last_progress

    def pending_snapshot(self) -> list[str]:
        with self._lock:
            return [str(p) for p in self.pending]

    def history(self) -> History:
        return History(tuple(self.ops), self.db.num_partitions)
