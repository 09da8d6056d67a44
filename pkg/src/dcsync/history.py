"""Execution histories and their correctness checks.

A history is the total order in which the scheduler executed reads and writes.
Three checkers classify a history:

* :func:`check_sequential` -- per-partition sequential semantics: on every
  partition, iterations do not interleave, run in increasing order, and all
  reads of an iteration come before that iteration's write.
* :func:`check_rcwc` -- per-chunk read/write constraints, optionally relaxed
  by a delay ``delta``.
* :func:`check_bsp` -- global read/write barriers.

Constraints only bind operations that are present, so a prefix of a run is
checked on its own terms.

:func:`enumerate_interleavings` brute-forces every order of a small worker
program and is the oracle for the inclusions between the three classes.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

READ = "R"
WRITE = "W"

MAX_ENUM_WORKERS = 3
MAX_ENUM_ITERS = 2
MAX_ENUM_HISTORIES = 2_000_000


class MalformedHistory(ValueError):
    """The history breaks the access model, so no verdict is meaningful."""


class HistoryParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class EnumerationTooLarge(ValueError):
    pass


class AccessOp(NamedTuple):
    seq: int
    kind: str
    worker: int
    partition: int
    iteration: int

    @property
    def key(self) -> tuple[str, int, int, int]:
        return (self.kind, self.worker, self.partition, self.iteration)

    def __str__(self) -> str:
        # 1-based, in the usual r_i[pi_j][alpha] notation
        k = "r" if self.kind == READ else "w"
        return f"{k}_{self.worker + 1}[pi_{self.partition + 1}][{self.iteration}]"


@dataclass(frozen=True)
class History:
    ops: tuple[AccessOp, ...]
    num_workers: int

    @classmethod
    def from_ops(cls, ops: Iterable[AccessOp], num_workers: int | None = None) -> "History":
        ops = tuple(ops)
        if num_workers is None:
            num_workers = 1 + max((max(o.worker, o.partition) for o in ops), default=0)
        return cls(ops, num_workers)

    @classmethod
    def from_keys(cls, keys: Iterable[tuple[str, int, int, int]], num_workers: int | None = None) -> "History":
        """Number bare (kind, worker, partition, iteration) tuples from 0."""
        return cls.from_ops((AccessOp(i, *k) for i, k in enumerate(keys)), num_workers)

    @property
    def num_partitions(self) -> int:
        return self.num_workers

    def __len__(self) -> int:
        return len(self.ops)

    def keys(self) -> tuple[tuple[str, int, int, int], ...]:
        return tuple(o.key for o in self.ops)

    def validate(self) -> None:
        p = self.num_workers
        seen: set[tuple] = set()
        written: set[tuple[int, int]] = set()
        prev_seq = -1
        for op in self.ops:
            if op.seq <= prev_seq:
                raise MalformedHistory(f"sequence numbers not strictly increasing at {op.seq}")
            prev_seq = op.seq
            if op.kind not in (READ, WRITE):
                raise MalformedHistory(f"unknown op kind {op.kind!r}")
            if not (0 <= op.worker < p and 0 <= op.partition < p):
                raise MalformedHistory(f"{op} names a worker or partition outside [0, {p})")
            if op.iteration < 1:
                raise MalformedHistory(f"{op} has iteration < 1")
            if op.kind == WRITE and op.worker != op.partition:
                raise MalformedHistory(f"{op} writes a partition the worker does not own")
            if op.key in seen:
                raise MalformedHistory(f"{op} occurs twice")
            seen.add(op.key)
            if op.kind == READ and (op.worker, op.iteration) in written:
                raise MalformedHistory(f"{op} follows the worker's own write of that iteration")
            if op.kind == WRITE:
                written.add((op.worker, op.iteration))

    def __str__(self) -> str:
        return " ".join(str(o) for o in self.ops)


@dataclass(frozen=True)
class Verdict:
    valid: bool
    constraint: str | None = None
    # (first, second) in history order; the constraint required the reverse
    witness: tuple[AccessOp, AccessOp] | None = None

    def __bool__(self) -> bool:
        return self.valid

    def describe(self) -> str:
        if self.valid:
            return "valid"
        a, b = self.witness
        return f"invalid: {self.constraint} violated, {a} (seq {a.seq}) precedes {b} (seq {b.seq})"


VALID = Verdict(True)


def _as_history(h: History | Sequence[AccessOp]) -> History:
    if isinstance(h, History):
        hist = h
    else:
        hist = History.from_ops(h)
    hist.validate()
    return hist


def check_sequential(h: History | Sequence[AccessOp]) -> Verdict:
    h = _as_history(h)
    cur_iter: dict[int, int] = {}
    first_of_iter: dict[int, AccessOp] = {}
    write_of_iter: dict[int, AccessOp] = {}
    for op in h.ops:
        part = op.partition
        cur = cur_iter.get(part, 0)
        if op.iteration < cur:
            return Verdict(False, "iteration order", (first_of_iter[part], op))
        if op.iteration > cur:
            cur_iter[part] = op.iteration
            first_of_iter[part] = op
            write_of_iter.pop(part, None)
        if op.kind == READ and part in write_of_iter:
            return Verdict(False, "reads before write", (write_of_iter[part], op))
        if op.kind == WRITE:
            write_of_iter[part] = op
    return VALID


def check_rcwc(h: History | Sequence[AccessOp], delta: int = 0) -> Verdict:
    """Read constraint w_j[a-1-d] < r_i[pi_j][a]; write constraint r_j[pi_i][a-d] < w_i[a]."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    h = _as_history(h)
    pos = {op.key: i for i, op in enumerate(h.ops)}
    reads_of: dict[tuple[int, int], list[int]] = {}
    for i, op in enumerate(h.ops):
        if op.kind == READ:
            reads_of.setdefault((op.partition, op.iteration), []).append(i)

    for i, op in enumerate(h.ops):
        if op.kind == READ:
            w = pos.get((WRITE, op.partition, op.partition, op.iteration - 1 - delta))
            if w is not None and w > i:
                return Verdict(False, "read constraint", (op, h.ops[w]))
        else:
            later = [r for r in reads_of.get((op.partition, op.iteration - delta), ()) if r > i]
            if later:
                return Verdict(False, "write constraint", (op, h.ops[later[0]]))
    return VALID


def check_bsp(h: History | Sequence[AccessOp]) -> Verdict:
    h = _as_history(h)
    first_read: dict[int, int] = {}
    last_read: dict[int, int] = {}
    first_write: dict[int, int] = {}
    last_write: dict[int, int] = {}
    for i, op in enumerate(h.ops):
        a = op.iteration
        if op.kind == READ:
            first_read.setdefault(a, i)
            last_read[a] = i
        else:
            first_write.setdefault(a, i)
            last_write[a] = i

    violations = []
    for a in sorted(set(first_read) | set(first_write)):
        # write barrier: every read of a before any write of a
        if a in first_write and a in last_read and first_write[a] < last_read[a]:
            violations.append(("write barrier", first_write[a], last_read[a]))
        # read barrier: every write of a before any read of a+1
        if a in last_write and a + 1 in first_read and first_read[a + 1] < last_write[a]:
            violations.append(("read barrier", first_read[a + 1], last_write[a]))
    if not violations:
        return VALID
    name, i, j = min(violations, key=lambda v: (v[2], v[1]))
    return Verdict(False, name, (h.ops[i], h.ops[j]))


CHECKERS = {
    "sequential": lambda h, delta=0: check_sequential(h),
    "rcwc": check_rcwc,
    "bsp": lambda h, delta=0: check_bsp(h),
}


# -- history log file: "<seq> <R|W> <worker> <partition> <iter>" per line ------

def format_history(h: History | Iterable[AccessOp]) -> str:
    ops = h.ops if isinstance(h, History) else h
    return "".join(f"{o.seq} {o.kind} {o.worker} {o.partition} {o.iteration}\n" for o in ops)


def parse_history(text: str, num_workers: int | None = None) -> History:
    ops = []
    prev = -1
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split(" ")
        if len(fields) != 5:
            raise HistoryParseError(lineno, f"expected 5 space-separated fields, got {line!r}")
        seq, kind, worker, part, it = fields
        if kind not in (READ, WRITE):
            raise HistoryParseError(lineno, f"op kind must be R or W, got {kind!r}")
        try:
            seq_i, w, pt, a = int(seq), int(worker), int(part), int(it)
        except ValueError:
            raise HistoryParseError(lineno, f"non-integer field in {line!r}") from None
        if seq_i <= prev or seq_i < 0:
            raise HistoryParseError(lineno, f"sequence number {seq_i} does not increase")
        prev = seq_i
        ops.append(AccessOp(seq_i, kind, w, pt, a))
    return History.from_ops(ops, num_workers)


def write_history(h: History, path: str | Path) -> None:
    Path(path).write_text(format_history(h), encoding="ascii")


def read_history(path: str | Path, num_workers: int | None = None) -> History:
    return parse_history(Path(path).read_text(encoding="ascii"), num_workers)


# -- the three two-worker, two-iteration examples --------------------------------

_NOTATION = re.compile(r"([rw])_?(\d+)\[\s*(?:pi_?)?(\d+)\s*\]\[\s*(\d+)\s*\]")


def from_notation(text: str, num_workers: int | None = None) -> History:
    """Parse ``r1[1][1] w1[1][1] ...`` (1-based worker and partition ids)."""
    keys = []
    for kind, w, part, it in _NOTATION.findall(text):
        keys.append((READ if kind == "r" else WRITE, int(w) - 1, int(part) - 1, int(it)))
    return History.from_keys(keys, num_workers)


H1 = from_notation(
    "r1[1][1] r1[2][1] r2[1][1] r2[2][1] w1[1][1] w2[2][1] "
    "r1[1][2] r1[2][2] r2[1][2] r2[2][2] w1[1][2] w2[2][2]", 2)
H2 = from_notation(
    "r1[1][1] r1[2][1] r2[1][1] r2[2][1] w2[2][1] r1[2][2] "
    "w1[1][1] r1[1][2] r2[1][2] r2[2][2] w1[1][2] w2[2][2]", 2)
H3 = from_notation(
    "r1[1][1] r1[2][1] w1[1][1] r2[1][1] r2[2][1] w2[2][1] "
    "r1[1][2] r1[2][2] w1[1][2] r2[1][2] r2[2][2] w2[2][2]", 2)
GOLDEN = {"H1": H1, "H2": H2, "H3": H3}


# -- brute-force interleavings ------------------------------------------------------

def _worker_program(worker: int, p: int, iters: int) -> list[tuple]:
    prog = []
    for a in range(1, iters + 1):
        prog.extend((READ, worker, j, a) for j in range(p))
        prog.append((WRITE, worker, worker, a))
    return prog


def _before(x: tuple, y: tuple) -> bool:
    """Direct precedence inside one worker's relaxed program."""
    kx, _, px, ax = x
    ky, _, py, ay = y
    if ky == WRITE:
        return (kx == READ and ax == ay) or (kx == WRITE and ax + 1 == ay)
    return kx == READ and px == py and ax + 1 == ay


def _linear_extensions(ops: list[tuple]) -> list[tuple[tuple, ...]]:
    preds = {o: {x for x in ops if _before(x, o)} for o in ops}
    out: list[tuple[tuple, ...]] = []

    def rec(done: list, remaining: set) -> None:
        if not remaining:
            out.append(tuple(done))
            return
        placed = set(done)
        for o in ops:  # fixed iteration order keeps output deterministic
            if o in remaining and preds[o] <= placed:
                done.append(o)
                remaining.remove(o)
                rec(done, remaining)
                remaining.add(o)
                done.pop()

    rec([], set(ops))
    return out


def worker_orders(worker: int, p: int, iters: int, relaxed: bool = False) -> list[tuple[tuple, ...]]:
    """Admissible op orders of one worker.

    Strict: reads in ascending partition order, then the write, iteration by
    iteration. Relaxed: any order where an iteration's reads precede its
    write, writes are in iteration order, and reads of one partition are in
    iteration order -- so reads of the next iteration may overtake the
    current write.
    """
    prog = _worker_program(worker, p, iters)
    if not relaxed:
        return [tuple(prog)]
    return _linear_extensions(prog)


def _merge_patterns(counts: list[int]) -> Iterator[tuple[int, ...]]:
    """All sequences with counts[i] copies of i, in lexicographic order."""
    total = sum(counts)
    seq: list[int] = []

    def rec() -> Iterator[tuple[int, ...]]:
        if len(seq) == total:
            yield tuple(seq)
            return
        for i, c in enumerate(counts):
            if c:
                counts[i] -= 1
                seq.append(i)
                yield from rec()
                seq.pop()
                counts[i] += 1

    return rec()


def count_interleavings(p: int, iters: int, relaxed: bool = False) -> int:
    per = (p + 1) * iters
    merges = math.factorial(p * per) // math.factorial(per) ** p
    if not relaxed:
        return merges
    return merges * len(worker_orders(0, p, iters, relaxed=True)) ** p


def enumerate_interleavings(p: int, iters: int, relaxed: bool = False) -> Iterator[History]:
    """Yield every total order of ``p`` workers each running ``iters`` iterations."""
    if p < 1 or iters < 1:
        raise ValueError("p and iters must be positive")
    if p > MAX_ENUM_WORKERS or iters > MAX_ENUM_ITERS:
        raise EnumerationTooLarge(
            f"enumeration limited to p <= {MAX_ENUM_WORKERS}, iters <= {MAX_ENUM_ITERS}"
        )
    total = count_interleavings(p, iters, relaxed)
    if total > MAX_ENUM_HISTORIES:
        raise EnumerationTooLarge(
            f"p={p}, iters={iters}{' (relaxed)' if relaxed else ''} has {total} "
            f"interleavings, above the {MAX_ENUM_HISTORIES} limit"
        )
    return _enumerate(p, iters, relaxed)


def _enumerate(p: int, iters: int, relaxed: bool) -> Iterator[History]:
    orders = [worker_orders(w, p, iters, relaxed) for w in range(p)]
    per = (p + 1) * iters
    patterns = list(_merge_patterns([per] * p))
    for choice in product(*orders):
        for pattern in patterns:
            cursors = [0] * p
            keys = []
            for w in pattern:
                keys.append(choice[w][cursors[w]])
                cursors[w] += 1
            yield History(tuple(AccessOp(i, *k) for i, k in enumerate(keys)), p)


# -- mechanized inclusions between the three classes -------------------------------

@dataclass
class TheoremReport:
    workers: int
    iters: int
    relaxed: bool
    total: int = 0
    bsp_valid: int = 0
    rcwc_valid: int = 0
    sequential_valid: int = 0
    # counterexamples to the inclusions; empty when they hold
    bsp_not_sequential: list[History] = None
    rcwc_not_sequential: list[History] = None
    bsp_not_rcwc: list[History] = None
    delta_not_monotone: list[History] = None
    # first history found in each gap
    rcwc_not_bsp_example: History | None = None
    outside_rcwc_example: History | None = None
    golden_found: dict[str, bool] = None

    def __post_init__(self):
        for name in ("bsp_not_sequential", "rcwc_not_sequential", "bsp_not_rcwc",
                     "delta_not_monotone"):
            if getattr(self, name) is None:
                setattr(self, name, [])
        if self.golden_found is None:
            self.golden_found = {}

    @property
    def holds(self) -> bool:
        return not (self.bsp_not_sequential or self.rcwc_not_sequential
                    or self.bsp_not_rcwc or self.delta_not_monotone)

    @property
    def rcwc_not_bsp(self) -> int:
        return self.rcwc_valid - self.bsp_valid

    @property
    def outside_rcwc(self) -> int:
        return self.total - self.rcwc_valid


def theorem_report(p: int, iters: int, relaxed: bool = False, max_delta: int = 2) -> TheoremReport:
    """Classify every interleaving and collect counterexamples to

    bsp-valid => rcwc-valid => sequential-valid, bsp-valid => sequential-valid,
    and rcwc(d)-valid => rcwc(d+1)-valid for d < max_delta.
    """
    rep = TheoremReport(p, iters, relaxed)
    golden = {name: h.keys() for name, h in GOLDEN.items()} if (p, iters) == (2, 2) else {}
    found = {name: False for name in golden}
    for h in enumerate_interleavings(p, iters, relaxed):
        rep.total += 1
        bsp = check_bsp(h).valid
        rc = check_rcwc(h, 0).valid
        seq = check_sequential(h).valid
        rep.bsp_valid += bsp
        rep.rcwc_valid += rc
        rep.sequential_valid += seq
        if bsp and not seq:
            rep.bsp_not_sequential.append(h)
        if rc and not seq:
            rep.rcwc_not_sequential.append(h)
        if bsp and not rc:
            rep.bsp_not_rcwc.append(h)
        if rc and not bsp and rep.rcwc_not_bsp_example is None:
            rep.rcwc_not_bsp_example = h
        if not rc and rep.outside_rcwc_example is None:
            rep.outside_rcwc_example = h
        prev = rc
        for d in range(1, max_delta + 1):
            cur = check_rcwc(h, d).valid
            if prev and not cur:
                rep.delta_not_monotone.append(h)
                break
            prev = cur
        if golden:
            keys = h.keys()
            for name, gk in golden.items():
                if keys == gk:
                    found[name] = True
    rep.golden_found = found
    return rep
