"""Partitioned in-memory parameter store.

Each worker owns one contiguous chunk of the parameter vector. Every chunk
carries the metadata the admission scheduler needs: the iteration of its last
write, the highest iteration at which each worker has read it, and a short
ring of past versions so the engine can report the vector as of a finished
iteration even when some workers have already moved on.

Nothing here is thread-safe on its own; all mutation goes through the
scheduler in :mod:`dcsync.sync`, which holds a single lock.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from dcsync.history import AccessOp, READ, WRITE


class ConfigError(ValueError):
    """Invalid database or run configuration."""


class SchedulerBug(RuntimeError):
    """An operation reached the database that admission should have blocked."""


class VersionUnavailable(LookupError):
    pass


@dataclass(frozen=True)
class PartitionSet:
    num_features: int
    num_partitions: int
    bounds: tuple[tuple[int, int], ...]  # half-open [lo, hi) per partition

    @classmethod
    def contiguous(cls, m: int, p: int) -> "PartitionSet":
        """Ceiling-sized contiguous blocks: chunk k holds [k*c, min((k+1)*c, m))."""
        if p < 1 or m < 1 or p > m:
            raise ConfigError(f"need 1 <= p <= m, got m={m}, p={p}")
        c = math.ceil(m / p)
        bounds = tuple((k * c, min((k + 1) * c, m)) for k in range(p))
        if any(lo >= hi for lo, hi in bounds):
            # e.g. m=9, p=4 gives c=3 and an empty fourth block
            raise ConfigError(
                f"ceiling-block layout leaves an empty partition for m={m}, p={p}"
            )
        return cls(m, p, bounds)

    def size(self, k: int) -> int:
        lo, hi = self.bounds[k]
        return hi - lo

    def owner(self, feature: int) -> int:
        for k, (lo, hi) in enumerate(self.bounds):
            if lo <= feature < hi:
                return k
        raise IndexError(feature)

    def assignment(self) -> list[int]:
        return [k for k, (lo, hi) in enumerate(self.bounds) for _ in range(lo, hi)]


@dataclass
class ChunkState:
    partition_id: int
    values: np.ndarray
    chunk_iteration: int = 0
    read_iterations: list[int] = field(default_factory=list)
    version_ring: deque = field(default_factory=deque)  # (iteration, values)

    def version(self, it: int) -> np.ndarray:
        for ring_it, vals in self.version_ring:
            if ring_it == it:
                return vals
        raise VersionUnavailable(
            f"partition {self.partition_id} has no version for iteration {it}; "
            f"retained {[i for i, _ in self.version_ring]}"
        )


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


class ParameterDatabase:
    """Chunks plus the global sequence counter.

    ``ring_depth=None`` keeps an unbounded ring, which the fully asynchronous
    protocol needs since workers may lead by any number of iterations; callers
    then trim it with :meth:`prune_before`.
    """

    def __init__(self, partition_set: PartitionSet, init: np.ndarray,
                 ring_depth: int | None = 2):
        p = partition_set.num_partitions
        self.partition_set = partition_set
        self.global_sequence = 0
        self.chunks: list[ChunkState] = []
        for k, (lo, hi) in enumerate(partition_set.bounds):
            vals = _frozen(init[lo:hi])
            ring = deque([(0, vals)], maxlen=ring_depth)
            self.chunks.append(ChunkState(k, vals, 0, [0] * p, ring))

    @property
    def num_partitions(self) -> int:
        return self.partition_set.num_partitions

    def _stamp(self, kind: str, worker: int, partition: int, it: int) -> AccessOp:
        op = AccessOp(self.global_sequence, kind, worker, partition, it)
        self.global_sequence += 1
        return op

    def execute_read(self, worker: int, partition: int, it: int) -> tuple[np.ndarray, AccessOp]:
        chunk = self.chunks[partition]
        if it < chunk.read_iterations[worker]:
            raise SchedulerBug(
                f"worker {worker} read partition {partition} at iteration {it} "
                f"after already reading it at {chunk.read_iterations[worker]}"
            )
        chunk.read_iterations[worker] = it
        return chunk.values, self._stamp(READ, worker, partition, it)

    def execute_write(self, worker: int, it: int, new_values: Sequence[float],
                      partition: int | None = None) -> AccessOp:
        if partition is None:
            partition = worker
        if partition != worker:
            raise SchedulerBug(f"worker {worker} may only write partition {worker}, not {partition}")
        chunk = self.chunks[partition]
        vals = _frozen(new_values)
        if vals.shape != chunk.values.shape:
            raise ValueError(
                f"partition {partition} holds {chunk.values.size} values, got {vals.size}"
            )
        # a worker writes its own chunk once per iteration, in order
        if it != chunk.chunk_iteration + 1:
            raise SchedulerBug(
                f"write of iteration {it} on partition {partition} at chunk iteration "
                f"{chunk.chunk_iteration}"
            )
        chunk.values = vals
        chunk.chunk_iteration = it
        chunk.version_ring.append((it, vals))
        return self._stamp(WRITE, worker, partition, it)

    def snapshot_at(self, it: int) -> np.ndarray:
        return np.concatenate([c.version(it) for c in self.chunks])

    def live_values(self) -> np.ndarray:
        return np.concatenate([c.values for c in self.chunks])

    def frontier(self) -> int:
        """Highest iteration whose writes have executed on every chunk."""
        return min(c.chunk_iteration for c in self.chunks)

    def prune_before(self, it: int) -> None:
        for c in self.chunks:
            while len(c.version_ring) > 1 and c.version_ring[0][0] < it:
                c.version_ring.popleft()


def zeros_init(m: int) -> np.ndarray:
    return np.zeros(m)


def create_db(m: int, p: int, init: Callable[[int], np.ndarray] | np.ndarray | None = None,
              delta: int | None = 0) -> ParameterDatabase:
    """Build a fresh database with ``p`` contiguous chunks over ``m`` features.

    ``delta`` sizes the version ring (``delta + 2`` entries); ``None`` means
    unbounded delay and an unbounded ring.
    """
    if p < 1 or p > m:
        raise ConfigError(f"need 1 <= p <= m, got m={m}, p={p}")
    parts = PartitionSet.contiguous(m, p)
    if init is None:
        values = zeros_init(m)
    elif callable(init):
        values = np.asarray(init(m), dtype=np.float64)
    else:
        values = np.asarray(init, dtype=np.float64)
    if values.shape != (m,):
        raise ConfigError(f"initial vector has shape {values.shape}, expected ({m},)")
    depth = None if delta is None else delta + 2
    return ParameterDatabase(parts, values, ring_depth=depth)
