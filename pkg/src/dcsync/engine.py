"""Run p worker threads against the scheduler and collect timings.

Each worker runs the same loop regardless of protocol: read every chunk at
its current iteration, take one descent step for its own block of features,
optionally sleep (injected straggling), write its chunk, move on. The
protocol only changes which of those reads and writes the scheduler lets
through, so timing differences isolate the synchronization policy.

Stopping is decided on completed iterations: when the writes of iteration
``a`` have landed on every chunk the master compares the vector at ``a`` with
the one at ``a - 1``. On a stop at ``T`` every worker halts and the reported
parameters are the version at ``T``, whatever workers that ran ahead wrote.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from dcsync.history import History
from dcsync.modeldb import ConfigError, create_db
from dcsync.sync import (DATA_CENTRIC, Aborted, DeadlockError, Halted, ProtocolConfig,
                         Scheduler)
from dcsync.workloads import (Dataset, DivergenceError, GdConfig, loss, step_norm,
                              update_block, warmup)


@dataclass(frozen=True)
class StragglerModel:
    kind: str = "none"  # none | uniform | slow
    lo_ms: float = 0.0
    hi_ms: float = 0.0
    worker: int = 0
    ms: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "slow"):
            raise ValueError(f"unknown straggler kind {self.kind!r}")
        if min(self.lo_ms, self.hi_ms, self.ms) < 0 or self.lo_ms > self.hi_ms:
            raise ValueError("straggler delays must satisfy 0 <= lo <= hi")

    @classmethod
    def parse(cls, text: str) -> "StragglerModel":
        """``none``, ``uniform:LO:HI`` or ``slow:WORKER:MS`` (milliseconds)."""
        parts = text.strip().split(":")
        try:
            if parts == ["none"]:
                return cls()
            if parts[0] == "uniform" and len(parts) == 3:
                return cls("uniform", lo_ms=float(parts[1]), hi_ms=float(parts[2]))
            if parts[0] == "slow" and len(parts) == 3:
                return cls("slow", worker=int(parts[1]), ms=float(parts[2]))
        except ValueError:
            pass
        raise ValueError(f"bad straggler spec {text!r}; use none, uniform:LO:HI or slow:WORKER:MS")

    def delay_ms(self, worker: int, it: int, timing_seed: int) -> float:
        if self.kind == "slow":
            return self.ms if worker == self.worker else 0.0
        if self.kind == "uniform":
            rng = np.random.default_rng([timing_seed, worker, it])
            return float(rng.uniform(self.lo_ms, self.hi_ms))
        return 0.0

    def __str__(self) -> str:
        if self.kind == "uniform":
            return f"uniform:{self.lo_ms:g}:{self.hi_ms:g}"
        if self.kind == "slow":
            return f"slow:{self.worker}:{self.ms:g}"
        return "none"


@dataclass
class RunConfig:
    dataset: Dataset
    gd: GdConfig
    workers: int
    protocol: ProtocolConfig = DATA_CENTRIC
    straggler: StragglerModel = field(default_factory=StragglerModel)
    record_history: bool = False
    timing_seed: int = 0
    watchdog_s: float = 30.0
    theta0: np.ndarray | None = None

    def validate(self) -> None:
        m = self.dataset.num_features
        if not 1 <= self.workers <= m:
            raise ConfigError(f"need 1 <= workers <= features ({m}), got {self.workers}")
        if self.straggler.kind == "slow" and not 0 <= self.straggler.worker < self.workers:
            raise ConfigError(f"slow worker {self.straggler.worker} does not exist")
        if self.gd.algorithm == "minibatch" and self.gd.batch_size > self.dataset.num_examples:
            raise ConfigError("mini-batch larger than the dataset")


@dataclass
class RunResult:
    final_theta: np.ndarray
    iterations: int
    wall_ms: float
    per_iteration_ms: list[float]
    final_loss: float
    history: History | None = None
    max_write_lead: int = 0  # largest (write iteration - completed frontier) seen


def stop_rule(it: int, theta: np.ndarray, prev: np.ndarray, gd: GdConfig) -> int | None:
    """Return ``it`` when the run should end there, else None."""
    if step_norm(theta, prev) <= gd.tol or it >= gd.max_iters:
        return it
    return None


class _Master:
    def __init__(self, db, gd: GdConfig, t0: float):
        self.db = db
        self.gd = gd
        self.t0 = t0
        self.prev = db.snapshot_at(0)
        self.stop_at: int | None = None
        self.final: np.ndarray | None = None
        self.done_ms: list[float] = []

    def on_frontier(self, it: int) -> bool:
        snap = self.db.snapshot_at(it)
        self.done_ms.append((time.perf_counter() - self.t0) * 1e3)
        if not np.all(np.isfinite(snap)):
            raise DivergenceError(f"parameters became non-finite at iteration {it}")
        stop = stop_rule(it, snap, self.prev, self.gd)
        self.prev = snap
        if stop is not None:
            self.stop_at = stop
            self.final = snap
            return True
        return False


def _worker_loop(i: int, cfg: RunConfig, sched: Scheduler, block: tuple[int, int],
                 errors: list) -> None:
    p = cfg.workers
    it = 1
    try:
        while True:
            theta = np.concatenate([sched.read(i, j, it) for j in range(p)])
            new = update_block(theta, cfg.dataset, cfg.gd, it, block)
            delay = cfg.straggler.delay_ms(i, it, cfg.timing_seed)
            if delay > 0:
                time.sleep(delay / 1e3)
            sched.write(i, it, new)
            it += 1
    except (Halted, Aborted):
        pass
    except BaseException as exc:  # noqa: BLE001 - forwarded to the caller
        errors.append(exc)
        sched.abort(exc)
    finally:
        sched.retire(i)


def join_with_watchdog(threads, sched: Scheduler, watchdog_s: float, poll_s: float = 0.05) -> None:
    """Join ``threads``; abort the run if ops are pending and nothing executed for ``watchdog_s``."""
    for t in threads:
        while t.is_alive():
            t.join(timeout=poll_s)
            if sched.pending and sched.idle_seconds() > watchdog_s:
                sched.abort(DeadlockError(
                    f"no operation executed for {watchdog_s}s; pending: "
                    + "; ".join(sched.pending_snapshot()), list(sched.pending)))


def run_parallel(cfg: RunConfig) -> RunResult:
    cfg.validate()
    d = cfg.dataset
    warmup()
    db = create_db(d.num_features, cfg.workers, init=cfg.theta0,
                   delta=cfg.protocol.effective_delta)
    errors: list[BaseException] = []
    t0 = time.perf_counter()
    master = _Master(db, cfg.gd, t0)
    sched = Scheduler(db, cfg.protocol, on_frontier=master.on_frontier, record=cfg.record_history)
    threads = [
        threading.Thread(target=_worker_loop, args=(i, cfg, sched, db.partition_set.bounds[i], errors),
                         name=f"worker-{i}", daemon=True)
        for i in range(cfg.workers)
    ]
    for t in threads:
        t.start()
    join_with_watchdog(threads, sched, cfg.watchdog_s)
    if errors:
        raise errors[0]
    if sched.abort_reason is not None:
        raise sched.abort_reason
    if master.stop_at is None:
        raise RuntimeError("workers exited without a stop decision")
    wall_ms = master.done_ms[-1]
    per_iter = list(np.diff([0.0] + master.done_ms))
    theta = master.final
    return RunResult(
        final_theta=theta,
        iterations=master.stop_at,
        wall_ms=wall_ms,
        per_iteration_ms=per_iter,
        final_loss=loss(theta, d, cfg.gd.lam),
        history=sched.history() if cfg.record_history else None,
        max_write_lead=sched.max_write_lead,
    )


def trimmed_mean(values, trim: int = 2) -> float:
    """Mean after dropping the ``trim`` smallest and ``trim`` largest values."""
    vals = sorted(values)
    if len(vals) <= 2 * trim:
        raise ValueError(f"need more than {2 * trim} values, got {len(vals)}")
    kept = vals[trim:len(vals) - trim]
    return sum(kept) / len(kept)


@dataclass
class TimedRuns:
    results: list[RunResult]
    wall_ms: list[float]
    trimmed_mean_ms: float


def timed_run(cfg: RunConfig, repeats: int = 10, runner=run_parallel) -> TimedRuns:
    """Repeat a run with timing seeds ``timing_seed + r``; workload seeds stay fixed.

    ``runner`` maps a RunConfig to a RunResult (swap it out to test the summary).
    """
    if repeats < 5:
        raise ValueError("timed_run needs at least 5 repeats")
    results = []
    for r in range(repeats):
        run_cfg = RunConfig(**{**cfg.__dict__, "timing_seed": cfg.timing_seed + r})
        results.append(runner(run_cfg))
    walls = [r.wall_ms for r in results]
    return TimedRuns(results, walls, trimmed_mean(walls))
