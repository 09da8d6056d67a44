import random
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcsync.history import READ, WRITE, check_bsp, check_rcwc
from dcsync.modeldb import create_db
from dcsync.sync import (BSP, DATA_CENTRIC, FULLY_ASYNC, Aborted, DeadlockError, Halted,
                         PendingOp, Protocol, ProtocolConfig, Scheduler, admit_read,
                         admit_write, barrier_state, bounded_delay)


def db_with(chunk_iters, read_iters):
    p = len(chunk_iters)
    db = create_db(p, p)
    for c, it, reads in zip(db.chunks, chunk_iters, read_iters):
        c.chunk_iteration = it
        c.read_iterations = list(reads)
    return db


def test_parse_protocols():
    assert ProtocolConfig.parse("bsp") == BSP
    assert ProtocolConfig.parse("rcwc") == DATA_CENTRIC
    assert ProtocolConfig.parse("delay=3") == bounded_delay(3)
    assert ProtocolConfig.parse("async") == FULLY_ASYNC
    assert str(bounded_delay(2)) == "delay=2"
    for bad in ("sync", "delay=x", "delay=-1"):
        with pytest.raises(ValueError):
            ProtocolConfig.parse(bad)


# -- admission examples --------------------------------------------------------------

def test_read_admission_examples():
    db = db_with([1, 1], [[1, 1], [1, 1]])
    assert admit_read(DATA_CENTRIC, db, 0, 1, 2)
    db = db_with([0, 0], [[1, 1], [1, 1]])
    assert not admit_read(DATA_CENTRIC, db, 0, 1, 2)
    assert admit_read(bounded_delay(1), db, 0, 1, 2)  # 0 >= 2 - 1 - 1
    assert admit_read(FULLY_ASYNC, db, 0, 1, 99)


def test_write_admission_examples():
    db = db_with([0, 0, 0], [[0, 0, 0], [1, 1, 1], [0, 0, 0]])
    assert admit_write(DATA_CENTRIC, db, 1, 1)
    db = db_with([0, 0, 0], [[0, 0, 0], [1, 0, 1], [0, 0, 0]])
    assert not admit_write(DATA_CENTRIC, db, 1, 1)
    db = db_with([0, 2, 0], [[0, 0, 0], [3, 2, 3], [0, 0, 0]])
    assert admit_write(bounded_delay(1), db, 1, 3)  # min 2 >= 3 - 1
    assert not admit_write(bounded_delay(0), db, 1, 3)
    assert admit_write(FULLY_ASYNC, db, 1, 3)


def test_bsp_predicates_are_global():
    db = db_with([1, 0], [[2, 2], [2, 2]])
    assert admit_read(DATA_CENTRIC, db, 1, 0, 2)
    assert not admit_read(BSP, db, 1, 0, 2)
    db = db_with([0, 0], [[1, 1], [1, 0]])
    assert admit_write(DATA_CENTRIC, db, 0, 1)
    assert not admit_write(BSP, db, 0, 1)


def test_delta_zero_matches_data_centric_exactly():
    rng = random.Random(7)
    for _ in range(2000):
        p = rng.randint(1, 4)
        db = db_with([rng.randint(0, 4) for _ in range(p)],
                     [[rng.randint(0, 5) for _ in range(p)] for _ in range(p)])
        w, j, it = rng.randrange(p), rng.randrange(p), rng.randint(1, 6)
        assert admit_write(DATA_CENTRIC, db, w, it) == admit_write(bounded_delay(0), db, w, it)
        # delay=0 reads accept a chunk that is ahead, rcwc does not; on reachable
        # states a chunk is never ahead of a reader's next iteration
        if db.chunks[j].chunk_iteration <= it - 1:
            assert admit_read(DATA_CENTRIC, db, w, j, it) == admit_read(bounded_delay(0), db, w, j, it)


states = st.integers(1, 5).flatmap(lambda p: st.tuples(
    st.just(p),
    st.lists(st.integers(0, 6), min_size=p, max_size=p),
    st.lists(st.lists(st.integers(0, 7), min_size=p, max_size=p), min_size=p, max_size=p),
    st.integers(0, p - 1), st.integers(0, p - 1), st.integers(1, 8), st.integers(0, 4),
))


@settings(max_examples=500)
@given(states)
def test_subsumption(state):
    """bsp admits => rcwc admits => delay(d) admits => async admits."""
    p, chunk_iters, reads, w, j, it, d = state
    db = db_with(chunk_iters, reads)
    chain = [BSP, DATA_CENTRIC, bounded_delay(d), bounded_delay(d + 1), FULLY_ASYNC]
    for stronger, weaker in zip(chain, chain[1:]):
        if admit_read(stronger, db, w, j, it):
            assert admit_read(weaker, db, w, j, it)
        if admit_write(stronger, db, w, it):
            assert admit_write(weaker, db, w, it)


def test_barrier_state_view():
    db = db_with([1, 0], [[1, 1], [1, 0]])
    bs = barrier_state(db, 1)
    assert bs.reads_done.tolist() == [[True, True], [True, False]]
    assert bs.writes_done.tolist() == [True, False]


# -- deferral and wake-up --------------------------------------------------------------

def read(w, j, it):
    return PendingOp(READ, w, j, it)


def write(w, it, n=1):
    return PendingOp(WRITE, w, w, it, np.zeros(n))


def test_on_executed_empty_pending():
    sched = Scheduler(create_db(2, 2), DATA_CENTRIC)
    assert sched.offer(read(0, 0, 1))
    assert sched.on_executed(sched.ops[-1]) == []


def test_deferred_read_wakes_after_write():
    sched = Scheduler(create_db(2, 2), DATA_CENTRIC)
    for w in range(2):
        for j in range(2):
            assert sched.offer(read(w, j, 1))
    early = read(0, 1, 2)
    assert not sched.offer(early)
    assert sched.pending == [early]
    assert sched.offer(write(1, 1))
    # w_1[pi_1][1] executed, the parked read ran in the same cascade
    assert early.outcome == "done" and sched.pending == []
    kinds = [(o.kind, o.worker, o.partition, o.iteration) for o in sched.ops[-2:]]
    assert kinds == [(WRITE, 1, 1, 1), (READ, 0, 1, 2)]


def test_on_executed_returns_woken_in_fifo_order():
    db = create_db(3, 3)
    sched = Scheduler(db, DATA_CENTRIC)
    parked = [read(0, 2, 2), read(1, 2, 2), read(1, 0, 2)]
    sched.pending = list(parked)
    for w in range(3):
        db.execute_read(w, 2, 1)
    acc = db.execute_write(2, 1, [0.0])
    woken = sched.on_executed(acc)
    assert woken == parked[:2]
    assert sched.pending == [parked[2]]


def test_bsp_writes_wake_together_after_last_read():
    p = 3
    sched = Scheduler(create_db(p, p), BSP)
    writes = []
    for w in range(p):
        for j in range(p):
            if (w, j) == (p - 1, p - 1):
                continue
            assert sched.offer(read(w, j, 1))
    for w in range(p - 1):
        op = write(w, 1)
        assert not sched.offer(op)
        writes.append(op)
    assert len(sched.pending) == p - 1
    assert sched.offer(read(p - 1, p - 1, 1))
    assert all(op.outcome == "done" for op in writes)
    assert sched.offer(write(p - 1, 1))
    assert check_bsp(sched.history()).valid


def test_offer_after_halt_and_abort():
    sched = Scheduler(create_db(2, 2), DATA_CENTRIC, on_frontier=lambda f: True)
    for w in range(2):
        for j in range(2):
            sched.offer(read(w, j, 1))
    parked = read(0, 1, 2)
    sched.offer(write(0, 1))
    sched.offer(read(0, 0, 2))
    assert not sched.offer(parked)
    sched.offer(write(1, 1))  # frontier reaches 1, stop requested
    assert sched.halted
    assert parked.outcome in ("done", "halted")
    with pytest.raises(Halted):
        sched.offer(read(1, 0, 2))

    sched = Scheduler(create_db(2, 2), DATA_CENTRIC)
    sched.abort(RuntimeError("boom"))
    with pytest.raises(Aborted):
        sched.offer(read(0, 0, 1))


def test_deadlock_detected_when_every_worker_blocks():
    sched = Scheduler(create_db(2, 2), DATA_CENTRIC)
    assert not sched.offer(read(0, 0, 2))  # needs w_0[1], which worker 0 never issues
    assert not sched.offer(read(1, 1, 2))
    assert isinstance(sched.abort_reason, DeadlockError)
    assert len(sched.abort_reason.pending) == 2


def test_blocked_thread_released_on_abort():
    sched = Scheduler(create_db(2, 2), DATA_CENTRIC)
    caught = []

    def worker():
        try:
            sched.read(0, 0, 2)
        except Aborted as exc:
            caught.append(exc)

    t = threading.Thread(target=worker)
    t.start()
    while not sched.pending:
        pass
    sched.abort(RuntimeError("stop"))
    t.join(timeout=5)
    assert not t.is_alive() and caught


# -- progress of the worker program under every protocol ------------------------------

def simulate(protocol, p, iters, seed):
    """Drive p worker programs through offer() in a random order, no threads."""
    rng = random.Random(seed)
    sched = Scheduler(create_db(p, p, delta=protocol.effective_delta), protocol)
    progs = []
    for w in range(p):
        prog = []
        for a in range(1, iters + 1):
            prog += [read(w, j, a) for j in range(p)] + [write(w, a)]
        progs.append(prog)
    cursor = [0] * p
    while True:
        for w in range(p):
            while cursor[w] < len(progs[w]) and progs[w][cursor[w]].outcome == "done":
                cursor[w] += 1
            if cursor[w] == len(progs[w]) and w in sched.active:
                sched.retire(w)
        ready = [w for w in range(p) if cursor[w] < len(progs[w])
                 and progs[w][cursor[w]].outcome == "pending"
                 and progs[w][cursor[w]] not in sched.pending]
        if not ready:
            break
        w = rng.choice(ready)
        sched.offer(progs[w][cursor[w]])
        assert sched.abort_reason is None, sched.abort_reason
    assert all(c == len(prog) for c, prog in zip(cursor, progs))
    return sched


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["bsp", "rcwc", "delay=1", "delay=2", "async"]),
       st.integers(1, 5), st.integers(0, 10_000))
def test_random_schedules_never_deadlock(proto, p, seed):
    protocol = ProtocolConfig.parse(proto)
    sched = simulate(protocol, p, 4, seed)
    h = sched.history()
    if protocol.kind is Protocol.BSP:
        assert check_bsp(h).valid
    if protocol.effective_delta is not None:
        assert check_rcwc(h, protocol.effective_delta).valid
