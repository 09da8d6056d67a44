"""Independent reference implementations used only by the tests.

Deliberately naive: plain Python loops over dense lists, and constraint
predicates written out quantifier by quantifier.
"""
from itertools import permutations

from dcsync.history import READ, WRITE


def dense_rows(d):
    X = d.to_dense()
    return [list(map(float, row)) for row in X], list(map(float, d.targets))


def naive_loss(theta, X, y, lam=0.0):
    total = 0.0
    for row, target in zip(X, y):
        s = 0.0
        for x, t in zip(row, theta):
            s += x * t
        total += (s - target) ** 2
    return total + lam * sum(t * t for t in theta)


def central_diff(f, theta, i, h=1e-6):
    up = list(theta)
    dn = list(theta)
    up[i] += h
    dn[i] -= h
    return (f(up) - f(dn)) / (2 * h)


def _positions(h):
    return {op.key: n for n, op in enumerate(h.ops)}


def _iters(h):
    return sorted({op.iteration for op in h.ops})


def literal_bsp(h):
    """forall i,j,k: w_k[a] < r_i[pi_j][a+1]  and  r_k[pi_j][a] < w_i[a]."""
    pos = _positions(h)
    p = h.num_workers
    for a in _iters(h):
        for i in range(p):
            for j in range(p):
                for k in range(p):
                    w = pos.get((WRITE, k, k, a))
                    r = pos.get((READ, i, j, a + 1))
                    if w is not None and r is not None and not w < r:
                        return False
                    r = pos.get((READ, k, j, a))
                    w = pos.get((WRITE, i, i, a))
                    if w is not None and r is not None and not r < w:
                        return False
    return True


def literal_rcwc(h, delta=0):
    """forall i,j: w_j[a-1-d] < r_i[pi_j][a]  and  r_j[pi_i][a-d] < w_i[a]."""
    pos = _positions(h)
    p = h.num_workers
    for a in _iters(h):
        for i in range(p):
            for j in range(p):
                w = pos.get((WRITE, j, j, a - 1 - delta))
                r = pos.get((READ, i, j, a))
                if w is not None and r is not None and not w < r:
                    return False
                r = pos.get((READ, j, i, a - delta))
                w = pos.get((WRITE, i, i, a))
                if w is not None and r is not None and not r < w:
                    return False
    return True


def literal_sequential(h):
    """Per partition: ops of iteration a+1 after all ops of a, reads before the write."""
    p = h.num_workers
    for part in range(p):
        ops = [(n, op) for n, op in enumerate(h.ops) if op.partition == part]
        for n1, o1 in ops:
            for n2, o2 in ops:
                if o1.iteration < o2.iteration and not n1 < n2:
                    return False
                if (o1.iteration == o2.iteration and o1.kind == READ
                        and o2.kind == WRITE and not n1 < n2):
                    return False
    return True


def brute_force_orders(p, iters):
    """All total orders of the strict worker programs, by filtering permutations."""
    progs = []
    for w in range(p):
        prog = []
        for a in range(1, iters + 1):
            prog += [(READ, w, j, a) for j in range(p)] + [(WRITE, w, w, a)]
        progs.append(prog)
    everything = [op for prog in progs for op in prog]
    seen = set()
    for perm in permutations(everything):
        if perm in seen:
            continue
        ok = all([op for op in perm if op[1] == w] == progs[w] for w in range(p))
        if ok:
            seen.add(perm)
    return seen
