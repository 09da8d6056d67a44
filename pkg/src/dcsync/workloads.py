"""Linear regression by gradient descent: data, objective, and the sequential run.

The objective is ``sum_j (x_j . theta - y_j)^2 + lam * ||theta||^2``. Every sum
runs over examples in ascending order and, inside a dot product, over features
in ascending order. The kernels are compiled without fast-math so the order
is preserved, which is what lets a parallel run reproduce the sequential one
bit for bit: a worker computing the gradient for its block of features does
exactly the float operations the full-vector computation does for those
components.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from dcsync.modeldb import PartitionSet


class DivergenceError(ArithmeticError):
    pass


class SparseFormatError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows in CSR layout; column indices within a row strictly ascending."""

    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    targets: np.ndarray
    num_features: int

    def __post_init__(self):
        n = len(self.targets)
        if n < 1 or self.num_features < 1:
            raise ValueError("dataset needs at least one example and one feature")
        if len(self.indptr) != n + 1:
            raise ValueError("indptr length must be num_examples + 1")
        for arr in (self.indptr, self.indices, self.values, self.targets):
            arr.flags.writeable = False

    @property
    def num_examples(self) -> int:
        return len(self.targets)

    @classmethod
    def from_dense(cls, X, y) -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
        rows, cols = np.nonzero(X)
        indptr = np.zeros(X.shape[0] + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return cls(np.cumsum(indptr), cols.astype(np.int64), X[rows, cols].copy(),
                   y.copy(), X.shape[1])

    def to_dense(self) -> np.ndarray:
        X = np.zeros((self.num_examples, self.num_features))
        for j in range(self.num_examples):
            lo, hi = self.indptr[j], self.indptr[j + 1]
            X[j, self.indices[lo:hi]] = self.values[lo:hi]
        return X

    def row(self, j: int) -> list[tuple[int, float]]:
        lo, hi = self.indptr[j], self.indptr[j + 1]
        return list(zip(self.indices[lo:hi].tolist(), self.values[lo:hi].tolist()))

    def identical(self, other: "Dataset") -> bool:
        return (self.num_features == other.num_features
                and all(np.array_equal(a, b) for a, b in (
                    (self.indptr, other.indptr), (self.indices, other.indices),
                    (self.values, other.values), (self.targets, other.targets))))


@dataclass(frozen=True)
class GdConfig:
    algorithm: str = "batch"  # batch | sgd | minibatch
    batch_size: int | None = None  # minibatch only
    eta: float | None = None  # None -> 1e-3 / n
    lam: float = 0.0
    max_iters: int = 100
    tol: float = 1e-8
    sample_seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("batch", "sgd", "minibatch"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm == "minibatch" and (self.batch_size is None or self.batch_size < 1):
            raise ValueError("minibatch needs batch_size >= 1")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.lam < 0 or self.tol < 0:
            raise ValueError("lam and tol must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    def step_size(self, n: int) -> float:
        return self.eta if self.eta is not None else 1e-3 / n

    @property
    def label(self) -> str:
        return f"minibatch={self.batch_size}" if self.algorithm == "minibatch" else self.algorithm


# -- kernels ------------------------------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _row_dot(indptr, indices, values, theta, j):
    s = 0.0
    for q in range(indptr[j], indptr[j + 1]):
        s += values[q] * theta[indices[q]]
    return s


@numba.njit(nogil=True, cache=True)
def _loss_kernel(indptr, indices, values, targets, theta, lam):
    total = 0.0
    for j in range(len(targets)):
        r = _row_dot(indptr, indices, values, theta, j) - targets[j]
        total += r * r
    reg = 0.0
    for k in range(len(theta)):
        reg += theta[k] * theta[k]
    return total + lam * reg


@numba.njit(nogil=True, cache=True)
def _grad_kernel(indptr, indices, values, targets, theta, lam, batch, lo, hi):
    g = np.zeros(hi - lo)
    for t in range(len(batch)):
        j = batch[t]
        r = _row_dot(indptr, indices, values, theta, j) - targets[j]
        start, stop = indptr[j], indptr[j + 1]
        q = start + np.searchsorted(indices[start:stop], lo)
        while q < stop and indices[q] < hi:
            g[indices[q] - lo] += 2.0 * r * values[q]
            q += 1
    for k in range(lo, hi):
        g[k - lo] += 2.0 * lam * theta[k]
    return g


@numba.njit(nogil=True, cache=True)
def _predict_kernel(indptr, indices, values, theta):
    n = len(indptr) - 1
    out = np.empty(n)
    for j in range(n):
        out[j] = _row_dot(indptr, indices, values, theta, j)
    return out


def _check_theta(theta, d: Dataset) -> np.ndarray:
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if theta.shape != (d.num_features,):
        raise ValueError(f"theta has shape {theta.shape}, dataset has {d.num_features} features")
    return theta


def loss(theta, d: Dataset, lam: float = 0.0) -> float:
    theta = _check_theta(theta, d)
    return float(_loss_kernel(d.indptr, d.indices, d.values, d.targets, theta, lam))


def predict(theta, d: Dataset) -> np.ndarray:
    return _predict_kernel(d.indptr, d.indices, d.values, _check_theta(theta, d))


def gradient(theta, d: Dataset, lam: float = 0.0, batch=None,
             block: tuple[int, int] | None = None) -> np.ndarray:
    """Gradient over ``batch`` (all examples if None), optionally only for
    features ``block = (lo, hi)``.
    """
    theta = _check_theta(theta, d)
    if batch is None:
        batch = np.arange(d.num_examples, dtype=np.int64)
    else:
        batch = np.asarray(batch, dtype=np.int64)
        if batch.size == 0:
            raise ValueError("empty batch")
        if batch.min() < 0 or batch.max() >= d.num_examples:
            raise IndexError("batch index out of range")
    lo, hi = block if block is not None else (0, d.num_features)
    if not 0 <= lo < hi <= d.num_features:
        raise ValueError(f"bad feature block {block}")
    return _grad_kernel(d.indptr, d.indices, d.values, d.targets, theta, lam, batch, lo, hi)


def select_batch(cfg: GdConfig, it: int, n: int) -> np.ndarray:
    """Examples used in iteration ``it``; depends only on (seed, it), never on the worker."""
    if it < 1:
        raise ValueError("iterations start at 1")
    if cfg.algorithm == "batch":
        return np.arange(n, dtype=np.int64)
    rng = np.random.default_rng([cfg.sample_seed, it])
    if cfg.algorithm == "sgd":
        return np.array([rng.integers(n)], dtype=np.int64)
    if cfg.batch_size > n:
        raise ValueError(f"batch size {cfg.batch_size} exceeds {n} examples")
    return np.sort(rng.choice(n, size=cfg.batch_size, replace=False)).astype(np.int64)


def update_block(theta, d: Dataset, cfg: GdConfig, it: int, block: tuple[int, int]) -> np.ndarray:
    """New values for features ``block`` after one descent step from ``theta``."""
    lo, hi = block
    batch = select_batch(cfg, it, d.num_examples)
    g = gradient(theta, d, cfg.lam, batch, block)
    return theta[lo:hi] - cfg.step_size(d.num_examples) * g


def step_norm(new, old) -> float:
    return float(np.linalg.norm(np.subtract(new, old)))


@dataclass
class SequentialResult:
    theta: np.ndarray
    iterations: int
    losses: list[float] = field(default_factory=list)  # losses[a] is the loss of theta[a]


def sequential_run(d: Dataset, cfg: GdConfig, partitions: PartitionSet | None = None,
                   theta0=None) -> SequentialResult:
    """Single-threaded reference run: read every chunk, compute, write every chunk."""
    m = d.num_features
    if partitions is None:
        partitions = PartitionSet.contiguous(m, 1)
    if partitions.num_features != m:
        raise ValueError("partition set does not cover the dataset's features")
    theta = np.zeros(m) if theta0 is None else _check_theta(theta0, d).copy()
    losses = [loss(theta, d, cfg.lam)]
    it = 0
    while True:
        it += 1
        snapshot = theta.copy()
        for block in partitions.bounds:
            theta[block[0]:block[1]] = update_block(snapshot, d, cfg, it, block)
        cur = loss(theta, d, cfg.lam)
        losses.append(cur)
        if not np.isfinite(cur):
            raise DivergenceError(f"loss became {cur} at iteration {it}")
        if step_norm(theta, snapshot) <= cfg.tol or it >= cfg.max_iters:
            return SequentialResult(theta, it, losses)


# -- data -----------------------------------------------------------------------------

def gen_synthetic(n: int, m: int, noise_sd: float = 0.0, seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Dense i.i.d. standard normal features, true weights uniform on [-1, 1]."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, m))
    theta_star = rng.uniform(-1.0, 1.0, size=m)
    noise = rng.normal(0.0, noise_sd, size=n) if noise_sd > 0 else np.zeros(n)
    d = Dataset.from_dense(X, np.zeros(n))
    # targets via the same ascending-order dot product the loss uses, so the
    # noiseless optimum has exactly zero loss
    y = predict(theta_star, d) + noise
    return Dataset(d.indptr.copy(), d.indices.copy(), d.values.copy(), y, m), theta_star


def _fmt(x: float) -> str:
    return repr(float(x))


def save_sparse(d: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(f"#features {d.num_features}\n")
        for j in range(d.num_examples):
            parts = [_fmt(d.targets[j])]
            parts.extend(f"{k + 1}:{_fmt(v)}" for k, v in d.row(j))
            f.write(" ".join(parts) + "\n")


def load_sparse(path: str | Path) -> Dataset:
    """Read ``<target> <idx>:<val> ...`` lines (1-based ascending indices).

    An optional ``#features <m>`` header fixes the feature count; otherwise it
    is the largest index seen.
    """
    declared = None
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    targets: list[float] = []
    with open(path, encoding="ascii") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                fields = line[1:].split()
                if fields and fields[0] == "features":
                    if len(fields) != 2 or not fields[1].isdigit() or int(fields[1]) < 1:
                        raise SparseFormatError(lineno, f"bad header {line!r}")
                    if targets:
                        raise SparseFormatError(lineno, "#features header must precede data")
                    declared = int(fields[1])
                continue
            tokens = line.split()
            try:
                targets.append(float(tokens[0]))
            except ValueError:
                raise SparseFormatError(lineno, f"bad target {tokens[0]!r}") from None
            prev = 0
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    k, v = int(idx), float(val)
                except ValueError:
                    raise SparseFormatError(lineno, f"bad feature entry {tok!r}") from None
                if not sep or k < 1:
                    raise SparseFormatError(lineno, f"bad feature entry {tok!r}")
                if k <= prev:
                    raise SparseFormatError(lineno, f"feature indices not ascending at {tok!r}")
                if declared is not None and k > declared:
                    raise SparseFormatError(lineno, f"index {k} exceeds declared {declared} features")
                prev = k
                indices.append(k - 1)
                values.append(v)
            indptr.append(len(indices))
    if not targets:
        raise SparseFormatError(0, "no examples")
    m = declared if declared is not None else max(indices, default=-1) + 1
    return Dataset(np.array(indptr, dtype=np.int64), np.array(indices, dtype=np.int64),
                   np.array(values, dtype=np.float64), np.array(targets, dtype=np.float64),
                   max(m, 1))


def warmup() -> None:
    """Compile the kernels so the first timed run does not pay for it."""
    d = Dataset.from_dense(np.ones((1, 1)), np.ones(1))
    theta = np.zeros(1)
    loss(theta, d)
    gradient(theta, d)
