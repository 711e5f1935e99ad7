"""The N x M log-density matrix and the likelihood functionals on it."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels
from .errors import InvalidArgument, MixcertError, ResourceLimit
from .models import ComponentSet, Dataset

DEFAULT_MEMORY_BUDGET = 8 * 2**30
# density ratios below this are treated as zero inside convex EM
SCALED_FLOOR = 1e-280
_BUILD_BLOCK = 4096


@dataclass(frozen=True, eq=False)
class LogLikelihoodMatrix:
    """Entry (i, m) is log Pr(x_i; theta_m) in nats; rows are data points."""

    entries: np.ndarray
    dataset_hash: str | None = None
    set_hash: str | None = None

    def __post_init__(self):
        a = np.ascontiguousarray(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise InvalidArgument("log-likelihood matrix must be a nonempty 2-D array")
        if not np.all(np.isfinite(a)):
            raise InvalidArgument("log-likelihood matrix has non-finite entries")
        if a is self.entries and a.flags.writeable:
            a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def n_points(self) -> int:
        return self.entries.shape[0]

    @property
    def n_models(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self):
        return self.entries.shape

    @cached_property
    def content_hash(self) -> str:
        return hashlib.sha256(self.entries.tobytes()).hexdigest()

    @cached_property
    def rowmax(self) -> np.ndarray:
        return self.entries.max(axis=1)

    @cached_property
    def scaled(self) -> np.ndarray:
        """exp(L - rowmax) with entries below SCALED_FLOOR set to zero.

        These are the density ratios convex EM works with.  Flushing keeps
        subnormals (which are very slow) out of the inner loops.
        """
        e = scaled_densities(self.entries, self.rowmax)
        e.setflags(write=False)
        return e

    def columns(self, idx) -> "LogLikelihoodMatrix":
        return LogLikelihoodMatrix(self.entries[:, np.asarray(idx, dtype=np.int64)])


@dataclass(frozen=True, eq=False)
class WeightVector:
    """A point on the M-simplex; ``support`` marks it as declared K-sparse."""

    weights: np.ndarray
    support: np.ndarray | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size < 1 or not np.all(np.isfinite(w)):
            raise InvalidArgument("weight vector must be nonempty and finite")
        if np.any(w < 0):
            raise InvalidArgument("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidArgument(f"weights sum to {w.sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.support is not None:
            sup = np.unique(np.asarray(self.support, dtype=np.int64))
            if sup.size < 1 or sup[0] < 0 or sup[-1] >= w.size:
                raise InvalidArgument("support indices out of range")
            outside = np.ones(w.size, bool)
            outside[sup] = False
            if np.any(w[outside] != 0):
                raise InvalidArgument("weights are nonzero outside the declared support")
            sup.setflags(write=False)
            object.__setattr__(self, "support", sup)

    @classmethod
    def uniform(cls, m: int) -> "WeightVector":
        return cls(np.full(m, 1.0 / m))

    @classmethod
    def indicator(cls, m: int, index: int) -> "WeightVector":
        w = np.zeros(m)
        w[index] = 1.0
        return cls(w, [index])

    @classmethod
    def from_support(cls, m: int, support, weights=None) -> "WeightVector":
        """Sparse vector of length m; duplicate indices have their weights summed."""
        support = np.asarray(support, dtype=np.int64)
        if weights is None:
            weights = np.full(support.size, 1.0 / support.size)
        w = np.zeros(m)
        np.add.at(w, support, np.asarray(weights, dtype=float))
        w /= w.sum()
        return cls(w, np.unique(support))

    @classmethod
    def normalized(cls, weights, support=None) -> "WeightVector":
        w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        return cls(w / w.sum(), support)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def nonzero(self) -> np.ndarray:
        return np.flatnonzero(self.weights)

    def __len__(self):
        return self.weights.size


def scaled_densities(L: np.ndarray, rowmax: np.ndarray) -> np.ndarray:
    e = np.exp(L - rowmax[:, None])
    e[e < SCALED_FLOOR] = 0.0
    return e


def as_weights(pi, m: int | None = None) -> WeightVector:
    wv = pi if isinstance(pi, WeightVector) else WeightVector(pi)
    if m is not None and wv.size != m:
        raise InvalidArgument(f"weight vector has length {wv.size}, matrix has {m} columns")
    return wv


def matrix_bytes(n: int, m: int) -> int:
    return 8 * int(n) * int(m)


def log_density_columns(X: np.ndarray, cset: ComponentSet, idx) -> np.ndarray:
    """Log densities of every point under the members ``idx`` of ``cset``.

    ``idx`` is an index array or a ``slice``.
    """
    means = np.ascontiguousarray(cset.means[idx])
    out = np.empty((X.shape[0], means.shape[0]))
    kernels.log_density_block(
        X,
        means,
        np.ascontiguousarray(cset.chols[idx]),
        np.ascontiguousarray(cset.logdets[idx]),
        out,
    )
    return out


def build_matrix(dataset: Dataset, cset: ComponentSet, memory_budget: int = DEFAULT_MEMORY_BUDGET, block: int = _BUILD_BLOCK) -> LogLikelihoodMatrix:
    """Evaluate every candidate density at every data point.

    Each entry is computed independently, so the result is bit-identical for
    any block size and any number of worker threads.
    """
    if dataset.dim != cset.dimension:
        raise InvalidArgument(f"dataset dimension {dataset.dim} != component dimension {cset.dimension}")
    n, m = dataset.n, len(cset)
    need = matrix_bytes(n, m)
    if need > memory_budget:
        raise ResourceLimit(f"log-likelihood matrix needs {need} bytes, budget is {memory_budget}", need)
    X = np.ascontiguousarray(dataset.points)
    out = np.empty((n, m))
    for lo in range(0, m, block):
        hi = min(m, lo + block)
        out[:, lo:hi] = log_density_columns(X, cset, slice(lo, hi))
    if not np.all(np.isfinite(out)):
        raise MixcertError("log-density evaluation produced non-finite values")
    out.setflags(write=False)
    return LogLikelihoodMatrix(out, dataset.content_hash, cset.content_hash)


def _weighted_logs(matrix: LogLikelihoodMatrix, pi) -> tuple[np.ndarray, np.ndarray]:
    wv = as_weights(pi, matrix.n_models)
    idx = wv.nonzero
    if idx.size == 0:
        raise InvalidArgument("weight vector is all zeros")
    return idx, matrix.entries[:, idx] + np.log(wv.weights[idx])


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    mx = a.max(axis=1)
    return mx + np.log(np.exp(a - mx[:, None]).sum(axis=1))


def row_log_mixture(matrix: LogLikelihoodMatrix, pi) -> np.ndarray:
    """log p_pi(x_i) for every row; zero-weight columns are never touched."""
    _, a = _weighted_logs(matrix, pi)
    return _logsumexp_rows(a)


def mixture_ll(matrix: LogLikelihoodMatrix, pi) -> float:
    """Normalised log-likelihood (1/N) sum_i log sum_m pi_m exp(L_im)."""
    return float(np.mean(row_log_mixture(matrix, pi)))


def responsibilities(matrix: LogLikelihoodMatrix, pi) -> np.ndarray:
    idx, a = _weighted_logs(matrix, pi)
    q_sub = np.exp(a - _logsumexp_rows(a)[:, None])
    q_sub /= q_sub.sum(axis=1, keepdims=True)
    q = np.zeros(matrix.shape)
    q[:, idx] = q_sub
    return q


def ll_gradient(matrix: LogLikelihoodMatrix, pi) -> np.ndarray:
    """g_m = (1/N) sum_i exp(L_im - log p_pi(x_i)) for every column m."""
    ell = row_log_mixture(matrix, pi)
    return np.exp(matrix.entries - ell[:, None]).mean(axis=0)


def fw_gap(matrix: LogLikelihoodMatrix, pi) -> float:
    """Linearisation gap max_m g_m - 1.

    By concavity of LL and g . pi = 1, every feasible pi' satisfies
    LL(pi') <= LL(pi) + fw_gap(pi).
    """
    return float(ll_gradient(matrix, pi).max() - 1.0)


# binary cache: b"MXLL", u32 version, u64 N, u64 M, then row-major <f8

_MAGIC = b"MXLL"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def save_matrix(matrix: LogLikelihoodMatrix, path) -> None:
    n, m = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, n, m))
        fh.write(matrix.entries.astype("<f8", copy=False).tobytes(order="C"))


def load_matrix(path, dataset_hash=None, set_hash=None) -> LogLikelihoodMatrix:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise InvalidArgument("matrix cache is truncated")
    magic, version, n, m = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != _VERSION:
        raise InvalidArgument("not a version-1 MXLL matrix cache")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != n * m:
        raise InvalidArgument(f"matrix cache holds {body.size} values, header says {n} x {m}")
    return LogLikelihoodMatrix(body.reshape(n, m).astype(np.float64), dataset_hash, set_hash)
