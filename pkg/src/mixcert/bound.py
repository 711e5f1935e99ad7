"""Certified upper bound on the K-sparse mixture likelihood via convex EM.

Dropping the sparsity constraint leaves a concave problem over the whole
M-simplex.  Its EM iterations are multiplicative: with
g_m = (1/N) sum_i Pr(x_i; theta_m) / p_pi(x_i), the update is
pi_m <- pi_m * g_m, and max_m g_m - 1 is a Frank-Wolfe gap that bounds the
distance to the optimum.  The reported bound is LL + gap, which stays a
valid upper bound even if iteration stops early.

Updates run on a working set: a column whose weight decays below 1e-12 / M
is dropped (only if LL does not fall by more than 1e-14), and a periodic
pass over all M columns recomputes the full gap and gives mass back to any
dropped column with gradient above 1 + tolerance.  The stopping test always
uses the full gap.

The in-memory and streamed solvers share the kernels and the reduction
order.  They agree bit for bit whenever the working-set columns fit in the
streamed solver's cache, and to rounding otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArgument, NumericalFailure, ResourceLimit
from .likelihood import (
    DEFAULT_MEMORY_BUDGET,
    SCALED_FLOOR,
    LogLikelihoodMatrix,
    WeightVector,
    log_density_columns,
    scaled_densities,
)
from .models import ComponentSet, Dataset, make_rng

_EXTRAPOLATION_FLOOR = 1e-3
# columns whose weight falls below _DROP_MASS / M leave the working set
_DROP_MASS = 1e-12
# full-gradient (all columns) check interval in iterations; doubles while
# no dropped column needs readmitting
_CHECK_EVERY = 10
_CHECK_MAX = 640


@dataclass
class ConvexEmConfig:
    max_iterations: int = 10_000
    gap_tolerance: float = 1e-8
    relative_ll_tolerance: float = 1e-12
    eta: float = 1.8
    prune_threshold: float | None = None  # None -> 1e-12 / M
    init: object = "uniform"  # "uniform" | "random" | WeightVector | array
    seed: int = 0

    def validate(self, m: int) -> float:
        """Check the invariants for an M-column problem; return the prune threshold."""
        if self.max_iterations < 1:
            raise InvalidArgument("max_iterations must be positive")
        if not (self.gap_tolerance > 0 and self.relative_ll_tolerance > 0):
            raise InvalidArgument("tolerances must be positive")
        if not 1.0 <= self.eta < 2.0:
            raise InvalidArgument("eta must lie in [1, 2)")
        prune = 1e-12 / m if self.prune_threshold is None else float(self.prune_threshold)
        if not 0.0 <= prune < 1.0 / m:
            raise InvalidArgument("prune_threshold must lie in [0, 1/M)")
        return prune

    def initial_weights(self, m: int) -> np.ndarray:
        init = self.init
        if isinstance(init, str):
            if init == "uniform":
                return np.full(m, 1.0 / m)
            if init == "random":
                w = make_rng(self.seed).dirichlet(np.ones(m))
                w = np.maximum(w, 1e-300)
                return w / w.sum()
            raise InvalidArgument(f"unknown init {init!r}")
        w = np.array(init.weights if isinstance(init, WeightVector) else init, dtype=float)
        if w.shape != (m,) or np.any(w < 0) or not w.sum() > 0:
            raise InvalidArgument("initial weights must be a nonnegative length-M vector")
        return w / w.sum()


@dataclass
class BoundResult:
    pi_dense: WeightVector
    ub_ll: float
    certified_ub: float
    final_gap: float
    iterations_used: int
    trace: list = field(default_factory=list)
    converged: bool = True
    stop_reason: str = "gap"
    prune_threshold: float = 0.0
    ascent_violations: int = 0
    matrix_hash: str | None = None
    dataset_hash: str | None = None
    set_hash: str | None = None

    def to_dict(self) -> dict:
        w = self.pi_dense.weights
        keep = np.flatnonzero(w > self.prune_threshold)
        return {
            "ub_ll": self.ub_ll,
            "certified_ub": self.certified_ub,
            "gap": self.final_gap,
            "iterations": self.iterations_used,
            "pi_support": [[int(i), float(w[i])] for i in keep],
            "trace": [[float(a), None if b is None else float(b)] for a, b in self.trace],
            "converged": self.converged,
            "stop_reason": self.stop_reason,
        }


class _Columns:
    """Serves exp(L - rowmax) columns to the solver.

    The columns of the current working set are kept as one contiguous block
    while that fits in ``cache_budget`` bytes; otherwise they are produced
    ``block`` columns at a time.  Reductions walk the working set in the
    same order either way, so every subclass yields identical floats.
    """

    def __init__(self, n, m, block, cache_budget):
        self.n, self.m = n, m
        self.block = block
        self.cache_budget = cache_budget
        self._cache_idx = None
        self._cache = None
        # set once any served ratio was flushed to zero
        self.flushed = False

    def _scaled(self, idx):
        raise NotImplementedError

    def _blocks(self, idx):
        if idx is self._cache_idx or (self._cache_idx is not None and np.array_equal(self._cache_idx, idx)):
            yield 0, idx.shape[0], self._cache
            return
        if self._cache_idx is not None and idx.shape[0] <= self._cache_idx.shape[0]:
            pos = np.searchsorted(self._cache_idx, idx)
            if np.all(pos < self._cache_idx.shape[0]) and np.array_equal(self._cache_idx[pos], idx):
                self._cache = np.ascontiguousarray(self._cache[:, pos])
                self._cache_idx = idx
                yield 0, idx.shape[0], self._cache
                return
        if 8 * self.n * idx.shape[0] <= self.cache_budget:
            self._cache = self._scaled(idx)
            self._cache_idx = idx
            yield 0, idx.shape[0], self._cache
            return
        for lo in range(0, idx.shape[0], self.block):
            hi = min(idx.shape[0], lo + self.block)
            yield lo, hi, self._scaled(idx[lo:hi])

    def mix(self, idx, W):
        s = np.zeros((W.shape[0], self.n))
        for lo, hi, E in self._blocks(idx):
            kernels.mix_sums(E, np.ascontiguousarray(W[:, lo:hi]), s, lo)
        return s

    def grad(self, idx, inv):
        out = np.empty(idx.shape[0])
        for lo, hi, E in self._blocks(idx):
            part = np.empty(hi - lo)
            kernels.column_gradient(E, inv, part)
            out[lo:hi] = part
        return out

    def grad_all(self, inv):
        out = np.empty(self.m)
        for lo in range(0, self.m, self.block):
            hi = min(self.m, lo + self.block)
            part = np.empty(hi - lo)
            kernels.column_gradient(self._scaled_range(lo, hi), inv, part)
            out[lo:hi] = part
        return out

    def _scaled_range(self, lo, hi):
        return self._scaled(np.arange(lo, hi))


class _MatrixColumns(_Columns):
    def __init__(self, matrix: LogLikelihoodMatrix):
        n, m = matrix.shape
        super().__init__(n, m, m, 8 * n * m)
        self.r = matrix.rowmax
        self.E = matrix.scaled
        self.flushed = not self.E.all()

    def _scaled(self, idx):
        return np.ascontiguousarray(self.E[:, idx])

    def _scaled_range(self, lo, hi):
        return self.E if (lo, hi) == (0, self.m) else self.E[:, lo:hi]


class _StreamedColumns(_Columns):
    """Recomputes exp(L - rowmax) from the component set instead of storing it."""

    def __init__(self, dataset: Dataset, cset: ComponentSet, block: int, cache_budget: int):
        super().__init__(dataset.n, len(cset), block, cache_budget)
        self.X = np.ascontiguousarray(dataset.points)
        self.cset = cset
        r = np.full(self.n, -np.inf)
        for lo in range(0, self.m, block):
            hi = min(self.m, lo + block)
            np.maximum(r, self._logd(np.arange(lo, hi)).max(axis=1), out=r)
        self.r = r

    def _logd(self, idx):
        return log_density_columns(self.X, self.cset, idx)

    def _scaled(self, idx):
        e = scaled_densities(self._logd(idx), self.r)
        if not self.flushed and not e.all():
            self.flushed = True
        return e


def _ll(src, s: np.ndarray) -> float:
    with np.errstate(divide="ignore"):
        return float(np.mean(src.r + np.log(s)))


def _extrapolate(pi_old, pi_new, eta):
    ext = pi_old + eta * (pi_new - pi_old)
    bad = ext <= 0.0
    if bad.any():
        ext[bad] = _EXTRAPOLATION_FLOOR * pi_new[bad]
    return ext / ext.sum()


class _State:
    """Weights restricted to the working set, with cached row sums and LL."""

    def __init__(self, src, active, w):
        self.src = src
        self.set(active, w)

    def set(self, active, w, s=None, ll=None):
        self.active = active
        self.w = w
        self.s = self.src.mix(active, w[None])[0] if s is None else s
        self.ll = _ll(self.src, self.s) if ll is None else ll

    def dense(self):
        pi = np.zeros(self.src.m)
        pi[self.active] = self.w
        return pi


def _readmit(state, g_full, tol):
    """Give a little mass to dropped columns whose gradient exceeds 1 + tol."""
    outside = np.ones(state.src.m, bool)
    outside[state.active] = False
    viol = np.flatnonzero(outside & (g_full - 1.0 > tol))
    if viol.size == 0:
        return False
    pi = state.dense()
    eps = 1e-6
    for _ in range(30):
        cand = (1.0 - eps) * pi
        cand[viol] += eps / viol.size
        active = np.flatnonzero(cand > 0)
        s = state.src.mix(active, cand[active][None])[0]
        ll = _ll(state.src, s)
        if ll >= state.ll:
            state.set(active, cand[active], s, ll)
            return True
        eps *= 0.5
    return False


def _run(src, config: ConvexEmConfig, hashes=(None, None, None)) -> BoundResult:
    m = src.m
    prune = config.validate(m)
    tol, rel_tol, eta = config.gap_tolerance, config.relative_ll_tolerance, config.eta
    drop = _DROP_MASS / m

    pi0 = config.initial_weights(m)
    active = np.flatnonzero(pi0 > 0)
    st = _State(src, active, pi0[active])
    trace = []
    violations = 0
    it = 0
    since_check = 0
    check_every = _CHECK_EVERY
    stop_reason = None
    while True:
        if not math.isfinite(st.ll):
            raise NumericalFailure(f"non-finite log-likelihood at iteration {it}", it)
        inv = 1.0 / st.s
        g = src.grad(st.active, inv) / src.n
        if it >= config.max_iterations and stop_reason is None:
            stop_reason = "max_iterations"
        gap = None
        if stop_reason or since_check >= check_every or g.max() - 1.0 <= tol:
            since_check = 0
            g_full = src.grad_all(inv) / src.n
            gap = float(g_full.max() - 1.0)
            if gap <= tol:
                stop_reason = "gap"
            elif stop_reason != "max_iterations" and _readmit(st, g_full, tol):
                stop_reason = None
                check_every = _CHECK_EVERY
                trace.append((st.ll, gap))
                continue
            else:
                check_every = min(2 * check_every, _CHECK_MAX)
        trace.append((st.ll, gap))
        if stop_reason:
            break
        it += 1
        since_check += 1

        w_new = st.w * g
        w_new /= w_new.sum()
        if eta != 1.0:
            w_ext = _extrapolate(st.w, w_new, eta)
            S = src.mix(st.active, np.stack([w_new, w_ext]))
        else:
            S = src.mix(st.active, w_new[None])
        ll_new = _ll(src, S[0])
        if ll_new < st.ll - 1e-12:
            violations += 1
        prev, prev_s = st.ll, st.s
        st.set(st.active, w_new, S[0], ll_new)
        if eta != 1.0:
            ll_ext = _ll(src, S[1])
            if ll_ext >= ll_new:
                st.set(st.active, w_ext, S[1], ll_ext)

        small = st.w < drop
        n_small = int(small.sum())
        # drop in batches: each drop re-gathers the cached block
        if 0 < n_small < small.size and (n_small * 16 >= small.size or gap is not None):
            # zero the small weights on the current block so the cache stays put
            w_zero = np.where(small, 0.0, st.w)
            w_zero /= w_zero.sum()
            s_keep = src.mix(st.active, w_zero[None])[0]
            ll_keep = _ll(src, s_keep)
            if ll_keep >= st.ll - 1e-14:
                keep = ~small
                st.set(st.active[keep], w_zero[keep], s_keep, ll_keep)

        # the increment from row-sum ratios stays accurate after LL itself
        # stops changing in its last bit
        delta = float(np.mean(np.log1p((st.s - prev_s) / prev_s)))
        if abs(delta) <= rel_tol * abs(prev):
            stop_reason = "relative_ll"

    pi = st.dense()
    small = (pi > 0) & (pi < prune)
    if small.any():
        pi[small] = 0.0
        pi /= pi.sum()
        st.set(np.flatnonzero(pi), pi[pi > 0])
        gap = float((src.grad_all(1.0 / st.s) / src.n).max() - 1.0)
    if not math.isfinite(st.ll):
        raise NumericalFailure(f"non-finite log-likelihood at iteration {it}", it)
    # Each flushed ratio is below SCALED_FLOOR, so the exact LL and the exact
    # gap each exceed their computed values by at most this much.
    slack = SCALED_FLOOR * float(np.mean(1.0 / st.s)) if src.flushed else 0.0
    gap += slack
    converged = stop_reason in ("gap", "relative_ll") or gap <= 10 * tol
    return BoundResult(
        pi_dense=WeightVector(pi / pi.sum()),
        ub_ll=st.ll,
        certified_ub=st.ll + slack + max(gap, 0.0),
        final_gap=gap,
        iterations_used=len(trace),
        trace=trace,
        converged=converged,
        stop_reason=stop_reason,
        prune_threshold=prune,
        ascent_violations=violations,
        matrix_hash=hashes[0],
        dataset_hash=hashes[1],
        set_hash=hashes[2],
    )


def convex_em(matrix: LogLikelihoodMatrix, config: ConvexEmConfig | None = None) -> BoundResult:
    """Maximise LL(pi) over the whole simplex; the optimum bounds every K-sparse pi."""
    hashes = (matrix.content_hash, matrix.dataset_hash, matrix.set_hash)
    return _run(_MatrixColumns(matrix), config or ConvexEmConfig(), hashes)


def convex_em_chunked(
    dataset: Dataset,
    cset: ComponentSet,
    config: ConvexEmConfig | None = None,
    column_block: int = 4096,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> BoundResult:
    """Out-of-core convex EM: candidate densities are recomputed per column block.

    Peak memory is about two N x column_block float64 blocks plus O(N + M)
    vectors; the full matrix is never materialised.
    """
    if dataset.dim != cset.dimension:
        raise InvalidArgument(f"dataset dimension {dataset.dim} != component dimension {cset.dimension}")
    if column_block < 1:
        raise InvalidArgument("column_block must be positive")
    n, m = dataset.n, len(cset)
    block = min(column_block, m)
    need = 8 * (2 * n * block + 4 * n + 4 * m)
    if need > memory_budget:
        raise ResourceLimit(f"chunked convex EM needs {need} bytes, budget is {memory_budget}", need)
    cache = max(0, memory_budget - need)
    src = _StreamedColumns(dataset, cset, block, cache)
    return _run(src, config or ConvexEmConfig(), (None, dataset.content_hash, cset.content_hash))
