"""Feasible K-sparse solutions: lower bounds on the constrained likelihood.

Continuous EM fits an unconstrained Gaussian mixture; projection snaps each
component to its nearest candidate in the discrete set, and an optional
weight refit re-optimises the mixing weights on the resulting support.
Exhaustive enumeration gives the exact constrained optimum for small sets,
and the random baseline calibrates the optimality ratio.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .bound import ConvexEmConfig
from .errors import InvalidArgument, NumericalFailure, ResourceLimit
from .likelihood import LogLikelihoodMatrix, WeightVector, mixture_ll
from .models import ComponentSet, Dataset, MixtureModel, make_rng

# relative responsibility mass below which a component counts as empty
_EMPTY_MASS = 1e-12
_MAX_RESEEDS = 10
_TINY = 1e-300
# EM ascent is checked with this slack on the (penalised) objective
_ASCENT_SLACK = 1e-12


# --------------------------------------------------------------- continuous EM


@dataclass
class EmConfig:
    """Settings for standard (continuous) Gaussian-mixture EM.

    ``covariance_ridge`` of None means 1e-6 * trace(data covariance) / d.
    """

    k: int
    max_iterations: int = 1000
    relative_ll_tolerance: float = 1e-10
    covariance_ridge: float | None = None
    init: str = "random-points"

    def validate(self, n: int) -> None:
        if self.k < 1:
            raise InvalidArgument("k must be at least 1")
        if n <= self.k:
            raise InvalidArgument(f"continuous EM needs N > K (N={n}, K={self.k})")
        if self.max_iterations < 1 or not self.relative_ll_tolerance > 0:
            raise InvalidArgument("max_iterations and relative_ll_tolerance must be positive")
        if self.covariance_ridge is not None and self.covariance_ridge < 0:
            raise InvalidArgument("covariance_ridge must be nonnegative")
        if self.init != "random-points":
            raise InvalidArgument(f"unknown init {self.init!r}")


@dataclass
class ContinuousEmResult:
    """A fitted mixture plus its per-iteration diagnostics.

    ``ll_trace`` holds the data log-likelihood per point and
    ``objective_trace`` the ridge-penalised objective that EM ascends.
    Iterations that follow a reseed are listed in ``reseed_iterations`` and
    are exempt from the ascent check.
    """

    mixture: MixtureModel
    ll: float
    iterations: int
    converged: bool
    ll_trace: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)
    reseeds: int = 0
    reseed_iterations: list = field(default_factory=list)
    ascent_violations: int = 0
    ridge: float = 0.0


def default_ridge(points: np.ndarray) -> float:
    d = points.shape[1]
    cov = np.atleast_2d(np.cov(points, rowvar=False, bias=True))
    return 1e-6 * float(np.trace(cov)) / d


def _logdens(X, means, covs):
    chols = np.linalg.cholesky(covs)
    logdets = 2.0 * np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1)
    out = np.empty((X.shape[0], means.shape[0]))
    kernels.log_density_block(X, np.ascontiguousarray(means), np.ascontiguousarray(chols), logdets, out)
    return out, chols


def _init_means(X, k, rng):
    order = rng.permutation(X.shape[0])
    chosen = []
    for i in order:
        if not any(np.array_equal(X[i], X[j]) for j in chosen):
            chosen.append(i)
            if len(chosen) == k:
                return X[np.array(chosen)].copy()
    raise InvalidArgument(f"data has fewer than {k} distinct points")


def run_continuous_em(dataset: Dataset, config: EmConfig, seed: int) -> ContinuousEmResult:
    """Standard EM for a K-component Gaussian mixture with a covariance ridge.

    The M-step uses Sigma_k = S_k + (ridge * N / K) / N_k * I, the maximiser
    of the data log-likelihood penalised by (ridge * N / 2K) sum_k tr(Sigma_k^-1).
    That penalised objective never decreases, and for K = 1 the update is
    exactly the sample covariance plus ridge * I.
    """
    X = np.ascontiguousarray(dataset.points, dtype=float)
    n, d = X.shape
    k = config.k
    config.validate(n)
    ridge = default_ridge(X) if config.covariance_ridge is None else float(config.covariance_ridge)
    rng = make_rng(seed)

    data_cov = np.atleast_2d(np.cov(X, rowvar=False, bias=True)) + ridge * np.eye(d)
    means = _init_means(X, k, rng)
    covs = np.repeat(data_cov[None], k, axis=0)
    weights = np.full(k, 1.0 / k)
    prior = ridge * n / k

    def evaluate(weights, means, covs):
        try:
            lp, chols = _logdens(X, means, covs)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"covariance lost positive definiteness at iteration {it}", it) from exc
        with np.errstate(divide="ignore"):
            a = lp + np.log(weights)
        mx = a.max(axis=1)
        rowll = mx + np.log(np.exp(a - mx[:, None]).sum(axis=1))
        ll = float(rowll.mean())
        inv_chol = np.linalg.inv(chols)
        tr_prec = float((inv_chol**2).sum())
        obj = ll - 0.5 * prior * tr_prec / n
        if not (math.isfinite(ll) and math.isfinite(obj)):
            raise NumericalFailure(f"non-finite log-likelihood at iteration {it}", it)
        return a, rowll, ll, obj

    it = 0
    a, rowll, ll, obj = evaluate(weights, means, covs)
    ll_trace, obj_trace = [ll], [obj]
    reseeds, reseed_its, violations = 0, [], 0
    converged = False
    while it < config.max_iterations:
        it += 1
        q = np.exp(a - rowll[:, None])
        nk = q.sum(axis=0)
        empty = nk < _EMPTY_MASS * n
        weights = nk / n
        means = (q.T @ X) / np.maximum(nk, _TINY)[:, None]
        for j in range(k):
            diff = X - means[j]
            S = (q[:, j, None] * diff).T @ diff / max(nk[j], _TINY)
            S = 0.5 * (S + S.T)
            S[np.diag_indices(d)] += prior / max(nk[j], _TINY)
            covs[j] = S
        reseeded = bool(empty.any())
        if reseeded:
            # restart each empty component as a broad one centred on the
            # worst-fit point; a single-point M-step would collapse again
            order = np.argsort(rowll, kind="stable")
            for t, j in enumerate(np.flatnonzero(empty)):
                reseeds += 1
                if reseeds > _MAX_RESEEDS:
                    raise NumericalFailure(f"components collapsed more than {_MAX_RESEEDS} times", it)
                means[j] = X[order[t]]
                covs[j] = data_cov
                weights[j] = 1.0 / k
            weights = weights / weights.sum()
            reseed_its.append(it)
        prev = obj
        a, rowll, ll, obj = evaluate(weights, means, covs)
        ll_trace.append(ll)
        obj_trace.append(obj)
        if not reseeded and obj < prev - _ASCENT_SLACK * max(1.0, abs(prev)):
            violations += 1
        if not reseeded and abs(obj - prev) <= config.relative_ll_tolerance * abs(prev):
            converged = True
            break

    mixture = MixtureModel(weights / weights.sum(), means, covs)
    return ContinuousEmResult(
        mixture=mixture,
        ll=ll,
        iterations=it,
        converged=converged,
        ll_trace=ll_trace,
        objective_trace=obj_trace,
        reseeds=reseeds,
        reseed_iterations=reseed_its,
        ascent_violations=violations,
        ridge=ridge,
    )


def continuous_em(dataset: Dataset, config: EmConfig, seed: int) -> MixtureModel:
    """Fit a K-component Gaussian mixture; see :func:`run_continuous_em`."""
    return run_continuous_em(dataset, config, seed).mixture


# ------------------------------------------------------------ discrete solutions


@dataclass
class DiscreteSolution:
    """A K-sparse weight vector over the candidate set and its likelihood."""

    weights: WeightVector
    ll: float
    provenance: dict

    @classmethod
    def from_support(cls, matrix: LogLikelihoodMatrix, support, weights, provenance) -> "DiscreteSolution":
        wv = WeightVector.from_support(matrix.n_models, support, weights)
        return cls(wv, mixture_ll(matrix, wv), dict(provenance))

    @property
    def support(self) -> np.ndarray:
        return self.weights.support

    def to_dict(self) -> dict:
        sup = self.weights.support
        return {
            "support": [int(i) for i in sup],
            "weights": [float(x) for x in self.weights.weights[sup]],
            "ll": float(self.ll),
            "provenance": self.provenance,
        }


def symmetrized_kl(mixture: MixtureModel, cset: ComponentSet) -> np.ndarray:
    """K x M matrix of 0.5 * (KL(p||q) + KL(q||p)) between mixture and set members."""
    if mixture.dim != cset.dimension:
        raise InvalidArgument("mixture and component set dimensions differ")
    qprecs = np.linalg.inv(mixture.covs)
    return kernels.sym_kl_to_set(
        np.ascontiguousarray(mixture.means),
        np.ascontiguousarray(mixture.covs),
        np.ascontiguousarray(qprecs),
        cset.means,
        cset.covs,
        cset.precisions,
    )


def _euclidean(mixture: MixtureModel, cset: ComponentSet) -> np.ndarray:
    dm = ((mixture.means[:, None, :] - cset.means[None]) ** 2).sum(axis=2)
    dc = ((mixture.covs[:, None] - cset.covs[None]) ** 2).sum(axis=(2, 3))
    return dm + dc


PROJECTION_METRICS = {"sym_kl": symmetrized_kl, "euclidean": _euclidean}


def nearest_members(mixture: MixtureModel, cset: ComponentSet, metric="sym_kl") -> np.ndarray:
    """Index of the closest set member for each mixture component (lowest index on ties)."""
    fn = PROJECTION_METRICS[metric] if isinstance(metric, str) else metric
    dist = np.asarray(fn(mixture, cset))
    return np.argmin(dist, axis=1)


def project_to_set(mixture: MixtureModel, cset: ComponentSet, matrix: LogLikelihoodMatrix, metric="sym_kl", provenance=None) -> DiscreteSolution:
    """Replace each component by its nearest set member; merged targets pool weight."""
    if matrix.n_models != len(cset):
        raise InvalidArgument("matrix columns do not match the component set")
    targets = nearest_members(mixture, cset, metric)
    prov = {"solver": "projection", "metric": metric if isinstance(metric, str) else "custom"}
    prov.update(provenance or {})
    return DiscreteSolution.from_support(matrix, targets, mixture.weights, prov)


def _refit_config(config):
    if config is None:
        return ConvexEmConfig(gap_tolerance=1e-10, relative_ll_tolerance=1e-14, max_iterations=20_000)
    return config


def _subset_run(matrix, supports, init, config):
    c = _refit_config(config)
    k = supports.shape[1]
    prune = c.validate(k)
    return kernels.subset_convex_em(
        matrix.entries,
        np.ascontiguousarray(supports, dtype=np.int64),
        np.ascontiguousarray(init, dtype=float),
        c.gap_tolerance,
        c.relative_ll_tolerance,
        c.max_iterations,
        c.eta,
        prune,
    )


def refit_weights(matrix: LogLikelihoodMatrix, support, init=None, config: ConvexEmConfig | None = None) -> WeightVector:
    """Convex EM over the columns in ``support`` only.

    Starts from ``init`` (weights aligned with ``support``; uniform if None)
    and never returns a vector with lower likelihood than its start.
    """
    sup = np.unique(np.asarray(support, dtype=np.int64))
    if sup.size < 1:
        raise InvalidArgument("support must be nonempty")
    if sup[0] < 0 or sup[-1] >= matrix.n_models:
        raise InvalidArgument("support index out of range")
    m = matrix.n_models
    if init is None:
        w0 = np.full(sup.size, 1.0 / sup.size)
    else:
        dense = np.zeros(m)
        np.add.at(dense, np.asarray(support, dtype=np.int64), np.asarray(init, dtype=float))
        w0 = dense[sup]
        if np.any(w0 < 0) or not w0.sum() > 0:
            raise InvalidArgument("init weights must be nonnegative with positive sum")
        w0 = w0 / w0.sum()
    if sup.size == 1:
        return WeightVector.from_support(m, sup, [1.0])
    weights, _, _, _, _ = _subset_run(matrix, sup[None], w0[None], config)
    fitted = WeightVector.from_support(m, sup, weights[0])
    start = WeightVector.from_support(m, sup, w0)
    if mixture_ll(matrix, fitted) < mixture_ll(matrix, start):
        return start
    return fitted


@dataclass
class RestartRecord:
    restart: int
    seed: int
    continuous_ll: float
    projected_ll: float
    refit_ll: float
    error: str | None = None


@dataclass
class MultistartResult:
    """Best discrete solution over all restarts and the per-restart trace."""

    best: DiscreteSolution
    trace: list
    best_restart: int

    def best_prefix(self, refit: bool = True) -> np.ndarray:
        """Best ll after r = 1..R restarts (non-decreasing by construction)."""
        vals = np.array([(t.refit_ll if refit else t.projected_ll) for t in self.trace])
        vals = np.where(np.isnan(vals), -np.inf, vals)
        return np.maximum.accumulate(vals)

    def trace_rows(self) -> list[tuple]:
        return [(t.restart, t.continuous_ll, t.projected_ll, t.refit_ll) for t in self.trace]


def projected_em_multistart(
    dataset: Dataset,
    cset: ComponentSet,
    matrix: LogLikelihoodMatrix,
    config: EmConfig,
    restarts: int,
    seed: int,
    refit: bool = True,
    metric="sym_kl",
    refit_config: ConvexEmConfig | None = None,
) -> MultistartResult:
    """Continuous EM from ``restarts`` seeds, each projected onto the set.

    Restart r uses seed ``seed + r``.  With ``refit`` the weights on each
    projected support are re-optimised and the refitted ll selects the
    winner; otherwise the plain projected ll does (refit_ll is then NaN).
    """
    if restarts < 1:
        raise InvalidArgument("restarts must be at least 1")
    if matrix.n_models != len(cset):
        raise InvalidArgument("matrix columns do not match the component set")
    trace = []
    best, best_r, best_val = None, -1, -np.inf
    for r in range(restarts):
        s = seed + r
        try:
            fit = run_continuous_em(dataset, config, s)
        except NumericalFailure as exc:
            trace.append(RestartRecord(r, s, math.nan, math.nan, math.nan, str(exc)))
            continue
        proj = project_to_set(fit.mixture, cset, matrix, metric, {"solver": "projected-em", "restart": r, "seed": s})
        refit_ll = math.nan
        cand = proj
        if refit:
            sup = proj.support
            w = refit_weights(matrix, sup, proj.weights.weights[sup], refit_config)
            cand = DiscreteSolution(w, mixture_ll(matrix, w), dict(proj.provenance, refit=True))
            refit_ll = cand.ll
        trace.append(RestartRecord(r, s, fit.ll, proj.ll, refit_ll))
        if cand.ll > best_val:
            best, best_r, best_val = cand, r, cand.ll
    if best is None:
        raise NumericalFailure(f"all {restarts} restarts failed: {trace[-1].error}", restarts)
    return MultistartResult(best, trace, best_r)


# ----------------------------------------------------------------- exact solver

DEFAULT_ENUMERATION_BUDGET = 200_000
_ENUM_BATCH = 4096


def brute_force_mle(
    matrix: LogLikelihoodMatrix,
    k: int,
    budget: int = DEFAULT_ENUMERATION_BUDGET,
    config: ConvexEmConfig | None = None,
) -> DiscreteSolution:
    """Exact constrained MLE: refit the weights of every size-k support."""
    m = matrix.n_models
    if not 1 <= k <= m:
        raise InvalidArgument(f"k must lie in [1, M={m}]")
    count = math.comb(m, k)
    if count > budget:
        raise ResourceLimit(f"C({m}, {k}) = {count} supports exceed the enumeration budget {budget}", count)
    best_ll, best_sup, best_w = -np.inf, None, None
    combos = itertools.combinations(range(m), k)
    init = np.full((1, k), 1.0 / k)
    while True:
        chunk = list(itertools.islice(combos, _ENUM_BATCH))
        if not chunk:
            break
        sups = np.array(chunk, dtype=np.int64)
        if k == 1:
            weights = np.ones((sups.shape[0], 1))
            lls = matrix.entries.mean(axis=0)[sups[:, 0]]
        else:
            weights, lls, _, _, _ = _subset_run(matrix, sups, np.repeat(init, sups.shape[0], axis=0), config)
        q = int(np.argmax(lls))
        if lls[q] > best_ll:
            best_ll, best_sup, best_w = lls[q], sups[q], weights[q]
    return DiscreteSolution.from_support(matrix, best_sup, best_w, {"solver": "brute-force", "supports": count})


def random_baseline_ll(matrix: LogLikelihoodMatrix, k: int, samples: int = 1000, seed: int = 0) -> float:
    """Average LL of uniform-weight vectors on uniformly drawn size-k supports."""
    m = matrix.n_models
    if not 1 <= k <= m:
        raise InvalidArgument(f"k must lie in [1, M={m}]")
    if samples < 1:
        raise InvalidArgument("samples must be at least 1")
    rng = make_rng(seed)
    sups = np.empty((samples, k), dtype=np.int64)
    for q in range(samples):
        sups[q] = np.sort(rng.choice(m, size=k, replace=False))
    return float(np.mean(kernels.subset_uniform_ll(matrix.entries, sups)))
