"""Optimality-ratio certificates and empirical tightness diagnostics."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from .bound import BoundResult, ConvexEmConfig, convex_em
from .errors import DegenerateCalibration, InconsistentInputs, InvalidArgument
from .likelihood import LogLikelihoodMatrix, WeightVector, build_matrix, mixture_ll
from .models import ComponentSet, Dataset, MixtureModel, Rectangles, sample_mixture, sample_rectangles
from .solvers import DiscreteSolution, EmConfig, projected_em_multistart, random_baseline_ll

RATIO_CLAMP = 1e-9


def optimality_ratio(lb: float, ub: float, ll_rand: float) -> float:
    """(lb - ll_rand) / (ub - ll_rand): 1 is certified optimal, 0 is random-level."""
    if not ub > ll_rand + 1e-12:
        raise DegenerateCalibration(f"upper bound {ub!r} does not exceed the random baseline {ll_rand!r}")
    return (lb - ll_rand) / (ub - ll_rand)


def clamp_ratio(r: float) -> float:
    """Snap round-off just outside [0, 1] onto the interval, for display."""
    if -RATIO_CLAMP <= r < 0.0:
        return 0.0
    if 1.0 < r <= 1.0 + RATIO_CLAMP:
        return 1.0
    return r


def config_hash(config) -> str:
    """sha256 of a JSON-able config, keys sorted."""
    text = json.dumps(config, sort_keys=True, default=_jsonable, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    if isinstance(o, WeightVector):
        return o.weights.tolist()
    return str(o)


@dataclass
class Certificate:
    """How far a K-sparse solution can be from the constrained optimum."""

    ub: float
    lb: float
    ll_rand: float
    optimality_ratio: float
    optimality_ratio_raw: float
    k: int
    n_points: int
    n_models: int
    lb_provenance: dict
    ub_gap: float
    ub_converged: bool
    seeds: dict = field(default_factory=dict)
    config_hash: str | None = None
    dataset_hash: str | None = None
    set_hash: str | None = None
    support: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    created: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), default=_jsonable, **kw)


def _check_hash(name, expected, got):
    if expected is not None and got is not None and expected != got:
        raise InconsistentInputs(f"{name} hash mismatch: {expected[:12]} vs {got[:12]}")


def certify(
    matrix: LogLikelihoodMatrix,
    cset: ComponentSet,
    dataset: Dataset,
    k: int,
    bound: BoundResult,
    solution: DiscreteSolution,
    ll_rand: float | None = None,
    rand_samples: int = 1000,
    seed: int = 0,
    config=None,
    timestamp: bool = True,
) -> Certificate:
    """Assemble a certificate after checking every input came from the same data.

    The lower bound is recomputed from the solution's weights on ``matrix``
    rather than trusted.  ``ll_rand`` is drawn with ``seed`` when not given.
    """
    ds_hash, set_hash = dataset.content_hash, cset.content_hash
    if matrix.shape != (dataset.n, len(cset)):
        raise InconsistentInputs(f"matrix shape {matrix.shape} != ({dataset.n}, {len(cset)})")
    _check_hash("dataset", ds_hash, matrix.dataset_hash)
    _check_hash("component set", set_hash, matrix.set_hash)
    _check_hash("dataset", ds_hash, bound.dataset_hash)
    _check_hash("component set", set_hash, bound.set_hash)
    _check_hash("matrix", matrix.content_hash, bound.matrix_hash)
    wv = solution.weights
    if wv.size != matrix.n_models:
        raise InconsistentInputs("solution length does not match the candidate set")
    sup = wv.nonzero
    if sup.size > k:
        raise InvalidArgument(f"solution has {sup.size} nonzero weights, more than k={k}")
    lb = mixture_ll(matrix, wv)
    if ll_rand is None:
        ll_rand = random_baseline_ll(matrix, k, rand_samples, seed)
    ub = bound.certified_ub
    raw = optimality_ratio(lb, ub, ll_rand)
    return Certificate(
        ub=ub,
        lb=lb,
        ll_rand=float(ll_rand),
        optimality_ratio=clamp_ratio(raw),
        optimality_ratio_raw=raw,
        k=int(k),
        n_points=matrix.n_points,
        n_models=matrix.n_models,
        lb_provenance=dict(solution.provenance),
        ub_gap=bound.final_gap,
        ub_converged=bound.converged,
        seeds={"ll_rand": seed},
        config_hash=None if config is None else config_hash(config),
        dataset_hash=ds_hash,
        set_hash=set_hash,
        support=[int(i) for i in sup],
        weights=[float(x) for x in wv.weights[sup]],
        created=datetime.now(timezone.utc).isoformat(timespec="seconds") if timestamp else "",
    )


# ------------------------------------------------------------------ diagnostics


def _sample(generator, n, seed) -> Dataset:
    if isinstance(generator, MixtureModel):
        return sample_mixture(generator, n, seed)
    if isinstance(generator, Rectangles):
        return sample_rectangles(generator, n, seed)
    raise InvalidArgument(f"unsupported generator {type(generator).__name__}")


def _point_logs(cset: ComponentSet, pi: WeightVector, X: np.ndarray) -> np.ndarray:
    """log p_pi(x) per row, touching only the support columns."""
    idx = pi.nonzero
    sub = cset.subset(idx)
    L = build_matrix(Dataset(X), sub).entries + np.log(pi.weights[idx])
    mx = L.max(axis=1)
    return mx + np.log(np.exp(L - mx[:, None]).sum(axis=1))


@dataclass
class EEResult:
    """Per-candidate |cross-entropy integral - sample LL| estimates.

    ``ee_lower`` is the max over the supplied candidates only, so it is a
    lower estimate of the worst-case deviation over all weight vectors.
    """

    deviations: np.ndarray
    sample_ll: np.ndarray
    mc_ll: np.ndarray
    mc_stderr: np.ndarray
    ee_lower: float


def ee_diagnostic(
    generator,
    candidate_pis,
    cset: ComponentSet,
    n: int,
    mc_samples: int,
    seed: int,
    mc_seed: int | None = None,
) -> EEResult:
    """Compare LL(pi) on a size-n sample with a Monte Carlo cross-entropy.

    The sample uses ``seed``; the Monte Carlo draw uses ``mc_seed``
    (default ``seed + 1``), so passing ``mc_seed=seed`` with
    ``mc_samples=n`` reuses the same points on both sides.
    """
    if n < 1 or mc_samples < 1:
        raise InvalidArgument("n and mc_samples must be positive")
    mc_seed = seed + 1 if mc_seed is None else mc_seed
    X = _sample(generator, n, seed).points
    Y = _sample(generator, mc_samples, mc_seed).points
    pis = [p if isinstance(p, WeightVector) else WeightVector(p) for p in candidate_pis]
    s_ll, m_ll, m_se = [], [], []
    for pi in pis:
        if pi.size != len(cset):
            raise InvalidArgument("candidate weight vector length does not match the set")
        a = _point_logs(cset, pi, X)
        b = _point_logs(cset, pi, Y)
        s_ll.append(a.mean())
        m_ll.append(b.mean())
        m_se.append(b.std(ddof=1) / math.sqrt(b.size) if b.size > 1 else 0.0)
    s_ll, m_ll = np.array(s_ll), np.array(m_ll)
    dev = np.abs(m_ll - s_ll)
    return EEResult(dev, s_ll, m_ll, np.array(m_se), float(dev.max()) if dev.size else 0.0)


@dataclass
class CurveRow:
    n: int
    seed: int
    ub: float
    lb: float
    ll_true: float
    opt_ratio: float
    ll_rand: float
    true_ratio: float
    error: str | None = None


def _ratio_or_nan(lb, ub, ll_rand):
    if math.isnan(lb):
        return math.nan
    try:
        return optimality_ratio(lb, ub, ll_rand)
    except DegenerateCalibration:
        return math.nan


CURVE_COLUMNS = ["n", "seed", "ub", "lb", "ll_true", "opt_ratio", "ll_rand", "true_ratio"]


def tightness_curve(
    generator,
    cset: ComponentSet,
    k: int,
    n_grid,
    seeds,
    bound_config: ConvexEmConfig | None = None,
    em_config: EmConfig | None = None,
    restarts: int = 10,
    true_pi: WeightVector | None = None,
    rand_samples: int = 1000,
    refit: bool = True,
) -> list[CurveRow]:
    """Bound, best projected-EM solution and true-pi likelihood per (n, seed).

    ``true_pi`` is the generator expressed over ``cset`` when its components
    are members; otherwise ll_true and true_ratio are NaN.  Ratios are also
    NaN when the bound does not exceed the random baseline (e.g. K = M).
    Failing cells are recorded with their error message instead of
    aborting the sweep.
    """
    em_config = em_config or EmConfig(k)
    rows = []
    for n in n_grid:
        for seed in seeds:
            try:
                ds = _sample(generator, n, seed)
                L = build_matrix(ds, cset)
                b = convex_em(L, bound_config)
                ms = projected_em_multistart(ds, cset, L, em_config, restarts, seed, refit=refit)
                ll_rand = random_baseline_ll(L, k, rand_samples, seed)
                ll_true = mixture_ll(L, true_pi) if true_pi is not None else math.nan
                ratio = _ratio_or_nan(ms.best.ll, b.certified_ub, ll_rand)
                t_ratio = _ratio_or_nan(ll_true, b.certified_ub, ll_rand)
                rows.append(CurveRow(n, seed, b.certified_ub, ms.best.ll, ll_true, ratio, ll_rand, t_ratio))
            except Exception as exc:  # aggregated per cell
                nan = math.nan
                rows.append(CurveRow(n, seed, nan, nan, nan, nan, nan, nan, f"{type(exc).__name__}: {exc}"))
    return rows


def write_curve_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for r in rows:
            w.writerow([r.n, r.seed] + [repr(float(getattr(r, c))) for c in CURVE_COLUMNS[2:]])
