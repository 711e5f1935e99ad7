"""Component densities, discrete candidate sets and data generators.

A :class:`ComponentSet` stores its M Gaussians as stacked arrays
(``means`` is M x d, ``covs`` is M x d x d) so that sets with millions of
members stay cheap; indexing it yields :class:`GaussianComponent` views.
All randomness goes through :func:`make_rng`, a Philox counter-based
generator, so sampled datasets are reproducible across platforms.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import kernels
from .errors import InvalidArgument, InvalidModel


def make_rng(seed: int) -> np.random.Generator:
    """The project-wide RNG: numpy ``Generator`` over ``Philox``."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _hash_arrays(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _check_covs(covs: np.ndarray) -> np.ndarray:
    """Validate a stack of covariances; return their Cholesky factors."""
    if not np.all(np.isfinite(covs)):
        raise InvalidModel("covariance has non-finite entries")
    scale = np.abs(covs).max(axis=(-2, -1), keepdims=True)
    asym = np.abs(covs - np.swapaxes(covs, -1, -2))
    if np.any(asym > 1e-12 * scale):
        raise InvalidModel("covariance is not symmetric")
    try:
        chols = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError as exc:
        raise InvalidModel("covariance is not positive definite") from exc
    if not np.all(np.isfinite(chols)) or np.any(np.diagonal(chols, axis1=-2, axis2=-1) <= 0):
        raise InvalidModel("covariance is not positive definite")
    return chols


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean).reshape(-1)
        cov = _frozen(self.cov)
        d = mean.shape[0]
        if d < 1 or cov.shape != (d, d):
            raise InvalidArgument(f"covariance shape {cov.shape} does not match mean length {d}")
        if not np.all(np.isfinite(mean)):
            raise InvalidModel("mean has non-finite entries")
        chol = _check_covs(cov[None])[0]
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", _frozen(chol))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.log(np.diag(self._chol)).sum())

    def log_density(self, x) -> np.ndarray | float:
        return gaussian_log_density(self, x)

    def entropy(self) -> float:
        """Differential entropy 0.5 * log det(2 pi e Sigma), in nats."""
        return 0.5 * (self.dim * math.log(2.0 * math.pi * math.e) + self.logdet)

    def __repr__(self):
        return f"GaussianComponent(mean={self.mean.tolist()}, cov={self.cov.tolist()})"


def gaussian_log_density(component: GaussianComponent, x) -> np.ndarray | float:
    """Log-density of ``component`` at ``x`` (a d-vector or an n x d array).

    Uses the Cholesky factor of the covariance and forward substitution;
    no explicit inverse is formed.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.ascontiguousarray(x.reshape(1, -1) if single else x)
    if X.ndim != 2 or X.shape[1] != component.dim:
        raise InvalidArgument(f"point dimension {X.shape[-1]} != component dimension {component.dim}")
    out = np.empty((X.shape[0], 1))
    kernels.log_density_block(
        X,
        np.ascontiguousarray(component.mean[None]),
        np.ascontiguousarray(component.chol[None]),
        np.array([component.logdet]),
        out,
    )
    return float(out[0, 0]) if single else out[:, 0]


class ComponentSet:
    """The discrete candidate set Theta: M Gaussians of a common dimension d.

    ``provenance`` is a JSON-serialisable dict describing how the set was
    built (``{"kind": "grid", ...}``, ``{"kind": "patches", ...}`` or
    ``{"kind": "explicit"}``).
    """

    def __init__(self, means, covs, provenance: dict | None = None, validate: bool = True):
        means = np.array(means, dtype=float, ndmin=2)
        covs = np.array(covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        if means.shape[0] < 1:
            raise InvalidArgument("a component set needs at least one component")
        m, d = means.shape
        if covs.shape != (m, d, d):
            raise InvalidArgument(f"covs shape {covs.shape} does not match means shape {means.shape}")
        if not np.all(np.isfinite(means)):
            raise InvalidModel("mean has non-finite entries")
        chols = _check_covs(covs) if validate else np.linalg.cholesky(covs)
        self.means = _frozen(means)
        self.covs = _frozen(covs)
        self.chols = _frozen(chols)
        self.logdets = _frozen(2.0 * np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1))
        self.provenance = dict(provenance or {"kind": "explicit"})

    @classmethod
    def from_components(cls, components: Sequence[GaussianComponent], provenance=None):
        if not components:
            raise InvalidArgument("a component set needs at least one component")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise InvalidArgument(f"components have mixed dimensions {sorted(dims)}")
        return cls([c.mean for c in components], [c.cov for c in components], provenance)

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    def __len__(self):
        return self.means.shape[0]

    def __getitem__(self, m) -> GaussianComponent:
        return GaussianComponent(self.means[m], self.covs[m])

    def __iter__(self):
        for m in range(len(self)):
            yield self[m]

    def subset(self, indices) -> "ComponentSet":
        idx = np.asarray(indices, dtype=np.int64)
        return ComponentSet(self.means[idx], self.covs[idx], {"kind": "subset", "parent": self.content_hash}, validate=False)

    def concat(self, other: "ComponentSet") -> "ComponentSet":
        if other.dimension != self.dimension:
            raise InvalidArgument("cannot concatenate sets of different dimension")
        return ComponentSet(
            np.concatenate([self.means, other.means]),
            np.concatenate([self.covs, other.covs]),
            {"kind": "explicit"},
            validate=False,
        )

    @cached_property
    def precisions(self) -> np.ndarray:
        eye = np.broadcast_to(np.eye(self.dimension), self.covs.shape)
        inv_l = np.linalg.solve(self.chols, eye)
        p = np.swapaxes(inv_l, 1, 2) @ inv_l
        return _frozen(0.5 * (p + np.swapaxes(p, 1, 2)))

    @cached_property
    def content_hash(self) -> str:
        return _hash_arrays(self.means, self.covs)

    def find(self, component: GaussianComponent, atol: float = 1e-12) -> int | None:
        """Lowest index of a member equal to ``component`` within ``atol``, or None."""
        hit = np.all(np.abs(self.means - component.mean) <= atol, axis=1)
        hit &= np.all(np.abs(self.covs - component.cov) <= atol, axis=(1, 2))
        idx = np.flatnonzero(hit)
        return int(idx[0]) if idx.size else None


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """A continuous K-component Gaussian mixture (weights on the K-simplex)."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights).reshape(-1)
        means = _frozen(np.array(self.means, dtype=float, ndmin=2))
        covs = np.array(self.covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        k = w.shape[0]
        if k < 1 or means.shape[0] != k or covs.shape != (k, means.shape[1], means.shape[1]):
            raise InvalidArgument("weights, means and covs disagree on K or d")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidModel("mixture weights must be nonnegative and sum to 1")
        chols = _check_covs(covs)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", _frozen(covs))
        object.__setattr__(self, "_chols", _frozen(chols))

    @classmethod
    def from_components(cls, weights, components: Sequence[GaussianComponent]):
        return cls(weights, [c.mean for c in components], [c.cov for c in components])

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list[GaussianComponent]:
        return [GaussianComponent(self.means[i], self.covs[i]) for i in range(self.k)]

    @property
    def logdets(self) -> np.ndarray:
        return 2.0 * np.log(np.diagonal(self._chols, axis1=1, axis2=2)).sum(axis=1)

    def component_log_densities(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise InvalidArgument("point dimension does not match mixture dimension")
        out = np.empty((X.shape[0], self.k))
        kernels.log_density_block(X, np.ascontiguousarray(self.means), np.ascontiguousarray(self._chols), self.logdets, out)
        return out

    def log_density(self, X) -> np.ndarray:
        lp = self.component_log_densities(X)
        pos = self.weights > 0
        a = lp[:, pos] + np.log(self.weights[pos])
        mx = a.max(axis=1)
        return mx + np.log(np.exp(a - mx[:, None]).sum(axis=1))


@dataclass(frozen=True, eq=False)
class Dataset:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = _frozen(np.array(self.points, dtype=float, ndmin=2))
        if pts.shape[0] < 1:
            raise InvalidArgument("dataset must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("dataset has non-finite entries")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = _frozen(self.labels, dtype=np.int64).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise InvalidArgument("label count does not match point count")
            object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @cached_property
    def content_hash(self) -> str:
        return _hash_arrays(self.points)


@dataclass(frozen=True)
class GridSpec:
    """Exhaustive 2-D grid: mean sites x eigenvalue pairs x rotation angles.

    ``pairing`` selects how eigenvalue choices combine into (l1, l2):

    * ``"upper"`` (default): pairs with l1 >= l2; isotropic pairs use only the
      first angle, since rotating them is a no-op.
    * ``"full"``: every ordered pair at every angle (duplicates included).
    """

    means: Sequence[Sequence[float]]
    eigenvalues: Sequence[float]
    angles: Sequence[float] = (0.0,)
    pairing: str = "upper"

    def eigenpairs(self) -> list[tuple[float, float, bool]]:
        eig = [float(v) for v in self.eigenvalues]
        if self.pairing == "upper":
            return [
                (a, b, i == j)
                for (i, a), (j, b) in itertools.product(enumerate(eig), enumerate(eig))
                if a > b or i == j
            ]
        if self.pairing == "full":
            return [(a, b, False) for a, b in itertools.product(eig, eig)]
        raise InvalidArgument(f"unknown pairing {self.pairing!r}")


def grid_sites(xlim, ylim, nx: int, ny: int) -> np.ndarray:
    """Regular nx x ny lattice of mean sites (x varies fastest)."""
    xs = np.linspace(xlim[0], xlim[1], nx)
    ys = np.linspace(ylim[0], ylim[1], ny)
    return np.array([(x, y) for y in ys for x in xs])


def grid_size(spec: GridSpec) -> int:
    """Closed-form count of the models :func:`build_grid_set` emits."""
    n_mean = len(spec.means)
    e = len(spec.eigenvalues)
    a = len(spec.angles)
    if spec.pairing == "full":
        return n_mean * e * e * a
    return n_mean * (e * (e - 1) // 2 * a + e)


def rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def rotated_cov(l1: float, l2: float, angle: float) -> np.ndarray:
    r = rotation(angle)
    cov = r @ np.diag([l1, l2]) @ r.T
    return 0.5 * (cov + cov.T)


def build_grid_set(spec: GridSpec) -> ComponentSet:
    """Enumerate the grid: means outer, eigenpairs middle, angles inner."""
    means = np.array(spec.means, dtype=float, ndmin=2)
    if means.size == 0 or len(spec.eigenvalues) == 0 or len(spec.angles) == 0:
        raise InvalidArgument("grid spec lists must be nonempty")
    if means.shape[1] != 2:
        raise InvalidArgument("rotated-eigenvalue grids are defined for d = 2 only")
    eig = np.asarray(spec.eigenvalues, dtype=float)
    if np.any(eig <= 0) or not np.all(np.isfinite(eig)):
        raise InvalidArgument("eigenvalues must be positive and finite")
    if len(set(eig.tolist())) != eig.size:
        raise InvalidArgument("eigenvalue choices must be distinct")
    angles = [float(a) for a in spec.angles]
    if any(not 0.0 <= a < math.pi for a in angles):
        raise InvalidArgument("angles must lie in [0, pi)")

    shapes = []
    for l1, l2, iso in spec.eigenpairs():
        for a in angles[:1] if iso else angles:
            shapes.append(rotated_cov(l1, l2, a))
    shapes = np.array(shapes)
    s = shapes.shape[0]
    all_means = np.repeat(means, s, axis=0)
    all_covs = np.tile(shapes, (means.shape[0], 1, 1))
    prov = {
        "kind": "grid",
        "n_means": int(means.shape[0]),
        "eigenvalues": eig.tolist(),
        "angles": angles,
        "pairing": spec.pairing,
    }
    return ComponentSet(all_means, all_covs, prov)


# pixel features and patch dictionaries

PATCH_RIDGE = 1e-6
PATCH_FLOOR = 1e-8


def pixel_features(image) -> np.ndarray:
    """H x W x 5 features (x, y, R, G, B), every coordinate scaled to [0, 1]."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise InvalidArgument("image must be a nonempty H x W x 3 array")
    h, w = img.shape[:2]
    rows, cols = np.mgrid[0:h, 0:w].astype(float)
    x = cols / max(w - 1, 1)
    y = rows / max(h - 1, 1)
    rgb = img.astype(float) / 255.0 if img.dtype == np.uint8 else img.astype(float)
    return np.ascontiguousarray(np.dstack([x, y, rgb]))


def patch_positions(shape, patch_sizes, stride: int):
    h, w = shape
    if stride < 1:
        raise InvalidArgument("stride must be a positive integer")
    tops, lefts, hs, ws = [], [], [], []
    for ph, pw in patch_sizes:
        if ph < 1 or pw < 1 or ph > h or pw > w:
            raise InvalidArgument(f"patch size {(ph, pw)} does not fit a {h} x {w} image")
        for r in range(0, h - ph + 1, stride):
            for c in range(0, w - pw + 1, stride):
                tops.append(r)
                lefts.append(c)
                hs.append(ph)
                ws.append(pw)
    as_i = lambda v: np.array(v, dtype=np.int64)
    return as_i(tops), as_i(lefts), as_i(hs), as_i(ws)


def fit_patch_models(image, patch_sizes, stride: int = 1, trim_fraction: float = 0.1) -> ComponentSet:
    """Fit one robust 5-D Gaussian per rectangular image patch.

    Each fit is: plain moments, drop the ``trim_fraction`` of pixels with the
    largest Mahalanobis distance, refit once, then add the ridge
    ``1e-6 * (trace/d + 1e-8) * I``.  Patches left with fewer than d + 1
    pixels are skipped and counted in ``provenance["skipped"]``.
    """
    if not 0.0 <= trim_fraction < 0.5:
        raise InvalidArgument("trim_fraction must lie in [0, 0.5)")
    feats = pixel_features(image)
    tops, lefts, hs, ws = patch_positions(feats.shape[:2], patch_sizes, stride)
    means, covs, ok = kernels.fit_patches(feats, tops, lefts, hs, ws, float(trim_fraction), PATCH_RIDGE, PATCH_FLOOR)
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    if not ok.any():
        raise InvalidArgument("no patch produced a model")
    prov = {
        "kind": "patches",
        "patch_sizes": [list(map(int, p)) for p in patch_sizes],
        "stride": int(stride),
        "trim_fraction": float(trim_fraction),
        "skipped": int((~ok).sum()),
        "image_shape": list(feats.shape[:2]),
    }
    return ComponentSet(means[ok], covs[ok], prov)


# data generators

def _draw_labels(rng, weights, n):
    cdf = np.cumsum(weights)
    u = rng.random(n) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(weights) - 1)


def sample_mixture(mixture: MixtureModel, n: int, seed: int) -> Dataset:
    """Draw n labelled points: k ~ weights, then x ~ N(mu_k, Sigma_k)."""
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    rng = make_rng(seed)
    labels = _draw_labels(rng, mixture.weights, n)
    z = rng.standard_normal((n, mixture.dim))
    x = mixture.means[labels] + np.einsum("nab,nb->na", mixture._chols[labels], z)
    return Dataset(x, labels)


@dataclass(frozen=True)
class Rectangles:
    """Mixture of uniform densities on axis-aligned boxes ``(lo, hi)``."""

    boxes: Sequence[tuple[Sequence[float], Sequence[float]]]
    weights: Sequence[float] = field(default=())

    def arrays(self):
        lo = np.array([b[0] for b in self.boxes], dtype=float)
        hi = np.array([b[1] for b in self.boxes], dtype=float)
        w = np.asarray(self.weights if len(self.weights) else np.full(len(self.boxes), 1.0 / len(self.boxes)), dtype=float)
        return lo, hi, w


def sample_rectangles(spec: Rectangles, n: int, seed: int) -> Dataset:
    lo, hi, w = spec.arrays()
    if lo.shape != hi.shape or lo.shape[0] != w.shape[0] or lo.shape[0] < 1:
        raise InvalidArgument("each rectangle needs a weight and matching corners")
    if np.any(hi <= lo):
        raise InvalidArgument("rectangles must have positive extent on every axis")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise InvalidArgument("rectangle weights must lie on the simplex")
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    rng = make_rng(seed)
    labels = _draw_labels(rng, w, n)
    u = rng.random((n, lo.shape[1]))
    return Dataset(lo[labels] + u * (hi[labels] - lo[labels]), labels)


def c_separation(mixture: MixtureModel) -> float:
    """Dasgupta separation: min_{i<j} |mu_i - mu_j| / sqrt(d * max(lmax_i, lmax_j))."""
    if mixture.k < 2:
        raise InvalidArgument("c-separation needs at least two components")
    lmax = np.linalg.eigvalsh(mixture.covs)[:, -1]
    d = mixture.dim
    best = math.inf
    for i, j in itertools.combinations(range(mixture.k), 2):
        dist = float(np.linalg.norm(mixture.means[i] - mixture.means[j]))
        best = min(best, dist / math.sqrt(d * max(lmax[i], lmax[j])))
    return best


def random_mixture(k: int, rng: np.random.Generator, box=((0.0, 0.0), (10.0, 10.0)), eig_range=(0.3, 3.0), min_weight: float = 0.1) -> MixtureModel:
    """Random 2-D mixture with continuous (off-grid) parameters.

    Means are uniform in ``box``, covariance eigenvalues log-uniform in
    ``eig_range``, angles uniform in [0, pi), weights Dirichlet(1) mixed with
    a floor of ``min_weight`` so no component is negligible.
    """
    lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    means = lo + rng.random((k, 2)) * (hi - lo)
    loge = np.log(eig_range)
    covs = []
    for _ in range(k):
        l1, l2 = np.exp(loge[0] + rng.random(2) * (loge[1] - loge[0]))
        covs.append(rotated_cov(l1, l2, rng.random() * math.pi))
    w = rng.dirichlet(np.ones(k))
    w = min_weight + (1.0 - k * min_weight) * w if k * min_weight < 1 else np.full(k, 1.0 / k)
    return MixtureModel(w / w.sum(), means, covs)
