"""Image segmentation with a certified mixture over a patch dictionary."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bound import BoundResult, ConvexEmConfig, convex_em
from .certification import Certificate, certify
from .errors import InvalidArgument, ResourceLimit
from .likelihood import DEFAULT_MEMORY_BUDGET, build_matrix, log_density_columns, matrix_bytes
from .models import ComponentSet, Dataset, fit_patch_models, make_rng, pixel_features
from .solvers import DiscreteSolution, EmConfig, MultistartResult, projected_em_multistart

DEFAULT_PIXEL_CAP = 20_000
DEFAULT_K = 5

# label colours for the mask; cycles if K exceeds the table
PALETTE = np.array(
    [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 212],
    ],
    dtype=np.uint8,
)


@dataclass
class SegmentationResult:
    labels: np.ndarray  # H x W, values 0..K'-1 in support order
    solution: DiscreteSolution
    bound: BoundResult
    certificate: Certificate
    multistart: MultistartResult
    component_set: ComponentSet
    sample_index: np.ndarray  # flat pixel indices used for the likelihood

    def mask_image(self) -> np.ndarray:
        return PALETTE[self.labels % len(PALETTE)]


def subsample_pixels(n_pixels: int, cap: int, seed: int) -> np.ndarray:
    """Sorted flat indices of at most ``cap`` pixels, uniform without replacement."""
    if cap < 1:
        raise InvalidArgument("pixel cap must be positive")
    if n_pixels <= cap:
        return np.arange(n_pixels)
    return np.sort(make_rng(seed).choice(n_pixels, size=cap, replace=False))


def assign_pixels(features: np.ndarray, cset: ComponentSet, solution: DiscreteSolution, block: int = 65536) -> np.ndarray:
    """Index (into the solution support) of the max-responsibility component per row."""
    sup = solution.weights.support
    logw = np.log(solution.weights.weights[sup])
    sub = cset.subset(sup)
    out = np.empty(features.shape[0], dtype=np.int64)
    for lo in range(0, features.shape[0], block):
        X = np.ascontiguousarray(features[lo : lo + block])
        L = log_density_columns(X, sub, slice(None)) + logw
        out[lo : lo + block] = np.argmax(L, axis=1)
    return out


def segment(
    image: np.ndarray,
    patch_sizes,
    k: int = DEFAULT_K,
    stride: int = 1,
    trim_fraction: float = 0.1,
    pixel_cap: int = DEFAULT_PIXEL_CAP,
    restarts: int = 10,
    seed: int = 0,
    bound_config: ConvexEmConfig | None = None,
    em_config: EmConfig | None = None,
    rand_samples: int = 1000,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    column_block: int = 4096,
    config=None,
) -> SegmentationResult:
    """Patch dictionary, bound, multistart solve and certificate for one image.

    The likelihood uses a seeded subsample of at most ``pixel_cap`` pixels;
    every pixel is then labelled with the component of the best discrete
    solution that has the highest responsibility for it.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidArgument("image must be H x W x 3")
    h, w = img.shape[:2]
    for ph, pw in patch_sizes:
        if ph > h or pw > w:
            raise InvalidArgument(f"patch size {(ph, pw)} does not fit a {h} x {w} image")
    cset = fit_patch_models(img, patch_sizes, stride, trim_fraction)
    feats = pixel_features(img).reshape(-1, 5)
    idx = subsample_pixels(feats.shape[0], pixel_cap, seed)
    ds = Dataset(feats[idx])
    if ds.n <= k:
        raise InvalidArgument(f"image has {ds.n} sampled pixels, need more than k={k}")
    if matrix_bytes(ds.n, len(cset)) > memory_budget:
        raise ResourceLimit(
            f"segmentation matrix needs {matrix_bytes(ds.n, len(cset))} bytes, budget is {memory_budget}",
            matrix_bytes(ds.n, len(cset)),
        )
    L = build_matrix(ds, cset, memory_budget)
    bound = convex_em(L, bound_config)
    ms = projected_em_multistart(ds, cset, L, em_config or EmConfig(k), restarts, seed)
    cert = certify(L, cset, ds, k, bound, ms.best, rand_samples=rand_samples, seed=seed, config=config)
    labels = assign_pixels(feats, cset, ms.best).reshape(h, w)
    return SegmentationResult(labels, ms.best, bound, cert, ms, cset, idx)
