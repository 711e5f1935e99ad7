"""Certified likelihood bounds for mixtures over a discrete candidate set.

Given data and a large set of candidate Gaussians, mixcert computes an upper
bound on the likelihood of any K-component mixture drawn from the set
(:func:`convex_em`), feasible K-sparse solutions that bound it from below
(:func:`projected_em_multistart`, :func:`brute_force_mle`), and a
certificate comparing the two (:func:`certify`).
"""

__version__ = "0.1.0"

import types as _types

from .bound import BoundResult, ConvexEmConfig, convex_em, convex_em_chunked
from .certification import Certificate, certify, ee_diagnostic, optimality_ratio, tightness_curve
from .errors import (
    DegenerateCalibration,
    InconsistentInputs,
    InvalidArgument,
    InvalidModel,
    MixcertError,
    NumericalFailure,
    ResourceLimit,
)
from .likelihood import (
    LogLikelihoodMatrix,
    WeightVector,
    build_matrix,
    fw_gap,
    load_matrix,
    mixture_ll,
    responsibilities,
    save_matrix,
)
from .models import (
    ComponentSet,
    Dataset,
    GaussianComponent,
    GridSpec,
    MixtureModel,
    Rectangles,
    build_grid_set,
    c_separation,
    fit_patch_models,
    gaussian_log_density,
    make_rng,
    sample_mixture,
    sample_rectangles,
)
from .solvers import (
    DiscreteSolution,
    EmConfig,
    brute_force_mle,
    continuous_em,
    project_to_set,
    projected_em_multistart,
    random_baseline_ll,
    refit_weights,
)

__all__ = [n for n, v in dict(globals()).items() if not n.startswith("_") and not isinstance(v, _types.ModuleType)]
