"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``MIXCERT_DISABLE_NUMBA`` is unset (or ``0``).  Both backends expose
the same functions with the same signatures; ``numpy_backend`` is always
importable so the two can be benchmarked side by side.
"""

import os

from . import _numpy as numpy_backend

_flag = os.environ.get("MIXCERT_DISABLE_NUMBA", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

numba_backend = None
if not _disabled:
    # skip the TBB probe, which warns on older TBB installs
    os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")
    try:
        from . import _numba as numba_backend
    except ImportError:  # pragma: no cover - numba missing
        numba_backend = None

backend = numba_backend if numba_backend is not None else numpy_backend
BACKEND_NAME = "numba" if backend is numba_backend else "numpy"

log_density_block = backend.log_density_block
mix_sums = backend.mix_sums
column_gradient = backend.column_gradient
subset_convex_em = backend.subset_convex_em
subset_uniform_ll = backend.subset_uniform_ll
sym_kl_to_set = backend.sym_kl_to_set
fit_patches = backend.fit_patches


def set_threads(n):
    """Cap the worker count for parallel kernels (no-op for numpy)."""
    if backend is numba_backend and n:
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
