import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mixcert import ComponentSet, Dataset, build_matrix, make_rng

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


def random_spd(rng, d, lo=0.2, hi=3.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    ev = lo + rng.random(d) * (hi - lo)
    c = q @ np.diag(ev) @ q.T
    return 0.5 * (c + c.T)


def random_instance(seed, n=30, m=8, d=2, spread=3.0):
    """Random (dataset, component set, matrix) with well-posed densities."""
    rng = make_rng(seed)
    means = rng.standard_normal((m, d)) * spread
    covs = np.array([random_spd(rng, d) for _ in range(m)])
    cset = ComponentSet(means, covs, {"kind": "explicit"})
    pts = means[rng.integers(0, m, n)] + rng.standard_normal((n, d))
    ds = Dataset(pts)
    return ds, cset, build_matrix(ds, cset)


@pytest.fixture
def small_instance():
    return random_instance(0)
