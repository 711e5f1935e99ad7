import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixcert import (
    ConvexEmConfig,
    GridSpec,
    InvalidArgument,
    LogLikelihoodMatrix,
    MixtureModel,
    ResourceLimit,
    WeightVector,
    build_grid_set,
    build_matrix,
    convex_em,
    convex_em_chunked,
    fw_gap,
    make_rng,
    mixture_ll,
    sample_mixture,
)
from mixcert.models import grid_sites

from conftest import random_instance
from oracles import pga_max_ll


def test_single_column():
    L = LogLikelihoodMatrix(make_rng(0).standard_normal((7, 1)))
    b = convex_em(L)
    assert b.iterations_used == 1
    assert b.final_gap == 0.0
    assert np.array_equal(b.pi_dense.weights, [1.0])
    assert b.certified_ub == b.ub_ll == pytest.approx(L.entries.mean(), abs=1e-15)


def test_twin_columns():
    col = make_rng(1).standard_normal((12, 1)) * 3
    L = LogLikelihoodMatrix(np.hstack([col, col]))
    b = convex_em(L)
    assert b.ub_ll == pytest.approx(col.mean(), abs=1e-12)
    assert b.pi_dense.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_matches_projected_gradient_oracle():
    _, _, L = random_instance(11, n=30, m=8)
    b = convex_em(L)
    assert abs(b.ub_ll - pga_max_ll(L.entries, starts=50)) <= 1e-7


def test_seeded_random_inits_agree():
    _, _, L = random_instance(12, n=40, m=15)
    a = convex_em(L, ConvexEmConfig(init="random", seed=1))
    b = convex_em(L, ConvexEmConfig(init="random", seed=2))
    assert abs(a.ub_ll - b.ub_ll) <= 1e-6


def test_given_init():
    _, _, L = random_instance(13, n=20, m=6)
    w = WeightVector.normalized(np.arange(1, 7))
    b = convex_em(L, ConvexEmConfig(init=w))
    assert abs(b.ub_ll - convex_em(L).ub_ll) <= 1e-6


@given(st.integers(0, 2**31 - 1))
def test_monotone_ascent_and_bound_invariants(seed):
    rng = make_rng(seed)
    n, m = int(rng.integers(1, 51)), int(rng.integers(1, 21))
    L = LogLikelihoodMatrix(rng.standard_normal((n, m)) * 4)
    b = convex_em(L)
    lls = np.array([t[0] for t in b.trace])
    assert np.all(np.diff(lls) >= -1e-12)
    assert b.ascent_violations == 0
    assert b.certified_ub >= b.ub_ll
    assert abs(mixture_ll(L, b.pi_dense) - b.ub_ll) <= 1e-12
    for _ in range(200):
        pi = rng.dirichlet(np.ones(m) * rng.choice([0.1, 1.0]))
        assert mixture_ll(L, pi) <= b.certified_ub + 1e-10


@given(st.integers(0, 2**31 - 1))
def test_overrelaxation_no_worse_than_plain(seed):
    _, _, L = random_instance(seed, n=30, m=10)
    fast = convex_em(L, ConvexEmConfig(eta=1.8))
    plain = convex_em(L, ConvexEmConfig(eta=1.0))
    assert fast.ub_ll >= plain.ub_ll - 1e-9


def test_nested_sets_monotone():
    ds, cs, L = random_instance(14, n=40, m=12)
    small = convex_em(LogLikelihoodMatrix(L.entries[:, :6]))
    big = convex_em(L)
    assert big.certified_ub >= small.ub_ll


def test_relaxation_dominates_true_sparse_vector():
    spec = GridSpec(grid_sites((0, 6), (0, 6), 7, 7), [0.5, 1.0, 2.0], [0.0, math.pi / 2])
    cs = build_grid_set(spec)
    idx = [3, 100, 200]
    mix = MixtureModel([0.3, 0.3, 0.4], cs.means[idx], cs.covs[idx])
    for seed in range(3):
        L = build_matrix(sample_mixture(mix, 60, seed), cs)
        b = convex_em(L)
        assert b.certified_ub >= mixture_ll(L, WeightVector.from_support(len(cs), idx, [0.3, 0.3, 0.4]))


def test_not_converged_flag():
    L = LogLikelihoodMatrix(make_rng(2).standard_normal((50, 30)) * 5)
    b = convex_em(L, ConvexEmConfig(max_iterations=3))
    assert not b.converged
    assert b.stop_reason == "max_iterations"
    assert b.certified_ub >= convex_em(L).ub_ll


def test_prune_at_termination_only():
    # column 1 is dominated everywhere, so its weight decays towards zero
    L = LogLikelihoodMatrix(np.array([[0.0, -30.0], [0.0, -30.0], [-1.0, -31.0]]))
    b = convex_em(L)
    assert b.pi_dense.weights[1] == 0.0
    assert b.to_dict()["pi_support"] == [[0, 1.0]]


@pytest.mark.parametrize(
    "cfg",
    [
        ConvexEmConfig(max_iterations=0),
        ConvexEmConfig(gap_tolerance=0.0),
        ConvexEmConfig(relative_ll_tolerance=-1.0),
        ConvexEmConfig(eta=2.0),
        ConvexEmConfig(eta=0.5),
        ConvexEmConfig(prune_threshold=0.5),
        ConvexEmConfig(init="nope"),
        ConvexEmConfig(init=[1.0, 2.0]),
    ],
)
def test_config_validation(cfg):
    L = LogLikelihoodMatrix(np.zeros((3, 4)))
    with pytest.raises(InvalidArgument):
        convex_em(L, cfg)


def test_json_shape():
    _, _, L = random_instance(15, n=20, m=5)
    d = json.loads(json.dumps(convex_em(L).to_dict()))
    assert {"ub_ll", "certified_ub", "gap", "iterations", "pi_support", "trace"} <= set(d)
    assert d["iterations"] == len(d["trace"])
    assert all(len(t) == 2 for t in d["trace"])
    assert d["trace"][-1][1] is not None


# chunked

def test_chunked_single_block_bit_identical():
    ds, cs, L = random_instance(16, n=50, m=200)
    a = convex_em(L)
    b = convex_em_chunked(ds, cs, column_block=200)
    c = convex_em_chunked(ds, cs, column_block=10_000)
    for r in (b, c):
        assert r.ub_ll == a.ub_ll
        assert r.certified_ub == a.certified_ub
        assert np.array_equal(r.pi_dense.weights, a.pi_dense.weights)


@pytest.mark.parametrize("block", [7, 64])
def test_chunked_small_blocks_agree(block):
    ds, cs, L = random_instance(17, n=50, m=200)
    a = convex_em(L)
    b = convex_em_chunked(ds, cs, column_block=block)
    assert abs(a.ub_ll - b.ub_ll) <= 1e-10
    # a tight budget forces per-block streaming instead of the cached block
    c = convex_em_chunked(ds, cs, column_block=block, memory_budget=8 * (2 * 50 * block + 4 * 50 + 4 * 200) + 1)
    assert abs(a.ub_ll - c.ub_ll) <= 1e-10


def test_chunked_errors():
    ds, cs, _ = random_instance(18, n=20, m=10)
    with pytest.raises(ResourceLimit):
        convex_em_chunked(ds, cs, memory_budget=10)
    with pytest.raises(InvalidArgument):
        convex_em_chunked(ds, cs, column_block=0)


def test_hashes_recorded():
    ds, cs, L = random_instance(19, n=20, m=10)
    assert convex_em(L).dataset_hash == ds.content_hash
    assert convex_em_chunked(ds, cs).set_hash == cs.content_hash


@pytest.mark.slow
def test_chunked_large_set_under_budget():
    spec = GridSpec(grid_sites((0, 10), (0, 10), 130, 130), [0.5, 2.0], [i * math.pi / 4 for i in range(4)])
    cs = build_grid_set(spec)
    assert len(cs) > 100_000
    mix = MixtureModel([0.3, 0.3, 0.4], [[2, 2], [7, 3], [5, 8]], [np.eye(2), np.diag([2.0, 0.5]), 0.7 * np.eye(2)])
    ds = sample_mixture(mix, 200, 0)
    cfg = ConvexEmConfig(gap_tolerance=1e-4, relative_ll_tolerance=1e-300)
    b = convex_em_chunked(ds, cs, cfg, memory_budget=2**30)
    assert b.stop_reason == "gap"
    assert b.final_gap <= 1e-4
    L = build_matrix(ds, cs)
    assert abs(fw_gap(L, b.pi_dense) - b.final_gap) <= 1e-12
