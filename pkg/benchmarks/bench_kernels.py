"""Time the numba kernels against the pure-numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--n 2000] [--m 4000] [--repeat 5] [--json out.json]

Each kernel runs once untimed (JIT warm-up), then ``--repeat`` times; the
minimum wall time is reported together with the max abs difference between
the two backends' outputs.
"""

from __future__ import annotations

import argparse
import json
import platform
import time

import numpy as np

from mixcert.kernels import _numpy as npk

try:
    from mixcert.kernels import _numba as nbk
except ImportError:  # numba missing
    nbk = None


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def _spd(rng, m, d):
    a = rng.standard_normal((m, d, d))
    c = a @ np.swapaxes(a, 1, 2) / d + 0.5 * np.eye(d)
    return 0.5 * (c + np.swapaxes(c, 1, 2))


def make_cases(n, m, d, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    X = rng.standard_normal((n, d)) * 3
    means = rng.standard_normal((m, d)) * 3
    covs = _spd(rng, m, d)
    chols = np.linalg.cholesky(covs)
    logdets = 2 * np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1)
    precs = np.linalg.inv(covs)
    E = rng.random((n, m))
    W = rng.dirichlet(np.ones(m), size=2)
    w = rng.random(n)
    q = 64
    img = rng.random((96, 128, 5))
    tops, lefts = np.meshgrid(np.arange(0, 80, 4), np.arange(0, 112, 4), indexing="ij")
    tops, lefts = tops.ravel().astype(np.int64), lefts.ravel().astype(np.int64)
    hs = np.full(tops.size, 16, dtype=np.int64)

    def density(k):
        out = np.empty((n, m))
        k.log_density_block(X, means, chols, logdets, out)
        return out

    def mix(k):
        s = np.zeros((2, n))
        k.mix_sums(E, W, s, 0)
        return s

    def grad(k):
        out = np.empty(m)
        k.column_gradient(E, w, out)
        return out

    def kl(k):
        return k.sym_kl_to_set(means[:q], covs[:q], precs[:q], means, covs, precs)

    def patches(k):
        return k.fit_patches(img, tops, lefts, hs, hs, 0.1, 1e-6, 1e-6)[1]

    return {
        "log_density_block": density,
        "mix_sums": mix,
        "column_gradient": grad,
        "sym_kl_to_set": kl,
        "fit_patches": patches,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--m", type=int, default=4000)
    ap.add_argument("--d", type=int, default=2)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="write results here as well")
    args = ap.parse_args(argv)

    cases = make_cases(args.n, args.m, args.d, args.seed)
    rows = []
    print(f"N={args.n} M={args.m} d={args.d} repeat={args.repeat} python={platform.python_version()}")
    print(f"{'kernel':<20}{'numpy s':>12}{'numba s':>12}{'speedup':>10}{'max|diff|':>12}")
    for name, fn in cases.items():
        t_np = _best(lambda: fn(npk), args.repeat)
        if nbk is None:
            t_nb, diff = float("nan"), float("nan")
        else:
            t_nb = _best(lambda: fn(nbk), args.repeat)
            diff = float(np.max(np.abs(np.asarray(fn(npk)) - np.asarray(fn(nbk)))))
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb, "max_abs_diff": diff})
        print(f"{name:<20}{t_np:>12.5f}{t_nb:>12.5f}{t_np / t_nb:>10.2f}{diff:>12.2e}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"args": vars(args), "results": rows}, fh, indent=2)
    return rows


if __name__ == "__main__":
    main()
