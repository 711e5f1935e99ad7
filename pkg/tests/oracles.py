"""Independent reference implementations used only by the tests.

Nothing here imports the package's numeric code: each oracle recomputes its
quantity by a different route (extended precision, explicit inverses,
projected gradient, exhaustive grids).
"""

from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np


def dense_log_density(mean, cov, x, dps=40):
    """log N(x; mean, cov) with an explicit inverse and determinant in mpmath."""
    with mpmath.workdps(dps):
        S = mpmath.matrix([[mpmath.mpf(float(v)) for v in row] for row in np.atleast_2d(cov)])
        diff = mpmath.matrix([mpmath.mpf(float(a)) - mpmath.mpf(float(b)) for a, b in zip(np.atleast_1d(x), np.atleast_1d(mean))])
        d = len(diff)
        quad = (diff.T * (S**-1) * diff)[0]
        val = -0.5 * (d * mpmath.log(2 * mpmath.pi) + mpmath.log(mpmath.det(S)) + quad)
        return float(val)


def mp_mixture_ll(L, pi, dps=50):
    """(1/N) sum_i log sum_m pi_m exp(L_im) in extended precision."""
    with mpmath.workdps(dps):
        tot = mpmath.mpf(0)
        for row in np.asarray(L):
            tot += mpmath.log(mpmath.fsum(mpmath.mpf(float(p)) * mpmath.exp(mpmath.mpf(float(v))) for p, v in zip(pi, row) if p > 0))
        return float(tot / len(L))


def _ll(E, r, pi):
    return float(np.mean(r + np.log(E @ pi)))


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def pga_max_ll(L, starts=8, seed=0, max_iter=20000, tol=1e-13):
    """Maximise LL(pi) on the simplex by projected gradient ascent.

    Armijo backtracking from several random starts; returns the best value.
    """
    L = np.asarray(L, dtype=float)
    r = L.max(axis=1)
    E = np.exp(L - r[:, None])
    n, m = E.shape
    rng = np.random.default_rng(seed)
    best = -np.inf
    for s in range(starts):
        pi = np.full(m, 1.0 / m) if s == 0 else rng.dirichlet(np.ones(m))
        f = _ll(E, r, pi)
        t = 1.0
        for _ in range(max_iter):
            g = E.T @ (1.0 / (E @ pi)) / n
            while True:
                cand = project_simplex(pi + t * g)
                fc = _ll(E, r, cand) if np.all(E @ cand > 0) else -np.inf
                if fc >= f + 1e-4 * g @ (cand - pi) or t < 1e-14:
                    break
                t *= 0.5
            step = np.abs(cand - pi).max()
            pi, f = cand, max(f, fc)
            t = min(t * 2.0, 1e6)
            if step < tol:
                break
        best = max(best, f)
    return best


def simplex_grid_max_ll(L, support, resolution=1e-3):
    """max LL over a regular grid of the simplex on ``support`` (size 2 or 3)."""
    Ls = np.asarray(L, dtype=float)[:, list(support)]
    r = Ls.max(axis=1)
    E = np.exp(Ls - r[:, None])
    steps = int(round(1.0 / resolution))
    k = Ls.shape[1]
    if k == 1:
        return float(np.mean(r + np.log(E[:, 0])))
    a = np.arange(steps + 1) / steps
    if k == 2:
        W = np.stack([a, 1 - a], axis=1)
    elif k == 3:
        i, j = np.meshgrid(np.arange(steps + 1), np.arange(steps + 1), indexing="ij")
        keep = i + j <= steps
        i, j = i[keep], j[keep]
        W = np.stack([i, j, steps - i - j], axis=1) / steps
    else:
        raise ValueError("grid oracle handles supports of size 1 to 3")
    best = -np.inf
    for lo in range(0, W.shape[0], 20000):
        P = E @ W[lo : lo + 20000].T
        with np.errstate(divide="ignore"):
            vals = np.mean(r[:, None] + np.log(P), axis=0)
        best = max(best, float(vals.max()))
    return best


def enumerate_grid(means, eigenvalues, angles):
    """Every (mean, l1 >= l2, angle) model, isotropic pairs once, as a list of dicts."""
    out = []
    for mu in means:
        for a, b in itertools.product(eigenvalues, eigenvalues):
            if a < b:
                continue
            for ang in angles if a != b else angles[:1]:
                c, s = math.cos(ang), math.sin(ang)
                R = np.array([[c, -s], [s, c]])
                out.append({"mean": tuple(mu), "cov": R @ np.diag([a, b]) @ R.T})
    return out


def pairwise_c_separation(means, covs):
    d = means.shape[1]
    vals = []
    for i in range(len(means)):
        for j in range(len(means)):
            if i == j:
                continue
            li = max(np.linalg.eigvals(covs[i]).real)
            lj = max(np.linalg.eigvals(covs[j]).real)
            vals.append(math.dist(means[i], means[j]) / math.sqrt(d * max(li, lj)))
    return min(vals)


def brute_force_max(L, k):
    """Best K-subset with weights refit by projected gradient (tiny instances)."""
    L = np.asarray(L)
    best = -np.inf
    for sub in itertools.combinations(range(L.shape[1]), k):
        best = max(best, pga_max_ll(L[:, list(sub)], starts=1))
    return best


def gaussian_kl(m0, S0, m1, S1):
    """KL(N0 || N1) from the textbook formula with explicit inverse and log-dets."""
    d = len(m0)
    inv1 = np.linalg.inv(S1)
    diff = np.asarray(m1) - np.asarray(m0)
    return 0.5 * (
        np.trace(inv1 @ S0) + diff @ inv1 @ diff - d + np.linalg.slogdet(S1)[1] - np.linalg.slogdet(S0)[1]
    )


def nearest_by_sym_kl(means, covs, set_means, set_covs):
    """Exhaustive scan: lowest-index member minimising 0.5 * (KL(p||q) + KL(q||p))."""
    out = []
    for mu, S in zip(means, covs):
        best, arg = np.inf, -1
        for j, (mj, Sj) in enumerate(zip(set_means, set_covs)):
            v = 0.5 * (gaussian_kl(mu, S, mj, Sj) + gaussian_kl(mj, Sj, mu, S))
            if v < best:
                best, arg = v, j
        out.append(arg)
    return out
