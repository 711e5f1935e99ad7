"""Pure-numpy implementations of the hot kernels.

Reductions over columns are split at fixed global boundaries
(``REDUCE_BLOCK`` columns) so the result of :func:`mix_sums` does not depend
on how a caller chunks the column range.
"""

import math

import numpy as np

REDUCE_BLOCK = 256
_LOG_2PI = math.log(2.0 * math.pi)
_FLOOR = 1e-3


def log_density_block(X, means, chols, logdets, out):
    d = X.shape[1]
    diff = X[:, None, :] - means[None, :, :]
    z = np.empty_like(diff)
    maha = np.zeros(out.shape)
    for j in range(d):
        acc = diff[:, :, j].copy()
        for k in range(j):
            acc -= chols[None, :, j, k] * z[:, :, k]
        z[:, :, j] = acc / chols[None, :, j, j]
        maha += z[:, :, j] * z[:, :, j]
    out[...] = -0.5 * (d * _LOG_2PI + logdets[None, :] + maha)


def mix_sums(E, W, s, offset):
    b = E.shape[1]
    lo = 0
    while lo < b:
        g = offset + lo
        hi = min(b, (g // REDUCE_BLOCK + 1) * REDUCE_BLOCK - offset)
        blk = E[:, lo:hi]
        for q in range(W.shape[0]):
            s[q] += (blk * W[q, lo:hi]).sum(axis=1)
        lo = hi


def column_gradient(E, w, out):
    out[...] = (E * w[:, None]).sum(axis=0)


def _ll(r, s):
    return float(np.mean(r + np.log(s)))


def _subset_em_one(Es, r, pi, tol, rel_tol, max_iter, eta, prune):
    n = Es.shape[0]

    def grad(s):
        return (Es * (1.0 / s)[:, None]).sum(axis=0) / n

    s = Es @ pi
    ll = _ll(r, s)
    it = violations = 0
    stop = False
    while True:
        g = grad(s)
        gap = float(g.max() - 1.0)
        if stop or gap <= tol or it >= max_iter or not math.isfinite(ll):
            break
        it += 1
        pi_new = pi * g
        pi_new /= pi_new.sum()
        s_new = Es @ pi_new
        ll_new = _ll(r, s_new)
        if ll_new < ll - 1e-12:
            violations += 1
        prev = ll
        pi_old = pi
        pi, s, ll = pi_new, s_new, ll_new
        if eta != 1.0:
            ext = pi_old + eta * (pi_new - pi_old)
            ext = np.where(ext <= 0.0, _FLOOR * pi_new, ext)
            ext /= ext.sum()
            s_ext = Es @ ext
            ll_ext = _ll(r, s_ext)
            if ll_ext >= ll_new:
                pi, s, ll = ext, s_ext, ll_ext
        if abs(ll - prev) <= rel_tol * abs(prev):
            stop = True
    pi = np.where(pi < prune, 0.0, pi)
    pi /= pi.sum()
    s = Es @ pi
    ll = _ll(r, s)
    gap = float(grad(s).max() - 1.0)
    return pi, ll, gap, it, violations


def subset_convex_em(L, supports, init, tol, rel_tol, max_iter, eta, prune):
    ns, k = supports.shape
    weights = np.empty((ns, k))
    lls = np.empty(ns)
    gaps = np.empty(ns)
    iters = np.empty(ns, dtype=np.int64)
    viol = np.empty(ns, dtype=np.int64)
    for q in range(ns):
        Ls = L[:, supports[q]]
        r = Ls.max(axis=1)
        Es = np.exp(Ls - r[:, None])
        pi, lls[q], gaps[q], iters[q], viol[q] = _subset_em_one(
            Es, r, init[q].astype(float).copy(), tol, rel_tol, max_iter, eta, prune
        )
        weights[q] = pi
    return weights, lls, gaps, iters, viol


def subset_uniform_ll(L, supports):
    k = supports.shape[1]
    out = np.empty(supports.shape[0])
    for q in range(supports.shape[0]):
        Ls = L[:, supports[q]]
        mx = Ls.max(axis=1)
        out[q] = np.mean(mx + np.log(np.exp(Ls - mx[:, None]).sum(axis=1)) - math.log(k))
    return out


def sym_kl_to_set(qmeans, qcovs, qprecs, means, covs, precs):
    d = qmeans.shape[1]
    tr = np.einsum("mab,qba->qm", precs, qcovs) + np.einsum("qab,mba->qm", qprecs, covs)
    diff = qmeans[:, None, :] - means[None, :, :]
    quad = np.einsum("qma,mab,qmb->qm", diff, precs, diff) + np.einsum(
        "qma,qab,qmb->qm", diff, qprecs, diff
    )
    return 0.25 * (tr + quad - 2.0 * d)


def _ridge(cov, eps, delta):
    d = cov.shape[0]
    cov[np.diag_indices(d)] += eps * (np.trace(cov) / d + delta)


def fit_patches(F, tops, lefts, hs, ws, trim_fraction, eps, delta):
    d = F.shape[2]
    p = tops.shape[0]
    means = np.zeros((p, d))
    covs = np.zeros((p, d, d))
    ok = np.zeros(p, dtype=bool)
    for q in range(p):
        pts = F[tops[q]:tops[q] + hs[q], lefts[q]:lefts[q] + ws[q]].reshape(-1, d)
        n = pts.shape[0]
        n_drop = int(math.floor(trim_fraction * n))
        if n - n_drop < d + 1:
            continue
        mean = pts.mean(axis=0)
        diff = pts - mean
        cov = diff.T @ diff / n
        if n_drop > 0:
            _ridge(cov, eps, delta)
            Lc = np.linalg.cholesky(cov)
            z = np.linalg.solve(Lc, diff.T)
            dist = (z * z).sum(axis=0)
            order = np.argsort(dist, kind="stable")
            pts = pts[np.sort(order[: n - n_drop])]
            mean = pts.mean(axis=0)
            diff = pts - mean
            cov = diff.T @ diff / pts.shape[0]
        _ridge(cov, eps, delta)
        means[q] = mean
        covs[q] = cov
        ok[q] = True
    return means, covs, ok

