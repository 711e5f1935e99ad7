"""numba implementations of the hot kernels.

Every reduction runs in a fixed sequential order inside a single row or
column, so results do not depend on the number of worker threads or on how
the caller splits the column range into blocks.
"""

import math

import numba as nb
import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)
_FLOOR = 1e-3
REDUCE_BLOCK = 256

njit = nb.njit(cache=True, nogil=True)
pjit = nb.njit(cache=True, nogil=True, parallel=True)


@pjit
def log_density_block(X, means, chols, logdets, out):
    n, d = X.shape
    b = means.shape[0]
    const = d * _LOG_2PI
    for i in nb.prange(n):
        z = np.empty(d)
        for m in range(b):
            L = chols[m]
            maha = 0.0
            for j in range(d):
                acc = X[i, j] - means[m, j]
                for k in range(j):
                    acc -= L[j, k] * z[k]
                z[j] = acc / L[j, j]
                maha += z[j] * z[j]
            out[i, m] = -0.5 * (const + logdets[m] + maha)


@njit
def _mix_rows(E, W, s, lo, hi, offset):
    # columns are reduced in segments that end on global REDUCE_BLOCK
    # boundaries; inside a segment, four interleaved partial sums combine in
    # a fixed tree
    b = E.shape[1]
    for i in range(lo, hi):
        for q in range(W.shape[0]):
            c0 = 0
            while c0 < b:
                c1 = min(b, ((offset + c0) // REDUCE_BLOCK + 1) * REDUCE_BLOCK - offset)
                n4 = c0 + (c1 - c0) - (c1 - c0) % 4
                a0 = 0.0
                a1 = 0.0
                a2 = 0.0
                a3 = 0.0
                for m in range(c0, n4, 4):
                    a0 += W[q, m] * E[i, m]
                    a1 += W[q, m + 1] * E[i, m + 1]
                    a2 += W[q, m + 2] * E[i, m + 2]
                    a3 += W[q, m + 3] * E[i, m + 3]
                for m in range(n4, c1):
                    a0 += W[q, m] * E[i, m]
                s[q, i] += (a0 + a1) + (a2 + a3)
                c0 = c1


@njit
def _grad_cols(E, w, out, lo, hi):
    # a local accumulator lets LLVM vectorise; order over rows is unchanged
    acc = np.zeros(hi - lo)
    for i in range(E.shape[0]):
        wi = w[i]
        row = E[i, lo:hi]
        for j in range(hi - lo):
            acc[j] += wi * row[j]
    out[lo:hi] = acc


@pjit
def _mix_sums_par(E, W, s, offset):
    n = E.shape[0]
    nblk = (n + 63) // 64
    for blk in nb.prange(nblk):
        _mix_rows(E, W, s, blk * 64, min(n, blk * 64 + 64), offset)


@pjit
def _column_gradient_par(E, w, out):
    b = E.shape[1]
    nblk = (b + 255) // 256
    for blk in nb.prange(nblk):
        _grad_cols(E, w, out, blk * 256, min(b, blk * 256 + 256))


# below this many matrix entries the thread start-up costs more than it saves
_PAR_MIN = 1 << 20


def mix_sums(E, W, s, offset):
    if E.size >= _PAR_MIN and nb.get_num_threads() > 1:
        _mix_sums_par(E, W, s, offset)
    else:
        _mix_rows(E, W, s, 0, E.shape[0], offset)


def column_gradient(E, w, out):
    if E.size >= _PAR_MIN and nb.get_num_threads() > 1:
        _column_gradient_par(E, w, out)
    else:
        _grad_cols(E, w, out, 0, E.shape[1])


@njit
def _ll_from_sums(r, s):
    acc = 0.0
    for i in range(r.shape[0]):
        acc += r[i] + math.log(s[i])
    return acc / r.shape[0]


@njit
def _sums(Es, pi, s):
    n, k = Es.shape
    for i in range(n):
        acc = 0.0
        for j in range(k):
            acc += pi[j] * Es[i, j]
        s[i] = acc


@njit
def _gap(Es, s, g):
    n, k = Es.shape
    for j in range(k):
        g[j] = 0.0
    for i in range(n):
        inv = 1.0 / s[i]
        for j in range(k):
            g[j] += Es[i, j] * inv
    for j in range(k):
        g[j] /= n
    gap = -np.inf
    for j in range(k):
        if g[j] - 1.0 > gap:
            gap = g[j] - 1.0
    return gap


@njit
def _subset_em_one(Es, r, pi, tol, rel_tol, max_iter, eta, prune):
    n, k = Es.shape
    s = np.zeros(n)
    g = np.zeros(k)
    _sums(Es, pi, s)
    ll = _ll_from_sums(r, s)
    s_new = np.zeros(n)
    s_ext = np.zeros(n)
    pi_new = np.zeros(k)
    pi_ext = np.zeros(k)
    it = 0
    violations = 0
    stop = False
    while True:
        gap = _gap(Es, s, g)
        if stop or gap <= tol or it >= max_iter or not math.isfinite(ll):
            break
        it += 1
        tot = 0.0
        for j in range(k):
            pi_new[j] = pi[j] * g[j]
            tot += pi_new[j]
        for j in range(k):
            pi_new[j] /= tot
        _sums(Es, pi_new, s_new)
        ll_new = _ll_from_sums(r, s_new)
        if ll_new < ll - 1e-12:
            violations += 1
        prev = ll
        accepted = False
        if eta != 1.0:
            tot = 0.0
            for j in range(k):
                v = pi[j] + eta * (pi_new[j] - pi[j])
                if v <= 0.0:
                    v = _FLOOR * pi_new[j]
                pi_ext[j] = v
                tot += v
            for j in range(k):
                pi_ext[j] /= tot
            _sums(Es, pi_ext, s_ext)
            ll_ext = _ll_from_sums(r, s_ext)
            if ll_ext >= ll_new:
                pi[:] = pi_ext
                s[:] = s_ext
                ll = ll_ext
                accepted = True
        if not accepted:
            pi[:] = pi_new
            s[:] = s_new
            ll = ll_new
        if abs(ll - prev) <= rel_tol * abs(prev):
            stop = True
    for j in range(k):
        if pi[j] < prune:
            pi[j] = 0.0
    tot = 0.0
    for j in range(k):
        tot += pi[j]
    for j in range(k):
        pi[j] /= tot
    _sums(Es, pi, s)
    ll = _ll_from_sums(r, s)
    gap = _gap(Es, s, g)
    return ll, gap, it, violations


@pjit
def subset_convex_em(L, supports, init, tol, rel_tol, max_iter, eta, prune):
    n = L.shape[0]
    ns, k = supports.shape
    weights = np.empty((ns, k))
    lls = np.empty(ns)
    gaps = np.empty(ns)
    iters = np.empty(ns, dtype=np.int64)
    viol = np.empty(ns, dtype=np.int64)
    for q in nb.prange(ns):
        Es = np.empty((n, k))
        r = np.empty(n)
        for i in range(n):
            mx = -np.inf
            for j in range(k):
                v = L[i, supports[q, j]]
                if v > mx:
                    mx = v
            r[i] = mx
            for j in range(k):
                Es[i, j] = math.exp(L[i, supports[q, j]] - mx)
        pi = init[q].copy()
        ll, gap, it, vv = _subset_em_one(Es, r, pi, tol, rel_tol, max_iter, eta, prune)
        weights[q] = pi
        lls[q] = ll
        gaps[q] = gap
        iters[q] = it
        viol[q] = vv
    return weights, lls, gaps, iters, viol


@pjit
def subset_uniform_ll(L, supports):
    n = L.shape[0]
    ns, k = supports.shape
    out = np.empty(ns)
    logk = math.log(k)
    for q in nb.prange(ns):
        acc = 0.0
        for i in range(n):
            mx = -np.inf
            for j in range(k):
                v = L[i, supports[q, j]]
                if v > mx:
                    mx = v
            t = 0.0
            for j in range(k):
                t += math.exp(L[i, supports[q, j]] - mx)
            acc += mx + math.log(t) - logk
        out[q] = acc / n
    return out


@pjit
def sym_kl_to_set(qmeans, qcovs, qprecs, means, covs, precs):
    nq, d = qmeans.shape
    m_count = means.shape[0]
    out = np.empty((nq, m_count))
    for m in nb.prange(m_count):
        for q in range(nq):
            t = 0.0
            for a in range(d):
                for b in range(d):
                    t += precs[m, a, b] * qcovs[q, b, a] + qprecs[q, a, b] * covs[m, b, a]
            quad = 0.0
            for a in range(d):
                da = qmeans[q, a] - means[m, a]
                for b in range(d):
                    db = qmeans[q, b] - means[m, b]
                    quad += da * (precs[m, a, b] + qprecs[q, a, b]) * db
            out[q, m] = 0.25 * (t + quad - 2.0 * d)
    return out


@njit
def _moments(F, idx_r, idx_c, keep, mean, cov):
    d = F.shape[2]
    cnt = 0
    for j in range(d):
        mean[j] = 0.0
    for t in range(idx_r.shape[0]):
        if keep[t]:
            cnt += 1
            for j in range(d):
                mean[j] += F[idx_r[t], idx_c[t], j]
    for j in range(d):
        mean[j] /= cnt
    for a in range(d):
        for b in range(d):
            cov[a, b] = 0.0
    diff = np.empty(d)
    for t in range(idx_r.shape[0]):
        if keep[t]:
            for j in range(d):
                diff[j] = F[idx_r[t], idx_c[t], j] - mean[j]
            for a in range(d):
                for b in range(d):
                    cov[a, b] += diff[a] * diff[b]
    for a in range(d):
        for b in range(d):
            cov[a, b] /= cnt
    return cnt


@njit
def _ridge(cov, eps, delta):
    d = cov.shape[0]
    tr = 0.0
    for j in range(d):
        tr += cov[j, j]
    lam = eps * (tr / d + delta)
    for j in range(d):
        cov[j, j] += lam


@pjit
def fit_patches(F, tops, lefts, hs, ws, trim_fraction, eps, delta):
    d = F.shape[2]
    p = tops.shape[0]
    means = np.zeros((p, d))
    covs = np.zeros((p, d, d))
    ok = np.zeros(p, dtype=np.bool_)
    for q in nb.prange(p):
        h = hs[q]
        w = ws[q]
        n = h * w
        idx_r = np.empty(n, dtype=np.int64)
        idx_c = np.empty(n, dtype=np.int64)
        t = 0
        for a in range(h):
            for b in range(w):
                idx_r[t] = tops[q] + a
                idx_c[t] = lefts[q] + b
                t += 1
        keep = np.ones(n, dtype=np.bool_)
        n_drop = int(math.floor(trim_fraction * n))
        if n - n_drop < d + 1:
            continue
        mean = np.empty(d)
        cov = np.empty((d, d))
        _moments(F, idx_r, idx_c, keep, mean, cov)
        if n_drop > 0:
            _ridge(cov, eps, delta)
            Lc = np.linalg.cholesky(cov)
            dist = np.empty(n)
            z = np.empty(d)
            for t in range(n):
                maha = 0.0
                for j in range(d):
                    acc = F[idx_r[t], idx_c[t], j] - mean[j]
                    for k in range(j):
                        acc -= Lc[j, k] * z[k]
                    z[j] = acc / Lc[j, j]
                    maha += z[j] * z[j]
                dist[t] = maha
            order = np.argsort(dist, kind="mergesort")
            for t in range(n - n_drop, n):
                keep[order[t]] = False
            _moments(F, idx_r, idx_c, keep, mean, cov)
        _ridge(cov, eps, delta)
        means[q] = mean
        covs[q] = cov
        ok[q] = True
    return means, covs, ok

