"""Hot numeric kernels in two interchangeable implementations.

Three loops dominate runtime: scanning a vocabulary for edit-distance
neighbors, the damped-Newton MAP fit behind every per-token regression, and
the first-improvement sweeps of the local-search partitioner. Each exists
twice here: a vectorized pure-numpy version (``*_np``) and a loop version
compiled with numba ``@njit`` (``*_nb``). The module-level dispatchers pick
one at import time from the ``SOCRAT_NUMBA`` environment variable:

    auto (default)  use numba when importable, else numpy
    1/true/on       require numba (ImportError if missing)
    0/false/off     force the numpy path

Both implementations of a kernel follow the same algorithm with the same
tie handling, so swapping paths changes speed, not results (see
tests/test_kernels.py and benchmarks/bench_kernels.py).
"""
from __future__ import annotations

import math
import os

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "HAVE_NUMBA",
    "encode_word",
    "encode_vocabulary",
    "edit_distance_scan",
    "edit_distance_scan_np",
    "edit_distance_scan_nb",
    "newton_map",
    "newton_map_np",
    "newton_map_nb",
    "local_search_sweep",
    "local_search_np",
    "local_search_nb",
]

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    numba = None
    HAVE_NUMBA = False


def _resolve_flag() -> bool:
    raw = os.environ.get("SOCRAT_NUMBA", "auto").strip().lower()
    if raw in ("0", "false", "off", "no"):
        return False
    if raw in ("1", "true", "on", "yes", "require"):
        if not HAVE_NUMBA:
            raise ImportError("SOCRAT_NUMBA requires numba, which is not importable")
        return True
    return HAVE_NUMBA


NUMBA_ENABLED = _resolve_flag()

# Accept a candidate move only if it beats the incumbent by this much.
# Keeps the numpy and numba sweeps in lockstep: their summation orders can
# differ by a few ulps, which must never flip an accept decision.
_IMPROVE_EPS = 1e-9


# ---------------------------------------------------------------------------
# word encoding
# ---------------------------------------------------------------------------

def encode_word(word: str) -> np.ndarray:
    """Unicode codepoints of a word as an int32 vector."""
    return np.array([ord(c) for c in word], dtype=np.int32)


def encode_vocabulary(words: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Flatten a word list into (codes, offsets) for the scan kernels.

    Word i occupies codes[offsets[i]:offsets[i+1]].
    """
    offsets = np.zeros(len(words) + 1, dtype=np.int64)
    for i, w in enumerate(words):
        offsets[i + 1] = offsets[i] + len(w)
    codes = np.empty(int(offsets[-1]), dtype=np.int32)
    for i, w in enumerate(words):
        if w:
            codes[offsets[i]:offsets[i + 1]] = [ord(c) for c in w]
    return codes, offsets


# ---------------------------------------------------------------------------
# kernel 1: bounded edit-distance scan over a vocabulary
# ---------------------------------------------------------------------------
# Distances above `cap` are reported as cap + 1; callers only ever bucket by
# "within budget or not", so the DP can abandon a row early.

def edit_distance_scan_np(codes: np.ndarray, offsets: np.ndarray,
                          query: np.ndarray, cap: int) -> np.ndarray:
    nw = offsets.shape[0] - 1
    out = np.empty(nw, dtype=np.int64)
    la = query.shape[0]
    for wi in range(nw):
        w = codes[offsets[wi]:offsets[wi + 1]]
        lb = w.shape[0]
        if abs(la - lb) > cap:
            out[wi] = cap + 1
            continue
        ar = np.arange(lb + 1, dtype=np.int64)
        prev = ar.copy()
        dist = np.int64(la)  # correct answer for lb == 0
        for i in range(1, la + 1):
            ne = (w != query[i - 1]).astype(np.int64)
            # deletion from the query vs. substitution
            cand = np.minimum(prev[1:] + 1, prev[:-1] + ne)
            run = np.concatenate((np.array([i], dtype=np.int64), cand))
            # insertion closes under a min-plus prefix scan
            cur = np.minimum.accumulate(run - ar) + ar
            if cur.min() > cap:
                dist = np.int64(cap + 1)
                break
            prev = cur
            dist = prev[lb]
        out[wi] = dist if dist <= cap else cap + 1
    return out


def _edit_distance_scan_loops(codes, offsets, query, cap):
    nw = offsets.shape[0] - 1
    out = np.empty(nw, dtype=np.int64)
    la = query.shape[0]
    for wi in range(nw):
        s = offsets[wi]
        lb = offsets[wi + 1] - s
        if abs(la - lb) > cap:
            out[wi] = cap + 1
            continue
        prev = np.empty(lb + 1, dtype=np.int64)
        cur = np.empty(lb + 1, dtype=np.int64)
        for j in range(lb + 1):
            prev[j] = j
        dist = la  # correct answer for lb == 0
        for i in range(1, la + 1):
            cur[0] = i
            rowmin = cur[0]
            qc = query[i - 1]
            for j in range(1, lb + 1):
                c = prev[j] + 1
                ins = cur[j - 1] + 1
                if ins < c:
                    c = ins
                sub = prev[j - 1]
                if codes[s + j - 1] != qc:
                    sub += 1
                if sub < c:
                    c = sub
                cur[j] = c
                if c < rowmin:
                    rowmin = c
            if rowmin > cap:
                dist = cap + 1
                break
            for j in range(lb + 1):
                prev[j] = cur[j]
            dist = prev[lb]
        if dist > cap:
            dist = cap + 1
        out[wi] = dist
    return out


# ---------------------------------------------------------------------------
# kernel 2: damped-Newton MAP for one per-token logistic regression
# ---------------------------------------------------------------------------
# Maximizes  sum_s [ y_s z_s - softplus(z_s) ] - (beta/2) ||theta - alpha||^2
# with z = X theta. Newton steps are halved until the objective stops
# worsening; convergence is an inf-norm gradient test. Returns
# (theta, cov_diag, grad_inf, iters, converged) where cov_diag is the
# diagonal of the inverse Hessian at the final point.

def _penalized_ll_np(z, y, theta, alpha, beta):
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    d = theta - alpha
    return float(np.dot(y, z) - softplus.sum() - 0.5 * beta * np.dot(d, d))


def _sigmoid_np(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def newton_map_np(X: np.ndarray, y: np.ndarray, alpha: float, beta: float,
                  tol: float = 1e-8, max_iter: int = 100):
    S, D = X.shape
    theta = np.full(D, alpha, dtype=np.float64)
    z = X @ theta
    obj = _penalized_ll_np(z, y, theta, alpha, beta)
    iters = 0
    conv = 0
    grad_inf = math.inf
    while True:
        p = _sigmoid_np(z)
        g = X.T @ (y - p) - beta * (theta - alpha)
        grad_inf = float(np.abs(g).max()) if D else 0.0
        if grad_inf < tol:
            conv = 1
            break
        if iters >= max_iter:
            break
        w = p * (1.0 - p)
        H = (X * w[:, None]).T @ X
        H[np.diag_indices(D)] += beta
        d = np.linalg.solve(H, g)
        step = 1.0
        accepted = False
        for _ in range(64):
            cand = theta + step * d
            zc = X @ cand
            cobj = _penalized_ll_np(zc, y, cand, alpha, beta)
            if cobj > obj - 1e-14 * (1.0 + abs(obj)):
                theta, z, obj = cand, zc, cobj
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        iters += 1
    p = _sigmoid_np(z)
    w = p * (1.0 - p)
    H = (X * w[:, None]).T @ X
    H[np.diag_indices(D)] += beta
    cov_diag = np.diag(np.linalg.inv(H)).copy()
    return theta, cov_diag, grad_inf, iters, conv


def _sigmoid_scalar(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _penalized_ll_loops(z, y, theta, alpha, beta):
    acc = 0.0
    for s in range(z.shape[0]):
        zs = z[s]
        sp = zs if zs > 0.0 else 0.0
        sp += math.log1p(math.exp(-abs(zs)))
        acc += y[s] * zs - sp
    pen = 0.0
    for d in range(theta.shape[0]):
        diff = theta[d] - alpha
        pen += diff * diff
    return acc - 0.5 * beta * pen


def _hessian_loops(X, z, beta):
    S, D = X.shape
    H = np.zeros((D, D), dtype=np.float64)
    for s in range(S):
        p = _sigmoid_scalar(z[s])
        w = p * (1.0 - p)
        if w == 0.0:
            continue
        for d1 in range(D):
            xw = X[s, d1] * w
            if xw == 0.0:
                continue
            for d2 in range(D):
                H[d1, d2] += xw * X[s, d2]
    for d in range(D):
        H[d, d] += beta
    return H


def _newton_map_loops(X, y, alpha, beta, tol, max_iter):
    S, D = X.shape
    theta = np.full(D, alpha, dtype=np.float64)
    z = np.zeros(S, dtype=np.float64)
    for s in range(S):
        acc = 0.0
        for d in range(D):
            acc += X[s, d] * theta[d]
        z[s] = acc
    obj = _penalized_ll_loops(z, y, theta, alpha, beta)
    g = np.zeros(D, dtype=np.float64)
    cand = np.zeros(D, dtype=np.float64)
    zc = np.zeros(S, dtype=np.float64)
    iters = 0
    conv = 0
    grad_inf = math.inf
    while True:
        for d in range(D):
            g[d] = -beta * (theta[d] - alpha)
        for s in range(S):
            r = y[s] - _sigmoid_scalar(z[s])
            for d in range(D):
                g[d] += X[s, d] * r
        grad_inf = 0.0
        for d in range(D):
            a = abs(g[d])
            if a > grad_inf:
                grad_inf = a
        if grad_inf < tol:
            conv = 1
            break
        if iters >= max_iter:
            break
        H = _hessian_loops(X, z, beta)
        dstep = np.linalg.solve(H, g)
        step = 1.0
        accepted = False
        for _ in range(64):
            for d in range(D):
                cand[d] = theta[d] + step * dstep[d]
            for s in range(S):
                acc = 0.0
                for d in range(D):
                    acc += X[s, d] * cand[d]
                zc[s] = acc
            cobj = _penalized_ll_loops(zc, y, cand, alpha, beta)
            if cobj > obj - 1e-14 * (1.0 + abs(obj)):
                for d in range(D):
                    theta[d] = cand[d]
                for s in range(S):
                    z[s] = zc[s]
                obj = cobj
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        iters += 1
    H = _hessian_loops(X, z, beta)
    cov = np.linalg.inv(H)
    cov_diag = np.empty(D, dtype=np.float64)
    for d in range(D):
        cov_diag[d] = cov[d, d]
    return theta, cov_diag, grad_inf, iters, conv


# ---------------------------------------------------------------------------
# kernel 3: first-improvement local-search sweep for robust partitioning
# ---------------------------------------------------------------------------
# Assignment vectors u (inputs) and v (outputs) map nodes to subsets
# 0..K-1. The cost is the robust cut objective: sum of theta over cut edges
# plus the budgeted adversarial term over cut half-widths theta_hat. Moves:
# single-node relabels on either side, then cross-side label swaps. The
# first move that improves by more than _IMPROVE_EPS is applied and the
# sweep restarts; the search stops on a full sweep with no improvement.

def _robust_cost_np(theta, theta_hat, u, v, gamma):
    cross = u[:, None] != v[None, :]
    det = float(theta[cross].sum())
    if gamma <= 0.0:
        return det
    vals = theta_hat[cross & (theta_hat > 0.0)]
    c = vals.size
    if c == 0:
        return det
    srt = np.sort(vals)
    k = int(math.floor(gamma))
    if k > c:
        k = c
    s = 0.0
    for t in range(k):
        s += srt[c - 1 - t]
    frac = gamma - math.floor(gamma)
    if frac > 0.0 and k < c:
        s += frac * srt[c - 1 - k]
    return det + s


def local_search_np(theta, theta_hat, u0, v0, k, cu_min, cu_max,
                    cv_min, cv_max, gamma, max_accepts=10000):
    u = u0.copy()
    v = v0.copy()
    n, m = theta.shape
    cu = np.bincount(u, minlength=k).astype(np.int64)
    cv = np.bincount(v, minlength=k).astype(np.int64)
    cost = _robust_cost_np(theta, theta_hat, u, v, gamma)
    accepts = 0
    while accepts < max_accepts:
        improved = False
        for i in range(n):
            a = u[i]
            if cu[a] - 1 < cu_min:
                continue
            for b in range(k):
                if b == a or cu[b] + 1 > cu_max:
                    continue
                u[i] = b
                c2 = _robust_cost_np(theta, theta_hat, u, v, gamma)
                if c2 < cost - _IMPROVE_EPS:
                    cost = c2
                    cu[a] -= 1
                    cu[b] += 1
                    improved = True
                    break
                u[i] = a
            if improved:
                break
        if improved:
            accepts += 1
            continue
        for j in range(m):
            a = v[j]
            if cv[a] - 1 < cv_min:
                continue
            for b in range(k):
                if b == a or cv[b] + 1 > cv_max:
                    continue
                v[j] = b
                c2 = _robust_cost_np(theta, theta_hat, u, v, gamma)
                if c2 < cost - _IMPROVE_EPS:
                    cost = c2
                    cv[a] -= 1
                    cv[b] += 1
                    improved = True
                    break
                v[j] = a
            if improved:
                break
        if improved:
            accepts += 1
            continue
        for i in range(n):
            a = u[i]
            done = False
            for j in range(m):
                b = v[j]
                if a == b:
                    continue
                if cu[a] - 1 < cu_min or cu[b] + 1 > cu_max:
                    break  # no swap with any j can fix the u side
                if cv[b] - 1 < cv_min or cv[a] + 1 > cv_max:
                    continue
                u[i] = b
                v[j] = a
                c2 = _robust_cost_np(theta, theta_hat, u, v, gamma)
                if c2 < cost - _IMPROVE_EPS:
                    cost = c2
                    cu[a] -= 1
                    cu[b] += 1
                    cv[b] -= 1
                    cv[a] += 1
                    done = True
                    break
                u[i] = a
                v[j] = b
            if done:
                improved = True
                break
        if not improved:
            break
        accepts += 1
    return u, v, cost


def _robust_cost_loops(theta, theta_hat, u, v, gamma, buf):
    n, m = theta.shape
    det = 0.0
    c = 0
    for i in range(n):
        ui = u[i]
        for j in range(m):
            if ui != v[j]:
                det += theta[i, j]
                h = theta_hat[i, j]
                if h > 0.0:
                    buf[c] = h
                    c += 1
    if gamma <= 0.0 or c == 0:
        return det
    srt = np.sort(buf[:c])
    k = int(math.floor(gamma))
    if k > c:
        k = c
    s = 0.0
    for t in range(k):
        s += srt[c - 1 - t]
    frac = gamma - math.floor(gamma)
    if frac > 0.0 and k < c:
        s += frac * srt[c - 1 - k]
    return det + s


def _local_search_loops(theta, theta_hat, u0, v0, k, cu_min, cu_max,
                        cv_min, cv_max, gamma, max_accepts):
    u = u0.copy()
    v = v0.copy()
    n, m = theta.shape
    cu = np.zeros(k, dtype=np.int64)
    cv = np.zeros(k, dtype=np.int64)
    for i in range(n):
        cu[u[i]] += 1
    for j in range(m):
        cv[v[j]] += 1
    buf = np.empty(n * m, dtype=np.float64)
    cost = _robust_cost_loops(theta, theta_hat, u, v, gamma, buf)
    accepts = 0
    while accepts < max_accepts:
        improved = False
        for i in range(n):
            a = u[i]
            if cu[a] - 1 < cu_min:
                continue
            for b in range(k):
                if b == a or cu[b] + 1 > cu_max:
                    continue
                u[i] = b
                c2 = _robust_cost_loops(theta, theta_hat, u, v, gamma, buf)
                if c2 < cost - _IMPROVE_EPS:
                    cost = c2
                    cu[a] -= 1
                    cu[b] += 1
                    improved = True
                    break
                u[i] = a
            if improved:
                break
        if improved:
            accepts += 1
            continue
        for j in range(m):
            a = v[j]
            if cv[a] - 1 < cv_min:
                continue
            for b in range(k):
                if b == a or cv[b] + 1 > cv_max:
                    continue
                v[j] = b
                c2 = _robust_cost_loops(theta, theta_hat, u, v, gamma, buf)
                if c2 < cost - _IMPROVE_EPS:
                    cost = c2
                    cv[a] -= 1
                    cv[b] += 1
                    improved = True
                    break
                v[j] = a
            if improved:
                break
        if improved:
            accepts += 1
            continue
        for i in range(n):
            a = u[i]
            done = False
            for j in range(m):
                b = v[j]
                if a == b:
                    continue
                if cu[a] - 1 < cu_min or cu[b] + 1 > cu_max:
                    break
                if cv[b] - 1 < cv_min or cv[a] + 1 > cv_max:
                    continue
                u[i] = b
                v[j] = a
                c2 = _robust_cost_loops(theta, theta_hat, u, v, gamma, buf)
                if c2 < cost - _IMPROVE_EPS:
                    cost = c2
                    cu[a] -= 1
                    cu[b] += 1
                    cv[b] -= 1
                    cv[a] += 1
                    done = True
                    break
                u[i] = a
                v[j] = b
            if done:
                improved = True
                break
        if not improved:
            break
        accepts += 1
    return u, v, cost


# ---------------------------------------------------------------------------
# compilation and dispatch
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)
    # Helpers called from inside the compiled kernels must be jitted too.
    # Rebinding the module globals is enough: numba resolves callees at
    # (lazy) compile time through the current global bindings.
    _sigmoid_scalar = _jit(_sigmoid_scalar)
    _penalized_ll_loops = _jit(_penalized_ll_loops)
    _hessian_loops = _jit(_hessian_loops)
    _robust_cost_loops = _jit(_robust_cost_loops)
    edit_distance_scan_nb = _jit(_edit_distance_scan_loops)
    newton_map_nb = _jit(_newton_map_loops)
    local_search_nb = _jit(_local_search_loops)
else:  # pragma: no cover - exercised only on stripped installs
    edit_distance_scan_nb = None
    newton_map_nb = None
    local_search_nb = None


def edit_distance_scan(codes, offsets, query, cap):
    """Distance of every vocabulary word to the query, capped at cap + 1."""
    if NUMBA_ENABLED:
        return edit_distance_scan_nb(codes, offsets, query, cap)
    return edit_distance_scan_np(codes, offsets, query, cap)


def newton_map(X, y, alpha, beta, tol=1e-8, max_iter=100):
    """MAP and Laplace covariance diagonal for one logistic regression."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if NUMBA_ENABLED:
        return newton_map_nb(X, y, float(alpha), float(beta), float(tol), int(max_iter))
    return newton_map_np(X, y, float(alpha), float(beta), float(tol), int(max_iter))


def local_search_sweep(theta, theta_hat, u0, v0, k, cu_min, cu_max,
                       cv_min, cv_max, gamma, max_accepts=10000):
    """Run first-improvement sweeps from (u0, v0) until a local optimum."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    theta_hat = np.ascontiguousarray(theta_hat, dtype=np.float64)
    u0 = np.ascontiguousarray(u0, dtype=np.int64)
    v0 = np.ascontiguousarray(v0, dtype=np.int64)
    if NUMBA_ENABLED:
        return local_search_nb(theta, theta_hat, u0, v0, k, cu_min, cu_max,
                               cv_min, cv_max, float(gamma), max_accepts)
    return local_search_np(theta, theta_hat, u0, v0, k, cu_min, cu_max,
                           cv_min, cv_max, float(gamma), max_accepts)
