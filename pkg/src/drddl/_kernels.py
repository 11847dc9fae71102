"""Column-wise inner loops for ISTA, IRLS and linear encoding.

Every kernel treats each column of its right-hand side as an independent
problem with its own stopping rule, so a column's result never depends on
which other columns share the batch.  Two implementations exist per kernel:

* ``*_nb``  -- explicit loops compiled with numba, parallel over columns;
* ``*_np``  -- vectorized numpy over the active columns, using stacked
  per-column matmuls (plain GEMM is not bitwise column-consistent).

The un-suffixed names dispatch on ``_accel.USE_NUMBA``.
"""

import numpy as np

from . import _accel
from ._accel import njit, prange

# reassociation lets LLVM vectorize the reductions; the order still depends
# only on the vector length, never on the batch, and no inf/nan assumptions
# are made so the finiteness checks downstream stay meaningful
_FAST = {"reassoc", "contract"}

IRLS_OK = 0
IRLS_NOT_PD = 1
# IRLS creeps toward the last zero residual of an l1 fit.  Afterwards the k
# smallest residuals are taken as a basis, solved exactly, and the fit walks
# to neighbouring bases (release one zero residual, exact line search) while
# the l1 cost drops.  The result replaces the IRLS iterate only if cheaper.
POLISH_MOVES = 25


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------

@njit(cache=True, parallel=True, fastmath=_FAST)
def matvec_cols_nb(A, X):
    p, q = A.shape
    n = X.shape[1]
    out = np.empty((p, n))
    for j in prange(n):
        x = X[:, j].copy()
        for i in range(p):
            s = 0.0
            for a in range(q):
                s += A[i, a] * x[a]
            out[i, j] = s
    return out


@njit(cache=True, fastmath=_FAST)
def _residual_nb(D, y, z, r):
    m, k = D.shape
    for i in range(m):
        s = y[i]
        for a in range(k):
            s -= D[i, a] * z[a]
        r[i] = s


@njit(cache=True, parallel=True, fastmath=_FAST)
def ista_cols_nb(D, Dt, Y, Z0, lam, L, max_iters, tol, trace):
    m, k = D.shape
    n = Y.shape[1]
    record = trace.shape[0] == max_iters + 1 and trace.shape[1] == n
    step = 1.0 / L
    thr = lam / (2.0 * L)
    Z = np.empty((k, n))
    iters = np.zeros(n, dtype=np.int64)
    for j in prange(n):
        y = Y[:, j].copy()
        z = Z0[:, j].copy()
        r = np.empty(m)
        _residual_nb(D, y, z, r)
        f = 0.0
        for i in range(m):
            f += r[i] * r[i]
        for a in range(k):
            f += lam * abs(z[a])
        if record:
            trace[0, j] = f
        it = 0
        while it < max_iters:
            # gradient uses the residual of the previous iterate
            for a in range(k):
                g = 0.0
                for i in range(m):
                    g += Dt[a, i] * r[i]
                v = z[a] + step * g
                if v > thr:
                    z[a] = v - thr
                elif v < -thr:
                    z[a] = v + thr
                else:
                    z[a] = 0.0
            _residual_nb(D, y, z, r)
            fn = 0.0
            for i in range(m):
                fn += r[i] * r[i]
            for a in range(k):
                fn += lam * abs(z[a])
            it += 1
            if record:
                trace[it, j] = fn
            done = abs(fn - f) / max(f, 1e-12) < tol
            f = fn
            if done:
                break
        if record:
            for t in range(it + 1, max_iters + 1):
                trace[t, j] = f
        for a in range(k):
            Z[a, j] = z[a]
        iters[j] = it
    return Z, iters


@njit(cache=True)
def _cholesky_solve_nb(G, h, out):
    """Solve G x = h for SPD G in place of ``out``; False if not PD."""
    k = G.shape[0]
    Lc = np.zeros((k, k))
    for i in range(k):
        for c in range(i + 1):
            s = G[i, c]
            for t in range(c):
                s -= Lc[i, t] * Lc[c, t]
            if i == c:
                if s <= 0.0:
                    return False
                Lc[i, i] = np.sqrt(s)
            else:
                Lc[i, c] = s / Lc[c, c]
    for i in range(k):
        s = h[i]
        for t in range(i):
            s -= Lc[i, t] * out[t]
        out[i] = s / Lc[i, i]
    for i in range(k - 1, -1, -1):
        s = out[i]
        for t in range(i + 1, k):
            s -= Lc[t, i] * out[t]
        out[i] = s / Lc[i, i]
    return True


@njit(cache=True)
def _invert_nb(A, out):
    """Gauss-Jordan inverse with partial pivoting; False if singular."""
    k = A.shape[0]
    M = A.copy()
    for a in range(k):
        for c in range(k):
            out[a, c] = 1.0 if a == c else 0.0
    for c in range(k):
        p = c
        best = abs(M[c, c])
        for i in range(c + 1, k):
            if abs(M[i, c]) > best:
                best = abs(M[i, c])
                p = i
        if best == 0.0:
            return False
        if p != c:
            for t in range(k):
                tmp = M[c, t]
                M[c, t] = M[p, t]
                M[p, t] = tmp
                tmp = out[c, t]
                out[c, t] = out[p, t]
                out[p, t] = tmp
        piv = M[c, c]
        for t in range(k):
            M[c, t] /= piv
            out[c, t] /= piv
        for i in range(k):
            if i != c:
                f = M[i, c]
                if f != 0.0:
                    for t in range(k):
                        M[i, t] -= f * M[c, t]
                        out[i, t] -= f * out[c, t]
    return True


@njit(cache=True)
def _edge_step_nb(r, g):
    """Best point on the line r - t g: returns (cost, t, index hitting zero)."""
    m = r.shape[0]
    t = np.empty(m)
    w = np.empty(m)
    total = 0.0
    for i in range(m):
        if g[i] != 0.0:
            t[i] = r[i] / g[i]
            w[i] = abs(g[i])
        else:
            t[i] = np.inf
            w[i] = 0.0
        total += w[i]
    order = np.argsort(t, kind="mergesort")
    cum = 0.0
    q = order[m - 1]
    for i in range(m):
        cum += w[order[i]]
        if cum >= 0.5 * total:
            q = order[i]
            break
    ts = t[q]
    f = 0.0
    for i in range(m):
        f += abs(r[i] - ts * g[i])
    return f, ts, q


@njit(cache=True)
def _polish_nb(D, y, z, r, obj):
    m, k = D.shape
    basis = np.argsort(np.abs(r), kind="mergesort")[:k].copy()
    A = np.empty((k, k))
    b = np.empty(k)
    for a in range(k):
        for c in range(k):
            A[a, c] = D[basis[a], c]
        b[a] = y[basis[a]]
    Ainv = np.empty((k, k))
    if not _invert_nb(A, Ainv):
        return obj
    zv = np.dot(Ainv, b)
    rv = np.empty(m)
    _residual_nb(D, y, zv, rv)
    fv = 0.0
    for i in range(m):
        fv += abs(rv[i])
    G = np.dot(D, Ainv)
    u = np.empty(k)
    v = np.empty(k)
    inb = np.zeros(m, dtype=np.bool_)
    for a in range(k):
        inb[basis[a]] = True
    sg = np.empty(m)
    for _ in range(POLISH_MOVES):
        # price every edge by its one-sided slope; basis rows count as zero
        for i in range(m):
            sg[i] = 0.0 if inb[i] else (1.0 if rv[i] > 0 else -1.0)
        best_p = -1
        best_slope = -1e-12
        for p in range(k):
            lin = 0.0
            kink = 0.0
            for i in range(m):
                if inb[i]:
                    kink += abs(G[i, p])
                else:
                    lin += sg[i] * G[i, p]
            slope = kink - abs(lin)
            if slope < best_slope:
                best_slope = slope
                best_p = p
        if best_p < 0:
            break
        best_f, best_t, best_i = _edge_step_nb(rv, G[:, best_p].copy())
        if not fv - best_f > 1e-14 * max(fv, 1.0):
            break
        for a in range(k):
            zv[a] += best_t * Ainv[a, best_p]
        _residual_nb(D, y, zv, rv)
        fv = 0.0
        for i in range(m):
            fv += abs(rv[i])
        inb[basis[best_p]] = False
        inb[best_i] = True
        basis[best_p] = best_i
        # row best_p of A becomes D[best_i]: rank-one update of A^-1 and D A^-1
        for c in range(k):
            u[c] = D[best_i, c] - A[best_p, c]
            A[best_p, c] = D[best_i, c]
        for c in range(k):
            s = 0.0
            for a in range(k):
                s += u[a] * Ainv[a, c]
            v[c] = s
        den = 1.0 + v[best_p]
        if abs(den) < 1e-12:
            break
        for a in range(k):
            f = Ainv[a, best_p] / den
            for c in range(k):
                Ainv[a, c] -= f * v[c]
        for i in range(m):
            f = G[i, best_p] / den
            for c in range(k):
                G[i, c] -= f * v[c]
    return _keep_better(z, r, obj, zv, rv, fv)


@njit(cache=True)
def _keep_better(z, r, obj, zv, rv, fv):
    if fv < obj:
        for a in range(z.shape[0]):
            z[a] = zv[a]
        for i in range(r.shape[0]):
            r[i] = rv[i]
        return fv
    return obj


@njit(cache=True, parallel=True)
def irls_cols_nb(D, P, Y, max_iters, eps, tol):
    m, k = D.shape
    n = Y.shape[1]
    Dt = np.ascontiguousarray(D.T)
    Z = np.empty((k, n))
    iters = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int64)
    for j in prange(n):
        y = Y[:, j].copy()
        z = np.empty(k)
        for a in range(k):
            s = 0.0
            for i in range(m):
                s += P[a, i] * y[i]
            z[a] = s
        r = np.empty(m)
        _residual_nb(D, y, z, r)
        obj = 0.0
        for i in range(m):
            obj += abs(r[i])
        w = np.empty(m)
        DtW = np.empty((k, m))
        zn = np.empty(k)
        rn = np.empty(m)
        it = 0
        while it < max_iters:
            for i in range(m):
                w[i] = 1.0 / max(abs(r[i]), eps)
            for a in range(k):
                for i in range(m):
                    DtW[a, i] = Dt[a, i] * w[i]
            # fixed-shape BLAS calls, so a column's result never depends on the batch
            G = np.dot(DtW, D)
            for a in range(k):
                G[a, a] += eps
            h = np.dot(DtW, y)
            if not _cholesky_solve_nb(G, h, zn):
                status[j] = IRLS_NOT_PD
                break
            _residual_nb(D, y, zn, rn)
            objn = 0.0
            for i in range(m):
                objn += abs(rn[i])
            if objn > obj:
                # reweighting stalled; keep the better iterate
                break
            dz = 0.0
            nz = 0.0
            for a in range(k):
                dz += (zn[a] - z[a]) ** 2
                nz += z[a] * z[a]
            for a in range(k):
                z[a] = zn[a]
            for i in range(m):
                r[i] = rn[i]
            obj = objn
            it += 1
            if np.sqrt(dz) <= tol * max(np.sqrt(nz), 1e-12):
                break
        if status[j] == IRLS_OK and m > k:
            obj = _polish_nb(D, y, z, r, obj)
        for a in range(k):
            Z[a, j] = z[a]
        iters[j] = it
    return Z, iters, status


# --------------------------------------------------------------------------
# numpy fallbacks; internal layout is (n, dim) so reductions run along the
# contiguous axis and depend only on the vector length
# --------------------------------------------------------------------------

def _stacked(A, Xt):
    return np.matmul(A, Xt[:, :, None])[:, :, 0]


def matvec_cols_np(A, X):
    return np.ascontiguousarray(_stacked(A, np.ascontiguousarray(X.T)).T)


def ista_cols_np(D, Dt, Y, Z0, lam, L, max_iters, tol, trace):
    n = Y.shape[1]
    record = trace.shape[0] == max_iters + 1 and trace.shape[1] == n
    step = 1.0 / L
    thr = lam / (2.0 * L)
    Yt = np.ascontiguousarray(Y.T)
    Zt = np.ascontiguousarray(Z0.T).copy()
    Rt = Yt - _stacked(D, Zt)
    F = (Rt * Rt).sum(axis=-1) + lam * np.abs(Zt).sum(axis=-1)
    if record:
        trace[0] = F
    iters = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    for it in range(1, max_iters + 1):
        if active.size == 0:
            break
        V = Zt[active] + step * _stacked(Dt, Rt[active])
        Za = np.sign(V) * np.maximum(np.abs(V) - thr, 0.0)
        Ra = Yt[active] - _stacked(D, Za)
        Fa = (Ra * Ra).sum(axis=-1) + lam * np.abs(Za).sum(axis=-1)
        done = np.abs(Fa - F[active]) / np.maximum(F[active], 1e-12) < tol
        Zt[active] = Za
        Rt[active] = Ra
        F[active] = Fa
        iters[active] = it
        if record:
            trace[it] = F
        active = active[~done]
    if record:
        last = int(iters.max()) if n else 0
        trace[last + 1:] = F
    return np.ascontiguousarray(Zt.T), iters


def irls_cols_np(D, P, Y, max_iters, eps, tol):
    m, k = D.shape
    n = Y.shape[1]
    Yt = np.ascontiguousarray(Y.T)
    Zt = _stacked(P, Yt)
    Rt = Yt - _stacked(D, Zt)
    obj = np.abs(Rt).sum(axis=-1)
    iters = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int64)
    ridge = eps * np.eye(k)
    Dt = np.ascontiguousarray(D.T)
    active = np.arange(n)
    for it in range(1, max_iters + 1):
        if active.size == 0:
            break
        w = 1.0 / np.maximum(np.abs(Rt[active]), eps)
        DtW = Dt[None, :, :] * w[:, None, :]
        G = np.matmul(DtW, D) + ridge
        h = _stacked_rows(DtW, Yt[active])
        ok = _positive_definite(G)
        status[active[~ok]] = IRLS_NOT_PD
        G[~ok] = np.eye(k)
        Zn = np.linalg.solve(G, h[:, :, None])[:, :, 0]
        Rn = Yt[active] - _stacked(D, Zn)
        objn = np.abs(Rn).sum(axis=-1)
        accept = ok & (objn <= obj[active])
        dz = np.sqrt(((Zn - Zt[active]) ** 2).sum(axis=-1))
        nz = np.sqrt((Zt[active] ** 2).sum(axis=-1))
        idx = active[accept]
        Zt[idx] = Zn[accept]
        Rt[idx] = Rn[accept]
        obj[idx] = objn[accept]
        iters[idx] = it
        converged = dz <= tol * np.maximum(nz, 1e-12)
        active = active[accept & ~converged]
    if m > k:
        _polish_np(D, Yt, Zt, Rt, obj, np.flatnonzero(status == IRLS_OK))
    return np.ascontiguousarray(Zt.T), iters, status


def _polish_np(D, Yt, Zt, Rt, obj, active):
    m, k = D.shape
    for j in active:
        y = Yt[j]
        basis = np.argsort(np.abs(Rt[j]), kind="stable")[:k]
        try:
            zv = np.linalg.solve(D[basis], y[basis])
        except np.linalg.LinAlgError:
            continue
        rv = y - D @ zv
        fv = np.abs(rv).sum()
        for _ in range(POLISH_MOVES):
            try:
                Ainv = np.linalg.inv(D[basis])
            except np.linalg.LinAlgError:
                break
            G = D @ Ainv
            with np.errstate(divide="ignore", invalid="ignore"):
                T = np.where(G != 0.0, rv[:, None] / G, np.inf)
            order = np.argsort(T, axis=0, kind="stable")
            Ts = np.take_along_axis(T, order, axis=0)
            cum = np.cumsum(np.take_along_axis(np.abs(G), order, axis=0), axis=0)
            q = np.argmax(cum >= 0.5 * cum[-1], axis=0)
            t = Ts[q, np.arange(k)]
            F = np.abs(rv[:, None] - t[None, :] * G).sum(axis=0)
            p = int(np.argmin(F))
            if not F[p] < fv or fv - F[p] <= 1e-14 * max(fv, 1.0):
                break
            zv = zv + t[p] * Ainv[:, p]
            rv = y - D @ zv
            fv = np.abs(rv).sum()
            basis = basis.copy()
            basis[p] = order[q[p], p]
        if fv < obj[j]:
            Zt[j], Rt[j], obj[j] = zv, rv, fv


def _positive_definite(G):
    try:
        np.linalg.cholesky(G)
        return np.ones(G.shape[0], dtype=bool)
    except np.linalg.LinAlgError:
        ok = np.ones(G.shape[0], dtype=bool)
        for i in range(G.shape[0]):
            try:
                np.linalg.cholesky(G[i])
            except np.linalg.LinAlgError:
                ok[i] = False
        return ok


def _stacked_rows(Ms, Xt):
    # per-item M_j @ x_j for a stack of matrices
    return np.matmul(Ms, Xt[:, :, None])[:, :, 0]


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def _pick(nb, np_):
    return nb if _accel.USE_NUMBA else np_


def matvec_cols(A, X):
    A = np.ascontiguousarray(A, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    return _pick(matvec_cols_nb, matvec_cols_np)(A, X)


def ista_cols(D, Y, Z0, lam, L, max_iters, tol, record=False):
    D = np.ascontiguousarray(D, dtype=np.float64)
    Dt = np.ascontiguousarray(D.T)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    Z0 = np.ascontiguousarray(Z0, dtype=np.float64)
    n = Y.shape[1]
    trace = np.zeros((max_iters + 1, n) if record else (0, 0))
    Z, iters = _pick(ista_cols_nb, ista_cols_np)(
        D, Dt, Y, Z0, float(lam), float(L), int(max_iters), float(tol), trace)
    return Z, iters, trace


def irls_cols(D, P, Y, max_iters, eps, tol):
    D = np.ascontiguousarray(D, dtype=np.float64)
    P = np.ascontiguousarray(P, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    return _pick(irls_cols_nb, irls_cols_np)(
        D, P, Y, int(max_iters), float(eps), float(tol))
