"""Compiled log posterior and gradient.

This is the sampler's hot path: the same expression as
:func:`varorder.model.posterior_components` (with Denman--Beavers roots), with
a hand-written reverse sweep.  Every Denman--Beavers call stores the inverses
from its executed iterations and the reverse sweep replays exactly those
iterations.

With ``VARORDER_JIT=0`` the same source runs as plain Python with numpy
matrix products in place of the compiled loops.
"""
import math

import numpy as np

from . import _jit
from ._jit import jit
from .linalg import DB_MAX_ITER, DB_TOL, LOG_2PI

LOG2 = math.log(2.0)

# -- small dense primitives -------------------------------------------------

if _jit.ENABLED:

    @jit
    def mm(a, b):
        n, k = a.shape
        c = b.shape[1]
        out = np.zeros((n, c))
        for i in range(n):
            for t in range(k):
                x = a[i, t]
                if x != 0.0:
                    for j in range(c):
                        out[i, j] += x * b[t, j]
        return out

    @jit
    def inv(a):
        n = a.shape[0]
        w = np.empty((n, 2 * n))
        for i in range(n):
            for j in range(n):
                w[i, j] = a[i, j]
                w[i, n + j] = 1.0 if i == j else 0.0
        for col in range(n):
            piv = col
            best = abs(w[col, col])
            for r in range(col + 1, n):
                if abs(w[r, col]) > best:
                    best = abs(w[r, col])
                    piv = r
            if piv != col:
                for j in range(2 * n):
                    tmp = w[col, j]
                    w[col, j] = w[piv, j]
                    w[piv, j] = tmp
            d = w[col, col]
            for j in range(2 * n):
                w[col, j] /= d
            for r in range(n):
                if r != col:
                    f = w[r, col]
                    if f != 0.0:
                        for j in range(2 * n):
                            w[r, j] -= f * w[col, j]
        return w[:, n:].copy()

else:

    def mm(a, b):
        return a @ b

    def inv(a):
        return np.linalg.inv(a)


@jit
def sym(a):
    return 0.5 * (a + a.T)


@jit
def fro(a):
    return math.sqrt(np.sum(a * a))


@jit
def cholesky(a):
    """Lower Cholesky factor; second value False if not positive definite."""
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return L, False
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
    return L, True


@jit
def tri_solve(L, B):
    """Solve ``L X = B`` for lower-triangular ``L``; ``B`` is 2-D."""
    n, c = B.shape
    X = np.zeros((n, c))
    for col in range(c):
        for i in range(n):
            s = B[i, col]
            for k in range(i):
                s -= L[i, k] * X[k, col]
            X[i, col] = s / L[i, i]
    return X


@jit
def tri_solve_t(L, B):
    """Solve ``L^T X = B`` for lower-triangular ``L``."""
    n, c = B.shape
    X = np.zeros((n, c))
    for col in range(c):
        for i in range(n - 1, -1, -1):
            s = B[i, col]
            for k in range(i + 1, n):
                s -= L[k, i] * X[k, col]
            X[i, col] = s / L[i, i]
    return X


@jit
def tril(a):
    out = a.copy()
    n = a.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = 0.0
    return out


# -- Denman--Beavers with recorded inverses ---------------------------------

@jit
def db_forward(M, store, call, tol, max_iter):
    """Returns ``(root, inv_root, n_iter)``; ``n_iter < 0`` flags divergence."""
    n = M.shape[0]
    Y = M.copy()
    Z = np.eye(n)
    prev = np.inf
    k = 0
    while k < max_iter:
        Yi = inv(Y)
        Zi = inv(Z)
        store[call, k, 0] = Yi
        store[call, k, 1] = Zi
        Yn = 0.5 * (Y + Zi)
        Zn = 0.5 * (Z + Yi)
        den = fro(Yn)
        if den < 1e-300:
            den = 1e-300
        inc = fro(Yn - Y) / den
        Y = Yn
        Z = Zn
        k += 1
        if not math.isfinite(inc):
            return sym(Y), sym(Z), -1
        if inc < tol or (inc < 1e-9 and inc >= prev):
            break
        prev = inc
    return sym(Y), sym(Z), k


@jit
def db_backward(store, call, n_iter, root_bar, inv_root_bar):
    Yb = sym(root_bar)
    Zb = sym(inv_root_bar)
    for k in range(n_iter - 1, -1, -1):
        Yi = store[call, k, 0]
        Zi = store[call, k, 1]
        nYb = 0.5 * Yb - 0.5 * mm(mm(Yi.T, Zb), Yi.T)
        nZb = 0.5 * Zb - 0.5 * mm(mm(Zi.T, Yb), Zi.T)
        Yb = nYb
        Zb = nZb
    return Yb


@jit
def mm3(a, b, c):
    return mm(mm(a, b), c)


@jit
def _add_product_adjoints(xbar, a, b, c, abar, bbar, cbar):
    """Accumulate adjoints of ``X = a b c`` into ``abar, bbar, cbar`` in place."""
    abar += mm(xbar, mm(b, c).T)
    bbar += mm3(a.T, xbar, c.T)
    cbar += mm(mm(a, b).T, xbar)


# -- the log posterior --------------------------------------------------------

@jit
def _value_grad(theta, m, p, x0, cross, n_cond, hyper, psi_chol, nu, iw_const,
                use_lik, want_grad, tol, max_iter):
    dim = theta.shape[0]
    grad = np.zeros(dim)
    msq = m * m
    n_a = p * msq
    off_lam = n_a
    off_delta = 2 * n_a
    off_chol = 2 * n_a + p
    half = 0.5 * hyper[0]
    a1 = hyper[1]
    a2 = hyper[2]

    # multiplicative gamma process prior and log-scale Jacobians
    total = 0.0
    dlogtau = np.zeros(p)
    logtau = 0.0
    lam_const = half * math.log(half) - math.lgamma(half)
    for s in range(p):
        logtau += theta[off_delta + s]
        for idx in range(msq):
            a = theta[s * msq + idx]
            ll = theta[off_lam + s * msq + idx]
            pl = ll + logtau
            e = math.exp(pl)
            total += -0.5 * LOG_2PI + 0.5 * pl - 0.5 * e * a * a
            dpl = 0.5 - 0.5 * e * a * a
            grad[s * msq + idx] += -e * a
            grad[off_lam + s * msq + idx] += dpl
            dlogtau[s] += dpl
            lam = math.exp(ll)
            total += lam_const + (half - 1.0) * ll - half * lam + ll
            grad[off_lam + s * msq + idx] += (half - 1.0) - half * lam + 1.0
    acc = 0.0
    for s in range(p - 1, -1, -1):
        acc += dlogtau[s]
        shape = a1 if s == 0 else a2
        ld = theta[off_delta + s]
        ed = math.exp(ld)
        total += -math.lgamma(shape) + (shape - 1.0) * ld - ed + ld
        grad[off_delta + s] += acc + (shape - 1.0) - ed + 1.0
    total += m * LOG2

    # Cholesky factor of Sigma
    L = np.zeros((m, m))
    sum_logdiag = 0.0
    k = 0
    for i in range(m):
        for j in range(i + 1):
            v = theta[off_chol + k]
            if i == j:
                L[i, i] = math.exp(v)
                sum_logdiag += v
                total += (m - i + 1.0) * v
                grad[off_chol + k] += (m - i + 1.0) - (nu + m + 1.0)
            else:
                L[i, j] = v
            k += 1

    # inverse Wishart prior
    X = tri_solve(L, psi_chol)
    total += iw_const - (nu + m + 1.0) * sum_logdiag - 0.5 * np.sum(X * X)
    Lbar = tril(tri_solve_t(L, mm(X, X.T)))
    Sigbar_total = np.zeros((m, m))

    if use_lik:
        eye = np.eye(m)
        sigma = sym(mm(L, L.T))
        n_calls = 4 * p
        store = np.empty((n_calls, max_iter, 2, m, m))
        n_it = np.zeros(n_calls, dtype=np.int64)

        A = np.empty((p, m, m))
        for s in range(p):
            for i in range(m):
                for j in range(m):
                    A[s, i, j] = theta[s * msq + i * m + j]

        # A -> P
        P = np.empty((p, m, m))
        Tm = np.empty((p, m, m))
        for s in range(p):
            Mx = sym(eye + mm(A[s], A[s].T))
            _, T, it = db_forward(Mx, store, s, tol, max_iter)
            if it < 0:
                return -np.inf, grad
            n_it[s] = it
            Tm[s] = T
            P[s] = mm(T, A[s])

        # backward variance pass
        Sig = np.empty((p + 1, m, m))
        R = np.empty((p, m, m))
        Ri = np.empty((p, m, m))
        Bh = np.empty((p, m, m))
        Bih = np.empty((p, m, m))
        Ch = np.empty((p, m, m))
        Cih = np.empty((p, m, m))
        Sig[p] = sigma
        for s in range(p - 1, -1, -1):
            B = sym(eye - mm(P[s], P[s].T))
            bh, bih, it = db_forward(B, store, p + s, tol, max_iter)
            if it < 0:
                return -np.inf, grad
            n_it[p + s] = it
            C = sym(mm3(bh, Sig[s + 1], bh))
            ch, cih, it = db_forward(C, store, 2 * p + s, tol, max_iter)
            if it < 0:
                return -np.inf, grad
            n_it[2 * p + s] = it
            Bh[s] = bh
            Bih[s] = bih
            Ch[s] = ch
            Cih[s] = cih
            R[s] = sym(mm3(bih, ch, bih))
            Ri[s] = sym(mm3(bh, cih, bh))
            Sig[s] = sym(mm(R[s], R[s]))

        # forward pass with coefficient recursion
        Sst = np.empty((p, m, m))
        Qh = np.empty((p, m, m))
        Qih = np.empty((p, m, m))
        phi = np.zeros((p + 1, p + 1, m, m))
        phib = np.zeros((p + 1, p + 1, m, m))
        Sst[0] = Sig[0]
        for s in range(p):
            qh, qih, it = db_forward(Sst[s], store, 3 * p + s, tol, max_iter)
            if it < 0:
                return -np.inf, grad
            n_it[3 * p + s] = it
            Qh[s] = qh
            Qih[s] = qih
            D = mm3(R[s], P[s], qih)
            Db = mm3(qh, P[s].T, Ri[s])
            for j in range(s):
                phi[s + 1, j] = phi[s, j] - mm(D, phib[s, s - 1 - j])
                phib[s + 1, j] = phib[s, j] - mm(Db, phi[s, s - 1 - j])
            phi[s + 1, s] = D
            phib[s + 1, s] = Db
            if s + 1 < p:
                Sst[s + 1] = sym(mm3(qh, eye - mm(P[s].T, P[s]), qh))

        # autocovariances
        Gam = np.empty((p, m, m))
        Gam[0] = Sig[0]
        for s in range(p - 1):
            g = mm(phi[s + 1, 0], Gam[s])
            for j in range(2, s + 2):
                g = g + mm(phi[s + 1, j - 1], Gam[s + 1 - j])
            Gam[s + 1] = g

        # initial-state term
        mp = m * p
        G = np.empty((mp, mp))
        for bi in range(p):
            for bj in range(p):
                if bj >= bi:
                    G[bi * m:(bi + 1) * m, bj * m:(bj + 1) * m] = Gam[bj - bi]
                else:
                    G[bi * m:(bi + 1) * m, bj * m:(bj + 1) * m] = Gam[bi - bj].T
        LG, ok = cholesky(G)
        if not ok:
            return -np.inf, grad
        z = tri_solve(LG, x0.reshape(mp, 1))
        logdet_g = 0.0
        for i in range(mp):
            logdet_g += math.log(LG[i, i])
        total += -0.5 * (mp * LOG_2PI + 2.0 * logdet_g + np.sum(z * z))

        # conditional terms
        W = np.zeros((m, m * (p + 1)))
        W[:, :m] = eye
        for j in range(p):
            W[:, (j + 1) * m:(j + 2) * m] = -phi[p, j]
        LW = tri_solve(L, W)
        LWc = mm(LW, cross)
        quad = np.sum(LWc * LW)
        total += -0.5 * (n_cond * m * LOG_2PI + 2.0 * n_cond * sum_logdiag + quad)

        if want_grad:
            # d/d log L_ii of the conditional log-determinant
            k = 0
            for i in range(m):
                for j in range(i + 1):
                    if i == j:
                        grad[off_chol + k] += -n_cond
                    k += 1
            # quad = tr(LW cross LW^T), LW = L^{-1} W
            LWbar = -LWc
            Wbar = tri_solve_t(L, LWbar)
            Lbar += -tril(mm(Wbar, LW.T))

            phibar = np.zeros((p + 1, p + 1, m, m))
            phibbar = np.zeros((p + 1, p + 1, m, m))
            for j in range(p):
                phibar[p, j] = -Wbar[:, (j + 1) * m:(j + 2) * m]

            # d init / dG = (v v^T - G^{-1}) / 2
            v = tri_solve_t(LG, z)
            Ginv = tri_solve_t(LG, tri_solve(LG, np.eye(mp)))
            Gbar = 0.5 * (mm(v, v.T) - Ginv)
            Gambar = np.zeros((p, m, m))
            for bi in range(p):
                for bj in range(p):
                    blk = Gbar[bi * m:(bi + 1) * m, bj * m:(bj + 1) * m]
                    if bj >= bi:
                        Gambar[bj - bi] += blk
                    else:
                        Gambar[bi - bj] += blk.T

            # autocovariance recursion
            for s in range(p - 2, -1, -1):
                gb = Gambar[s + 1]
                for j in range(1, s + 2):
                    phibar[s + 1, j - 1] += mm(gb, Gam[s + 1 - j].T)
                    Gambar[s + 1 - j] += mm(phi[s + 1, j - 1].T, gb)

            Sigbar = np.zeros((p + 1, m, m))
            Sigbar[0] += Gambar[0]
            Rbar = np.zeros((p, m, m))
            Ribar = np.zeros((p, m, m))
            Pbar = np.zeros((p, m, m))
            Sstbar = np.zeros((p, m, m))

            # forward pass, reversed
            for s in range(p - 1, -1, -1):
                Dbar = phibar[s + 1, s].copy()
                Dbbar = phibbar[s + 1, s].copy()
                for j in range(s):
                    pb = phibar[s + 1, j]
                    phibar[s, j] += pb
                    Dbar += -mm(pb, phib[s, s - 1 - j].T)
                    phibbar[s, s - 1 - j] += -mm(phi[s + 1, s].T, pb)
                    qb = phibbar[s + 1, j]
                    phibbar[s, j] += qb
                    Dbbar += -mm(qb, phi[s, s - 1 - j].T)
                    phibar[s, s - 1 - j] += -mm(phib[s + 1, s].T, qb)
                qhbar = np.zeros((m, m))
                qihbar = np.zeros((m, m))
                _add_product_adjoints(Dbar, R[s], P[s], Qih[s], Rbar[s], Pbar[s], qihbar)
                PTbar = np.zeros((m, m))
                _add_product_adjoints(Dbbar, Qh[s], P[s].T, Ri[s], qhbar, PTbar, Ribar[s])
                Pbar[s] += PTbar.T
                if s + 1 < p:
                    xb = sym(Sstbar[s + 1])
                    E = eye - mm(P[s].T, P[s])
                    Ebar = np.zeros((m, m))
                    qhbar2 = np.zeros((m, m))
                    _add_product_adjoints(xb, Qh[s], E, Qh[s], qhbar, Ebar, qhbar2)
                    qhbar += qhbar2
                    Pbar[s] += -mm(P[s], Ebar + Ebar.T)
                Sstbar[s] += db_backward(store, 3 * p + s, n_it[3 * p + s], qhbar, qihbar)
            Sigbar[0] += Sstbar[0]

            # backward variance pass, reversed
            for s in range(p):
                sb = sym(Sigbar[s])
                Rbar[s] += mm(sb, R[s]) + mm(R[s], sb)
                rb = sym(Rbar[s])
                rib = sym(Ribar[s])
                bhbar = np.zeros((m, m))
                bihbar = np.zeros((m, m))
                chbar = np.zeros((m, m))
                cihbar = np.zeros((m, m))
                tmp = np.zeros((m, m))
                _add_product_adjoints(rb, Bih[s], Ch[s], Bih[s], bihbar, chbar, tmp)
                bihbar += tmp
                tmp = np.zeros((m, m))
                _add_product_adjoints(rib, Bh[s], Cih[s], Bh[s], bhbar, cihbar, tmp)
                bhbar += tmp
                cbar = sym(db_backward(store, 2 * p + s, n_it[2 * p + s], chbar, cihbar))
                tmp = np.zeros((m, m))
                _add_product_adjoints(cbar, Bh[s], Sig[s + 1], Bh[s], bhbar, Sigbar[s + 1], tmp)
                bhbar += tmp
                bbar = sym(db_backward(store, p + s, n_it[p + s], bhbar, bihbar))
                Pbar[s] += -2.0 * mm(bbar, P[s])
            Sigbar_total += Sigbar[p]

            # A -> P, reversed
            for s in range(p):
                Abar = mm(Tm[s].T, Pbar[s])
                Tbar = mm(Pbar[s], A[s].T)
                Mbar = sym(db_backward(store, s, n_it[s], np.zeros((m, m)), Tbar))
                Abar += 2.0 * mm(Mbar, A[s])
                for i in range(m):
                    for j in range(m):
                        grad[s * msq + i * m + j] += Abar[i, j]

    if want_grad:
        Lbar += tril(2.0 * mm(sym(Sigbar_total), L))
        k = 0
        for i in range(m):
            for j in range(i + 1):
                if i == j:
                    grad[off_chol + k] += Lbar[i, i] * L[i, i]
                else:
                    grad[off_chol + k] += Lbar[i, j]
                k += 1
    return total, grad


def pack_model_args(logpost):
    """Constant arguments of :func:`log_posterior_grad` for a LogPosterior."""
    from .model import SigmaPrior, _iw_const

    cfg = logpost.config
    m = logpost.layout.m
    prior = cfg.sigma_prior or SigmaPrior.default(m)
    hyper = np.array([cfg.hyper.a, cfg.hyper.a1, cfg.hyper.a2])
    stats = logpost.stats
    return (
        m,
        logpost.layout.p_max,
        np.ascontiguousarray(stats.x0, dtype=float),
        np.ascontiguousarray(stats.cross, dtype=float),
        float(stats.n_cond),
        hyper,
        np.ascontiguousarray(np.linalg.cholesky(prior.scale)),
        float(prior.dof),
        float(_iw_const(prior)),
        bool(cfg.likelihood),
    )


def log_posterior_grad(theta, m, p, x0, cross, n_cond, hyper, psi_chol, nu, iw_const, use_lik,
                       want_grad=True):
    theta = np.ascontiguousarray(theta, dtype=float)
    try:
        with np.errstate(all="ignore"):
            value, grad = _value_grad(theta, m, p, x0, cross, n_cond, hyper, psi_chol, nu, iw_const, use_lik,
                                      want_grad, DB_TOL, DB_MAX_ITER)
    except (OverflowError, ZeroDivisionError, np.linalg.LinAlgError):
        # only reachable on the pure-Python path, where math.exp and inv raise
        return -np.inf, np.zeros_like(theta)
    if not math.isfinite(value) or (want_grad and not np.all(np.isfinite(grad))):
        return -np.inf, np.zeros_like(theta)
    return value, grad
