"""Dense matrix primitives shared by the rest of the package."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .exceptions import DomainError, NonStationaryError

LOG_2PI = float(np.log(2.0 * np.pi))

DB_TOL = 1e-13
DB_MAX_ITER = 100
KRON_MAX_DIM = 40


def symmetrize(M):
    """Average with the transpose; works on arrays and autodiff nodes."""
    return 0.5 * (M + ad.transpose(M))


def _check_spd(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DomainError(f"{name} has non-finite entries")
    scale = max(np.max(np.abs(M)), 1.0)
    if np.max(np.abs(M - M.T)) > 1e-12 * scale * 1e3:
        raise DomainError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise DomainError(f"{name} is not positive definite") from exc
    return M


def _sym_eig(M):
    M = _check_spd(M)
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    if w[0] <= 0.0:
        raise DomainError("matrix is not positive definite")
    return w, U


def denman_beavers(M, tol=DB_TOL, max_iter=DB_MAX_ITER):
    """Coupled Denman--Beavers iteration for ``M**(1/2)`` and ``M**(-1/2)``.

    Runs ``Y <- (Y + Z^-1)/2``, ``Z <- (Z + Y^-1)/2`` from ``Y = M, Z = I``
    until the relative Frobenius increment of ``Y`` drops below ``tol``.
    Only multiplies, additions and inverses are used, so the loop can be
    recorded by :mod:`varorder.autodiff`; the recorded program is the
    executed iterations.

    Returns
    -------
    root, inv_root, n_iter
    """
    n = ad.value_of(M).shape[0]
    Y = M
    Z = np.eye(n)
    prev = np.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        Yi = ad.inv(Y)
        Zi = ad.inv(Z)
        Y_new = 0.5 * (Y + Zi)
        Z_new = 0.5 * (Z + Yi)
        yv, ynv = ad.value_of(Y), ad.value_of(Y_new)
        inc = np.linalg.norm(ynv - yv) / max(np.linalg.norm(ynv), 1e-300)
        Y, Z = Y_new, Z_new
        if not np.isfinite(inc):
            raise DomainError("Denman-Beavers iteration diverged; input not SPD")
        if inc < tol or (inc < 1e-9 and inc >= prev):
            break
        prev = inc
    return symmetrize(Y), symmetrize(Z), n_iter


def sym_sqrt(M, method="eig"):
    """Symmetric positive definite square root.

    ``method="eig"`` uses a symmetric eigendecomposition; ``method="db"`` uses
    :func:`denman_beavers` and accepts autodiff nodes.
    """
    if method == "db":
        if not ad.is_var(M):
            _check_spd(M)
        return denman_beavers(M)[0]
    w, U = _sym_eig(M)
    S = (U * np.sqrt(w)) @ U.T
    return 0.5 * (S + S.T)


def sym_inv_sqrt(M, method="eig"):
    """Inverse symmetric square root ``T`` with ``T M T = I``."""
    if method == "db":
        if not ad.is_var(M):
            _check_spd(M)
        return denman_beavers(M)[1]
    w, U = _sym_eig(M)
    T = (U / np.sqrt(w)) @ U.T
    return 0.5 * (T + T.T)


def svd(M):
    """Singular value decomposition ``M = U diag(s) V^T`` with ``s`` descending."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise DomainError("svd input has non-finite entries")
    U, s, Vt = np.linalg.svd(M)
    return U, s, Vt.T


def spectral_radius(F):
    F = np.asarray(F, dtype=float)
    if F.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(F))))


def solve_discrete_lyapunov(F, E, method="auto"):
    """Solve ``V = F V F^T + E`` for a stable ``F``.

    ``method="kron"`` solves the vectorised system ``(I - F (x) F) vec V = vec E``;
    ``method="doubling"`` runs the squaring recursion
    ``V <- V + A V A^T, A <- A^2``.  ``"auto"`` picks Kronecker up to
    dimension ``KRON_MAX_DIM``.
    """
    F = np.asarray(F, dtype=float)
    E = np.asarray(E, dtype=float)
    n = F.shape[0]
    rho = spectral_radius(F)
    if rho >= 1.0:
        raise NonStationaryError(f"spectral radius {rho:.6g} >= 1")
    if method == "auto":
        method = "kron" if n <= KRON_MAX_DIM else "doubling"
    if method == "kron":
        K = np.eye(n * n) - np.kron(F, F)
        V = np.linalg.solve(K, E.reshape(-1)).reshape(n, n)
    elif method == "doubling":
        V = E.copy()
        A = F.copy()
        for _ in range(200):
            step = A @ V @ A.T
            V = V + step
            A = A @ A
            if np.linalg.norm(step) <= 1e-17 * np.linalg.norm(V):
                break
    else:
        raise ValueError(f"unknown method {method!r}")
    return 0.5 * (V + V.T)


def mvn_logpdf(x, mean, cov):
    """Multivariate normal log density evaluated through a Cholesky factor."""
    diff = x - mean
    try:
        L = ad.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DomainError("covariance is not positive definite") from exc
    z = ad.solve_triangular(L, diff, lower=True)
    k = np.shape(ad.value_of(diff))[0]
    logdet = 2.0 * ad.sum(ad.log(ad.diagonal(L)))
    return -0.5 * (k * LOG_2PI + logdet + ad.sum(z * z))
