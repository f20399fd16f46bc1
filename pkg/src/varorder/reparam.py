"""Bijections between unconstrained matrices, partial autocorrelations and
stationary VAR coefficients.

Three coordinate systems describe a stationary VAR(p):

* ``A_1..A_p``  -- arbitrary real ``m x m`` matrices,
* ``P_1..P_p``  -- partial autocorrelation matrices, singular values in [0, 1),
* ``(Sigma, phi_1..phi_p)`` -- error variance and AR coefficients.

``A <-> P`` rescales singular values by ``r -> r / sqrt(1 - r^2)``.
``P <-> phi`` is a multivariate Durbin--Levinson recursion run on the
forward and backward prediction problems.  Autocovariances use the
convention ``Gamma_h = E[y_t y_{t-h}^T]``.

The ``*_core`` helpers take and return Python lists of matrices and use only
operations from :mod:`varorder.autodiff`, so they can be traced for
gradients with ``method="db"``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import DomainError, NonStationaryError
from .linalg import (
    denman_beavers,
    solve_discrete_lyapunov,
    spectral_radius,
    symmetrize,
)

SV_MARGIN = 1e-12


@dataclass
class VarModel:
    """Stationary VAR: error variance, coefficients and autocovariances.

    ``phi`` has shape ``(p, m, m)`` and ``gamma`` holds ``Gamma_0..Gamma_{p-1}``
    (at least ``Gamma_0``).
    """

    sigma: np.ndarray
    phi: np.ndarray
    gamma: np.ndarray

    @property
    def m(self):
        return self.sigma.shape[0]

    @property
    def p(self):
        return self.phi.shape[0]

    def companion(self):
        return companion_matrix(self.phi)


@dataclass
class StageVariances:
    sigma_fwd: list
    sigma_bwd: list


def _as_list(seq):
    if isinstance(seq, np.ndarray):
        return [seq[i] for i in range(seq.shape[0])]
    return list(seq)


def _t(x):
    return ad.transpose(x)


def _roots(M, method):
    """Square root and inverse square root of an SPD matrix."""
    if method == "db":
        root, inv_root, _ = denman_beavers(M)
        return root, inv_root
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    if w[0] <= 0.0:
        raise DomainError("matrix is not positive definite")
    root = (U * np.sqrt(w)) @ U.T
    inv_root = (U / np.sqrt(w)) @ U.T
    return 0.5 * (root + root.T), 0.5 * (inv_root + inv_root.T)


def companion_matrix(phi):
    phi = np.asarray(phi, dtype=float)
    p, m = phi.shape[0], phi.shape[1]
    F = np.zeros((m * p, m * p))
    if p == 0:
        return F
    F[:m, :] = np.concatenate(list(phi), axis=1)
    F[m:, :-m] = np.eye(m * (p - 1))
    return F


def check_stationary(phi):
    """Return ``(stable, spectral_radius)`` of the companion matrix."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape[0] == 0:
        return True, 0.0
    rho = spectral_radius(companion_matrix(phi))
    return bool(rho < 1.0), rho


# -- A <-> P --------------------------------------------------------------

def a_to_pacf_core(A, method="eig"):
    out = []
    for a in A:
        m = ad.value_of(a).shape[0]
        M = symmetrize(np.eye(m) + a @ _t(a))
        _, T = _roots(M, method)
        out.append(T @ a)
    return out


def a_to_pacf(A, method="eig"):
    """``P_s = (I + A_s A_s^T)^{-1/2} A_s`` for each lag."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise DomainError("A has non-finite entries")
    return np.array(a_to_pacf_core(_as_list(A), method)).reshape(A.shape)


def pacf_to_a(P):
    """``A_s = (I - P_s P_s^T)^{-1/2} P_s``; rejects singular values >= 1 - 1e-12."""
    P = np.asarray(P, dtype=float)
    out = np.empty_like(P)
    for s in range(P.shape[0]):
        smax = np.linalg.norm(P[s], 2) if P[s].size else 0.0
        if smax >= 1.0 - SV_MARGIN:
            raise DomainError(f"P_{s + 1} has singular value {smax:.15g} >= 1")
        _, T = _roots(np.eye(P.shape[1]) - P[s] @ P[s].T, "eig")
        out[s] = T @ P[s]
    return out


# -- P <-> (Sigma, phi) ---------------------------------------------------

def pacf_to_var_core(sigma, P, method="eig"):
    """Recursion from ``(Sigma, P_1..P_p)`` to coefficients and autocovariances.

    Returns a dict with lists ``phi`` (final coefficients), ``gamma``
    (``Gamma_0..Gamma_{p-1}``), ``sigma_fwd`` (``Sigma_0..Sigma_p``) and
    ``sigma_bwd`` (``Sigma*_0..Sigma*_p``).
    """
    P = list(P)
    p = len(P)
    m = ad.value_of(sigma).shape[0]
    eye = np.eye(m)

    # Backward pass: recover Sigma_s from Sigma_{s+1} = R (I - P P^T) R, R = Sigma_s^{1/2}.
    sig = [None] * (p + 1)
    root = [None] * p
    inv_root = [None] * p
    sig[p] = sigma
    for s in range(p - 1, -1, -1):
        try:
            Bh, Bih = _roots(symmetrize(eye - P[s] @ _t(P[s])), method)
            Ch, Cih = _roots(symmetrize(Bh @ sig[s + 1] @ Bh), method)
        except (DomainError, np.linalg.LinAlgError) as exc:
            raise DomainError(f"non-SPD intermediate at stage {s}") from exc
        root[s] = symmetrize(Bih @ Ch @ Bih)
        inv_root[s] = symmetrize(Bh @ Cih @ Bh)
        sig[s] = symmetrize(root[s] @ root[s])

    # Forward pass: backward-prediction variances and both coefficient sets.
    sig_b = [sig[0]]
    phi = [[]]
    phi_b = [[]]
    for s in range(p):
        try:
            Qh, Qih = _roots(sig_b[s], method)
        except (DomainError, np.linalg.LinAlgError) as exc:
            raise DomainError(f"non-SPD backward variance at stage {s}") from exc
        D = root[s] @ P[s] @ Qih
        Db = Qh @ _t(P[s]) @ inv_root[s]
        phi.append([phi[s][j] - D @ phi_b[s][s - 1 - j] for j in range(s)] + [D])
        phi_b.append([phi_b[s][j] - Db @ phi[s][s - 1 - j] for j in range(s)] + [Db])
        sig_b.append(symmetrize(Qh @ (eye - _t(P[s]) @ P[s]) @ Qh))

    gamma = [sig[0]]
    for s in range(p - 1):
        acc = phi[s + 1][0] @ gamma[s]
        for j in range(2, s + 2):
            acc = acc + phi[s + 1][j - 1] @ gamma[s + 1 - j]
        gamma.append(acc)

    return {"phi": phi[p], "gamma": gamma, "sigma_fwd": sig, "sigma_bwd": sig_b}


def pacf_to_var(sigma, P, method="eig"):
    """Map ``(Sigma, P)`` to a stationary :class:`VarModel` and stage variances."""
    sigma = np.asarray(sigma, dtype=float)
    P = np.asarray(P, dtype=float)
    m = sigma.shape[0]
    if P.ndim != 3 or P.shape[1:] != (m, m):
        raise DomainError(f"P must have shape (p, {m}, {m}), got {P.shape}")
    for s in range(P.shape[0]):
        smax = np.linalg.norm(P[s], 2)
        if smax >= 1.0:
            raise DomainError(f"P_{s + 1} has singular value {smax:.15g} >= 1")
    out = pacf_to_var_core(sigma, _as_list(P), method)
    p = P.shape[0]
    phi = np.array(out["phi"]).reshape(p, m, m)
    model = VarModel(sigma=sigma.copy(), phi=phi, gamma=np.array(out["gamma"]))
    stages = StageVariances(
        sigma_fwd=[np.asarray(x) for x in out["sigma_fwd"]],
        sigma_bwd=[np.asarray(x) for x in out["sigma_bwd"]],
    )
    return model, stages


def autocovariances(model, nlags, method="auto"):
    """``Gamma_0..Gamma_{nlags-1}`` from ``(Sigma, phi)`` via the companion Lyapunov equation."""
    phi = np.asarray(model.phi, dtype=float)
    sigma = np.asarray(model.sigma, dtype=float)
    p, m = phi.shape[0], sigma.shape[0]
    if p == 0:
        out = np.zeros((nlags, m, m))
        if nlags:
            out[0] = sigma
        return out
    F = companion_matrix(phi)
    E = np.zeros((m * p, m * p))
    E[:m, :m] = sigma
    V = solve_discrete_lyapunov(F, E, method=method)
    gam = [V[:m, h * m:(h + 1) * m] for h in range(p)]
    return extend_autocovariances(phi, np.array(gam), nlags)


def extend_autocovariances(phi, gamma, nlags):
    """Extend ``Gamma_0..Gamma_{p-1}`` to ``nlags`` lags with the Yule--Walker recursion."""
    phi = np.asarray(phi, dtype=float)
    gam = [np.asarray(g, dtype=float) for g in gamma]
    p = phi.shape[0]
    m = gam[0].shape[0]

    def lag(h):
        return gam[h] if h >= 0 else gam[-h].T

    while len(gam) < nlags:
        h = len(gam)
        acc = np.zeros((m, m))
        for j in range(1, p + 1):
            acc += phi[j - 1] @ lag(h - j)
        gam.append(acc)
    return np.array(gam[:nlags])


def var_to_pacf(model, lyapunov="auto"):
    """Inverse of :func:`pacf_to_var`: returns ``(Sigma_p, P)``."""
    phi = np.asarray(model.phi, dtype=float)
    sigma = np.asarray(model.sigma, dtype=float)
    p, m = phi.shape[0], sigma.shape[0]
    stable, rho = check_stationary(phi)
    if not stable:
        raise NonStationaryError(f"companion spectral radius {rho:.6g} >= 1")
    gam = autocovariances(model, p + 1, method=lyapunov)
    eye = np.eye(m)

    sig = gam[0]
    sig_b = gam[0]
    coef = []
    coef_b = []
    P = np.empty((p, m, m))
    for s in range(p):
        delta = gam[s + 1].copy()
        for j in range(1, s + 1):
            delta -= coef[j - 1] @ gam[s + 1 - j]
        Sh, Sih = _roots(sig, "eig")
        Qh, Qih = _roots(sig_b, "eig")
        P[s] = Sih @ delta @ Qih
        D = Sh @ P[s] @ Qih
        Db = Qh @ P[s].T @ Sih
        coef, coef_b = (
            [coef[j] - D @ coef_b[s - 1 - j] for j in range(s)] + [D],
            [coef_b[j] - Db @ coef[s - 1 - j] for j in range(s)] + [Db],
        )
        sig = symmetrize(Sh @ (eye - P[s] @ P[s].T) @ Sh)
        sig_b = symmetrize(Qh @ (eye - P[s].T @ P[s]) @ Qh)
    return sig, P


def block_toeplitz(gamma):
    """Stacked-state variance with newest block first: block ``(i, j)`` is
    ``Gamma_{j-i}`` above the diagonal and ``Gamma_{i-j}^T`` below."""
    k = len(gamma)
    rows = []
    for i in range(k):
        row = [gamma[j - i] if j >= i else _t(gamma[i - j]) for j in range(k)]
        rows.append(ad.concatenate(row, axis=1))
    return ad.concatenate(rows, axis=0)


def build_initial_variance(model, p_max):
    """Variance ``G`` of ``(y_t, y_{t-1}, ..., y_{t-p_max+1})`` under stationarity."""
    gam = np.asarray(model.gamma, dtype=float)
    if gam.shape[0] < p_max:
        gam = extend_autocovariances(model.phi, gam, p_max)
    G = np.asarray(block_toeplitz([gam[h] for h in range(p_max)]))
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise DomainError("initial variance is not positive definite") from exc
    return 0.5 * (G + G.T)
