"""Post-processing of draws: effective order, Granger edges, latent decomposition."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import gaussian_kde, norm

from .exceptions import UsageError
from .model import ParamLayout
from .reparam import a_to_pacf, companion_matrix, pacf_to_var

CI_LEVEL = 0.5
SUMMARY_LEVEL = 0.95


def truncation_threshold(m, n, beta):
    """``eps`` with ``Pr(max |p_ij| < eps) = beta`` for ``m*m`` iid ``N(0, 1/n)`` entries."""
    if not (isinstance(m, (int, np.integer)) and m >= 1):
        raise UsageError(f"m must be a positive integer, got {m!r}")
    if not (isinstance(n, (int, np.integer)) and n >= 2):
        raise UsageError(f"n must be an integer >= 2, got {n!r}")
    if not (isinstance(beta, (float, int)) and 0.0 < beta < 1.0):
        raise UsageError(f"beta must lie in (0, 1), got {beta!r}")
    q = (beta ** (1.0 / (m * m)) + 1.0) / 2.0
    return float(norm.ppf(q) / math.sqrt(n))


def effective_order(P, epsilon):
    """Largest lag ``s`` with ``max |P_s| >= epsilon``; 0 if every lag truncates."""
    if not epsilon > 0:
        raise UsageError("epsilon must be positive")
    P = np.asarray(P, dtype=float)
    if P.shape[0] == 0:
        return 0
    big = np.abs(P).reshape(P.shape[0], -1).max(axis=1) >= epsilon
    hits = np.nonzero(big)[0]
    return int(hits[-1] + 1) if hits.size else 0


@dataclass
class OrderPosterior:
    pmf: np.ndarray
    threshold: float
    beta: float
    n: int
    m: int
    orders: np.ndarray = field(repr=False, default=None)

    @property
    def p_max(self):
        return len(self.pmf) - 1

    @property
    def mode(self):
        return int(np.argmax(self.pmf))

    def to_dict(self):
        return {
            "beta": self.beta,
            "threshold": self.threshold,
            "n": self.n,
            "m": self.m,
            "mode": self.mode,
            "pmf": {str(k): float(v) for k, v in enumerate(self.pmf)},
        }


def infer_p_max(dim, m):
    n_chol = m * (m + 1) // 2
    p_max, rem = divmod(dim - n_chol, 2 * m * m + 1)
    if rem or p_max < 0:
        raise UsageError(f"parameter dimension {dim} does not match m={m}")
    return p_max


def _flat_draws(draws):
    if isinstance(draws, np.ndarray):
        return np.atleast_2d(draws.astype(float, copy=False))
    return draws.flat() if hasattr(draws, "chains") else np.atleast_2d(np.asarray(draws, dtype=float))


def pacf_draws(draws, m):
    """Partial autocorrelations per draw, ``(N, p_max, m, m)``."""
    X = _flat_draws(draws)
    layout = ParamLayout(m, infer_p_max(X.shape[1], m))
    A = X[:, layout.sl_a].reshape(X.shape[0], layout.p_max, m, m)
    return np.stack([a_to_pacf(a) for a in A]) if len(A) else np.empty((0, layout.p_max, m, m))


def var_draws(draws, m):
    """Error variances and coefficients per draw: ``(sigma (N,m,m), phi (N,p_max,m,m))``."""
    X = _flat_draws(draws)
    layout = ParamLayout(m, infer_p_max(X.shape[1], m))
    N = X.shape[0]
    sig = np.empty((N, m, m))
    phi = np.empty((N, layout.p_max, m, m))
    for i in range(N):
        s = layout.sigma(X[i])
        s = 0.5 * (s + s.T)
        P = a_to_pacf(X[i, layout.sl_a].reshape(layout.p_max, m, m))
        model, _ = pacf_to_var(s, P)
        sig[i] = s
        phi[i] = model.phi
    return sig, phi


def order_posterior(draws, data, beta=0.99, pacf=None):
    """Relative frequency of each effective order across all draws.

    ``pacf`` may hold precomputed :func:`pacf_draws` output.
    """
    P = pacf if pacf is not None else pacf_draws(draws, data.m)
    if P.shape[0] == 0:
        raise UsageError("no draws")
    eps = truncation_threshold(data.m, data.n, beta)
    orders = np.array([effective_order(Pi, eps) for Pi in P], dtype=int)
    counts = np.bincount(orders, minlength=P.shape[1] + 1)
    return OrderPosterior(pmf=counts / counts.sum(), threshold=eps, beta=float(beta), n=data.n, m=data.m,
                          orders=orders)


@dataclass
class GrangerEdge:
    lag: int
    source: int      # j, 0-based
    target: int      # i, 0-based
    weight: float
    mean: float
    ci_lo: float
    ci_hi: float

    def to_dict(self, names=None):
        d = {"lag": self.lag, "from": self.source + 1, "to": self.target + 1, "weight": self.weight,
             "mean": self.mean, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi}
        if names:
            d["from_name"] = names[self.source]
            d["to_name"] = names[self.target]
        return d


def granger_edges(phi, modal_order):
    """Edges ``j -> i`` at lag ``s`` whose central 50% interval of ``phi_{s,ij}`` excludes zero.

    ``phi`` has shape ``(N, p, m, m)``.  Quantiles use numpy's default linear
    interpolation.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 4:
        raise UsageError("phi draws must have shape (N, p, m, m)")
    if not 0 <= modal_order <= phi.shape[1]:
        raise UsageError(f"modal order {modal_order} outside 0..{phi.shape[1]}")
    edges = []
    if modal_order == 0 or phi.shape[0] == 0:
        return edges
    lo_q, hi_q = 0.5 - CI_LEVEL / 2, 0.5 + CI_LEVEL / 2
    sub = phi[:, :modal_order]
    lo = np.quantile(sub, lo_q, axis=0)
    hi = np.quantile(sub, hi_q, axis=0)
    mean = sub.mean(axis=0)
    m = phi.shape[2]
    for s in range(modal_order):
        for i in range(m):
            for j in range(m):
                if lo[s, i, j] > 0.0 or hi[s, i, j] < 0.0:
                    edges.append(GrangerEdge(lag=s + 1, source=j, target=i, weight=float(abs(mean[s, i, j])),
                                             mean=float(mean[s, i, j]), ci_lo=float(lo[s, i, j]),
                                             ci_hi=float(hi[s, i, j])))
    return edges


@dataclass
class LatentComponent:
    kind: str                 # "complex-pair" or "real"
    modulus: float
    frequency: float          # radians per sample, in [0, pi]
    period_samples: float
    period_time: float
    alternating: bool = False


IMAG_TOL = 1e-12


def latent_decomposition(phi, modal_order, time_step=1.0):
    """Components from the eigenvalues of the companion matrix of ``phi_1..phi_{modal_order}``.

    Complex pairs come first, ordered by increasing frequency; real
    eigenvalues follow in decreasing modulus.  Negative real eigenvalues are
    flagged ``alternating``.
    """
    if hasattr(phi, "phi"):
        phi = phi.phi
    phi = np.asarray(phi, dtype=float)
    if modal_order < 1:
        return []
    if modal_order > phi.shape[0]:
        raise UsageError(f"modal order {modal_order} exceeds available lags {phi.shape[0]}")
    eig = np.linalg.eigvals(companion_matrix(phi[:modal_order]))
    pairs, reals = [], []
    for lam in eig:
        r = float(abs(lam))
        if abs(lam.imag) <= IMAG_TOL * max(1.0, r):
            alt = lam.real < 0.0
            w = math.pi if alt else 0.0
            period = 2.0 if alt else math.inf
            reals.append(LatentComponent("real", r, w, period, period * time_step, alt))
        elif lam.imag > 0.0:
            w = float(np.angle(lam))
            period = 2.0 * math.pi / w
            pairs.append(LatentComponent("complex-pair", r, w, period, period * time_step))
    pairs.sort(key=lambda c: c.frequency)
    reals.sort(key=lambda c: -c.modulus)
    return pairs + reals


@dataclass
class DecompositionSummary:
    k: int
    moduli: np.ndarray          # (N, k), NaN where missing
    periods: np.ndarray         # (N, k) in samples
    time_step: float
    missing: np.ndarray         # (k,) draws lacking component j

    def table(self):
        """Per component: mean and 95% equi-tailed interval of modulus and period (time units)."""
        rows = []
        a = (1.0 - SUMMARY_LEVEL) / 2
        for j in range(self.k):
            mod = self.moduli[:, j]
            per = self.periods[:, j] * self.time_step
            ok = np.isfinite(mod)
            row = {"component": j + 1, "n": int(ok.sum()), "missing": int(self.missing[j])}
            for name, v in (("modulus", mod[ok]), ("period", per[ok])):
                if v.size:
                    lo, hi = np.quantile(v, [a, 1.0 - a])
                    row.update({f"{name}_mean": float(v.mean()), f"{name}_lo": float(lo), f"{name}_hi": float(hi)})
                else:
                    row.update({f"{name}_mean": math.nan, f"{name}_lo": math.nan, f"{name}_hi": math.nan})
            rows.append(row)
        return rows


def decomposition_summary(phi, modal_order, k, time_step=1.0):
    """Moduli and periods of the ``k`` lowest-frequency complex pairs in every draw."""
    if k < 1:
        raise UsageError("k must be at least 1")
    phi = np.asarray(phi, dtype=float)
    N = phi.shape[0]
    moduli = np.full((N, k), np.nan)
    periods = np.full((N, k), np.nan)
    for i in range(N):
        comps = [c for c in latent_decomposition(phi[i], modal_order, time_step) if c.kind == "complex-pair"]
        for j, c in enumerate(comps[:k]):
            moduli[i, j] = c.modulus
            periods[i, j] = c.period_samples
    missing = np.isnan(moduli).sum(axis=0)
    return DecompositionSummary(k=k, moduli=moduli, periods=periods, time_step=float(time_step), missing=missing)


def kde_curve(values, n_grid=200):
    """Gaussian kernel density with Silverman's bandwidth on an evenly spaced grid."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size < 2 or np.ptp(v) == 0.0:
        return None
    kde = gaussian_kde(v, bw_method="silverman")
    pad = 3.0 * kde.factor * v.std(ddof=1)
    grid = np.linspace(v.min() - pad, v.max() + pad, n_grid)
    return grid, kde(grid)
