"""Joint log posterior over the unconstrained parameter vector.

Parameter vector layout (``ParamLayout``), lags ``s = 1..p_max``:

=================  ====================  ==========================================
block              length                meaning
=================  ====================  ==========================================
``a``              ``p_max * m * m``     entries of ``A_s`` (row-major per lag)
``log_lambda``     ``p_max * m * m``     log local precisions
``log_delta``      ``p_max``             log multiplicative gamma increments
``L``              ``m (m + 1) / 2``     lower Cholesky factor of ``Sigma``, rows
                                         in order, diagonal stored as its log
=================  ====================  ==========================================
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, multigammaln

from . import autodiff as ad
from .exceptions import DomainError, UsageError
from .linalg import LOG_2PI, symmetrize
from .reparam import VarModel, a_to_pacf_core, block_toeplitz, pacf_to_var_core, extend_autocovariances

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MgpHyperParams:
    a: float = 6.0
    a1: float = 2.5
    a2: float = 3.0

    def __post_init__(self):
        for name in ("a", "a1", "a2"):
            if not getattr(self, name) > 0:
                raise UsageError(f"hyperparameter {name} must be positive")


@dataclass
class MgpState:
    lam: np.ndarray
    delta: np.ndarray

    @property
    def tau(self):
        return np.cumprod(self.delta)


@dataclass
class SigmaPrior:
    """Inverse Wishart prior ``IW(scale, dof)`` on the error variance."""

    scale: np.ndarray
    dof: float

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=float)
        m = self.scale.shape[0]
        if not self.dof > m - 1:
            raise UsageError(f"inverse Wishart dof must exceed {m - 1}")
        try:
            np.linalg.cholesky(self.scale)
        except np.linalg.LinAlgError as exc:
            raise UsageError("inverse Wishart scale must be positive definite") from exc

    @classmethod
    def default(cls, m, diag=1.0, offdiag=0.0, dof=None):
        scale = np.full((m, m), float(offdiag))
        np.fill_diagonal(scale, float(diag))
        return cls(scale=scale, dof=float(m + 4) if dof is None else float(dof))


@dataclass
class Dataset:
    """Observations in time order, one row per time point."""

    y: np.ndarray
    time_step: float = 1.0
    time_unit: str = "samples"
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if not np.all(np.isfinite(self.y)):
            raise UsageError("data contain missing or non-finite values")
        if not self.names:
            self.names = [f"y{i + 1}" for i in range(self.m)]

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def m(self):
        return self.y.shape[1]

    def centered(self):
        return Dataset(self.y - self.y.mean(axis=0), self.time_step, self.time_unit, list(self.names))


@dataclass
class LagStatistics:
    """Sufficient statistics of the likelihood for a fixed ``p_max``.

    ``x0`` stacks ``y_{p_max}, ..., y_1`` (newest first); ``cross`` is
    ``sum_t z_t z_t^T`` with ``z_t = (y_t, y_{t-1}, ..., y_{t-p_max})`` over
    ``t = p_max + 1..n``.
    """

    x0: np.ndarray
    cross: np.ndarray
    n_cond: int

    @classmethod
    def from_data(cls, data, p_max):
        y = data.y
        n, m = y.shape
        if n < p_max:
            raise UsageError(f"need at least p_max={p_max} observations, got {n}")
        x0 = y[:p_max][::-1].reshape(-1).copy()
        n_cond = n - p_max
        Z = np.empty((n_cond, m * (p_max + 1)))
        for k in range(p_max + 1):
            Z[:, k * m:(k + 1) * m] = y[p_max - k:n - k]
        return cls(x0=x0, cross=Z.T @ Z, n_cond=n_cond)


@dataclass
class ModelConfig:
    p_max: int = 8
    hyper: MgpHyperParams = field(default_factory=MgpHyperParams)
    sigma_prior: SigmaPrior | None = None
    likelihood: bool = True


class ParamLayout:
    """Offsets and names of the blocks in the unconstrained vector."""

    def __init__(self, m, p_max):
        self.m, self.p_max = int(m), int(p_max)
        mm = self.m * self.m
        self.n_a = self.p_max * mm
        self.n_chol = self.m * (self.m + 1) // 2
        self.sl_a = slice(0, self.n_a)
        self.sl_lam = slice(self.n_a, 2 * self.n_a)
        self.sl_delta = slice(2 * self.n_a, 2 * self.n_a + self.p_max)
        self.sl_chol = slice(2 * self.n_a + self.p_max, 2 * self.n_a + self.p_max + self.n_chol)
        self.dim = self.sl_chol.stop
        self.tril = np.tril_indices(self.m)
        self.diag_pos = np.array([k for k, (i, j) in enumerate(zip(*self.tril)) if i == j])
        self.off_pos = np.array([k for k, (i, j) in enumerate(zip(*self.tril)) if i != j], dtype=int)
        # L.ravel() = embed_diag @ exp(log-diagonal) + embed_off @ off-diagonal
        self.embed_diag = np.zeros((mm, self.m))
        self.embed_off = np.zeros((mm, len(self.off_pos)))
        for k, (i, j) in enumerate(zip(*self.tril)):
            if i == j:
                self.embed_diag[i * self.m + j, i] = 1.0
            else:
                col = int(np.searchsorted(self.off_pos, k))
                self.embed_off[i * self.m + j, col] = 1.0

    def names(self):
        m, p = self.m, self.p_max
        out = [f"a[{s + 1},{i + 1},{j + 1}]" for s in range(p) for i in range(m) for j in range(m)]
        out += [f"log_lambda[{s + 1},{i + 1},{j + 1}]" for s in range(p) for i in range(m) for j in range(m)]
        out += [f"log_delta[{s + 1}]" for s in range(p)]
        out += [f"L[{i + 1},{j + 1}]" for i, j in zip(*self.tril)]
        return out

    def pack(self, a, log_lambda, log_delta, chol_raw):
        """Concatenate blocks; ``chol_raw`` holds log-diagonal and sub-diagonal entries."""
        chol_raw = np.asarray(chol_raw, dtype=float)
        return np.concatenate([
            np.asarray(a, dtype=float).reshape(-1),
            np.asarray(log_lambda, dtype=float).reshape(-1),
            np.asarray(log_delta, dtype=float).reshape(-1),
            chol_raw[self.tril] if chol_raw.ndim == 2 else chol_raw.reshape(-1),
        ])

    def unpack(self, theta):
        """Inverse of :meth:`pack`, returning raw blocks (``chol_raw`` as a matrix)."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise UsageError(f"expected parameter vector of length {self.dim}, got {theta.shape}")
        shape = (self.p_max, self.m, self.m)
        raw = np.zeros((self.m, self.m))
        raw[self.tril] = theta[self.sl_chol]
        return {
            "a": theta[self.sl_a].reshape(shape),
            "log_lambda": theta[self.sl_lam].reshape(shape),
            "log_delta": theta[self.sl_delta].copy(),
            "chol_raw": raw,
        }

    def from_natural(self, A, lam, delta, sigma):
        """Unconstrained vector for natural-scale values."""
        L = np.linalg.cholesky(np.asarray(sigma, dtype=float))
        raw = L.copy()
        raw[np.diag_indices(self.m)] = np.log(np.diag(L))
        return self.pack(A, np.log(lam), np.log(delta), raw)

    def chol_factor(self, theta):
        chol = theta[self.sl_chol]
        diag = ad.exp(chol[self.diag_pos])
        flat = self.embed_diag @ diag
        if len(self.off_pos):
            flat = flat + self.embed_off @ chol[self.off_pos]
        return ad.reshape(flat, (self.m, self.m))

    def sigma(self, theta):
        L = self.chol_factor(np.asarray(theta, dtype=float))
        return L @ L.T

    def a_matrices(self, theta):
        a = theta[self.sl_a]
        mm = self.m * self.m
        return [ad.reshape(a[s * mm:(s + 1) * mm], (self.m, self.m)) for s in range(self.p_max)]


def _gamma_logpdf(log_x, x, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * log_x - rate * x


def log_prior_mgp(A, state, hp=MgpHyperParams()):
    """Normal-gamma log prior density of ``A`` and the MGP precisions."""
    A = np.asarray(A, dtype=float)
    lam = np.asarray(state.lam, dtype=float)
    delta = np.asarray(state.delta, dtype=float)
    if np.any(lam <= 0) or np.any(delta <= 0):
        raise DomainError("precisions must be positive")
    return float(_mgp_terms(A, np.log(lam), np.log(delta), hp))


def _mgp_terms(a, log_lam, log_delta, hp):
    """Generic MGP log density on log-scale precisions (no Jacobian)."""
    p = np.shape(ad.value_of(log_delta))[0]
    a = ad.reshape(a, (-1,))
    log_lam = ad.reshape(log_lam, (-1,))
    mm = np.shape(ad.value_of(a))[0] // p
    # log tau_s broadcast to every (i, j) at lag s
    cum = np.tril(np.ones((p, p)))
    expand = np.repeat(np.eye(p), mm, axis=0)
    log_tau = expand @ (cum @ log_delta)
    lam = ad.exp(log_lam)
    prec_log = log_lam + log_tau
    normal = ad.sum(-0.5 * LOG_2PI + 0.5 * prec_log - 0.5 * ad.exp(prec_log) * a * a)
    half = 0.5 * hp.a
    lam_term = ad.sum(_gamma_logpdf(log_lam, lam, half, half))
    shapes = np.full(p, hp.a2)
    shapes[0] = hp.a1
    delta_term = ad.sum(_gamma_logpdf(log_delta, ad.exp(log_delta), shapes, 1.0))
    return normal + lam_term + delta_term


def log_prior_sigma(sigma, prior):
    """Inverse Wishart log density with the multivariate gamma normaliser."""
    sigma = np.asarray(sigma, dtype=float)
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise DomainError("sigma is not positive definite") from exc
    return float(_iw_terms(L, np.log(np.diag(L)), prior))


def _iw_const(prior):
    m = prior.scale.shape[0]
    nu = prior.dof
    _, logdet_psi = np.linalg.slogdet(prior.scale)
    return 0.5 * nu * logdet_psi - 0.5 * nu * m * np.log(2.0) - multigammaln(0.5 * nu, m)


def _iw_terms(L, log_diag, prior):
    m = prior.scale.shape[0]
    nu = prior.dof
    psi_chol = np.linalg.cholesky(prior.scale)
    X = ad.solve_triangular(L, psi_chol, lower=True)
    logdet = 2.0 * ad.sum(log_diag)
    return _iw_const(prior) - 0.5 * (nu + m + 1.0) * logdet - 0.5 * ad.sum(X * X)


def _loglik_terms(L, log_diag, phi, gamma, stats, p_max):
    """Exact Gaussian log likelihood from sufficient statistics.

    Returns ``-inf`` when the initial-state variance is numerically not
    positive definite.
    """
    m = ad.value_of(L).shape[0]
    G = block_toeplitz(gamma[:p_max])
    try:
        LG = ad.cholesky(G)
    except np.linalg.LinAlgError:
        return -np.inf
    z = ad.solve_triangular(LG, stats.x0, lower=True)
    init = -0.5 * (m * p_max * LOG_2PI + 2.0 * ad.sum(ad.log(ad.diagonal(LG))) + ad.sum(z * z))

    W = ad.concatenate([np.eye(m)] + [-1.0 * f for f in phi], axis=1)
    LW = ad.solve_triangular(L, W, lower=True)
    quad = ad.sum((LW @ stats.cross) * LW)
    n_c = stats.n_cond
    cond = -0.5 * (n_c * m * LOG_2PI + n_c * 2.0 * ad.sum(log_diag) + quad)
    return init + cond


def log_likelihood(data, model, p_max):
    """Exact log likelihood of ``data`` under ``model`` conditioning on ``p_max`` lags.

    The first ``p_max`` observations are scored under their stationary joint
    distribution and the rest under the one-step conditionals.
    """
    if data.n < p_max:
        raise UsageError(f"n={data.n} is smaller than p_max={p_max}")
    stats = LagStatistics.from_data(data, p_max)
    m = data.m
    phi = np.zeros((p_max, m, m))
    k = min(model.p, p_max)
    phi[:k] = model.phi[:k]
    if model.p > p_max:
        raise UsageError("model order exceeds p_max")
    gamma = extend_autocovariances(model.phi, model.gamma, max(p_max, 1))
    L = np.linalg.cholesky(np.asarray(model.sigma, dtype=float))
    return float(_loglik_terms(L, np.log(np.diag(L)), list(phi), list(gamma), stats, p_max))


def _jacobian_terms(theta, layout):
    m = layout.m
    log_diag = theta[layout.sl_chol][layout.diag_pos]
    weights = np.array([m - i + 2.0 for i in range(1, m + 1)])
    return (ad.sum(theta[layout.sl_lam]) + ad.sum(theta[layout.sl_delta])
            + m * np.log(2.0) + ad.sum(weights * log_diag))


def posterior_components(theta, layout, config, stats=None, method="db"):
    """Evaluate prior, likelihood and Jacobian parts separately.

    ``theta`` may be an ndarray or an autodiff node.  The likelihood part is
    ``0.0`` when ``config.likelihood`` is false.
    """
    m = layout.m
    prior_sigma = config.sigma_prior or SigmaPrior.default(m)
    L = layout.chol_factor(theta)
    log_diag = theta[layout.sl_chol][layout.diag_pos]
    out = {
        "prior_mgp": _mgp_terms(theta[layout.sl_a], theta[layout.sl_lam], theta[layout.sl_delta], config.hyper),
        "prior_sigma": _iw_terms(L, log_diag, prior_sigma),
        "jacobian": _jacobian_terms(theta, layout),
        "likelihood": 0.0,
    }
    if config.likelihood:
        try:
            P = a_to_pacf_core(layout.a_matrices(theta), method)
            sigma = symmetrize(L @ ad.transpose(L))
            rec = pacf_to_var_core(sigma, P, method)
        except (DomainError, np.linalg.LinAlgError):
            out["likelihood"] = -np.inf
            return out
        out["likelihood"] = _loglik_terms(L, log_diag, rec["phi"], rec["gamma"], stats, layout.p_max)
    return out


def log_posterior(theta, data, config):
    """Unnormalised log posterior at an unconstrained point (plain evaluation)."""
    return LogPosterior(data, config)(theta)


class LogPosterior:
    """Callable log posterior bound to a dataset.

    ``backend="kernel"`` computes gradients with the compiled adjoint in
    :mod:`varorder.kernels`; ``backend="tape"`` records the generic
    expression with :mod:`varorder.autodiff`.
    """

    def __init__(self, data, config=None, backend="kernel"):
        self.config = config or ModelConfig()
        self.data = data
        self.layout = ParamLayout(data.m, self.config.p_max)
        self.stats = LagStatistics.from_data(data, self.config.p_max)
        if backend not in ("kernel", "tape"):
            raise UsageError(f"unknown gradient backend {backend!r}")
        self.backend = backend
        self._kernel_args = None

    @property
    def dim(self):
        return self.layout.dim

    def components(self, theta):
        parts = posterior_components(np.asarray(theta, dtype=float), self.layout, self.config, self.stats)
        return {k: float(v) for k, v in parts.items()}

    def _expr(self, theta):
        parts = posterior_components(theta, self.layout, self.config, self.stats)
        return parts["prior_mgp"] + parts["prior_sigma"] + parts["jacobian"] + parts["likelihood"]

    def __call__(self, theta):
        value = float(self._expr(np.asarray(theta, dtype=float)))
        if not np.isfinite(value):
            log.debug("non-finite log posterior: %s", self.components(theta))
        return value

    def value_and_grad_tape(self, theta):
        value, grad = ad.gradient(self._expr, np.asarray(theta, dtype=float))
        if not np.isfinite(value):
            return -np.inf, np.zeros_like(grad)
        return value, grad

    def value_and_grad(self, theta):
        if self.backend == "tape":
            return self.value_and_grad_tape(theta)
        from . import kernels

        if self._kernel_args is None:
            self._kernel_args = kernels.pack_model_args(self)
        return kernels.log_posterior_grad(np.asarray(theta, dtype=float), *self._kernel_args)

    def to_model(self, theta):
        """Natural-scale :class:`VarModel` and PACF matrices for one draw."""
        from .reparam import a_to_pacf, pacf_to_var

        theta = np.asarray(theta, dtype=float)
        sigma = self.layout.sigma(theta)
        sigma = 0.5 * (sigma + sigma.T)
        A = theta[self.layout.sl_a].reshape(self.layout.p_max, self.layout.m, self.layout.m)
        P = a_to_pacf(A)
        model, _ = pacf_to_var(sigma, P)
        return model, P
