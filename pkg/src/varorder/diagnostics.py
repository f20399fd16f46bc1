"""Convergence diagnostics: rank-normalized split R-hat and effective sample size."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .exceptions import UsageError


@dataclass
class Diagnostics:
    names: list
    rhat: np.ndarray
    rhat_classic: np.ndarray
    ess_bulk: np.ndarray
    ess_mean: np.ndarray
    constant: np.ndarray
    n_divergent: int = 0
    n_max_treedepth: int = 0
    max_treedepth: int = 0
    n_draws: int = 0
    n_chains: int = 0
    extra: dict = field(default_factory=dict)

    def max_rhat(self):
        finite = self.rhat[np.isfinite(self.rhat)]
        return float(finite.max()) if finite.size else float("nan")

    def min_ess(self):
        finite = self.ess_bulk[np.isfinite(self.ess_bulk)]
        return float(finite.min()) if finite.size else float("nan")

    def to_dict(self):
        def num(x):
            x = float(x)
            return x if np.isfinite(x) else None

        return {
            "n_chains": self.n_chains,
            "n_draws": self.n_draws,
            "n_divergent": int(self.n_divergent),
            "n_max_treedepth": int(self.n_max_treedepth),
            "max_treedepth": int(self.max_treedepth),
            "max_rhat": num(self.max_rhat()),
            "min_ess_bulk": num(self.min_ess()),
            "parameters": [
                {"name": n, "rhat": num(r), "rhat_classic": num(rc), "ess_bulk": num(eb),
                 "ess_mean": num(em), "constant": bool(c)}
                for n, r, rc, eb, em, c in zip(self.names, self.rhat, self.rhat_classic, self.ess_bulk,
                                               self.ess_mean, self.constant)
            ],
            **self.extra,
        }


def split_chains(x):
    """``(chains, draws)`` -> ``(2 * chains, draws // 2)``; a middle draw is dropped for odd lengths."""
    x = np.asarray(x, dtype=float)
    n = x.shape[1]
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half:]], axis=0)


def rank_normalize(x):
    """Pooled ranks mapped through the normal quantile with the (r - 3/8)/(S + 1/4) offset."""
    x = np.asarray(x, dtype=float)
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _rhat_raw(x):
    m, n = x.shape
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    if not np.isfinite(w) or w <= 0.0:
        return np.nan
    b = n * means.var(ddof=1)
    var_hat = (n - 1) / n * w + b / n
    return float(np.sqrt(var_hat / w))


def _is_constant(x):
    return bool(np.all(x == x.flat[0]))


def split_rhat(x):
    """Classical split R-hat on the raw draws (no rank normalization)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or _is_constant(x):
        return np.nan
    return _rhat_raw(split_chains(x))


def rhat(x):
    """Maximum of bulk and folded rank-normalized split R-hat for ``(chains, draws)``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or _is_constant(x):
        return np.nan
    s = split_chains(x)
    bulk = _rhat_raw(rank_normalize(s))
    folded = _rhat_raw(rank_normalize(np.abs(s - np.median(s))))
    return float(np.nanmax([bulk, folded])) if np.isfinite(bulk) or np.isfinite(folded) else np.nan


def _autocov(x):
    """Biased autocovariance of each row via FFT."""
    n = x.shape[1]
    size = 1 << int(np.ceil(np.log2(2 * n)))
    c = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(c, n=size, axis=1)
    return np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n] / n


def _ess_raw(x):
    m, n = x.shape
    if n < 4:
        return np.nan
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if not var_plus > 0:
        return np.nan
    rho = np.zeros(n)
    rho_even = 1.0
    rho[0] = rho_even
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0.0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho[max_t + 1] > 0.0:
        max_t += 1
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = 0.5 * (rho[t - 1] + rho[t])
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[:max_t + 1].sum() + rho[max_t + 1]
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def ess_bulk(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or _is_constant(x):
        return np.nan
    return _ess_raw(rank_normalize(split_chains(x)))


def ess_mean(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or _is_constant(x):
        return np.nan
    return _ess_raw(split_chains(x))


def diagnose(draws, extra_params=None):
    """Per-parameter R-hat and ESS plus sampler warnings.

    ``extra_params`` maps names to additional ``(chains, draws)`` arrays
    (for example transformed quantities) diagnosed alongside the draws.
    """
    arr = draws.array()
    n_chains, n_draws, dim = arr.shape
    if n_chains < 2:
        raise UsageError("diagnostics need at least 2 chains")
    if n_draws < 4:
        raise UsageError("diagnostics need at least 4 draws per chain")
    series = [(name, arr[:, :, k]) for k, name in enumerate(draws.names)]
    for name, vals in (extra_params or {}).items():
        series.append((name, np.asarray(vals, dtype=float)))
    names = [s[0] for s in series]
    rh = np.array([rhat(v) for _, v in series])
    rc = np.array([split_rhat(v) for _, v in series])
    eb = np.array([ess_bulk(v) for _, v in series])
    em = np.array([ess_mean(v) for _, v in series])
    const = np.array([_is_constant(np.asarray(v)) for _, v in series])
    max_depth = draws.config.max_treedepth if draws.config else int(draws.stat("treedepth").max())
    return Diagnostics(
        names=names, rhat=rh, rhat_classic=rc, ess_bulk=eb, ess_mean=em, constant=const,
        n_divergent=int(draws.stat("divergent").sum()),
        n_max_treedepth=int((draws.stat("treedepth") >= max_depth).sum()),
        max_treedepth=int(max_depth), n_draws=n_draws, n_chains=n_chains,
    )
