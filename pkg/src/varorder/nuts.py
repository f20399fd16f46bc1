"""No-U-Turn sampler with a diagonal metric.

Multinomial trajectory sampling, the generalized no-U-turn criterion on
momentum sums (including the checks across subtree boundaries), dual
averaging of the step size and windowed estimation of the inverse metric.
The control flow follows Stan's ``base_nuts`` so behaviour is comparable,
but draws are not expected to match Stan's.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import InitializationError, UsageError

log = logging.getLogger(__name__)

INIT_RADIUS = 2.0
INIT_TRIES = 100


@dataclass
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    samples: int = 4000
    target_accept: float = 0.8
    max_treedepth: int = 10
    seed: int = 0
    max_energy_error: float = 1000.0
    workers: int = 1

    def __post_init__(self):
        for name in ("chains", "samples", "max_treedepth", "workers"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise UsageError(f"{name} must be a positive integer, got {v!r}")
        if isinstance(self.warmup, bool) or not isinstance(self.warmup, (int, np.integer)) or self.warmup < 0:
            raise UsageError(f"warmup must be a non-negative integer, got {self.warmup!r}")
        if not 0.0 < self.target_accept < 1.0:
            raise UsageError(f"target_accept must lie in (0, 1), got {self.target_accept!r}")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise UsageError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if not self.max_energy_error > 0:
            raise UsageError("max_energy_error must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class ChainResult:
    draws: np.ndarray          # (samples, dim)
    lp: np.ndarray
    accept_stat: np.ndarray
    stepsize: np.ndarray
    treedepth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    inv_metric: np.ndarray
    init: np.ndarray
    warmup_divergences: int = 0


@dataclass
class PosteriorDraws:
    """Post-warmup output of all chains, on the unconstrained scale."""

    chains: list
    names: list = field(default_factory=list)
    config: SamplerConfig | None = None

    @property
    def n_chains(self):
        return len(self.chains)

    @property
    def n_draws(self):
        return self.chains[0].draws.shape[0]

    @property
    def dim(self):
        return self.chains[0].draws.shape[1]

    def array(self):
        """Draws as ``(chains, draws, dim)``."""
        return np.stack([c.draws for c in self.chains])

    def flat(self):
        """Draws with chains concatenated in chain order, ``(chains * draws, dim)``."""
        return np.concatenate([c.draws for c in self.chains], axis=0)

    def stat(self, name):
        return np.stack([getattr(c, name) for c in self.chains])


def chain_rng(seed, chain):
    """Independent Philox stream for ``(seed, chain)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(chain),))))


def _as_target(target):
    if hasattr(target, "value_and_grad"):
        return target.value_and_grad
    return target


class _State:
    __slots__ = ("q", "p", "lp", "grad")

    def __init__(self, q, p, lp, grad):
        self.q, self.p, self.lp, self.grad = q, p, lp, grad

    def copy(self):
        return _State(self.q.copy(), self.p.copy(), self.lp, self.grad.copy())


class Hamiltonian:
    def __init__(self, fn, inv_metric):
        self.fn = fn
        self.inv_metric = inv_metric

    def energy(self, z):
        if not math.isfinite(z.lp):
            return math.inf
        return -z.lp + 0.5 * float(np.dot(self.inv_metric * z.p, z.p))

    def dtau_dp(self, z):
        return self.inv_metric * z.p

    def sample_momentum(self, rng, z):
        z.p = rng.standard_normal(z.q.shape[0]) / np.sqrt(self.inv_metric)

    def leapfrog(self, z, eps):
        z.p = z.p + 0.5 * eps * z.grad
        z.q = z.q + eps * self.inv_metric * z.p
        lp, grad = self.fn(z.q)
        z.lp = float(lp)
        if math.isfinite(z.lp):
            z.grad = np.asarray(grad, dtype=float)
            z.p = z.p + 0.5 * eps * z.grad
        else:
            z.lp = -math.inf


def _log_sum_exp(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi = max(a, b)
    return hi + math.log(math.exp(a - hi) + math.exp(b - hi))


def _no_uturn(p_sharp_minus, p_sharp_plus, rho):
    return float(np.dot(p_sharp_plus, rho)) > 0.0 and float(np.dot(p_sharp_minus, rho)) > 0.0


class _Tree:
    """Scratch for one transition: counters shared across the recursion."""

    __slots__ = ("n_leapfrog", "sum_metro", "divergent", "H0")

    def __init__(self, H0):
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False
        self.H0 = H0


class NutsKernel:
    def __init__(self, fn, dim, rng, max_treedepth=10, max_energy_error=1000.0):
        self.ham = Hamiltonian(fn, np.ones(dim))
        self.rng = rng
        self.eps = 1.0
        self.max_treedepth = max_treedepth
        self.max_energy_error = max_energy_error

    # Each call returns (valid, z_propose, p_sharp_beg, p_sharp_end, rho, p_beg, p_end, log_sum_weight).
    def _build(self, z, depth, sign, tree):
        ham = self.ham
        if depth == 0:
            ham.leapfrog(z, sign * self.eps)
            tree.n_leapfrog += 1
            h = ham.energy(z)
            if math.isnan(h):
                h = math.inf
            if h - tree.H0 > self.max_energy_error:
                tree.divergent = True
            dh = tree.H0 - h
            lsw = dh
            tree.sum_metro += 1.0 if dh > 0 else math.exp(dh)
            ps = ham.dtau_dp(z)
            return (not tree.divergent, z.copy(), ps, ps, z.p.copy(), z.p.copy(), z.p.copy(), lsw)

        ok, prop, ps_beg, ps_init_end, rho_init, p_beg, p_init_end, lsw_init = self._build(z, depth - 1, sign, tree)
        if not ok:
            return (False, prop, None, None, None, None, None, -math.inf)
        ok, prop_final, ps_final_beg, ps_end, rho_final, p_final_beg, p_end, lsw_final = self._build(
            z, depth - 1, sign, tree)
        if not ok:
            return (False, prop, None, None, None, None, None, -math.inf)

        lsw = _log_sum_exp(lsw_init, lsw_final)
        if lsw_final > lsw:
            prop = prop_final
        elif self.rng.uniform() < math.exp(lsw_final - lsw):
            prop = prop_final
        rho = rho_init + rho_final
        persist = _no_uturn(ps_beg, ps_end, rho)
        persist = persist and _no_uturn(ps_beg, ps_final_beg, rho_init + p_final_beg)
        persist = persist and _no_uturn(ps_init_end, ps_end, rho_final + p_init_end)
        return (persist, prop, ps_beg, ps_end, rho, p_beg, p_end, lsw)

    def transition(self, z):
        """One NUTS transition from ``z``; returns ``(new_state, stats)``."""
        ham = self.ham
        z = z.copy()
        ham.sample_momentum(self.rng, z)
        H0 = ham.energy(z)
        tree = _Tree(H0)

        z_fwd = z.copy()
        z_bck = z.copy()
        sample = z.copy()
        ps_fwd_fwd = ps_fwd_bck = ps_bck_fwd = ps_bck_bck = ham.dtau_dp(z)
        p_fwd_bck = p_bck_fwd = z.p.copy()
        rho = z.p.copy()
        log_sum_weight = 0.0
        depth = 0

        while depth < self.max_treedepth:
            if self.rng.uniform() > 0.5:
                rho_bck = rho
                p_bck_fwd = p_fwd_bck
                ps_bck_fwd = ps_fwd_bck
                ok, prop, ps_fwd_bck, ps_fwd_fwd, rho_fwd, p_fwd_bck, _, lsw_sub = self._build(z_fwd, depth, 1, tree)
            else:
                rho_fwd = rho
                p_fwd_bck = p_bck_fwd
                ps_fwd_bck = ps_bck_fwd
                ok, prop, ps_bck_fwd, ps_bck_bck, rho_bck, p_bck_fwd, _, lsw_sub = self._build(z_bck, depth, -1, tree)
            if not ok:
                break
            depth += 1
            if lsw_sub > log_sum_weight:
                sample = prop
            elif self.rng.uniform() < math.exp(lsw_sub - log_sum_weight):
                sample = prop
            log_sum_weight = _log_sum_exp(log_sum_weight, lsw_sub)

            rho = rho_bck + rho_fwd
            persist = _no_uturn(ps_bck_bck, ps_fwd_fwd, rho)
            persist = persist and _no_uturn(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck)
            persist = persist and _no_uturn(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd)
            if not persist:
                break

        accept = tree.sum_metro / tree.n_leapfrog if tree.n_leapfrog else 0.0
        stats = {
            "accept_stat": accept,
            "treedepth": depth,
            "n_leapfrog": tree.n_leapfrog,
            "divergent": tree.divergent,
            "energy": ham.energy(sample),
        }
        return sample, stats

    def init_stepsize(self, z):
        """Double or halve the step size until one leapfrog step crosses acceptance 0.8."""
        ham = self.ham
        if not np.all(np.isfinite(z.q)):
            return
        target = math.log(0.8)
        z0 = z.copy()
        w = z0.copy()
        ham.sample_momentum(self.rng, w)
        H0 = ham.energy(w)
        ham.leapfrog(w, self.eps)
        h = ham.energy(w)
        if math.isnan(h):
            h = math.inf
        direction = 1 if H0 - h > target else -1
        while True:
            w = z0.copy()
            ham.sample_momentum(self.rng, w)
            H0 = ham.energy(w)
            ham.leapfrog(w, self.eps)
            h = ham.energy(w)
            if math.isnan(h):
                h = math.inf
            dh = H0 - h
            if direction == 1 and not dh > target:
                break
            if direction == -1 and not dh < target:
                break
            self.eps = self.eps * 2.0 if direction == 1 else self.eps * 0.5
            if self.eps > 1e7:
                raise InitializationError("step size diverged during initialization; posterior may be improper")
            if self.eps == 0.0:
                raise InitializationError("step size collapsed to zero during initialization")


class DualAveraging:
    def __init__(self, delta, gamma=0.05, kappa=0.75, t0=10.0):
        self.delta, self.gamma, self.kappa, self.t0 = delta, gamma, kappa, t0
        self.mu = 0.0
        self.restart()

    def restart(self):
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def learn(self, accept):
        self.counter += 1
        accept = min(1.0, accept)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    def final(self):
        return math.exp(self.x_bar)


def warmup_buffers(warmup):
    """``(init_buffer, base_window, term_buffer)`` scaled from 75/25/50 per 1000."""
    def scale(x):
        return max(1, int(math.floor(x * warmup / 1000.0 + 0.5)))

    return scale(75), scale(25), scale(50)


class WindowedVariance:
    """Windowed metric schedule: fast initial interval, doubling slow windows, fast final interval."""

    def __init__(self, dim, warmup):
        self.warmup = warmup
        self.init_buffer, self.base_window, self.term_buffer = warmup_buffers(warmup)
        if self.init_buffer + self.base_window + self.term_buffer > warmup:
            self.active = False
        else:
            self.active = True
        self.counter = 0
        self.window_size = self.base_window
        self.next_window = self.init_buffer + self.window_size - 1
        self._reset(dim)

    def _reset(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def _in_window(self):
        return (self.counter >= self.init_buffer
                and self.counter < self.warmup - self.term_buffer
                and self.counter != self.warmup)

    def _end_of_window(self):
        return self.counter == self.next_window and self.counter != self.warmup

    def _advance(self):
        last = self.warmup - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != last:
            if self.next_window + 2 * self.window_size >= self.warmup - self.term_buffer:
                self.next_window = last

    def learn(self, q):
        """Add a warmup draw; returns a new inverse metric when a window closes."""
        if not self.active:
            self.counter += 1
            return None
        if self._in_window():
            self.n += 1
            d = q - self.mean
            self.mean += d / self.n
            self.m2 += d * (q - self.mean)
        if self._end_of_window():
            self._advance()
            n = self.n
            var = self.m2 / (n - 1) if n > 1 else np.ones_like(self.m2)
            var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self._reset(q.shape[0])
            self.counter += 1
            return var
        self.counter += 1
        return None


def _initial_point(fn, dim, rng, init=None):
    if init is not None:
        q = np.asarray(init, dtype=float).copy()
        lp, grad = fn(q)
        if math.isfinite(lp) and np.all(np.isfinite(grad)):
            return _State(q, np.zeros(dim), float(lp), np.asarray(grad, dtype=float))
        raise InitializationError("log density not finite at the supplied initial point")
    for _ in range(INIT_TRIES):
        q = rng.uniform(-INIT_RADIUS, INIT_RADIUS, size=dim)
        lp, grad = fn(q)
        if math.isfinite(lp) and np.all(np.isfinite(grad)):
            return _State(q, np.zeros(dim), float(lp), np.asarray(grad, dtype=float))
    raise InitializationError(f"no finite log density found in {INIT_TRIES} random initializations")


def run_chain(target, dim, cfg, chain, init=None):
    """Warm up and sample one chain."""
    fn = _as_target(target)
    rng = chain_rng(cfg.seed, chain)
    z = _initial_point(fn, dim, rng, init)
    q_init = z.q.copy()
    kernel = NutsKernel(fn, dim, rng, cfg.max_treedepth, cfg.max_energy_error)
    kernel.init_stepsize(z)
    da = DualAveraging(cfg.target_accept)
    da.mu = math.log(10.0 * kernel.eps)
    metric = WindowedVariance(dim, cfg.warmup)

    warm_div = 0
    for _ in range(cfg.warmup):
        z, st = kernel.transition(z)
        warm_div += int(st["divergent"])
        kernel.eps = da.learn(st["accept_stat"])
        var = metric.learn(z.q)
        if var is not None:
            kernel.ham.inv_metric = var
            kernel.init_stepsize(z)
            da.mu = math.log(10.0 * kernel.eps)
            da.restart()
    if cfg.warmup > 0:
        kernel.eps = da.final()

    n = cfg.samples
    out = ChainResult(
        draws=np.empty((n, dim)), lp=np.empty(n), accept_stat=np.empty(n), stepsize=np.full(n, kernel.eps),
        treedepth=np.empty(n, dtype=np.int64), n_leapfrog=np.empty(n, dtype=np.int64),
        divergent=np.zeros(n, dtype=bool), energy=np.empty(n), inv_metric=kernel.ham.inv_metric.copy(),
        init=q_init, warmup_divergences=warm_div,
    )
    for i in range(n):
        z, st = kernel.transition(z)
        out.draws[i] = z.q
        out.lp[i] = z.lp
        out.accept_stat[i] = st["accept_stat"]
        out.treedepth[i] = st["treedepth"]
        out.n_leapfrog[i] = st["n_leapfrog"]
        out.divergent[i] = st["divergent"]
        out.energy[i] = st["energy"]
    log.debug("chain %d: step size %.4g, %d divergences", chain, kernel.eps, int(out.divergent.sum()))
    return out


def _run_chain_star(args):
    return run_chain(*args)


def sample(target, dim, cfg=None, names=None, inits=None):
    """Run ``cfg.chains`` independent chains.

    ``target`` is either an object with ``value_and_grad(theta)`` or a
    function returning ``(log_density, gradient)``.  Results do not depend
    on ``cfg.workers``.
    """
    cfg = cfg or SamplerConfig()
    dim = int(dim)
    if dim < 1:
        raise UsageError("dimension must be positive")
    inits = inits if inits is not None else [None] * cfg.chains
    jobs = [(target, dim, cfg, c, inits[c]) for c in range(cfg.chains)]
    if cfg.workers > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.chains)) as pool:
            chains = list(pool.map(_run_chain_star, jobs))
    else:
        chains = [_run_chain_star(j) for j in jobs]
    return PosteriorDraws(chains=chains, names=list(names) if names else [f"theta[{i + 1}]" for i in range(dim)],
                          config=cfg)
