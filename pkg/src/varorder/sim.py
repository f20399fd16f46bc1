"""Random stationary models, simulation and batch order-recovery studies."""
from __future__ import annotations

import json
import logging
import traceback
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import UsageError
from .model import Dataset
from .reparam import VarModel, a_to_pacf, build_initial_variance, pacf_to_var

log = logging.getLogger(__name__)


def make_rng(seed, *key):
    """Philox generator keyed by ``seed`` and an optional spawn key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))))


@dataclass
class SimSpec:
    m: int
    p: int
    n: int
    seed: int = 0
    sigma: list | None = None
    start: str = "exact"
    burn_in: int = 0

    def __post_init__(self):
        for name in ("m", "n"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise UsageError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.p, int) or isinstance(self.p, bool) or self.p < 0:
            raise UsageError(f"p must be a non-negative integer, got {self.p!r}")
        if self.n < self.p:
            raise UsageError(f"n={self.n} must be at least p={self.p}")
        if self.start not in ("exact", "burn-in"):
            raise UsageError(f"start must be 'exact' or 'burn-in', got {self.start!r}")
        if self.start == "burn-in" and self.burn_in < 1:
            raise UsageError("burn-in start needs a positive burn_in length")

    def sigma_matrix(self):
        if self.sigma is None:
            return np.eye(self.m)
        s = np.asarray(self.sigma, dtype=float)
        if s.shape != (self.m, self.m):
            raise UsageError(f"sigma must be {self.m}x{self.m}")
        return s


def random_model(m, p, seed, sigma=None):
    """``A_s`` with iid standard normal entries mapped to a stationary VAR with error variance ``sigma``."""
    rng = make_rng(seed)
    A = rng.standard_normal((p, m, m))
    sigma = np.eye(m) if sigma is None else np.asarray(sigma, dtype=float)
    model, _ = pacf_to_var(sigma, a_to_pacf(A) if p else np.zeros((0, m, m)))
    return A, model


def simulate(model, n, seed, start="exact", burn_in=0):
    """Simulate ``n`` observations from a stationary VAR.

    ``start="exact"`` draws the first ``p`` values from the stationary
    distribution; ``"burn-in"`` starts from zero and discards ``burn_in`` values.
    """
    rng = make_rng(seed, 1)
    sigma = np.asarray(model.sigma, dtype=float)
    phi = np.asarray(model.phi, dtype=float)
    m, p = sigma.shape[0], phi.shape[0]
    if n < p:
        raise UsageError(f"n={n} must be at least p={p}")
    Ls = np.linalg.cholesky(sigma)
    total = n + (burn_in if start == "burn-in" else 0)
    y = np.zeros((total, m))
    if start == "exact" and p > 0:
        G = build_initial_variance(model, p)
        x = np.linalg.cholesky(G) @ rng.standard_normal(m * p)
        # x stacks newest first: (y_p, ..., y_1)
        y[:p] = x.reshape(p, m)[::-1]
        first = p
    elif start == "exact":
        first = 0
    elif start == "burn-in":
        first = 0
    else:
        raise UsageError(f"unknown start {start!r}")
    eps = rng.standard_normal((total, m)) @ Ls.T
    for t in range(first, total):
        acc = eps[t].copy()
        for j in range(min(p, t)):
            acc += phi[j] @ y[t - 1 - j]
        y[t] = acc
    if start == "burn-in":
        y = y[burn_in:]
    return Dataset(y=y)


def simulate_spec(spec):
    A, model = random_model(spec.m, spec.p, spec.seed, spec.sigma_matrix())
    data = simulate(model, spec.n, spec.seed, spec.start, spec.burn_in)
    return A, model, data


@dataclass
class CellResult:
    index: int
    spec: dict
    ok: bool
    modal_order: int | None = None
    mass_at_true: float | None = None
    pmf: list | None = None
    threshold: float | None = None
    diagnostics: dict | None = None
    error: str | None = None
    extra: dict = field(default_factory=dict)


def run_cell(index, spec, sampler_cfg, model_cfg, beta):
    """Simulate, fit and score one study cell."""
    from .analysis import order_posterior
    from .diagnostics import diagnose
    from .model import LogPosterior
    from .nuts import sample

    _, _, data = simulate_spec(spec)
    data = data.centered()
    lp = LogPosterior(data, model_cfg)
    draws = sample(lp, lp.dim, sampler_cfg, names=lp.layout.names())
    post = order_posterior(draws, data, beta)
    diag = diagnose(draws) if sampler_cfg.chains > 1 else None
    return CellResult(
        index=index, spec=asdict(spec), ok=True, modal_order=post.mode,
        mass_at_true=float(post.pmf[spec.p]) if spec.p < len(post.pmf) else 0.0,
        pmf=[float(v) for v in post.pmf], threshold=post.threshold,
        diagnostics=diag.to_dict() if diag else None,
    )


def run_study(grid, sampler_cfg, model_cfg, beta=0.99):
    """Run every cell; failures are recorded and the study continues.

    Each cell derives its sampler seed from ``(sampler_cfg.seed, cell index)``.
    ``model_cfg`` is a ``ModelConfig`` or a function of ``m`` returning one.
    """
    from dataclasses import replace

    results = []
    for idx, spec in enumerate(grid):
        cell_seed = int(np.random.SeedSequence(int(sampler_cfg.seed), spawn_key=(idx,)).generate_state(1, np.uint64)[0])
        cfg = replace(sampler_cfg, seed=cell_seed)
        try:
            mcfg = model_cfg(spec.m) if callable(model_cfg) else model_cfg
            results.append(run_cell(idx, spec, cfg, mcfg, beta))
        except Exception as exc:  # quarantine: one bad cell must not stop the study
            log.warning("study cell %d failed: %s", idx, exc)
            results.append(CellResult(index=idx, spec=asdict(spec), ok=False,
                                      error=f"{type(exc).__name__}: {exc}",
                                      extra={"traceback": traceback.format_exc()}))
    return results


def study_table(results):
    """Aggregate rows (one per cell) for CSV output."""
    rows = []
    for r in results:
        rows.append({
            "cell": r.index, "m": r.spec["m"], "p": r.spec["p"], "n": r.spec["n"], "seed": r.spec["seed"],
            "ok": int(r.ok), "modal_order": "" if r.modal_order is None else r.modal_order,
            "mass_at_true": "" if r.mass_at_true is None else r.mass_at_true,
            "threshold": "" if r.threshold is None else r.threshold,
            "max_rhat": "" if not r.diagnostics or r.diagnostics["max_rhat"] is None else r.diagnostics["max_rhat"],
            "n_divergent": "" if not r.diagnostics else r.diagnostics["n_divergent"],
            "error": r.error or "",
        })
    return rows


def model_to_json(A, model, P=None):
    """Ground-truth record; floats survive a JSON roundtrip exactly."""
    if P is None:
        P = a_to_pacf(A) if len(A) else np.zeros((0, model.m, model.m))
    return {
        "m": model.m, "p": model.p,
        "A": np.asarray(A).tolist(), "P": np.asarray(P).tolist(),
        "sigma": model.sigma.tolist(), "phi": model.phi.tolist(), "gamma": model.gamma.tolist(),
    }


def model_from_json(d):
    m = int(d["m"])
    p = int(d["p"])
    A = np.array(d["A"], dtype=float).reshape(p, m, m)
    P = np.array(d["P"], dtype=float).reshape(p, m, m)
    model = VarModel(sigma=np.array(d["sigma"], dtype=float), phi=np.array(d["phi"], dtype=float).reshape(p, m, m),
                     gamma=np.array(d["gamma"], dtype=float))
    return A, P, model


def dumps_model(A, model):
    return json.dumps(model_to_json(A, model), indent=1)


def sample_mgp_prior(m, p_max, hp, size, seed):
    """Draws ``(lam, delta, tau, A)`` from the multiplicative gamma process prior.

    numpy's gamma sampler is Marsaglia--Tsang (with the shape < 1 boost).
    """
    rng = make_rng(seed, 2)
    lam = rng.gamma(hp.a / 2.0, 2.0 / hp.a, size=(size, p_max, m, m))
    shapes = np.full(p_max, float(hp.a2))
    shapes[0] = hp.a1
    delta = rng.gamma(shapes, 1.0, size=(size, p_max))
    tau = np.cumprod(delta, axis=1)
    A = rng.standard_normal((size, p_max, m, m)) / np.sqrt(lam * tau[:, :, None, None])
    return lam, delta, tau, A
