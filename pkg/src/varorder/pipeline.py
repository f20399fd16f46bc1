"""Run configuration and the fit / analyze / diagnose / study pipelines.

A run directory holds everything needed to re-create its outputs:

``config.json``          resolved :class:`RunConfig`
``data.csv``             mean-centered data used for fitting
``draws_chain{k}.csv``   per-chain sampler output
``diagnostics.json``     R-hat, ESS, divergences
``order_pmf.{json,csv,svg}``
``granger.{json,dot}``   when ``granger`` is on
``decomposition.{csv,json}``, ``moduli.svg``, ``periods.svg``  when ``decompose`` is on
``manifest.json``        config hash, seed, versions and output checksums
"""
from __future__ import annotations

import dataclasses
import json
import logging
import platform
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, _jit
from .analysis import (
    decomposition_summary,
    granger_edges,
    kde_curve,
    order_posterior,
    pacf_draws,
    var_draws,
)
from .diagnostics import diagnose
from .exceptions import UsageError
from .io import (
    dumps_json,
    read_data_csv,
    read_draws_csv,
    read_json,
    read_regions_csv,
    sha256_file,
    sha256_text,
    write_csv,
    write_data_csv,
    write_dict_csv,
    write_json,
    write_matrix_csv,
)
from .model import Dataset, LogPosterior, MgpHyperParams, ModelConfig, SigmaPrior
from .nuts import ChainResult, PosteriorDraws, SamplerConfig, sample
from .svg import bar_chart, line_chart

log = logging.getLogger(__name__)

STAT_COLUMNS = ["lp__", "accept_stat__", "stepsize__", "treedepth__", "n_leapfrog__", "divergent__", "energy__"]
STAT_FIELDS = ["lp", "accept_stat", "stepsize", "treedepth", "n_leapfrog", "divergent", "energy"]


@dataclass
class RunConfig:
    data: str | None = None
    out: str | None = None
    # sampler
    chains: int = 4
    warmup: int = 1000
    samples: int = 4000
    target_accept: float = 0.8
    max_treedepth: int = 10
    seed: int = 0
    max_energy_error: float = 1000.0
    workers: int = 1
    # model
    p_max: int = 8
    a: float = 6.0
    a1: float = 2.5
    a2: float = 3.0
    sigma_scale_diag: float = 1.0
    sigma_scale_offdiag: float = 0.0
    sigma_dof: float | None = None
    likelihood: bool = True
    # analysis
    beta: float = 0.99
    time_step: float = 1.0
    time_unit: str = "samples"
    granger: bool = True
    granger_refit: bool = False
    decompose: bool = True
    k: int = 4
    regions: str | None = None
    record_timing: bool = False

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise UsageError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self):
        return dataclasses.asdict(self)

    def validate(self):
        def pos_int(name, minimum=1):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
                raise UsageError(f"{name} must be an integer >= {minimum}, got {v!r}")

        def pos_real(name):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise UsageError(f"{name} must be a positive number, got {v!r}")

        for name in ("chains", "samples", "max_treedepth", "workers", "p_max", "k"):
            pos_int(name)
        pos_int("warmup", 0)
        for name in ("a", "a1", "a2", "sigma_scale_diag", "time_step", "max_energy_error"):
            pos_real(name)
        for name in ("likelihood", "granger", "granger_refit", "decompose", "record_timing"):
            if not isinstance(getattr(self, name), bool):
                raise UsageError(f"{name} must be true or false")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise UsageError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        for name in ("target_accept", "beta"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 < v < 1.0:
                raise UsageError(f"{name} must lie in (0, 1), got {v!r}")
        off = self.sigma_scale_offdiag
        if not isinstance(off, (int, float)) or isinstance(off, bool):
            raise UsageError("sigma_scale_offdiag must be a number")
        if self.sigma_dof is not None and (isinstance(self.sigma_dof, bool)
                                           or not isinstance(self.sigma_dof, (int, float))):
            raise UsageError("sigma_dof must be a number or null")
        if not isinstance(self.time_unit, str) or not self.time_unit:
            raise UsageError("time_unit must be a non-empty string")

    def sampler(self):
        return SamplerConfig(chains=self.chains, warmup=self.warmup, samples=self.samples,
                             target_accept=float(self.target_accept), max_treedepth=self.max_treedepth,
                             seed=self.seed, max_energy_error=float(self.max_energy_error), workers=self.workers)

    def model(self, m, p_max=None):
        prior = SigmaPrior.default(m, diag=float(self.sigma_scale_diag),
                                   offdiag=float(self.sigma_scale_offdiag),
                                   dof=None if self.sigma_dof is None else float(self.sigma_dof))
        return ModelConfig(p_max=p_max or self.p_max,
                           hyper=MgpHyperParams(a=float(self.a), a1=float(self.a1), a2=float(self.a2)),
                           sigma_prior=prior, likelihood=self.likelihood)

    def hash(self):
        d = self.to_dict()
        d.pop("out", None)
        return sha256_text(json.dumps(d, sort_keys=True))


def _versions():
    import scipy

    out = {"varorder": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "scipy": scipy.__version__, "kernel": _jit.describe()}
    if _jit.ENABLED:
        import numba

        out["numba"] = numba.__version__
    return out


# -- draws on disk -------------------------------------------------------------

def write_draws(run_dir, draws):
    header = STAT_COLUMNS + list(draws.names)
    for k, ch in enumerate(draws.chains, start=1):
        stats = np.column_stack([getattr(ch, f).astype(float) for f in STAT_FIELDS])
        write_matrix_csv(Path(run_dir) / f"draws_chain{k}.csv", header, np.hstack([stats, ch.draws]))


def read_draws(run_dir, cfg=None):
    run_dir = Path(run_dir)
    files = sorted(run_dir.glob("draws_chain*.csv"), key=lambda p: int(p.stem.replace("draws_chain", "")))
    if not files:
        raise UsageError(f"no draws_chain*.csv files in {run_dir}")
    chains = []
    names = None
    for f in files:
        header, arr = read_draws_csv(f)
        if header[:len(STAT_COLUMNS)] != STAT_COLUMNS:
            raise UsageError(f"{f}: unexpected header")
        names = header[len(STAT_COLUMNS):]
        ns = len(STAT_COLUMNS)
        chains.append(ChainResult(
            draws=arr[:, ns:], lp=arr[:, 0], accept_stat=arr[:, 1], stepsize=arr[:, 2],
            treedepth=arr[:, 3].astype(np.int64), n_leapfrog=arr[:, 4].astype(np.int64),
            divergent=arr[:, 5].astype(bool), energy=arr[:, 6], inv_metric=np.full(len(names), np.nan),
            init=np.full(len(names), np.nan),
        ))
    return PosteriorDraws(chains=chains, names=names, config=cfg.sampler() if cfg else None)


# -- analysis ----------------------------------------------------------------

def _dot(edges, names, regions=None):
    lines = ["digraph granger {", '  graph [overlap=false];', "  node [shape=ellipse];"]
    for idx, name in enumerate(names):
        attrs = {"label": name}
        if regions and name in regions:
            attrs["label"] = regions[name]["label"]
            if "pos" in regions[name]:
                x, y = regions[name]["pos"]
                attrs["pos"] = f"{x:.17g},{y:.17g}!"
        attr = ", ".join(f'{k}="{v}"' for k, v in attrs.items())
        lines.append(f"  n{idx + 1} [{attr}];")
    wmax = max((e.weight for e in edges), default=0.0) or 1.0
    for e in edges:
        pen = 0.5 + 4.5 * e.weight / wmax
        lines.append(f'  n{e.source + 1} -> n{e.target + 1} [label="lag {e.lag}", weight="{e.weight:.17g}", '
                     f'penwidth="{pen:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def analyze_run(run_dir, cfg=None, beta=None, granger=None, decompose=None, k=None, regions=None,
                granger_refit=None):
    """Compute order posterior and requested analyses from stored draws."""
    run_dir = Path(run_dir)
    if cfg is None:
        cfg = RunConfig.from_dict(read_json(run_dir / "config.json"))
    overrides = {name: val for name, val in (("beta", beta), ("granger", granger), ("decompose", decompose),
                                             ("k", k), ("regions", regions), ("granger_refit", granger_refit))
                 if val is not None}
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
        cfg.validate()
    data = read_data_csv(run_dir / "data.csv", cfg.time_step, cfg.time_unit)
    draws = read_draws(run_dir, cfg)
    m = data.m

    for stale in ("granger.json", "granger.dot", "decomposition.csv", "decomposition.json",
                  "moduli.svg", "periods.svg"):
        (run_dir / stale).unlink(missing_ok=True)

    P = pacf_draws(draws, m)
    post = order_posterior(draws, data, cfg.beta, pacf=P)
    write_json(run_dir / "order_pmf.json", post.to_dict())
    write_csv(run_dir / "order_pmf.csv", ["order", "probability"], [[k_, float(v)] for k_, v in enumerate(post.pmf)])
    (run_dir / "order_pmf.svg").write_text(
        bar_chart(list(range(len(post.pmf))), [float(v) for v in post.pmf],
                  title=f"Posterior of effective order (beta={cfg.beta:g})", xlabel="order", ylabel="probability"),
        encoding="utf-8")
    result = {"order": post}

    modal = post.mode
    if (cfg.granger or cfg.decompose) and modal >= 1:
        if cfg.granger_refit and modal != infer_p_max(draws, m):
            phi = _refit_phi(data, cfg, modal)
        else:
            _, phi = var_draws(draws, m)
        if cfg.granger:
            edges = granger_edges(phi, modal)
            region_meta = read_regions_csv(cfg.regions) if cfg.regions else None
            write_json(run_dir / "granger.json", {
                "modal_order": modal, "interval": [0.25, 0.75], "refit": bool(cfg.granger_refit),
                "edges": [e.to_dict(data.names) for e in edges]})
            (run_dir / "granger.dot").write_text(_dot(edges, data.names, region_meta), encoding="utf-8")
            result["granger"] = edges
        if cfg.decompose:
            summ = decomposition_summary(phi, modal, cfg.k, cfg.time_step)
            table = summ.table()
            write_dict_csv(run_dir / "decomposition.csv", table)
            write_json(run_dir / "decomposition.json", {
                "modal_order": modal, "k": cfg.k, "time_step": cfg.time_step, "time_unit": cfg.time_unit,
                "components": table})
            curves_m, curves_p = [], []
            for j in range(cfg.k):
                cm = kde_curve(summ.moduli[:, j])
                cp = kde_curve(summ.periods[:, j] * cfg.time_step)
                if cm is not None:
                    curves_m.append((f"component {j + 1}", cm[0], cm[1]))
                if cp is not None:
                    curves_p.append((f"component {j + 1}", cp[0], cp[1]))
            (run_dir / "moduli.svg").write_text(line_chart(curves_m, "Moduli", "modulus", "density"),
                                                encoding="utf-8")
            (run_dir / "periods.svg").write_text(
                line_chart(curves_p, "Periods", f"period ({cfg.time_unit})", "density"), encoding="utf-8")
            result["decomposition"] = summ
    return result


def infer_p_max(draws, m):
    from .analysis import infer_p_max as _ipm

    return _ipm(draws.dim, m)


def _refit_phi(data, cfg, order):
    log.info("refitting at the modal order %d for conditional analyses", order)
    lp = LogPosterior(data, cfg.model(data.m, p_max=order))
    draws = sample(lp, lp.dim, cfg.sampler(), names=lp.layout.names())
    _, phi = var_draws(draws, data.m)
    return phi


def diagnose_run(run_dir, cfg=None):
    run_dir = Path(run_dir)
    if cfg is None:
        cfg = RunConfig.from_dict(read_json(run_dir / "config.json"))
    draws = read_draws(run_dir, cfg)
    if draws.n_chains < 2:
        diag = None
        write_json(run_dir / "diagnostics.json", {"n_chains": draws.n_chains,
                                                 "note": "R-hat and ESS need at least 2 chains"})
    else:
        diag = diagnose(draws)
        write_json(run_dir / "diagnostics.json", diag.to_dict())
    return diag


def write_manifest(run_dir, cfg, extra=None):
    run_dir = Path(run_dir)
    outputs = {}
    for f in sorted(run_dir.iterdir()):
        if f.is_file() and f.name != "manifest.json":
            outputs[f.name] = sha256_file(f)
    manifest = {
        "config_hash": cfg.hash(),
        "config": dataclasses.replace(cfg, out=None).to_dict(),
        "seed": cfg.seed,
        "versions": _versions(),
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    write_json(run_dir / "manifest.json", manifest)
    return manifest


def fit_run(data, cfg, out_dir):
    """Center, sample, write draws and all requested analyses."""
    cfg.validate()
    out_dir = Path(out_dir)
    if data.n <= cfg.p_max:
        raise UsageError(f"need more than p_max={cfg.p_max} observations, got n={data.n}")
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    means = data.y.mean(axis=0)
    centered = Dataset(data.y - means, data.time_step, data.time_unit, list(data.names))
    stored = dataclasses.replace(cfg, out=None)
    (out_dir / "config.json").write_text(dumps_json(stored.to_dict()), encoding="utf-8")
    write_data_csv(out_dir / "data.csv", centered)
    write_json(out_dir / "data_means.json", {n: float(v) for n, v in zip(centered.names, means)})

    lp = LogPosterior(centered, cfg.model(centered.m))
    draws = sample(lp, lp.dim, cfg.sampler(), names=lp.layout.names())
    write_draws(out_dir, draws)
    diag = diagnose_run(out_dir, stored)
    analysis = analyze_run(out_dir, stored)
    extra = {"wall_time_seconds": time.perf_counter() - t0} if cfg.record_timing else None
    write_manifest(out_dir, stored, extra)
    return {"draws": draws, "diagnostics": diag, **analysis}


def load_data(cfg):
    if not cfg.data:
        raise UsageError("no input data path given")
    return read_data_csv(cfg.data, cfg.time_step, cfg.time_unit)
