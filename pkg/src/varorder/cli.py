"""Command-line interface: ``varorder simulate | fit | analyze | study | diagnose``.

Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 partial study failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .exceptions import DomainError, InitializationError, NumericalError, UsageError

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4

log = logging.getLogger("varorder")

STUDY_KEYS = {"grid", "m", "p", "n", "replicates", "seed", "start", "burn_in", "sampler", "model", "beta"}
SAMPLER_KEYS = {"chains", "warmup", "samples", "target_accept", "max_treedepth", "max_energy_error", "workers"}
MODEL_KEYS = {"p_max", "a", "a1", "a2", "sigma_scale_diag", "sigma_scale_offdiag", "sigma_dof"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_overrides(p):
    p.add_argument("--seed", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--p-max", dest="p_max", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--time-step", dest="time_step", type=float)
    p.add_argument("--time-unit", dest="time_unit")
    p.add_argument("--workers", type=int)


def build_parser():
    parser = _Parser(prog="varorder", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a stationary VAR dataset")
    p.add_argument("--spec", help="JSON with m, p, n, seed, optional sigma/start/burn_in")
    p.add_argument("--m", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit", help="sample the posterior and write a run directory")
    p.add_argument("data", nargs="?", help="input CSV (overrides config 'data')")
    p.add_argument("--config", help="RunConfig JSON")
    p.add_argument("--out", help="run directory (overrides config 'out')")
    _add_overrides(p)

    p = sub.add_parser("analyze", help="recompute analyses from stored draws")
    p.add_argument("run_dir")
    p.add_argument("--beta", type=float)
    p.add_argument("--granger", dest="granger", action="store_true", default=None)
    p.add_argument("--no-granger", dest="granger", action="store_false")
    p.add_argument("--decompose", dest="decompose", action="store_true", default=None)
    p.add_argument("--no-decompose", dest="decompose", action="store_false")
    p.add_argument("--refit", dest="granger_refit", action="store_true", default=None,
                   help="refit at the modal order before conditional analyses")
    p.add_argument("--k", type=int)
    p.add_argument("--regions", help="region metadata CSV (name,label,x,y)")

    p = sub.add_parser("study", help="simulation study over a grid of (m, p, n)")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("diagnose", help="recompute convergence diagnostics for a run")
    p.add_argument("run_dir")
    return parser


def _cmd_simulate(args):
    from .io import read_json, write_data_csv, write_json
    from .sim import SimSpec, model_to_json, simulate_spec

    spec = read_json(args.spec) if args.spec else {}
    if not isinstance(spec, dict):
        raise UsageError("simulation spec must be a JSON object")
    for key in ("m", "p", "n", "seed"):
        if getattr(args, key) is not None:
            spec[key] = getattr(args, key)
    allowed = {f.name for f in dataclasses.fields(SimSpec)}
    unknown = sorted(set(spec) - allowed)
    if unknown:
        raise UsageError(f"unknown simulation keys: {', '.join(unknown)}")
    missing = [k for k in ("m", "p", "n") if k not in spec]
    if missing:
        raise UsageError(f"simulation spec lacks {', '.join(missing)}")
    sim = SimSpec(**spec)
    A, model, data = simulate_spec(sim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.names = [f"y{i + 1}" for i in range(sim.m)]
    write_data_csv(out / "data.csv", data)
    write_json(out / "truth.json", {"spec": dataclasses.asdict(sim), **model_to_json(A, model)})
    print(f"wrote {out / 'data.csv'} ({sim.n} x {sim.m}) and truth.json")
    return EXIT_OK


def _resolve_run_config(args):
    from .io import read_json
    from .pipeline import RunConfig

    base = read_json(args.config) if args.config else {}
    if not isinstance(base, dict):
        raise UsageError("config must be a JSON object")
    cfg = RunConfig.from_dict(base)
    overrides = {}
    if args.data:
        overrides["data"] = args.data
    if args.out:
        overrides["out"] = args.out
    for key in ("seed", "chains", "warmup", "samples", "p_max", "beta", "time_step", "time_unit", "workers"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    if not cfg.out:
        raise UsageError("no output directory: pass --out or set 'out' in the config")
    return cfg


def _cmd_fit(args):
    from .pipeline import fit_run, load_data

    cfg = _resolve_run_config(args)
    data = load_data(cfg)
    res = fit_run(data, cfg, cfg.out)
    post = res["order"]
    print(f"modal order {post.mode} (probability {post.pmf[post.mode]:.3f}); threshold {post.threshold:.4f}")
    diag = res["diagnostics"]
    if diag is not None:
        print(f"max R-hat {diag.max_rhat():.4f}, min bulk ESS {diag.min_ess():.0f}, "
              f"divergences {diag.n_divergent}")
    print(f"outputs in {cfg.out}")
    return EXIT_OK


def _cmd_analyze(args):
    from .pipeline import RunConfig, analyze_run, write_manifest
    from .io import read_json

    run_dir = Path(args.run_dir)
    if not (run_dir / "config.json").exists():
        raise UsageError(f"{run_dir} is not a run directory (config.json missing)")
    res = analyze_run(run_dir, beta=args.beta, granger=args.granger, decompose=args.decompose, k=args.k,
                      regions=args.regions, granger_refit=args.granger_refit)
    cfg = RunConfig.from_dict(read_json(run_dir / "config.json"))
    write_manifest(run_dir, cfg, {"analysis": {"beta": res["order"].beta}})
    post = res["order"]
    print(f"modal order {post.mode} (probability {post.pmf[post.mode]:.3f}); threshold {post.threshold:.4f}")
    return EXIT_OK


def _cmd_diagnose(args):
    from .pipeline import diagnose_run

    run_dir = Path(args.run_dir)
    if not (run_dir / "config.json").exists():
        raise UsageError(f"{run_dir} is not a run directory (config.json missing)")
    diag = diagnose_run(run_dir)
    if diag is None:
        print("single chain: R-hat and ESS not computed")
        return EXIT_OK
    print(f"chains {diag.n_chains} x {diag.n_draws} draws")
    print(f"max R-hat {diag.max_rhat():.4f}; min bulk ESS {diag.min_ess():.0f}")
    print(f"divergences {diag.n_divergent}; max treedepth hits {diag.n_max_treedepth}")
    return EXIT_OK


def parse_study(cfg):
    """Grid of :class:`SimSpec`, sampler and model configs, and beta from a study JSON."""
    import itertools

    from .model import MgpHyperParams, ModelConfig, SigmaPrior
    from .nuts import SamplerConfig
    from .sim import SimSpec

    if not isinstance(cfg, dict):
        raise UsageError("study config must be a JSON object")
    unknown = sorted(set(cfg) - STUDY_KEYS)
    if unknown:
        raise UsageError(f"unknown study keys: {', '.join(unknown)}")
    seed = int(cfg.get("seed", 0))
    start = cfg.get("start", "exact")
    burn_in = int(cfg.get("burn_in", 0))
    if "grid" in cfg:
        grid = [SimSpec(**cell) for cell in cfg["grid"]]
    else:
        ms, ps, ns = cfg.get("m", [1]), cfg.get("p", [1]), cfg.get("n", [1000])
        ms, ps, ns = ([x] if isinstance(x, int) else list(x) for x in (ms, ps, ns))
        reps = int(cfg.get("replicates", 1))
        grid = []
        for m, p, n in itertools.product(ms, ps, ns):
            for r in range(reps):
                cell_seed = seed * 1_000_003 + len(grid)
                grid.append(SimSpec(m=m, p=p, n=n, seed=cell_seed % 2**63, start=start, burn_in=burn_in))
    s = cfg.get("sampler", {})
    bad = sorted(set(s) - SAMPLER_KEYS)
    if bad:
        raise UsageError(f"unknown sampler keys: {', '.join(bad)}")
    sampler = SamplerConfig(seed=seed, **s)
    mcfg = cfg.get("model", {})
    bad = sorted(set(mcfg) - MODEL_KEYS)
    if bad:
        raise UsageError(f"unknown model keys: {', '.join(bad)}")
    hyper = MgpHyperParams(a=mcfg.get("a", 6.0), a1=mcfg.get("a1", 2.5), a2=mcfg.get("a2", 3.0))

    def model_for(m):
        prior = SigmaPrior.default(m, diag=mcfg.get("sigma_scale_diag", 1.0),
                                   offdiag=mcfg.get("sigma_scale_offdiag", 0.0), dof=mcfg.get("sigma_dof"))
        return ModelConfig(p_max=int(mcfg.get("p_max", 8)), hyper=hyper, sigma_prior=prior)

    beta = float(cfg.get("beta", 0.99))
    if not 0 < beta < 1:
        raise UsageError("beta must lie in (0, 1)")
    return grid, sampler, model_for, beta


def _cmd_study(args):
    from .io import dumps_json, read_json, write_dict_csv, write_json
    from .sim import run_study, study_table

    raw = read_json(args.config)
    grid, sampler, model_for, beta = parse_study(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "study_config.json").write_text(dumps_json(raw), encoding="utf-8")
    results = run_study(grid, sampler, model_for, beta)
    for res in results:
        rec = dataclasses.asdict(res)
        rec.get("extra", {}).pop("traceback", None)
        write_json(out / f"cell_{res.index:04d}.json", rec)
        spec = res.spec
        status = f"mode {res.modal_order}" if res.ok else f"FAILED ({res.error})"
        print(f"cell {res.index}: m={spec['m']} p={spec['p']} n={spec['n']} -> {status}")
    write_dict_csv(out / "study.csv", study_table(results))
    failed = sum(not r.ok for r in results)
    if failed:
        print(f"{failed} of {len(results)} cells failed")
        return EXIT_PARTIAL
    return EXIT_OK


COMMANDS = {"simulate": _cmd_simulate, "fit": _cmd_fit, "analyze": _cmd_analyze, "study": _cmd_study,
            "diagnose": _cmd_diagnose}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, NumericalError, InitializationError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
