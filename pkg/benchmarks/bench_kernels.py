"""Compare the numba kernels against the plain numpy path.

Each backend runs in its own interpreter because ``VARORDER_JIT`` is read at
import time.

    python benchmarks/bench_kernels.py --sizes 2x3 4x4 8x2
"""
import argparse
import json
import os
import subprocess
import sys
import timeit


def measure(m, p_max, n, repeat):
    import numpy as np

    from varorder._jit import describe
    from varorder.model import Dataset, LogPosterior, ModelConfig

    rng = np.random.default_rng(0)
    lp = LogPosterior(Dataset(rng.standard_normal((n, m))), ModelConfig(p_max=p_max))
    theta = rng.uniform(-0.5, 0.5, lp.dim)
    lp.value_and_grad(theta)  # compile / warm caches
    out = {"backend": describe(), "m": m, "p_max": p_max, "n": n, "dim": lp.dim}
    fns = (("value", lambda: lp(theta)), ("value_and_grad", lambda: lp.value_and_grad(theta)),
           ("tape", lambda: lp.value_and_grad_tape(theta)))
    for name, fn in fns:
        t = timeit.Timer(fn)
        loops, _ = t.autorange()
        best = min(t.repeat(repeat, loops)) / loops
        out[name + "_ms"] = 1e3 * best
    return out


def run_child(level, m, p_max, n, repeat):
    env = dict(os.environ, VARORDER_JIT=str(level))
    cmd = [sys.executable, __file__, "--child", f"{m}x{p_max}", "--n", str(n), "--repeat", str(repeat)]
    r = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(r.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", nargs="+", default=["2x3", "3x6", "8x2"], help="MxP_MAX pairs")
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--child", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)

    if args.child:
        m, p = map(int, args.child.split("x"))
        print(json.dumps(measure(m, p, args.n, args.repeat)))
        return

    # value: reference numpy expression; grad: kernel value and gradient; tape: reverse-mode reference gradient
    print(f"{'m':>3} {'p_max':>5} {'dim':>5} {'backend':>8} {'value ms':>10} {'grad ms':>10} {'tape ms':>10} "
          f"{'speedup':>8}")
    for size in args.sizes:
        m, p = map(int, size.split("x"))
        fast = run_child(2, m, p, args.n, args.repeat)
        slow = run_child(0, m, p, args.n, args.repeat)
        for res in (fast, slow):
            ratio = slow["value_and_grad_ms"] / res["value_and_grad_ms"]
            print(f"{m:>3} {p:>5} {res['dim']:>5} {res['backend']:>8} {res['value_ms']:>10.3f} "
                  f"{res['value_and_grad_ms']:>10.3f} {res['tape_ms']:>10.3f} {ratio:>7.1f}x")


if __name__ == "__main__":
    main()
