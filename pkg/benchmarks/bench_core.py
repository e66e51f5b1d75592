"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_core.py [--runs N] [--steps N] [--repeat K]
"""

import argparse
import time

import numpy as np

from sdmc._core import _pycore
from sdmc.config import load_preset
from sdmc.simulator import _Kernel, _run_inputs

try:
    from sdmc._core import _ccore
except ImportError:  # extension not built
    _ccore = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=200)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--chain-steps", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    cfg = load_preset()
    k = _Kernel(cfg.plant, cfg.channel, cfg.mdp, cfg.policies, cfg.costs, cfg.sim.T, cfg.sim.T / 100)
    x0, U = _run_inputs(cfg.plant, list(range(args.runs)), args.steps, cfg.sim.perturbation)
    n = args.runs
    batch = (k.Phi, k.xi_gain, x0, np.zeros_like(x0), np.full(n, cfg.plant.xi0), np.zeros(n, dtype=np.int64),
             np.full(n, k.s0, dtype=np.int64), k.bits, k.cdf_P, k.cdf_q, k.cdf_ctrl, k.cdf_pow, k.cost, U,
             1e6, 1e-300)
    Uc = np.random.default_rng(0).random((args.chain_steps, 4))
    chain = (k.cdf_P, k.cdf_q, k.cdf_ctrl, k.cdf_pow, k.cost, 0, k.s0, Uc)
    phi = (17.887, 26.5415, 0.64, 1e-7, 10**9)

    cases = [
        (f"simulate_batch ({args.runs} runs x {args.steps} steps)", "simulate_batch", batch),
        (f"simulate_chain ({args.chain_steps} steps)", "simulate_chain", chain),
        ("phi_hitting_time (step 1e-7)", "phi_hitting_time", phi),
    ]
    print(f"{'kernel':45s} {'python (s)':>11s} {'cython (s)':>11s} {'speedup':>8s}")
    for label, name, a in cases:
        tp = best_of(lambda: getattr(_pycore, name)(*a), args.repeat)
        if _ccore is None:
            print(f"{label:45s} {tp:11.4f} {'n/a':>11s} {'n/a':>8s}")
            continue
        tc = best_of(lambda: getattr(_ccore, name)(*a), args.repeat)
        print(f"{label:45s} {tp:11.4f} {tc:11.4f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
