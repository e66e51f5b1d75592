"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 solver infeasibility,
3 simulation divergence (or a MATI search range without a transition).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import FadingModelError, JointConditional, channel_from_fading, induced_rate_chain
from .codesign import (
    OccupationMeasure,
    fading_sweep,
    fmt,
    occupation_from_policies,
    separation_baseline,
    solve_codesign,
    write_sweep_csv,
)
from .config import ConfigError, ExperimentConfig, dump_config, load_config, load_preset
from .environment import InfeasibleError, solve_control_lp
from .simulator import (
    RangeError,
    empirical_asas_check,
    mati_search,
    monte_carlo,
    run_trajectory,
    write_envelope_csv,
    write_trajectory_csv,
)
from .stability import lambda_bar_threshold_inf, lambda_bar_threshold_one, mati_report

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_DIVERGED = 0, 1, 2, 3
OUTPUT_ENV = "SDMC_OUTPUT_DIR"


class CommandFailed(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _vec(text):
    return np.array([float(v) for v in text.replace(",", " ").split()])


def _mat(text):
    return np.vstack([_vec(r) for r in text.split(";") if r.strip()])


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else load_preset(args.preset)
    if args.seed is not None:
        cfg.sim = replace(cfg.sim, seed=args.seed)
    return cfg


def _outdir(args, cfg) -> Path:
    d = args.out or os.environ.get(OUTPUT_ENV) or cfg.output_dir or "."
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _rate_chain(args, cfg):
    if getattr(args, "rate_matrix", None):
        return _mat(args.rate_matrix)
    cfg.require("channel", "mdp", "policies")
    X = occupation_from_policies(cfg.channel, cfg.mdp, cfg.policies.control, cfg.policies.power)
    return induced_rate_chain(cfg.channel, JointConditional(X.conditional()))


def _lambda_bar(args, cfg, key="stability"):
    if getattr(args, "lambda_bar", None) is not None:
        return args.lambda_bar
    if key == "codesign" and "lambda_bar" in cfg.codesign:
        return cfg.codesign["lambda_bar"]
    if cfg.lambda_bar is None:
        raise ConfigError("no lambda_bar given")
    return cfg.lambda_bar


def cmd_validate(args, cfg, out):
    for name in ("channel", "mdp", "stability"):
        if getattr(cfg, name) is not None:
            print(f"{name}: ok")
    if cfg.channel is not None:
        report = cfg.channel.validate()
        if not report.ok:
            raise CommandFailed(str(report), EXIT_INVALID)
    if cfg.stability is not None and cfg.channel is not None and len(cfg.stability.lambdas) != cfg.channel.n_rates:
        raise CommandFailed("lambdas do not match the number of rates", EXIT_INVALID)
    print("configuration valid")
    return []


def cmd_channel_from_fading(args, cfg, out):
    cfg.require("fading")
    try:
        ch = channel_from_fading(cfg.fading)
    except FadingModelError as exc:
        raise CommandFailed(str(exc), EXIT_INVALID) from exc
    path = out / "channel.csv"
    labels = [f"r{k + 1}" for k in range(ch.n_rates)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["current_rate", "env_state", "power"] + [f"p_next_{l}" for l in labels])
        for j in range(ch.n_rates):
            for s in range(ch.n_states):
                for p in range(ch.n_powers):
                    w.writerow([labels[j], ch.env_states[s], ch.powers[p]] + [fmt(v) for v in ch.column(j, s, p)])
    print(dump_config(ExperimentConfig(channel=ch)).split("[sim]")[0].strip())
    return [path]


def cmd_lambda_bar(args, cfg, out):
    cfg.require("stability")
    P = _rate_chain(args, cfg)
    print(f"rate chain: {np.round(P, 10).tolist()}")
    print(f"lambda_bar threshold (inf-norm): {lambda_bar_threshold_inf(cfg.stability, P):.10g}")
    print(f"lambda_bar threshold (1-norm):   {lambda_bar_threshold_one(cfg.stability, P):.10g}")
    return []


def cmd_mati(args, cfg, out):
    cfg.require("stability")
    lb = _lambda_bar(args, cfg)
    rep = mati_report(cfg.stability, lb, args.step, args.reference)
    print(cfg.stability.header())
    for k, v in rep.items():
        print(f"{k}: {v:.10g}")
    return []


def _write_measure(X: OccupationMeasure, channel, path):
    labels = [f"r{k + 1}" for k in range(channel.n_rates)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rate", "env_state", "power", "probability"])
        for r in range(channel.n_rates):
            for s in range(channel.n_states):
                for p in range(channel.n_powers):
                    w.writerow([labels[r], channel.env_states[s], channel.powers[p], fmt(X.table[r, s, p])])


def cmd_codesign(args, cfg, out):
    cfg.require("channel", "costs", "stability")
    opts = cfg.codesign
    lb = _lambda_bar(args, cfg, "codesign")
    method = args.method or opts.get("method", "qcqp")
    res = solve_codesign(cfg.channel, cfg.costs, cfg.stability, lb, method=method,
                         bound_form=args.bound_form or opts.get("bound_form", "proof"),
                         form=opts.get("form", "conditional"), mdp=None if args.no_env else cfg.mdp,
                         grid_resolution=opts.get("grid_resolution", 0.02), n_random=opts.get("n_random", 8),
                         seed=cfg.sim.seed)
    print(f"method: {res.method}  status: {res.status.value}")
    for note in res.notes:
        print(f"note: {note}")
    if not res.feasible:
        raise CommandFailed(f"co-design infeasible at lambda_bar = {lb}", EXIT_INFEASIBLE)
    path = out / f"measure_{method}.csv"
    _write_measure(res.measure, cfg.channel, path)
    pol = res.policies
    print(f"cost: {res.cost:.10g}")
    print(f"max residual: {res.solution.max_residual():.3g}")
    print(f"P(p|r): {np.round(pol.power, 10).tolist()}")
    print(f"P(s): {np.round(pol.env_distribution, 10).tolist()}")
    if pol.zero_mass_rates:
        print(f"warning: zero-mass rates {pol.zero_mass_rates} given a uniform power policy")
    if pol.control is not None:
        print(f"P(a|s): {np.round(pol.control.table, 10).tolist()}")
    return [path]


def cmd_control_lp(args, cfg, out):
    cfg.require("mdp")
    try:
        res = solve_control_lp(cfg.mdp, _vec(args.target))
    except InfeasibleError as exc:
        raise CommandFailed(str(exc), EXIT_INFEASIBLE) from exc
    print(f"cost: {res.cost:.10g}")
    print(f"fixed-point residual: {res.residual:.3g}")
    for s, row in zip(cfg.mdp.states, res.policy.table):
        print(f"P(a|{s}): " + ", ".join(f"{a}={fmt(v)}" for a, v in zip(cfg.mdp.actions, row)))
    return []


def cmd_simulate(args, cfg, out):
    cfg.require("plant", "channel", "mdp", "policies")
    sim = cfg.sim
    kw = {k: v for k, v in (("runs", args.runs), ("T", args.T), ("horizon", args.horizon)) if v is not None}
    sim = replace(sim, **kw)
    traj = run_trajectory(cfg.plant, cfg.channel, cfg.mdp, cfg.policies, sim.T, sim.horizon, sim.seed,
                          costs=cfg.costs, dt=sim.dt, stride=sim.stride, perturbation=sim.perturbation,
                          blowup_factor=sim.blowup_factor)
    env = monte_carlo(cfg.plant, cfg.channel, cfg.mdp, cfg.policies, sim, costs=cfg.costs)
    paths = [out / "trajectory.csv", out / "envelope.csv"]
    write_trajectory_csv(traj, paths[0])
    write_envelope_csv(env, paths[1])
    x0 = float(np.max(np.abs(cfg.plant.x0)))
    tail = sim.tail_window
    if sim.horizon <= tail:
        tail = sim.horizon / 2
        print(f"note: horizon shorter than the tail window; using a {tail:g} s tail")
    verdict = empirical_asas_check(env, sim.epsilon * x0, tail)
    print(f"runs: {env.runs}  diverged: {env.diverged}  escapes: {int(env.escapes.sum())}")
    print(f"terminal max |x|: {env.max_norm[-1]:.6g}")
    print(f"verdict: {verdict}")
    if env.diverged:
        for path in paths:
            path.unlink(missing_ok=True)
        raise CommandFailed(f"{env.diverged} run(s) diverged", EXIT_DIVERGED)
    return paths


def cmd_mati_search(args, cfg, out):
    cfg.require("plant", "channel", "mdp", "policies")
    s = cfg.search
    sim = replace(cfg.sim, horizon=s.get("horizon", cfg.sim.horizon))
    channel = cfg.channel
    from .channel import SdMcChannel
    from .environment import ControlPolicy, EnvMdp
    from .simulator import Policies
    mdp, pol = cfg.mdp, cfg.policies
    if args.rate_matrix:
        channel = SdMcChannel.from_rate_matrix(cfg.channel.rates, _mat(args.rate_matrix))
        mdp = EnvMdp(np.ones((1, 1, 1)), np.zeros((1, 1)))
        pol = Policies(ControlPolicy(np.ones((1, 1))), np.ones((channel.n_rates, 1)))
    try:
        res = mati_search(cfg.plant, channel, mdp, pol, sim, args.t_low or s.get("t_low", 0.01),
                          args.t_high or s.get("t_high", 0.2), runs=args.runs or int(s.get("runs", sim.runs)),
                          rel_tol=s.get("rel_tol", 1e-3))
    except RangeError as exc:
        raise CommandFailed(str(exc), EXIT_DIVERGED) from exc
    print(f"empirical MATI: {res.mati:.10g}")
    print(f"bracket: [{res.stable_T:.10g}, {res.unstable_T:.10g}]")
    return []


def cmd_sweep_fading(args, cfg, out):
    cfg.require("channel", "costs", "stability", "mdp")
    sw = cfg.sweep
    a = args.from_ if args.from_ is not None else sw.get("from", 0.0)
    b = args.to if args.to is not None else sw.get("to", 0.55)
    h = args.step if args.step is not None else sw.get("step", 0.05)
    if not h > 0 or b < a:
        raise CommandFailed("need step > 0 and to >= from", EXIT_INVALID)
    n = int(np.floor((b - a) / h + 1e-9)) + 1
    levels = [round(a + k * h, 12) for k in range(n)]
    opts = cfg.codesign
    rows = fading_sweep(cfg.channel, cfg.costs, cfg.stability, _lambda_bar(args, cfg, "codesign"), cfg.mdp, levels,
                        bound_form=opts.get("bound_form", "proof"), form=opts.get("form", "conditional"),
                        seed=cfg.sim.seed, workers=args.workers or opts.get("workers", 1))
    path = out / "sweep_fading.csv"
    write_sweep_csv(rows, path)
    print(path.read_text(encoding="utf-8").rstrip())
    return [path]


def cmd_compare(args, cfg, out):
    cfg.require("channel", "costs", "stability", "mdp")
    opts = cfg.codesign
    lb = _lambda_bar(args, cfg, "codesign")
    kw = dict(bound_form=opts.get("bound_form", "proof"), form=opts.get("form", "conditional"))
    sep = separation_baseline(cfg.channel, cfg.costs, cfg.stability, lb, cfg.mdp, seed=cfg.sim.seed, **kw)
    starts = []
    if sep.feasible:
        Y = sep.policies.env_distribution[:, None] * sep.policies.control.table
        starts.append(np.concatenate([sep.measure.vector(), Y.reshape(-1)]))
    co = solve_codesign(cfg.channel, cfg.costs, cfg.stability, lb, mdp=cfg.mdp, starts=starts, seed=cfg.sim.seed, **kw)
    lp = solve_codesign(cfg.channel, cfg.costs, cfg.stability, lb, method="lp", mdp=cfg.mdp, **kw)
    path = out / "compare.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["design", "cost", "feasible"])
        for name, r in (("codesign_qcqp", co), ("codesign_lp", lp), ("separation", sep)):
            w.writerow([name, fmt(r.cost), int(r.feasible)])
            print(f"{name:15s} {fmt(r.cost):>14s}  {'feasible' if r.feasible else 'infeasible'}")
    if not co.feasible:
        raise CommandFailed("co-design infeasible", EXIT_INFEASIBLE)
    return [path]


COMMANDS = {
    "validate": cmd_validate,
    "channel-from-fading": cmd_channel_from_fading,
    "lambda-bar": cmd_lambda_bar,
    "mati": cmd_mati,
    "codesign": cmd_codesign,
    "control-lp": cmd_control_lp,
    "simulate": cmd_simulate,
    "mati-search": cmd_mati_search,
    "sweep-fading": cmd_sweep_fading,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", help="INI configuration file")
    src.add_argument("--preset", default="batch_reactor_sV", help="shipped preset name")
    common.add_argument("--seed", type=int, help="override every configured seed")
    common.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or the config)")

    parser = argparse.ArgumentParser(prog="sdmc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="run every validator")
    sub.add_parser("channel-from-fading", parents=[common], help="estimate a channel from a fading model")
    p = sub.add_parser("lambda-bar", parents=[common], help="contraction thresholds")
    p.add_argument("--rate-matrix", help="rate chain rows separated by ';' (default: induced by [policy])")
    p = sub.add_parser("mati", parents=[common], help="closed-form MATI and the ODE oracle")
    p.add_argument("--lambda-bar", type=float)
    p.add_argument("--step", type=float, help="oracle step (s)")
    p.add_argument("--reference", type=float, help="reference value to report against")
    p = sub.add_parser("codesign", parents=[common], help="solve the co-design program")
    p.add_argument("--method", choices=["qcqp", "lp", "local", "grid"])
    p.add_argument("--lambda-bar", type=float)
    p.add_argument("--bound-form", choices=["proof", "theorem"])
    p.add_argument("--no-env", action="store_true", help="drop the environment realizability constraints")
    p = sub.add_parser("control-lp", parents=[common], help="policy realizing a state distribution")
    p.add_argument("--target", required=True, help="target distribution, e.g. '0.5 0.5'")
    p = sub.add_parser("simulate", parents=[common], help="trajectory and envelope CSVs")
    p.add_argument("--runs", type=int)
    p.add_argument("--T", type=float)
    p.add_argument("--horizon", type=float)
    p = sub.add_parser("mati-search", parents=[common], help="empirical necessary MATI")
    p.add_argument("--t-low", type=float)
    p.add_argument("--t-high", type=float)
    p.add_argument("--runs", type=int)
    p.add_argument("--rate-matrix", help="use a state-independent rate chain instead of the configured channel")
    p = sub.add_parser("sweep-fading", parents=[common], help="co-design vs separation across fading levels")
    p.add_argument("--from", dest="from_", type=float)
    p.add_argument("--to", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--lambda-bar", type=float)
    p.add_argument("--workers", type=int)
    p = sub.add_parser("compare", parents=[common], help="co-design vs separation table")
    p.add_argument("--lambda-bar", type=float)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        out = _outdir(args, cfg)
        COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CommandFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
