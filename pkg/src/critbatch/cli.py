"""Command-line entry point: ``critbatch {sweep,bounds,fit,validate}``.

Every run writes into a fresh ``<command>-YYYYmmdd-HHMMSS`` directory under
the output root (``--out``, then ``output.dir``, then ``$CRITBATCH_OUT``,
then ``./runs``), starting with the resolved configuration.

Exit codes: 0 success, 2 configuration error, 3 failed assertion,
4 runtime fault.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import bounds as bd
from . import diagnostics as dg
from . import sweep as sw
from .config import DEFAULT_CONFIG, ConfigError, parse_config
from .optimizer import DivergenceError, HyperParams, StopCondition, fmt, get_rule, run, RULE_NAMES
from .oracle import estimate_oracle_stats, make_problem, make_rng
from .plots import emit_plots

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT, EXIT_RUNTIME = 0, 2, 3, 4
ENV_OUT = "CRITBATCH_OUT"
PATHWISE_TOL = 1e-12
# stream tags, kept apart from the (batch, seed) keys sweeps use
TAG_INIT, TAG_BOUNDS, TAG_STATS, TAG_VALIDATE = 10**6, 10**6 + 1, 10**6 + 2, 10**6 + 3


class AssertionFailure(RuntimeError):
    pass


def build_parser():
    parser = argparse.ArgumentParser(prog="critbatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("sweep", "measure steps-to-threshold and K*b across batch sizes"),
        ("bounds", "evaluate the closed-form step bounds and critical batch sizes"),
        ("fit", "fit K(b) = a b / (b - b0) to a sweep CSV"),
        ("validate", "check the per-step identity and bounds on short runs of every rule"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="configuration file (default: built-in)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key; repeatable")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output root directory")
        if name == "sweep":
            p.add_argument("--workers", type=int, help="worker processes")
        if name == "fit":
            p.add_argument("--input", help="sweep records CSV")
        if name == "validate":
            p.add_argument("--steps", type=int, help="steps per rule")
            # test hook: perturbs one recorded iterate so the identity check must fail
            p.add_argument("--corrupt", type=int, metavar="STEP", help=argparse.SUPPRESS)
    return parser


def resolve_config(args):
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = DEFAULT_CONFIG
    overrides = {}
    errors = []
    for item in args.set:
        if "=" not in item:
            errors.append(f"--set expects KEY=VALUE, got {item!r}")
            continue
        key, value = (s.strip() for s in item.split("=", 1))
        overrides[key] = value
    flags = {"seed": "master_seed", "workers": "workers", "steps": "steps",
             "input": "input", "out": "dir", "corrupt": "corrupt_step"}
    for flag, key in flags.items():
        value = getattr(args, flag, None)
        if value is not None:
            # flag strings are already typed; quote them so they parse verbatim
            overrides[key] = repr(value) if isinstance(value, str) else value
    try:
        cfg = parse_config(text, args.command, overrides)
    except ConfigError as exc:
        raise ConfigError(errors + exc.errors) from None
    if errors:
        raise ConfigError(errors)
    return cfg


def make_run_dir(cfg, command):
    root = cfg["output.dir"] or os.environ.get(ENV_OUT) or "runs"
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = os.path.join(root, f"{command}-{stamp}")
    path, n = base, 1
    while os.path.exists(path):
        path = f"{base}-{n}"
        n += 1
    os.makedirs(path)
    return path


def write(run_dir, name, text):
    path = os.path.join(run_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def problem_from(cfg):
    p = cfg.section("problem")
    return make_problem(p["kind"], p["dimension"], p["noise_variance"],
                        sample_count=p["samples"], hidden=p["hidden"], data_seed=p["data_seed"])


def start_point(cfg, problem):
    if problem.sample_count:
        return problem.init_params(make_rng(cfg["sweep.master_seed"], TAG_INIT))
    return np.full(problem.dimension, cfg["problem.init"])


def hyper_from(cfg):
    o = cfg.section("optimizer")
    return HyperParams(o["alpha"], o["beta"], o["gamma"], o["eta"], o["zeta"], o["epsilon_floor"])


def rule_from(cfg, name=None):
    return get_rule(name or cfg["optimizer.rule"], cfg["optimizer.bound_scale"])


def kv_block(pairs):
    lines = []
    for key, value in pairs:
        if isinstance(value, float):
            value = fmt(value)
        lines.append(f"{key} = {'' if value is None else value}")
    return "\n".join(lines) + "\n"


def cmd_sweep(cfg, run_dir, out):
    s = cfg.section("sweep")
    problem = problem_from(cfg)
    records = sw.sfo_sweep(
        problem, rule_from(cfg), hyper_from(cfg), s["batches"], s["tau"],
        budget=s["budget_epochs"], seeds=s["seeds"], theta0=start_point(cfg, problem),
        epoch_steps=s["epoch_steps"], master_seed=s["master_seed"], workers=s["workers"],
        replace=s["sampling"] == "with",
    )
    write(run_dir, "records.csv", sw.records_csv(records, wall_time=s["record_wall_time"]))
    rows = sw.summarize(records)
    write(run_dir, "summary.csv", sw.summary_csv(rows))

    info = [("records", len(records)), ("ok", sum(r.ok for r in records))]
    critical = None
    try:
        critical = sw.estimate_critical_batch(records)
        info += [("critical_batch", critical[0]), ("critical_sfo", float(critical[1]))]
        info.append(("scaling_end", sw.detect_perfect_scaling(records)))
    except sw.NoDataError as exc:
        info.append(("note", str(exc)))
    try:
        fit = sw.fit_rational(records)
        info += [("fit_a", fit.a_hat), ("fit_b0", fit.b_hat), ("fit_critical_batch", fit.critical_batch)]
    except sw.FitError as exc:
        info.append(("fit_note", str(exc)))
    write(run_dir, "sweep.txt", kv_block(info))
    if any(r.K_median is not None for r in rows):
        emit_plots(run_dir, summary=rows, critical=critical)
    print(sw.summary_csv(rows), end="", file=out)
    print(kv_block(info), end="", file=out)
    return EXIT_OK


def constants_from(cfg, run_dir):
    """Explicit A..G when all are given, else empirical ones from a trajectory."""
    c = cfg.section("bounds")
    names = "ABCDEFG"
    given = [n for n in names if c[n] is not None]
    if len(given) == len(names):
        return bd.BoundConstants(*(c[n] for n in names), eps=c["eps"], delta=c["delta"]), []
    if given:
        raise ConfigError([f"bounds: either give all of A..G or none, got only {', '.join(given)}"])

    problem = problem_from(cfg)
    hyper = rule_from(cfg).effective(hyper_from(cfg))
    traj = run(problem, hyper, rule_from(cfg), c["bound_batch"],
               StopCondition(max_steps=c["trajectory_steps"]),
               theta0=start_point(cfg, problem), rng=make_rng(cfg["sweep.master_seed"], TAG_BOUNDS))
    stats = estimate_oracle_stats(problem, traj, samples=c["stats_samples"],
                                  rng=make_rng(cfg["sweep.master_seed"], TAG_STATS))
    if stats.dist_hat is None:
        raise ValueError("empirical constants need a reference minimizer; supply A..G explicitly")
    lower = bd.LowerBoundInputs(hyper.alpha, hyper.beta, hyper.gamma, problem.dimension,
                                stats.dist_hat, stats.h_cap, stats.sigma2_hat, stats.p2_hat,
                                stats.h0_star)
    upper = bd.UpperBoundInputs(hyper.alpha, hyper.beta, hyper.gamma, stats.x_hat or 0.0,
                                stats.sigma2_hat, stats.p2_hat, stats.c1_hat, stats.c2_hat)
    k = bd.BoundConstants.from_inputs(lower, upper, c["eps"], c["delta"])
    info = [("label", stats.label), ("sigma2_hat", stats.sigma2_hat), ("p2_hat", stats.p2_hat),
            ("h0_star", stats.h0_star), ("h_cap", stats.h_cap), ("c1_hat", stats.c1_hat),
            ("dist_hat", stats.dist_hat), ("c2_hat", stats.c2_hat), ("x_hat", stats.x_hat)]
    return k, info


def cmd_bounds(cfg, run_dir, out):
    c = cfg.section("bounds")
    k, info = constants_from(cfg, run_dir)
    lines = [(n, getattr(k, n)) for n in "ABCDEFG"] + [("eps", k.eps), ("delta", k.delta)] + info

    lo = up = None
    if k.lower_valid:
        lo = bd.critical_batch_lower(k)
        lines += [("b_lower", lo.b), ("sfo_lower_min", lo.sfo)]
        if not lo.informative:
            lines.append(("lower_note", lo.reason))
    else:
        lines.append(("lower_note", "eps^2 <= C + D: lower curve undefined"))
    up = bd.critical_batch_upper(k)
    lines += [("b_upper", up.b), ("sfo_upper_min", up.sfo)]
    if not up.informative:
        lines.append(("upper_note", up.reason))
    if lo is not None and lo.b and up.b:
        lines.append(("relative_gap", abs(lo.b - up.b) / lo.b))
    try:
        r1, r2 = bd.fit_condition_residuals(k)
        lines += [("fit_residual_b", r1), ("fit_residual_sfo", r2)]
    except bd.InvalidConstantsError as exc:
        lines.append(("fit_note", str(exc)))

    grid = np.geomspace(c["grid_min"], c["grid_max"], c["grid_points"])
    rows = bd.curve_table(k, [float(b) for b in grid])
    write(run_dir, "curves.csv", bd.curve_csv(rows))
    write(run_dir, "constants.txt", kv_block(lines))
    if any(r.k_lower is not None or r.k_upper is not None for r in rows):
        emit_plots(run_dir, curves=rows)
    print(kv_block(lines), end="", file=out)
    return EXIT_OK


def cmd_fit(cfg, run_dir, out):
    path = cfg["fit.input"]
    if not path:
        raise ConfigError(["fit needs an input CSV (--input or fit.input)"])
    with open(path, encoding="utf-8") as fh:
        records = sw.read_records_csv(fh.read())
    fit = sw.fit_rational(records)
    b, sfo = sw.estimate_critical_batch(records)
    lines = [("a_hat", fit.a_hat), ("b_hat", fit.b_hat), ("c_hat", fit.c_hat),
             ("asymptote", fit.asymptote), ("fit_critical_batch", fit.critical_batch),
             ("residual_norm", fit.residual_norm), ("measured_critical_batch", b),
             ("measured_min_sfo", float(sfo))]
    write(run_dir, "fit.txt", kv_block(lines))
    print(kv_block(lines), end="", file=out)
    return EXIT_OK


def cmd_validate(cfg, run_dir, out):
    v = cfg.section("validate")
    if v["steps"] == 0:
        write(run_dir, "report.txt", "")
        return EXIT_OK
    problem = problem_from(cfg)
    theta0 = start_point(cfg, problem)
    report, failures = [], []
    for i, name in enumerate(RULE_NAMES):
        rule = rule_from(cfg, name)
        hyper = rule.effective(hyper_from(cfg))
        traj = run(problem, hyper, rule, v["batch"], StopCondition(max_steps=v["steps"]),
                   theta0=theta0, rng=make_rng(cfg["sweep.master_seed"], TAG_VALIDATE, i))
        if 0 <= v["corrupt_step"] < traj.steps:
            traj.thetas[v["corrupt_step"] + 1] += 1.0
        ident = dg.pathwise_identity_residuals(traj, problem.reference)
        excess = dg.direction_bound_excess(traj)
        stats = estimate_oracle_stats(problem, traj, samples=200,
                                      rng=make_rng(cfg["sweep.master_seed"], TAG_STATS, i))
        mom = dg.momentum_bound_check(traj, stats, v["batch"])
        audit = dg.assumption_audit(traj, stats, problem.reference)

        report += [
            f"[{name}]",
            f"identity_max_scaled = {fmt(ident.max_scaled)}",
            f"identity_worst_step = {ident.worst_step}",
            f"direction_excess_max = {fmt(excess.max())}",
            f"m_avg = {fmt(mom.m_avg)}",
            f"m_bound = {fmt(mom.m_bound)}",
            f"d_avg = {fmt(mom.d_avg)}",
            f"d_bound = {fmt(mom.d_bound)}",
        ]
        report += audit.as_text().splitlines()
        report.append("")
        if not ident.max_scaled < dg.IDENTITY_TOL:
            failures.append(f"{name}: identity residual {ident.max_scaled:.3g} at step {ident.worst_step}")
        if excess.max() > PATHWISE_TOL:
            failures.append(f"{name}: direction bound exceeded at step {int(np.argmax(excess))}")
        if rule.monotone and audit.a1_violations:
            failures.append(f"{name}: preconditioner decreased at step {audit.a1_first_violation}")
    write(run_dir, "report.txt", "\n".join(report))
    print("\n".join(report), file=out)
    if failures:
        raise AssertionFailure("; ".join(failures))
    return EXIT_OK


COMMANDS = {"sweep": cmd_sweep, "bounds": cmd_bounds, "fit": cmd_fit, "validate": cmd_validate}


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        run_dir = make_run_dir(cfg, args.command)
        write(run_dir, "config.resolved", cfg.resolved_text())
        code = COMMANDS[args.command](cfg, run_dir, out)
        print(f"run directory: {run_dir}", file=out)
        return code
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionFailure as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except (DivergenceError, ValueError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
