"""Command-line frontend.

    iwlions verify --config PATH [--out DIR] [--seed U64] [--threads N]
    iwlions converge --config PATH [--out DIR] [--seed U64] [--threads N]
    iwlions oracle {projection,classic,full,conditional,ablation} [--seed U64] [--threads N]
    iwlions project-deriv --config PATH [--index J] [--seed U64]

Exit status: 0 all checks pass, 1 a tolerance check failed, 2 configuration
error, 3 runtime error.  ``--inject-fault drop-term:<name>`` zeroes one term
of every expansion, a negative control for the failure path.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys

import numpy as np

from .checks import evaluate_checks
from .config import load_config
from .errors import ConfigError
from .harness import convergence_study, run_replications, write_run
from .oracles import SUITES, SuiteContext, run_suite

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_FAIL", "EXIT_CONFIG", "EXIT_RUNTIME"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
_LADDER_CHECKS = ("slope_M", "slope_N", "monotone_N", "chaos_corrected_slope_M")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"config error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iwlions", description="Monte Carlo checks of chain rules for random fields on measure flows.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="TOML experiment config")
        sp.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
        sp.add_argument("--threads", type=_positive, default=os.cpu_count() or 1,
                        help="worker threads; results do not depend on it")
        sp.add_argument("--inject-fault", default="", metavar="drop-term:NAME",
                        help="negative control: zero one right-hand-side term")

    for name, text in (("verify", "run the configured theorem check"),
                       ("converge", "run the configured (M, N) ladder and fit slopes")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--out", default="runs", help="root directory for run folders")

    sp = sub.add_parser("oracle", help="run a built-in oracle suite")
    sp.add_argument("suite", help=f"one of {', '.join(SUITES)}")
    common(sp, config=False)

    sp = sub.add_parser("project-deriv", help="numeric Lions derivative of the configured functional")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=_u64)
    sp.add_argument("--index", type=int, default=0, help="particle index j (0-based)")
    sp.add_argument("--N", type=_positive, help="cloud size (default: largest N of the ladder)")
    return p


def _overrides(cfg, args):
    kw = {}
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    if getattr(args, "inject_fault", ""):
        kw["fault"] = args.inject_fault
    return cfg.with_overrides(**kw) if kw else cfg


def _print_checks(checks):
    for c in checks:
        print(c.line())


def _verdict(checks):
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


def _now():
    return _dt.datetime.now().isoformat(timespec="seconds")


def _cmd_run(args, argv, ladder: bool):
    cfg = _overrides(load_config(args.config), args)
    started = _now()
    needs_ladder = ladder or any(k in cfg.tolerances for k in _LADDER_CHECKS)
    table = None
    if needs_ladder:
        table = convergence_study(cfg, runner=lambda c, M, N, f: run_replications(c, M, N, f,
                                                                                  threads=args.threads))["main"]
        rows = table.rows
        st = table.row(cfg.M[-1], cfg.N[-1] if cfg.needs_cloud else 1)
    else:
        st = run_replications(cfg, cfg.M[-1], cfg.N[-1] if cfg.needs_cloud else 1, threads=args.threads)["main"]
        rows = [st]
    checks = evaluate_checks(cfg.tolerances, st, table)
    warnings = list(table.warnings) if table is not None else []
    warnings += [f"{c.name}: {c.detail}" for c in checks if c.skipped]
    report = {
        "command": args.command,
        "theorem": cfg.theorem,
        "rows": [r.as_row() for r in rows],
        "slopes": {k: (getattr(table, k).as_dict() if table is not None and getattr(table, k) else None)
                   for k in ("slope_M", "slope_N", "corrected_slope_M")},
        "checks": [c.as_dict() for c in checks],
        "warnings": warnings,
        "passed": all(c.passed for c in checks),
    }
    extra = {"started": started, "finished": _now(), "checks": report["checks"], "warnings": warnings,
             "passed": report["passed"]}
    path = write_run(args.out, cfg, rows, report, table if ladder else None, argv, args.threads, extra)
    _print_checks(checks)
    for w in warnings:
        print(f"warning: {w}")
    print(f"run directory: {path}")
    return _verdict(checks)


def _cmd_oracle(args):
    if args.suite not in SUITES:
        print(f"config error: unknown oracle suite {args.suite!r}; expected one of {', '.join(SUITES)}",
              file=sys.stderr)
        return EXIT_CONFIG
    ctx = SuiteContext(seed=args.seed, fault=args.inject_fault, threads=args.threads)
    checks = run_suite(args.suite, ctx)
    _print_checks(checks)
    return _verdict(checks)


def _cmd_project_deriv(args):
    from .core import SeedPolicy
    from .lions import numeric_lions_derivative

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    F = cfg.build_field().F
    N = args.N or cfg.N[-1]
    if not 0 <= args.index < N:
        raise ConfigError(f"--index must lie in 0..{N - 1}", key="index")
    pts = cfg.sampler("cloud", "y0").sample_particles(N, cfg.d, SeedPolicy(cfg.seed), 0)
    x = cfg.sampler("process", "x0").sample(cfg.d) if not F.x_free else None
    numeric = numeric_lions_derivative(F, pts, args.index, x=x)
    exact = F.dmu(pts, pts[args.index][None], x)[0]
    print(json.dumps({"index": args.index, "N": N, "point": pts[args.index].tolist(),
                      "numeric": np.atleast_1d(numeric).tolist(), "closed_form": np.atleast_1d(exact).tolist(),
                      "abs_error": float(np.max(np.abs(numeric - exact)))}))
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help exits 0, usage errors exit 2
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        if args.command == "verify":
            return _cmd_run(args, argv, ladder=False)
        if args.command == "converge":
            return _cmd_run(args, argv, ladder=True)
        if args.command == "oracle":
            return _cmd_oracle(args)
        return _cmd_project_deriv(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # any other failure is a runtime error by contract
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
