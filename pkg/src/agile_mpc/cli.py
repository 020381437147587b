"""Command-line interface: ``agile-mpc {run,compare,validate}``.

Exit codes: 0 success, 1 configuration error, 2 failure while running.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import harness
from .scenario import ScenarioError, load_scenario

SEED_ENV = "AGILE_MPC_SEED"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _positive(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _add_common(p):
    p.add_argument("--scenario", default=None, metavar="PATH",
                   help="scenario JSON file (default: bundled scenario)")
    p.add_argument("--runs", type=_positive, default=10, help="Monte-Carlo runs per controller (default 10)")
    p.add_argument("--seed", type=int, default=0,
                   help=f"base seed; run i uses seed + i (overridden by ${SEED_ENV})")
    p.add_argument("--out", default="results", metavar="DIR", help="output directory (default results/)")
    p.add_argument("--jobs", type=_positive, default=None,
                   help="worker processes (default: number of logical cores)")
    p.add_argument("--force", action="store_true", help="overwrite existing output files")
    p.add_argument("--noise", choices=("on", "off"), default="on", help="sensor noise (default on)")
    p.add_argument("--rate-source", choices=harness.RATE_SOURCES, default="attitude",
                   help="body rate fed to the controllers: estimated from attitude samples or raw gyro")
    p.add_argument("--nmpc-preview", choices=("on", "off"), default="on",
                   help="NMPC sees the commanded target motion over its horizon (default on)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="agile-mpc", description="MPC attitude tracking for agile Earth observation satellites.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="Monte-Carlo runs of one controller")
    run.add_argument("--controller", required=True, choices=harness.CONTROLLERS)
    _add_common(run)

    cmp_ = sub.add_parser("compare", help="run several controllers and tabulate the metrics")
    cmp_.add_argument("--controllers", default=",".join(harness.CONTROLLERS),
                      help="comma-separated list, at least two (default: all four)")
    _add_common(cmp_)

    val = sub.add_parser("validate", help="check a scenario file and print its schedule")
    val.add_argument("scenario_path", nargs="?", default=None, metavar="SCENARIO")
    val.add_argument("--scenario", dest="scenario_opt", default=None, metavar="PATH")
    return parser


def _seed(args) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return args.seed
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None


def _config(args, controller: str, scenario) -> harness.RunConfig:
    try:
        return harness.RunConfig(
            controller=controller, n_runs=args.runs, seed=_seed(args), scenario=args.scenario,
            duration=scenario.schedule.duration, noise=args.noise == "on",
            nmpc_preview=args.nmpc_preview == "on", rate_source=args.rate_source)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _check_free(paths, force: bool):
    taken = [p for p in paths if Path(p).exists()]
    if taken and not force:
        listed = "\n  ".join(str(p) for p in taken)
        raise ConfigError(f"refusing to overwrite existing files (use --force):\n  {listed}")


def _jobs(args) -> int:
    return args.jobs or os.cpu_count() or 1


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    cfg = _config(args, args.controller, scenario)
    _check_free(harness.existing_outputs(harness.output_paths(args.out, cfg)), args.force)
    ref = harness.build_reference(cfg, scenario, horizons=cfg.controller == "nmpc" and cfg.nmpc_preview)
    logs = harness.run_monte_carlo(cfg, _jobs(args), ref)
    doc = harness.write_outputs(args.out, cfg, logs, scenario)
    print(harness.format_summary(doc, harness.runtime_stats(logs)), end="")
    print(f"wrote {cfg.n_runs} CSV files and {harness.output_paths(args.out, cfg)['metrics']}")
    return EXIT_OK


def compare_paths(out_dir) -> dict:
    out = Path(out_dir)
    return {"metrics": out / "compare_metrics.json", "table": out / "compare_table.txt"}


def cmd_compare(args) -> int:
    names = [n.strip() for n in args.controllers.split(",") if n.strip()]
    unknown = [n for n in names if n not in harness.CONTROLLERS]
    if unknown:
        raise ConfigError(f"unknown controller(s): {', '.join(unknown)}; choose from {', '.join(harness.CONTROLLERS)}")
    if len(set(names)) < 2:
        raise ConfigError("compare needs at least two different controllers")
    names = list(dict.fromkeys(names))
    scenario = load_scenario(args.scenario)
    cfgs = [_config(args, n, scenario) for n in names]
    paths = compare_paths(args.out)
    _check_free(paths.values(), args.force)

    docs, runtime = {}, {}
    for cfg in cfgs:
        ref = harness.build_reference(cfg, scenario, horizons=cfg.controller == "nmpc" and cfg.nmpc_preview)
        logs = harness.run_monte_carlo(cfg, _jobs(args), ref)
        docs[cfg.controller] = harness.metrics_document(cfg, logs, scenario)
        runtime[cfg.controller] = harness.runtime_stats(logs)

    combined = {"scenario": scenario.name, "n_runs": args.runs, "base_seed": cfgs[0].seed,
                "noise": cfgs[0].noise, "controllers": docs}
    table = harness.format_table(docs, runtime)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    harness.dump_json(combined, paths["metrics"])
    paths["table"].write_text(table)
    print(table, end="")
    print(f"wrote {paths['metrics']} and {paths['table']}")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = args.scenario_path or args.scenario_opt
    if path is None:
        raise ConfigError("validate needs a scenario file")
    scenario = load_scenario(path)
    sched = scenario.schedule
    for w in sched.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"scenario {scenario.name}: duration {sched.duration:g} s, offset model {sched.default_model}")
    print(f"{'start':>8} {'end':>8}  {'phase':<8} {'lat':>7} {'lon':>8} {'rate':>7}  model")
    for r in sched.normalized():
        print(f"{r['start']:>8g} {r['end']:>8g}  {r['phase']:<8} {r['lat']:>7g} {r['lon']:>8g} "
              f"{r['lon_rate']:>7g}  {r['model']}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # anything past configuration is a run failure
        print(f"error: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
