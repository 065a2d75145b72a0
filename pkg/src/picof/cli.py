"""Command-line front end.

Exit codes: 0 success, 1 run error, 2 configuration/usage error. Failures
also print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
from pathlib import Path

from .experiments import (
    GRID_HEADER, compare_dirs, compare_results, run_fuelcell, run_toy, toy_bundle, toy_grid,
)
from .plants import ToyPlant
from .scenarios import Scenario, ScenarioError, load_scenario
from .trace import read_trace_table, write_grid

OUT_ENV = "PICOF_OUT"
EXIT_OK, EXIT_RUN, EXIT_CONFIG = 0, 1, 2


class CliError(Exception):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, EXIT_CONFIG)


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=88, max_help_position=32)


def _add_overrides(p):
    g = p.add_argument_group("overrides")
    g.add_argument("--z", type=float, help="exploration weight")
    g.add_argument("--beta", type=float, help="confidence multiplier in constraints")
    g.add_argument("--trials", type=int, help="number of RTO steps")
    g.add_argument("--weight-mode", choices=["constant", "sigma_scaled", "sigma_inverse"],
                   help="correction-weight policy")
    g.add_argument("--weights", type=float, nargs="+", metavar="K",
                   help="weight coefficients, one per output channel (or one shared)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="picof", description="Physics-informed correction factors for "
                     "surrogate-based real-time optimization.", formatter_class=_formatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    for name, helptext in (("toy", "run the 1-D toy study"), ("fuelcell", "run the fuel-cell study")):
        p = sub.add_parser(name, help=helptext, description=helptext, formatter_class=_formatter)
        p.add_argument("--scenario", default=name, help=f"scenario file or built-in name (default: {name})")
        p.add_argument("--seed", type=int, nargs="+", default=[0], help="one or more seeds (default: 0)")
        p.add_argument("--mode", choices=["picof", "baseline", "both"], default="both",
                       help="which variant(s) to run (default: both)")
        p.add_argument("--out", default=None, help=f"output root (default: ${OUT_ENV} or ./runs)")
        p.add_argument("--force", action="store_true", help="overwrite existing run directories")
        _add_overrides(p)

    p = sub.add_parser("reconcile-grid", help="inner-only sweep of corrected p2 over the toy domain",
                       description="inner-only sweep of corrected p2 over the toy domain",
                       formatter_class=_formatter)
    p.add_argument("--scenario", default="toy", help="toy scenario file or name (default: toy)")
    p.add_argument("--seed", type=int, default=0, help="seed for hyperparameter restarts")
    p.add_argument("--from-trace", default=None, metavar="DIR",
                   help="refit the models on the initial data plus observations in DIR/trace.csv")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    _add_overrides(p)

    p = sub.add_parser("validate", help="check a scenario file", description="check a scenario file",
                       formatter_class=_formatter)
    p.add_argument("scenario", help="scenario file or built-in name")
    _add_overrides(p)

    p = sub.add_parser("compare", help="report from two stored runs",
                       description="report from two stored runs", formatter_class=_formatter)
    p.add_argument("runs", nargs=2, metavar="RUN_DIR", help="PI-CoF and baseline run directories")
    p.add_argument("--out", default=None, help="report path (default: <common parent>/report.json)")
    return parser


def help_text(command: str | None = None) -> str:
    """Rendered ``--help`` of the top-level parser or one subcommand."""
    parser = build_parser()
    if command is None:
        return parser.format_help()
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices[command].format_help()


def _overrides(args) -> dict:
    return {
        "z": args.z, "beta": args.beta, "trials": args.trials,
        "weight_mode": args.weight_mode, "weights": args.weights,
    }


def _prepare_dir(path: Path, force: bool):
    if path.exists() and any(path.iterdir()):
        if not force:
            raise CliError(f"output directory {path} exists; use --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


def _run_study(args, out) -> int:
    scn = load_scenario(args.scenario, **_overrides(args))
    runner = run_toy if scn.kind == "toy" else run_fuelcell
    if scn.kind != args.command:
        raise CliError(f"scenario kind {scn.kind!r} does not match command {args.command!r}")
    root = Path(args.out or os.environ.get(OUT_ENV) or "runs")
    modes = ["picof", "baseline"] if args.mode == "both" else [args.mode]
    for seed in args.seed:
        base = root / scn.name / str(seed)
        dirs = {m: base / m for m in modes}
        for d in dirs.values():
            _prepare_dir(d, args.force)
        results = {}
        for m in modes:
            results[m] = runner(seed, m == "picof", scn)
            results[m].write(dirs[m])
            tr = results[m].trace
            print(f"{scn.name} seed={seed} mode={m} steps={len(tr)} violations={tr.violations}", file=out)
        if len(modes) == 2:
            report = compare_results(results["picof"], results["baseline"])
            report.write(base / "report.json")
            print(f"report: {base / 'report.json'}", file=out)
    return EXIT_OK


def _reconcile_grid(args, out) -> int:
    scn = load_scenario(args.scenario, **_overrides(args))
    if scn.kind != "toy":
        raise CliError("reconcile-grid supports the one-dimensional toy scenario only")
    plant = ToyPlant(scn.data.get("noise_std", (0.0, 0.0)), seed=args.seed)
    data = dict(scn.data)
    if args.from_trace:
        rows, _ = read_trace_table(args.from_trace)
        extra_x = [r["x_obs1"] for r in rows]
        data["init_x"] = list(scn["init_x"]) + extra_x
    bundle = toy_bundle(Scenario(scn.name, scn.kind, data, scn.sha256, scn.source), plant, args.seed)
    rows = toy_grid(scn, bundle)
    if args.out:
        write_grid(args.out, rows, GRID_HEADER)
    else:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(GRID_HEADER)
        w.writerows([[format(float(v), ".17g") for v in row] for row in rows])
    return EXIT_OK


def _validate(args, out) -> int:
    scn = load_scenario(args.scenario, **_overrides(args))
    print(f"ok {scn.kind} steps={scn.steps} sha256={scn.sha256}", file=out)
    return EXIT_OK


def _compare(args, out) -> int:
    a, b = (Path(r) for r in args.runs)
    for d in (a, b):
        if not (d / "trace.csv").is_file() or not (d / "summary.json").is_file():
            raise CliError(f"{d} is not a run directory (trace.csv/summary.json missing)")
    try:
        report = compare_dirs(a, b)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    target = Path(args.out) if args.out else Path(os.path.commonpath([a.resolve(), b.resolve()])) / "report.json"
    report.write(target)
    rp, rb = report.runs["picof"], report.runs["baseline"]
    print(f"violations picof={rp['violations']} baseline={rb['violations']} report={target}", file=out)
    return EXIT_OK


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "toy": _run_study, "fuelcell": _run_study, "reconcile-grid": _reconcile_grid,
            "validate": _validate, "compare": _compare,
        }[args.command]
        return handler(args, out)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except ScenarioError as exc:
        code, msg = EXIT_CONFIG, str(exc)
    except Exception as exc:  # noqa: BLE001 - report every run failure uniformly
        code, msg = EXIT_RUN, f"{type(exc).__name__}: {exc}"
    kind = "config" if code == EXIT_CONFIG else "run"
    print(json.dumps({"error": msg, "kind": kind, "code": code}), file=err)
    return code


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
