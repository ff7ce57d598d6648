"""Command-line interface.

Verbs: ``run <config>``, ``verify <suite>``, ``aggregate <results.csv>``,
``simulate <config>``.  Exit codes: 0 success, 1 usage error, 2
verification failure, 3 runtime numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import (
    ConfigError,
    aggregate_results,
    config_from_mapping,
    parse_config_text,
    read_results_csv,
    run_experiment,
    write_results_csv,
    write_summary_csv,
)
from .numerics import DegenerateWeights, NumericalError, RngStream
from .tracking import save_dataset, simulate_dataset
from .verify import run_suite

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY_FAILED = 2
EXIT_NUMERICAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments; route through our codes.
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="npmc", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    run_p = sub.add_parser("run", help="run an experiment described by a config file")
    run_p.add_argument("config", help="flat key=value config file")
    sim_p = sub.add_parser("simulate", help="simulate a dataset only")
    sim_p.add_argument("config", help="flat key=value config file")
    for p in (run_p, sim_p):
        p.add_argument("--seed", type=int, default=None, help="override experiment.seed")
        p.add_argument("--workers", type=int, default=None, help="worker processes (0 = all cores)")
        p.add_argument("--out", default=None, help="override output path")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override any config key",
        )

    ver_p = sub.add_parser("verify", help="run a named verification suite")
    ver_p.add_argument("suite", help="clipping | reflection | unbiasedness | rate | all")
    ver_p.add_argument("--seed", type=int, default=20240901)

    agg_p = sub.add_parser("aggregate", help="summarize a results CSV")
    agg_p.add_argument("results", help="results CSV produced by `npmc run`")
    agg_p.add_argument("--out", default=None, help="summary CSV path (default: stdout)")
    return parser


def _load_config(args):
    try:
        with open(args.config) as fh:
            mapping = parse_config_text(fh.read())
    except OSError as exc:
        raise _UsageError(f"cannot read config: {exc}") from exc
    for item in args.overrides:
        if "=" not in item:
            raise _UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    if args.seed is not None:
        mapping["experiment.seed"] = str(args.seed)
    if args.workers is not None:
        mapping["experiment.workers"] = str(args.workers)
    if args.out is not None:
        mapping["experiment.out"] = args.out
    return config_from_mapping(mapping)


def _cmd_run(args) -> int:
    config = _load_config(args)
    if config.kind == "verify":
        return _run_verify(config.verify_suite, config.base_seed)
    rows, _ = run_experiment(config)
    write_results_csv(config.out, rows, config)
    n_failed = sum(1 for row in rows if row.status != "ok")
    print(f"{len(rows)} rows -> {config.out} ({n_failed} failed)")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    config = _load_config(args)
    from .experiments import derive_seed

    seed = derive_seed(config.base_seed, config.experiment_id, "dataset", 0)
    observations, _ = simulate_dataset(
        config.true_params, config.sensors, config.horizon, RngStream(seed)
    )
    save_dataset(
        config.out, observations, config.sensors, config.true_params.theta, seed
    )
    print(f"dataset {observations.shape} -> {config.out}")
    return EXIT_OK


def _run_verify(suite: str, seed: int) -> int:
    try:
        report = run_suite(suite, seed)
    except ValueError as exc:
        raise _UsageError(str(exc)) from exc
    print(f"suite {report.suite}: {'PASS' if report.passed else 'FAIL'}")
    for line in report.lines:
        print(line)
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def _cmd_aggregate(args) -> int:
    try:
        rows = read_results_csv(args.results)
    except OSError as exc:
        raise _UsageError(f"cannot read results: {exc}") from exc
    summary = aggregate_results(rows)
    if args.out:
        write_summary_csv(args.out, summary)
        print(f"{len(summary)} summary rows -> {args.out}")
    else:
        for row in summary:
            mean = "-" if row.mean_error is None else f"{row.mean_error:.6g}"
            se = "-" if row.stderr is None else f"{row.stderr:.3g}"
            grid = f"M={row.M} K={row.K} N={row.N} L={row.L}"
            print(
                f"{row.experiment_id} {row.sampler:5s} {grid}: "
                f"mean={mean} se={se} ok={row.n_ok} failed={row.n_failed}"
            )
    return EXIT_OK


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verb == "run":
            return _cmd_run(args)
        if args.verb == "simulate":
            return _cmd_simulate(args)
        if args.verb == "verify":
            return _run_verify(args.suite, args.seed)
        if args.verb == "aggregate":
            return _cmd_aggregate(args)
        raise _UsageError(f"unknown verb {args.verb!r}")
    except (_UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, DegenerateWeights) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(run_cli())
