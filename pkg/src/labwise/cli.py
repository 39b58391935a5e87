"""Command-line front end: ``labwise <experiment> [options]``.

Exit codes: 0 success, 1 configuration error, 2 reference comparison failed.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .harness import SCHEMA, ConfigError, ExperimentConfig

EXIT_OK, EXIT_CONFIG, EXIT_COMPARE = 0, 1, 2

# flag -> parameter name, per experiment
FLAGS = {
    "table1": ["reps", "alpha", "epsilon", "p", "k", "sigma2"],
    "fig1": ["deltas", "m_grid", "sigma", "tau", "omega", "lambda0", "alpha"],
    "table2": ["m", "meta", "chain", "burn_in", "thin", "proposal_sd", "alpha"],
    "table3": ["level", "I", "J", "n", "ens", "draws"],
    "table4": ["level", "I", "J", "n", "ens", "draws"],
    "table5": ["ens", "sweeps", "burn_in", "thin", "n0", "n1", "ensemble_log"],
    "table6": ["ens", "alpha_frac", "sweeps", "burn_in", "thin", "r_star", "ensemble_log"],
    "table7": ["ens", "draws"],
    "silica-fit": ["y", "c_expected", "draws"],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="64-bit master seed (default 0)")
    common.add_argument("--workers", type=int, help="worker processes (default 1; 0 = all CPUs)")
    common.add_argument("--paper-scale", action="store_true", default=None,
                        help="use the full replication counts instead of desk-scale defaults")
    common.add_argument("--out", help="CSV output path; an aligned text table goes to OUT.txt")
    common.add_argument("--config", help="config file of [experiment] sections")
    common.add_argument("--check", action="store_true",
                        help="compare against the bundled reference table; exit 2 on failure")

    parser = _Parser(prog="labwise", description="Labwise calibration experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for exp, keys in FLAGS.items():
        sp = sub.add_parser(exp, parents=[common], help=f"run {exp}")
        for key in keys:
            p = SCHEMA[exp][key]
            flag = "--" + key.replace("_", "-")
            if key == "m_grid":
                flag = "--m-grid"
            if key == "J":
                sp.add_argument(flag, dest=key, action="append",
                                help=f"PGD gamma range, written --J=lo,hi (repeatable; default "
                                     f"{harness.format_value(p.kind, p.desk)})")
            else:
                sp.add_argument(flag, dest=key,
                                help=f"default {harness.format_value(p.kind, p.desk) or 'unset'}")
    cmp_ = sub.add_parser("compare", help="compare a result CSV with a reference CSV")
    cmp_.add_argument("result")
    cmp_.add_argument("reference", nargs="?",
                      help="reference CSV (default: the bundled table for --experiment)")
    cmp_.add_argument("--experiment", choices=list(SCHEMA),
                      help="take reference and tolerances from the bundled set")
    cmp_.add_argument("--tol", action="append", default=[], metavar="COLUMN=TOL",
                      help="absolute tolerance for a column (repeatable)")
    return parser


def config_from_args(args) -> ExperimentConfig:
    exp = args.command
    base = harness.load_config(args.config, exp) if args.config else ExperimentConfig(exp)
    params = {}
    for key in FLAGS[exp]:
        raw = getattr(args, key)
        if raw is None:
            continue
        if key == "J":
            raw = ";".join(raw)
        try:
            params[key] = harness.parse_value(SCHEMA[exp][key].kind, raw)
        except ValueError as exc:
            raise ConfigError(f"--{key.replace('_', '-')}: {exc}") from None
    paper = base.paper_scale if args.paper_scale is None else True
    # fields the file left unset take the defaults for the chosen scale
    merged = {k: base.params[k] for k in base.explicit}
    merged.update(params)
    return ExperimentConfig(
        exp,
        seed=base.seed if args.seed is None else args.seed,
        workers=base.workers if args.workers is None else args.workers,
        paper_scale=paper,
        out=base.out if args.out is None else args.out,
        params=merged,
    )


def _tolerances(items) -> dict:
    out = {}
    for item in items:
        col, _, tol = item.partition("=")
        try:
            out[col] = float(tol)
        except ValueError:
            raise ConfigError(f"--tol {item!r}: expected COLUMN=NUMBER") from None
    return out


def _compare(args) -> int:
    result = harness.ResultTable.read_csv(args.result)
    if args.reference:
        reference = harness.ResultTable.read_csv(args.reference)
    elif args.experiment:
        reference = harness.reference_table(args.experiment)
    else:
        raise ConfigError("compare needs a reference CSV or --experiment")
    tol = dict(harness.REFERENCE_TOLERANCES.get(args.experiment, {}))
    tol.update(_tolerances(args.tol))
    if not tol:
        raise ConfigError("no tolerances given (use --tol or --experiment)")
    report = harness.compare_to_reference(result, reference, tol)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_COMPARE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            return _compare(args)
        config = config_from_args(args)
        table = harness.run(config)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"labwise: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if args.command == "compare":
            print(f"labwise: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise
    print(table.to_text(), end="")
    if args.check:
        if config.experiment not in harness.REFERENCE_TOLERANCES:
            print(f"labwise: no bundled reference for {config.experiment}", file=sys.stderr)
            return EXIT_CONFIG
        report = harness.compare_to_reference(table, harness.reference_table(config.experiment),
                                              harness.REFERENCE_TOLERANCES[config.experiment])
        print(report.summary())
        if not report.passed:
            return EXIT_COMPARE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
