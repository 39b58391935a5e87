"""Experiment configuration, dispatch, result tables and reference comparison."""

from __future__ import annotations

import csv
import io
import math
import subprocess
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import hierarchical, misclass, mixture, nonresponse, silica
from .metrics import CSV_COLUMNS

EXPERIMENTS = ("table1", "fig1", "table2", "table3", "table4", "table5", "table6", "table7",
               "silica-fit")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# parameter schema

@dataclass(frozen=True)
class Param:
    kind: str  # int | float | floats | ints | pair | pairs | range | str
    desk: object
    paper: object = None
    help: str = ""

    def default(self, paper_scale: bool):
        return self.paper if paper_scale and self.paper is not None else self.desk


def _fmt_num(x) -> str:
    return repr(int(x)) if isinstance(x, int) else repr(float(x))


def format_value(kind: str, value) -> str:
    if kind in ("int", "float"):
        return _fmt_num(value)
    if kind in ("floats", "ints", "pair"):
        return ",".join(_fmt_num(v) for v in value)
    if kind == "pairs":
        return "; ".join(",".join(_fmt_num(v) for v in pr) for pr in value)
    if kind == "range":
        return f"{value[0]}:{value[1]}"
    return str(value)


def parse_value(kind: str, text: str):
    text = text.strip()
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "floats":
        return tuple(float(t) for t in text.split(","))
    if kind == "ints":
        return tuple(int(t) for t in text.split(","))
    if kind == "pair":
        out = tuple(float(t) for t in text.split(","))
        if len(out) != 2:
            raise ValueError("expected two comma-separated numbers")
        return out
    if kind == "pairs":
        return tuple(parse_value("pair", part.strip().strip("()")) for part in text.split(";"))
    if kind == "range":
        lo, hi = text.split(":")
        return (int(lo), int(hi))
    return text


_NONRESPONSE = {
    "I": Param("pair", (-2.0, 2.0), help="gamma range assumed by CFCI and prior"),
    "J": Param("pairs", ((-2.0, 2.0), (-3.0, 3.0), (-1.0, 1.0), (-1.0, 3.0), (2.0, 2.0)),
               help="gamma ranges of the PGD"),
    "n": Param("int", 500),
    "ens": Param("int", 5_000, 10_000),
    "draws": Param("int", 20_000),
}

SCHEMA: dict[str, dict[str, Param]] = {
    "table1": {
        "reps": Param("int", 50_000, 500_000),
        "alpha": Param("float", 0.05),
        "epsilon": Param("float", 0.05),
        "p": Param("float", 0.85),
        "k": Param("float", 8.0),
        "sigma2": Param("float", 0.025),
    },
    "fig1": {
        "deltas": Param("floats", (0.0, 1.0, 2.0, 3.0)),
        "m_grid": Param("range", (0, 100)),
        "sigma": Param("float", 1.0),
        "tau": Param("float", 1.0),
        "omega": Param("float", 1.0),
        "lambda0": Param("float", 3.0),
        "alpha": Param("float", 0.05),
    },
    "table2": {
        "m": Param("ints", (0, 10, 20, 100)),
        "meta": Param("int", 500, 1_000),
        "chain": Param("int", 20_000),
        "burn_in": Param("int", 2_000),
        "thin": Param("int", 10),
        "proposal_sd": Param("pair", (0.05, 0.5)),
        "alpha": Param("float", 0.05),
    },
    "table3": {"level": Param("float", 0.95), **_NONRESPONSE},
    "table4": {"level": Param("float", 0.80), **_NONRESPONSE},
    "table5": {
        "ens": Param("int", 2_000, 10_000),
        "sweeps": Param("int", 25_000),
        "burn_in": Param("int", 5_000),
        "thin": Param("int", 4),
        "n0": Param("int", 500),
        "n1": Param("int", 500),
        "ensemble_log": Param("str", ""),
    },
    "table6": {
        "ens": Param("int", 20_000, 100_000),
        "alpha_frac": Param("float", 0.0075, 0.01),
        "sweeps": Param("int", 25_000),
        "burn_in": Param("int", 5_000),
        "thin": Param("int", 4),
        "r_star": Param("pair", (0.10, 0.15)),
        "ensemble_log": Param("str", "", help="reuse a saved ensemble log instead of simulating"),
    },
    "table7": {
        "ens": Param("int", 20_000, 100_000),
        "draws": Param("int", 2_000),
    },
    "silica-fit": {
        "y": Param("int", 109),
        "c_expected": Param("float", 68.1),
        "draws": Param("int", 50_000),
    },
}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    workers: int = 1
    paper_scale: bool = False
    out: str = ""
    params: dict = field(default_factory=dict)
    explicit: frozenset = field(default=frozenset(), init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.experiment not in SCHEMA:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        schema = SCHEMA[self.experiment]
        unknown = set(self.params) - set(schema)
        if unknown:
            raise ConfigError(f"{self.experiment}: unknown parameter(s) {sorted(unknown)}")
        self.explicit = frozenset(self.params)
        full = {k: p.default(self.paper_scale) for k, p in schema.items()}
        full.update(self.params)
        self.params = full

    def __getitem__(self, key):
        return self.params[key]

    def to_text(self) -> str:
        schema = SCHEMA[self.experiment]
        lines = [f"[{self.experiment}]", f"seed = {self.seed}", f"workers = {self.workers}",
                 f"paper_scale = {str(self.paper_scale).lower()}"]
        if self.out:
            lines.append(f"out = {self.out}")
        for key, p in schema.items():
            lines.append(f"{key} = {format_value(p.kind, self.params[key])}")
        return "\n".join(lines) + "\n"


_GLOBAL_KEYS = {"seed": "int", "workers": "int", "paper_scale": "bool", "out": "str"}


def parse_config_text(text: str, experiment: str | None = None, source: str = "<config>"):
    """Parse ``key = value`` lines grouped in ``[experiment]`` sections.

    Returns {experiment: ExperimentConfig}, or a single config when
    ``experiment`` is given.
    """
    sections: dict[str, dict] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown experiment section [{current}]")
            sections.setdefault(current, {"_params": {}})
            continue
        if current is None:
            raise ConfigError(f"{source}:{lineno}: setting outside of a [section]")
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        sec = sections[current]
        try:
            if key in _GLOBAL_KEYS:
                kind = _GLOBAL_KEYS[key]
                if kind == "bool":
                    if value.lower() not in ("true", "false"):
                        raise ValueError("expected true or false")
                    sec[key] = value.lower() == "true"
                else:
                    sec[key] = parse_value(kind, value)
            elif key in SCHEMA[current]:
                sec["_params"][key] = parse_value(SCHEMA[current][key].kind, value)
            else:
                raise ConfigError(f"{source}:{lineno}: unknown field {key!r} for [{current}]")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{source}:{lineno}: field {key!r}: {exc}") from None
    configs = {}
    for name, sec in sections.items():
        params = sec.pop("_params")
        # with paper_scale = true, paper-scale defaults fill the unset fields
        configs[name] = ExperimentConfig(name, params=params, **sec)
    if experiment is not None:
        if experiment not in configs:
            return ExperimentConfig(experiment)
        return configs[experiment]
    return configs


def load_config(path, experiment: str | None = None):
    return parse_config_text(Path(path).read_text(), experiment, source=str(path))


# --------------------------------------------------------------------------
# result tables


@dataclass
class ResultTable:
    header: list[str]
    rows: list[list]
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow(["" if v is None else _csv_cell(v) for v in row])
        return buf.getvalue()

    def write_csv(self, path):
        Path(path).write_text(self.to_csv(), newline="")

    def to_text(self) -> str:
        cells = [self.header] + [[_text_cell(v) for v in row] for row in self.rows]
        widths = [max(len(r[i]) for r in cells) for i in range(len(self.header))]
        lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        lines.append("")
        lines.extend(f"# {k}: {v}" for k, v in self.meta.items())
        return "\n".join(lines) + "\n"

    @classmethod
    def read_csv(cls, path) -> "ResultTable":
        with open(path, newline="") as fh:
            reader = csv.reader(line for line in fh if not line.startswith("#"))
            rows = list(reader)
        if not rows:
            raise ValueError(f"{path}: empty table")
        return cls(rows[0], [[_parse_cell(c) for c in r] for r in rows[1:]])

    def column(self, name):
        i = self.header.index(name)
        return [r[i] for r in self.rows]

    def records(self) -> list[dict]:
        return [dict(zip(self.header, r)) for r in self.rows]


def _csv_cell(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return v


def _text_cell(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _parse_cell(c: str):
    if c == "":
        return None
    try:
        return int(c)
    except ValueError:
        pass
    try:
        return float(c)
    except ValueError:
        return c


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _report_row(prefix: list, rep) -> list:
    return prefix + rep.csv_row()


# --------------------------------------------------------------------------
# dispatch


def _run_table1(cfg: ExperimentConfig) -> ResultTable:
    t1 = mixture.Table1Config(
        pgd=mixture.MixturePGDSpec(cfg["epsilon"], cfg["p"], cfg["k"]),
        model=mixture.NormalDataModel(cfg["sigma2"]),
        n_reps=cfg["reps"], nominal_alpha=cfg["alpha"])
    reports = mixture.run_table1(t1, cfg.seed, cfg.workers)
    return ResultTable(list(CSV_COLUMNS), [r.csv_row() for r in reports.values()])


def _run_fig1(cfg: ExperimentConfig) -> ResultTable:
    lo, hi = cfg["m_grid"]
    rows = hierarchical.figure1_grid(cfg["deltas"], range(lo, hi + 1), cfg["sigma"], cfg["tau"],
                                     cfg["omega"], cfg["lambda0"], cfg["alpha"])
    return ResultTable(["m", "delta", "coverage", "length"],
                       [[r["m"], r["delta"], r["coverage"], r["length"]] for r in rows])


def _run_table2(cfg: ExperimentConfig) -> ResultTable:
    hyper = hierarchical.HyperPriorSpec(proposal_sd=tuple(cfg["proposal_sd"]),
                                        chain_length=cfg["chain"], burn_in=cfg["burn_in"],
                                        thin=cfg["thin"])
    rows = []
    for m in cfg["m"]:
        res = hierarchical.run_table2(hyper, mixture.MixturePGDSpec(), mixture.NormalDataModel(0.025),
                                      m, cfg["meta"], cfg.seed, cfg["alpha"], cfg.workers)
        r = res.report
        rows.append([m, r.n_total, r.coverage, r.se_coverage, r.avg_length,
                     float(res.acceptance.mean()), res.n_acceptance_warnings])
    return ResultTable(["m", "n_total", "coverage", "se_coverage", "avg_length",
                        "mean_acceptance", "n_acceptance_warnings"], rows)


def _run_nonresponse(cfg: ExperimentConfig) -> ResultTable:
    alpha = round(1 - cfg["level"], 12)
    I = nonresponse.GammaRange(*cfg["I"])
    rows = []
    for j in cfg["J"]:
        J = nonresponse.GammaRange(*j)
        reports = nonresponse.run_tables34(nonresponse.LogitNormalPGD(J), I, cfg["n"], alpha,
                                           cfg["ens"], cfg.seed, cfg.workers, cfg["draws"])
        for rep in reports.values():
            rows.append(_report_row([str(J)], rep))
    return ResultTable(["J"] + list(CSV_COLUMNS), rows)


def _misclass_config(cfg: ExperimentConfig, n_ens: int) -> misclass.Table5Config:
    chain = misclass.ChainSettings(cfg["sweeps"], cfg["burn_in"], cfg["thin"])
    n0 = cfg.params.get("n0", 500)
    n1 = cfg.params.get("n1", 500)
    return misclass.Table5Config(n0=n0, n1=n1, n_ens=n_ens, chain=chain)


def _run_table5(cfg: ExperimentConfig) -> ResultTable:
    res = misclass.run_table5(_misclass_config(cfg, cfg["ens"]), cfg.seed, cfg.workers)
    if cfg["ensemble_log"]:
        misclass.write_ensemble_log(res.ensembles, cfg["ensemble_log"])
    rows = [_report_row([], r) + [res.low_ess.get(k, 0)] for k, r in res.reports.items()]
    return ResultTable(list(CSV_COLUMNS) + ["n_low_ess"], rows)


def _run_table6(cfg: ExperimentConfig) -> ResultTable:
    if cfg["ensemble_log"] and Path(cfg["ensemble_log"]).exists():
        ens = misclass.read_ensemble_log(cfg["ensemble_log"])
        label = misclass.table5_priors()[0].label
        grid = misclass.near_frequentist_grid(ens, label, tuple(cfg["r_star"]), cfg["alpha_frac"])
    else:
        grid, ens = misclass.run_table6(_misclass_config(cfg, cfg["ens"]), cfg["alpha_frac"],
                                        cfg.seed, cfg.workers, r_star=tuple(cfg["r_star"]))
        if cfg["ensemble_log"]:
            misclass.write_ensemble_log(ens, cfg["ensemble_log"])
    return ResultTable(["sn", "sp", "n_used", "coverage", "se"],
                       [[g["sn"], g["sp"], g["n_used"], g["coverage"], g["se"]] for g in grid])


def _run_table7(cfg: ExperimentConfig) -> ResultTable:
    rows = silica.run_table7(n_ens=cfg["ens"], n_draws=cfg["draws"], seed=cfg.seed,
                             workers=cfg.workers)
    return ResultTable(list(CSV_COLUMNS) + ["n_zero_counts", "min_ess"],
                       [r.report.csv_row() + [r.n_zero_counts, r.min_ess] for r in rows])


def _run_silica_fit(cfg: ExperimentConfig) -> ResultTable:
    from .distributions import RngStream, stream_key
    spec = silica.SilicaModelSpec(c=math.log(cfg["c_expected"]), y=cfg["y"])
    res = silica.fit(spec, n_draws=cfg["draws"], rng=RngStream(cfg.seed, stream_key("silica-fit")))
    rows = [["bayes", res.interval.lower, res.interval.upper, res.ess],
            ["mcsa", res.mcsa_interval.lower, res.mcsa_interval.upper, float(res.n_draws)],
            ["no_confounding", res.no_confounding_interval.lower,
             res.no_confounding_interval.upper, None]]
    return ResultTable(["analysis", "lower", "upper", "ess"], rows)


_DISPATCH = {
    "table1": _run_table1, "fig1": _run_fig1, "table2": _run_table2,
    "table3": _run_nonresponse, "table4": _run_nonresponse, "table5": _run_table5,
    "table6": _run_table6, "table7": _run_table7, "silica-fit": _run_silica_fit,
}


def run(config: ExperimentConfig, write: bool = True) -> ResultTable:
    """Run one experiment; write ``<out>`` (CSV) and ``<out>.txt`` when ``out`` is set."""
    start = time.perf_counter()
    table = _DISPATCH[config.experiment](config)
    table.meta = {
        "experiment": config.experiment,
        "seed": config.seed,
        "workers": config.workers,
        "paper_scale": config.paper_scale,
        **{k: format_value(SCHEMA[config.experiment][k].kind, v) for k, v in config.params.items()},
        "wall_time_s": f"{time.perf_counter() - start:.2f}",
        "build": _git_describe(),
    }
    if write and config.out:
        table.write_csv(config.out)
        Path(str(config.out) + ".txt").write_text(table.to_text())
    return table


# --------------------------------------------------------------------------
# reference comparison


@dataclass
class CellFailure:
    row: dict
    column: str
    value: float | None
    reference: float
    tolerance: float


@dataclass
class ComparisonReport:
    failures: list[CellFailure]
    n_checked: int

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'}: {self.n_checked} cells checked, "
                 f"{len(self.failures)} outside tolerance"]
        for f in self.failures:
            key = ", ".join(f"{k}={v}" for k, v in f.row.items())
            lines.append(f"  [{key}] {f.column}: got {f.value}, reference {f.reference} "
                         f"(tol {f.tolerance})")
        return "\n".join(lines)


def compare_to_reference(result: ResultTable, reference: ResultTable,
                         tolerances: dict[str, float]) -> ComparisonReport:
    """Per-cell |result - reference| <= tolerance.

    Reference columns without a tolerance are row keys; empty reference cells
    are not checked.
    """
    missing = [c for c in reference.header if c not in result.header]
    if missing:
        raise ValueError(f"schema mismatch: result lacks columns {missing}")
    keys = [c for c in reference.header if c not in tolerances]
    results = result.records()
    failures = []
    n = 0
    for ref in reference.records():
        key = {k: ref[k] for k in keys}
        matches = [rec for rec in results if all(_key_match(rec[k], v) for k, v in key.items())]
        if len(matches) != 1:
            raise ValueError(f"schema mismatch: {len(matches)} result rows match {key}")
        got = matches[0]
        for col, tol in tolerances.items():
            if col not in reference.header or ref[col] is None:
                continue
            n += 1
            val = got[col]
            if val is None or not abs(float(val) - float(ref[col])) <= tol:
                failures.append(CellFailure(key, col, val, ref[col], tol))
    return ComparisonReport(failures, n)


def _key_match(a, b) -> bool:
    # numeric keys printed at two decimals (grid points) match their exact values
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return abs(a - b) <= KEY_TOLERANCE
    return str(a) == str(b)


KEY_TOLERANCE = 0.01

# Tolerances for the shipped reference tables, sized for desk-scale runs.
REFERENCE_TOLERANCES = {
    "table1": {"coverage": 0.008, "avg_length": 0.01, "tdr": 0.015, "fdr": 0.015, "fnr": 0.015},
    "table2": {"coverage": 0.02, "avg_length": 0.03},
    "table3": {"coverage": 0.025, "avg_length": 0.01},
    "table4": {"coverage": 0.025, "avg_length": 0.01},
    "table5": {"coverage": 0.025, "avg_length": 0.10},
    "table6": {"coverage": 0.03},
    "table7": {"coverage": 0.012},
    "silica-fit": {"lower": 0.03, "upper": 0.03},
}


def reference_table(experiment: str) -> ResultTable:
    path = resources.files("labwise") / "reference" / f"{experiment}.csv"
    with resources.as_file(path) as p:
        return ResultTable.read_csv(p)
