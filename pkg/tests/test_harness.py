import csv

import pytest

from labwise import cli, harness
from labwise.harness import (
    SCHEMA,
    ConfigError,
    ExperimentConfig,
    ResultTable,
    compare_to_reference,
    parse_config_text,
)


@pytest.mark.parametrize("experiment", list(SCHEMA))
@pytest.mark.parametrize("paper", [False, True])
def test_config_round_trip(experiment, paper):
    cfg = ExperimentConfig(experiment, seed=12, workers=3, paper_scale=paper, out="x.csv")
    again = parse_config_text(cfg.to_text(), experiment)
    assert again == cfg
    assert again.to_text() == cfg.to_text()


def test_config_file_with_sections():
    text = """
    # desk run
    [table1]
    seed = 7
    reps = 1000
    k = 12

    [table3]
    J = -2,2; 2,2
    I = -1,1
    """
    cfgs = parse_config_text(text)
    assert cfgs["table1"]["reps"] == 1000 and cfgs["table1"]["k"] == 12.0
    assert cfgs["table1"]["p"] == 0.85
    assert cfgs["table3"]["J"] == ((-2.0, 2.0), (2.0, 2.0))
    assert cfgs["table3"]["I"] == (-1.0, 1.0)


@pytest.mark.parametrize("text, where", [
    ("[table1]\nreps = many\n", "<config>:2"),
    ("[table1]\nbogus = 1\n", "<config>:2"),
    ("reps = 5\n", "<config>:1"),
    ("[table9]\n", "<config>:1"),
    ("[table1]\nreps\n", "<config>:2"),
])
def test_config_errors_carry_line(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_config_text(text)


def test_paper_scale_defaults():
    assert ExperimentConfig("table1")["reps"] == 50_000
    assert ExperimentConfig("table1", paper_scale=True)["reps"] == 500_000
    assert ExperimentConfig("table6", paper_scale=True)["alpha_frac"] == 0.01
    with pytest.raises(ConfigError):
        ExperimentConfig("table1", params={"nope": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig("table1", seed=-1)


def test_cli_flags_override_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[table1]\nseed = 3\nreps = 2000\nk = 12\n")
    args = cli.build_parser().parse_args(["table1", "--config", str(path), "--reps", "500",
                                          "--paper-scale"])
    cfg = cli.config_from_args(args)
    assert cfg["reps"] == 500 and cfg["k"] == 12.0 and cfg.seed == 3 and cfg.paper_scale
    args = cli.build_parser().parse_args(["table1", "--config", str(path), "--paper-scale"])
    assert cli.config_from_args(args)["reps"] == 2000


def test_cli_repeatable_ranges():
    args = cli.build_parser().parse_args(["table3", "--J=-2,2", "--J=2,2", "--I=-2,2"])
    cfg = cli.config_from_args(args)
    assert cfg["J"] == ((-2.0, 2.0), (2.0, 2.0))


def test_run_is_deterministic_and_worker_invariant(tmp_path):
    outs = []
    for i, workers in enumerate((1, 1, 2)):
        out = tmp_path / f"t{i}.csv"
        assert cli.main(["table1", "--reps", "12000", "--seed", "7", "--workers", str(workers),
                         "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    assert (tmp_path / "t0.csv.txt").read_text().count("# seed: 7") == 1


def test_csv_dialect(tmp_path):
    t = ResultTable(["J", "coverage"], [["(-2,2)", 0.95], ["(2,2)", None]])
    path = tmp_path / "t.csv"
    t.write_csv(path)
    raw = path.read_bytes()
    assert raw.startswith(b"J,coverage\r\n\"(-2,2)\",0.95\r\n")
    with open(path, newline="") as fh:
        assert list(csv.reader(fh)) == [["J", "coverage"], ["(-2,2)", "0.95"], ["(2,2)", ""]]
    back = ResultTable.read_csv(path)
    assert back.rows == t.rows


def test_fig1_columns(tmp_path):
    out = tmp_path / "fig1.csv"
    assert cli.main(["fig1", "--m-grid", "0:2", "--deltas", "0,3", "--out", str(out)]) == 0
    t = ResultTable.read_csv(out)
    assert t.header == ["m", "delta", "coverage", "length"]
    assert len(t.rows) == 6


def test_silica_fit_checks_against_reference(capsys):
    assert cli.main(["silica-fit", "--draws", "50000", "--check"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_compare_identical_and_perturbed():
    ref = harness.reference_table("table1")
    tol = harness.REFERENCE_TOLERANCES["table1"]
    assert compare_to_reference(ref, ref, tol).passed
    bad = ResultTable(ref.header, [list(r) for r in ref.rows])
    i = bad.header.index("coverage")
    bad.rows[1][i] -= 0.10
    rep = compare_to_reference(bad, ref, tol)
    assert not rep.passed
    (f,) = rep.failures
    assert f.row == {"estimator_id": "OBPI"} and f.column == "coverage"
    assert "estimator_id=OBPI" in rep.summary()


def test_compare_schema_mismatch():
    ref = harness.reference_table("table7")
    with pytest.raises(ValueError, match="schema"):
        compare_to_reference(ResultTable(["estimator_id"], [["Prior"]]), ref, {"coverage": 0.01})
    with pytest.raises(ValueError, match="schema"):
        compare_to_reference(ResultTable(["estimator_id", "coverage"], [["x", 0.9]]), ref,
                             {"coverage": 0.01})


def test_compare_grid_keys_match_rounded_values():
    ref = ResultTable(["sn", "sp", "coverage"], [[0.63, 0.77, 0.95]])
    res = ResultTable(["sn", "sp", "coverage"], [[0.6366, 0.7688, 0.951], [0.7688, 0.6366, 0.5]])
    assert compare_to_reference(res, ref, {"coverage": 0.01}).passed


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["table1", "--reps", "x"]) == 1
    assert cli.main(["table1", "--seed", "-4"]) == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["table1", "--no-such-flag"])
    assert exc.value.code == 1
    res = tmp_path / "r.csv"
    harness.reference_table("table7").write_csv(res)
    assert cli.main(["compare", str(res), "--experiment", "table7"]) == 0
    bad = harness.reference_table("table7")
    bad.rows[0][1] = 0.5
    bad.write_csv(res)
    assert cli.main(["compare", str(res), "--experiment", "table7"]) == 2
    assert cli.main(["compare", str(res)]) == 1


def test_shipped_references_load():
    for exp in harness.REFERENCE_TOLERANCES:
        t = harness.reference_table(exp)
        assert t.rows
        assert set(harness.REFERENCE_TOLERANCES[exp]) & set(t.header)
