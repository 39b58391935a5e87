"""Driving the experiments from a config file and checking the output.

The same config file can be handed to the ``labwise`` command.  Here the
harness API is used directly.
"""

import tempfile
from pathlib import Path

from labwise import harness

text = """
[table1]
seed = 11
reps = 50000

[table3]
seed = 11
ens = 600
draws = 4000
J = -2,2; 2,2
"""

with tempfile.TemporaryDirectory() as tmp:
    cfgs = harness.parse_config_text(text)
    for name, cfg in cfgs.items():
        cfg.out = str(Path(tmp) / f"{name}.csv")
        table = harness.run(cfg)
        print(table.to_text())
        print(Path(cfg.out).read_text().splitlines()[0])

    # a desk-scale table 1 against the bundled reference; smaller runs can miss
    # the FDR cells, which rest on few discoveries
    report = harness.compare_to_reference(
        harness.ResultTable.read_csv(Path(tmp) / "table1.csv"),
        harness.reference_table("table1"),
        harness.REFERENCE_TOLERANCES["table1"])
    print(report.summary())
