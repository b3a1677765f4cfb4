import csv
import io
import json
import subprocess
import sys

import pytest

from pimstm import ConfigInvalid
from pimstm.cli import Cell, OracleViolation, RunReport, RunSpec, emit, main, parse_tasklets, parse_variants, run


def test_parse_tasklets():
    assert parse_tasklets("1-4") == (1, 2, 3, 4)
    assert parse_tasklets("1,4,11") == (1, 4, 11)
    assert parse_tasklets("1,8-10") == (1, 8, 9, 10)


def test_parse_variants():
    assert len(parse_variants("all")) == 7
    assert [v.value for v in parse_variants("norec, vr_etlwt")] == ["norec", "vr_etlwt"]


@pytest.mark.parametrize("kw", [dict(bench="nope"), dict(workload="Z"), dict(runs=0), dict(tasklets=(25,)),
                                dict(output="xml")])
def test_runspec_rejects(kw):
    with pytest.raises(ConfigInvalid):
        RunSpec(**kw)


def test_labyrinth_wram_coerced():
    with pytest.warns(UserWarning):
        spec = RunSpec(bench="labyrinth", placement="wram")
    assert spec.placement == 1


def test_arraybench_norec_three_runs():
    spec = RunSpec(variants=("norec",), tasklets=(1,), runs=3, overrides={"txns_per_tasklet": 30})
    report = run(spec)
    (cell,) = report.cells
    row = cell.row()
    assert row["abort_rate"] == 0
    assert "throughput_std" in row and len(cell.committed) == 3
    assert row["mram_per_commit"] > 0


def test_cell_cardinality():
    spec = RunSpec(bench="linkedlist", workload="HC", tasklets=tuple(range(1, 12)), runs=1)
    assert len(spec.variants) * len(spec.tasklets) == 77


def test_kmeans_broken_raises():
    spec = RunSpec(bench="kmeans", variants=("norec",), tasklets=(11,), runs=1, oracle=True, broken=True,
                   overrides={"points": 800, "rounds": 1})
    with pytest.raises(OracleViolation):
        run(spec)


def test_emit_empty_csv():
    out = emit(RunReport()).decode().splitlines()
    assert len(out) == 1 and out[0].startswith("bench,workload,variant")


def test_emit_one_cell():
    report = RunReport(cells=[Cell("arraybench", "A", "norec", "mram", 1)])
    assert len(emit(report).decode().splitlines()) == 2


def test_emit_json_nesting():
    spec = RunSpec(variants=("tiny_etlwb",), tasklets=(2,), runs=1, overrides={"txns_per_tasklet": 10})
    doc = json.loads(emit(run(spec), "json"))
    cell = doc["results"]["arraybench"]["A"]["tiny_etlwb"]["mram"]["2"]
    assert cell["runs"][0]["committed"] == 20
    assert "counting_convention" in doc


def test_main_csv(capsys):
    rc = main(["--bench", "arraybench", "--workload", "B", "--stm", "norec,vr_etlwb", "--tasklets", "1,2",
               "--runs", "2", "--txns", "20", "-q"])
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 4
    assert {r["variant"] for r in rows} == {"norec", "vr_etlwb"}


def test_main_oracle_exit_code(capsys):
    rc = main(["--bench", "kmeans", "--stm", "norec", "--tasklets", "11", "--runs", "2", "--points", "800",
               "--rounds", "1", "--oracle", "--broken", "-q"])
    assert rc == 3


def test_main_bad_args():
    with pytest.raises(SystemExit) as info:
        main(["--tasklets", "30"])
    assert info.value.code == 2


def test_labyrinth_file(tmp_path, capsys):
    f = tmp_path / "maze.txt"
    f.write_text("8 8 1\nsrc 0 0 0 dst 7 7 0\nsrc 7 0 0 dst 0 7 0\n")
    rc = main(["--bench", "labyrinth", "--labyrinth-file", str(f), "--stm", "norec", "--tasklets", "2",
               "--runs", "1", "--format", "json", "-q", "--oracle"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    cell = doc["results"]["labyrinth"]["S"]["norec"]["mram"]["2"]
    assert cell["violations"] == 0


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "pimstm", "--help"], capture_output=True, text=True, check=True)
    assert "--bench" in out.stdout


def test_small_runs_are_checked_for_serializability():
    spec = RunSpec(workload="B", variants=("vr_etlwb", "tiny_etlwt"), tasklets=(3,), runs=2, oracle=True,
                   overrides={"txns_per_tasklet": 5, "n": 8, "k": 8})
    report = run(spec)
    assert [c.serializable for c in report.cells] == [[True, True], [True, True]]
