import csv
import json
import subprocess
import sys

import pytest

from smilegrid.cli import STATS_COLUMNS, TRACE_COLUMNS, main
from smilegrid.pipeline import McConfig, default_contract
from smilegrid.tables import load


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def suite_file(tmp_path):
    out = tmp_path / "suite.json"
    assert main(["synthetic", "--count", "12", "--seed", "3", "--output", str(out)]) == 0
    return str(out)


@pytest.fixture
def small_contract(tmp_path):
    c = default_contract(2, McConfig(samples=40_000, seed=1))
    return _write(tmp_path / "contract.json", c.to_dict())


# calibrate

def test_calibrate_writes_results_and_summary(suite_file, tmp_path, capsys):
    out = tmp_path / "res.json"
    assert main(["calibrate", "--input", suite_file, "--output", str(out),
                 "--epsilon", "1e-10"]) == 0
    data = json.loads(out.read_text())
    assert data["schema_version"] == 1
    assert data["summary"]["converged"] == 12
    assert data["summary"]["mean_iterations"] > 0
    assert len(data["results"]) == 12
    assert "mean_iterations=" in capsys.readouterr().err


def test_calibrate_truth_recovered(suite_file, tmp_path):
    out = tmp_path / "res.json"
    main(["calibrate", "--input", suite_file, "--output", str(out)])
    truth = json.loads(open(suite_file).read())["truth"]
    for res, t in zip(json.loads(out.read_text())["results"], truth):
        assert res["alpha_star"] == pytest.approx(t["alpha"], abs=1e-6)
        assert res["rho_star"] == pytest.approx(t["rho"], abs=1e-6)


def test_calibrate_trace_csv(suite_file, tmp_path):
    trace = tmp_path / "trace.csv"
    assert main(["calibrate", "--input", suite_file, "--output", str(tmp_path / "r.json"),
                 "--trace", str(trace)]) == 0
    rows = list(csv.reader(trace.open()))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert {r[0] for r in rows[1:]} == {str(k) for k in range(12)}


def test_calibrate_gd_method(suite_file, tmp_path):
    out = tmp_path / "gd.json"
    assert main(["calibrate", "--input", suite_file, "--output", str(out), "--method", "gd",
                 "--epsilon", "1e-8", "--trace", str(tmp_path / "t.csv")]) in (0, 1)
    assert json.loads(out.read_text())["summary"]["method"] == "gd"


def test_empty_smile_list_succeeds(tmp_path):
    src = _write(tmp_path / "e.json", {"schema_version": 1, "smiles": []})
    out = tmp_path / "out.json"
    assert main(["calibrate", "--input", src, "--output", str(out)]) == 0
    assert json.loads(out.read_text())["results"] == []


def test_non_convergence_exits_one(suite_file, tmp_path):
    data = json.loads(open(suite_file).read())
    data["config"] = {"max_iterations": 1}
    src = _write(tmp_path / "cap.json", data)
    assert main(["calibrate", "--input", src, "--output", str(tmp_path / "o.json")]) == 1


@pytest.mark.parametrize("argv", [
    ["calibrate", "--variant", "V4"],
    ["calibrate", "--epsilon", "-1"],
    ["calibrate", "--workers", "0"],
    ["calibrate", "--workers", "two"],
    ["table", "--builder", "DS9", "--zeta", "1e-4"],
    ["table", "--builder", "DS3"],
    ["table", "--zeta", "0"],
    ["table", "--model", "cauchy"],
    ["price", "--samples", "0"],
    ["sweep", "--param", "vol"],
    ["sweep", "--ladder", "1e-4,abc"],
    ["sweep", "--ladder", "1e-4,1e-12", "--benchmark", "1e-11"],
    ["frobnicate"],
])
def test_invalid_input_exits_two(argv, capsys):
    assert main(argv) == 2


def test_bad_schema_exits_two(tmp_path):
    for obj in ({"smiles": []}, {"schema_version": 2, "smiles": []}, [1, 2]):
        src = _write(tmp_path / "bad.json", obj)
        assert main(["calibrate", "--input", src]) == 2
    bad = tmp_path / "broken.json"
    bad.write_text("{")
    assert main(["calibrate", "--input", str(bad)]) == 2
    src = _write(tmp_path / "rec.json", {"schema_version": 1, "smiles": [{"k_minus": 1}]})
    assert main(["calibrate", "--input", src]) == 2


# table

def test_table_stats_row_appended(tmp_path):
    stats = tmp_path / "stats.csv"
    for b in ("CPU1", "CPU2", "DS1", "DS2", "DS3"):
        assert main(["table", "--model", "standard-normal", "--builder", b, "--zeta", "1e-5",
                     "--stats", str(stats), "--output", str(tmp_path / f"{b}.bin")]) == 0
    rows = list(csv.DictReader(stats.open()))
    assert tuple(rows[0].keys()) == STATS_COLUMNS
    assert [r["builder"] for r in rows] == ["CPU1", "CPU2", "DS1", "DS2", "DS3"]
    for r in rows:
        assert float(r["max_zeta"]) <= 1e-5
        assert load(tmp_path / f"{r['builder']}.bin").n == int(r["N"])


def test_fixed_table_has_initial_size(tmp_path, capsys):
    for model in ("uniform", "lognormal", "sabr-implied"):
        assert main(["table", "--model", model, "--builder", "FS"]) == 0
        rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
        assert rows[0]["N"] == "500"


def test_table_from_input_file(tmp_path):
    src = _write(tmp_path / "t.json", {
        "schema_version": 1,
        "model": {"name": "sabr", "params": {"alpha": 0.4, "beta": 0.5, "rho": -0.2,
                                             "s0": 2.0, "f0": 100.0, "T": 1.0}},
        "table": {"builder": "CPU2", "zeta_cap": 1e-6, "n_initial": 300}})
    out = tmp_path / "t.csv"
    assert main(["table", "--input", src, "--output", str(out)]) == 0
    t = load(out)
    assert t.built_by == "CPU2" and t.zeta_cap == 1e-6


def test_table_growth_exits_one(tmp_path):
    src = _write(tmp_path / "t.json", {"schema_version": 1,
                                       "table": {"max_table_size": 600}})
    assert main(["table", "--input", src, "--model", "normal", "--builder", "DS3",
                 "--zeta", "1e-9"]) == 1


# price and sweep

def test_price_output(small_contract, tmp_path):
    out = tmp_path / "p.json"
    assert main(["price", "--input", small_contract, "--output", str(out),
                 "--epsilon", "1e-8", "--zeta", "1e-5"]) == 0
    data = json.loads(out.read_text())
    assert data["schema_version"] == 1
    assert len(data["coupons"]) == 2
    assert data["total_pv"] == data["coupons"][0]["pv"] + data["coupons"][1]["pv"]


def test_sweep_single_benchmark_row(small_contract, tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--input", small_contract, "--ladder", "1e-6", "--benchmark", "1e-6",
                 "--epsilon", "1e-8", "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 3
    assert lines[1].split(",")[3] == "0.0"


def test_sweep_default_ladder(small_contract, tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--input", small_contract, "--samples", "20000",
                 "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert [ln.split(",")[1] for ln in lines[1:-1]] == \
        ["FS", "0.0005", "0.0001", "1e-05", "1e-06", "5e-08"]
    assert lines[-1].split(",")[0] == "verdict"


def test_sweep_epsilon_ladder(small_contract, tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--input", small_contract, "--param", "epsilon",
                 "--ladder", "1e-4,1e-8,machine", "--benchmark", "1e-7", "--zeta", "1e-6",
                 "--samples", "20000", "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert [ln.split(",")[1] for ln in lines[1:-1]] == ["0.0001", "1e-08", "machine"]


def test_sweep_missing_benchmark_exits_two(tmp_path):
    d = default_contract().to_dict()
    d["sweep"] = {"param": "zeta", "ladder": [1e-4, 1e-5]}
    assert main(["sweep", "--input", _write(tmp_path / "c.json", d)]) == 2


def test_sweep_failing_row_exits_one(small_contract, tmp_path, capsys):
    assert main(["sweep", "--input", small_contract, "--ladder", "1e-13",
                 "--benchmark", "1e-13", "--epsilon", "1e-6"]) == 1
    assert "zeta=1e-13" in capsys.readouterr().err


# determinism

def _run_twice(argv, tmp_path, name):
    outs = []
    for w in ("1", "4"):
        out = tmp_path / f"{name}_{w}"
        assert main(argv + ["--workers", w, "--output", str(out)]) == 0
        outs.append(out.read_bytes())
    return outs


def test_outputs_identical_across_worker_counts(suite_file, small_contract, tmp_path):
    a, b = _run_twice(["calibrate", "--input", suite_file], tmp_path, "cal")
    assert a == b
    a, b = _run_twice(["price", "--input", small_contract, "--epsilon", "1e-8",
                       "--zeta", "1e-5", "--samples", "150000"], tmp_path, "price")
    assert a == b
    a, b = _run_twice(["sweep", "--input", small_contract, "--ladder", "1e-4,1e-6",
                       "--benchmark", "1e-7", "--epsilon", "1e-8"], tmp_path, "sweep")
    assert a == b


def test_workers_from_environment(suite_file, tmp_path, monkeypatch):
    monkeypatch.setenv("SMILEGRID_WORKERS", "3")
    out3 = tmp_path / "w3.json"
    assert main(["calibrate", "--input", suite_file, "--output", str(out3)]) == 0
    monkeypatch.setenv("SMILEGRID_WORKERS", "nope")
    assert main(["calibrate", "--input", suite_file]) == 2
    monkeypatch.setenv("SMILEGRID_WORKERS", "1")
    out1 = tmp_path / "w1.json"
    main(["calibrate", "--input", suite_file, "--output", str(out1)])
    assert out1.read_bytes() == out3.read_bytes()


def test_console_entry_point(tmp_path):
    out = tmp_path / "s.json"
    proc = subprocess.run([sys.executable, "-m", "smilegrid.cli", "synthetic", "--count", "2",
                           "--output", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(out.read_text())["schema_version"] == 1
    proc = subprocess.run([sys.executable, "-m", "smilegrid.cli", "table", "--builder", "XX"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
