import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp

from naum.cli import build_parser, main
from naum.engine import TRACE_HEADER
from naum.harness import synthetic_mc, synthetic_nmf
from naum.matio import save_matrix


@pytest.fixture
def nmf_csv(tmp_path):
    p = tmp_path / "M.csv"
    save_matrix(p, synthetic_nmf(30, 20, 3, seed=2))
    return p


@pytest.fixture
def mc_csv(tmp_path):
    p = tmp_path / "Mc.csv"
    save_matrix(p, synthetic_mc(30, 20, 3, seed=2))
    return p


def run_json(capsys, argv):
    assert main(argv) == 0
    return json.loads(capsys.readouterr().out)


def test_nmf_writes_trace(tmp_path, nmf_csv, capsys):
    out = tmp_path / "trace.csv"
    rec = run_json(capsys, ["nmf", "--input", str(nmf_csv), "--rank", "3", "--alpha", "0.6",
                            "--seed", "1", "--out", str(out)])
    assert rec["algorithm"] == "naum-a0.6" and rec["relerr"] < 1e-2
    rows = list(csv.reader(open(out)))
    assert tuple(rows[0]) == TRACE_HEADER
    assert len(rows) == rec["iterations"] + 2


def test_nmf_baseline_and_formats(tmp_path, nmf_csv, capsys):
    binp = tmp_path / "M.dat"
    save_matrix(binp, np.loadtxt(nmf_csv, delimiter=","), "dense-binary")
    rec = run_json(capsys, ["nmf", "--input", str(binp), "--format", "dense-binary", "--rank", "3",
                            "--baseline", "--max-iters", "50"])
    assert rec["algorithm"] == "hals" and rec["iterations"] <= 50
    rec = run_json(capsys, ["nmf", "--input", str(nmf_csv), "--rank", "3", "--scheme-x", "proxlin",
                            "--scheme-y", "prox", "--max-iters", "20", "--tol-obj", "0"])
    assert rec["iterations"] <= 20


def test_mc_record(tmp_path, mc_csv, capsys):
    rec = run_json(capsys, ["mc", "--input", str(mc_csv), "--rank", "3", "--eta", "0.05",
                            "--sr", "0.5", "--alpha", "0.4", "--seed", "1"])
    assert set(rec) == {"algorithm", "iterations", "recerr", "objective", "seconds", "reason"}
    assert rec["recerr"] < 0.1
    rec = run_json(capsys, ["mc", "--input", str(mc_csv), "--rank", "3", "--eta", "0.05",
                            "--sr", "0.5", "--baseline", "--max-iters", "30"])
    assert rec["algorithm"] == "palm"


def test_mc_coordinate_input(tmp_path, capsys):
    M = synthetic_mc(20, 15, 2, seed=0)
    mask = np.random.default_rng(0).uniform(size=M.shape) < 0.6
    save_matrix(tmp_path / "obs.mtx", sp.csr_matrix(np.where(mask, M, 0.0)))
    rec = run_json(capsys, ["mc", "--input", str(tmp_path / "obs.mtx"), "--rank", "2",
                            "--eta", "0.01"])
    assert rec["recerr"] < 0.05


def test_no_timing_is_bitwise_reproducible(tmp_path, nmf_csv, capsys):
    outs = []
    for name in ("a.csv", "b.csv"):
        rec = run_json(capsys, ["nmf", "--input", str(nmf_csv), "--rank", "3", "--seed", "4",
                                "--no-timing", "--out", str(tmp_path / name)])
        outs.append(((tmp_path / name).read_bytes(), json.dumps(rec)))
    assert outs[0] == outs[1]
    assert json.loads(outs[0][1])["seconds"] == 0.0


def test_bench(tmp_path, nmf_csv, capsys):
    cfg = {"problem": {"kind": "nmf", "rank": 3, "input": nmf_csv.name},
           "algorithms": [{"name": "naum", "alpha": 0.6}, {"name": "hals"}],
           "seeds": [0, 1], "max_iters": 30}
    (tmp_path / "bench.json").write_text(json.dumps(cfg))
    out = tmp_path / "report.json"
    summary = run_json(capsys, ["bench", "--config", str(tmp_path / "bench.json"), "--out", str(out),
                                "--jobs", "2", "--no-timing"])
    assert set(summary) == {"naum-a0.6", "hals"}
    report = json.loads(out.read_text())
    assert len(report["trials"]) == 4
    assert all(t["seconds"] == 0.0 for t in report["trials"])


def test_verify(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "4/4 suites passed" in out and "FAIL" not in out


@pytest.mark.parametrize("argv", [
    [],
    ["nmf", "--rank", "3"],
    ["nmf", "--input", "x.csv", "--rank", "three"],
    ["nmf", "--input", "x.csv", "--rank", "3", "--alpha", "nan"],
    ["nmf", "--input", "x.csv", "--rank", "3", "--scheme-x", "newton"],
    ["mc", "--input", "x.csv", "--rank", "3"],
    ["nmf", "--input", "x.csv", "--rank", "3", "--max-seconds", "0"],
])
def test_bad_flags_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as e:
        build_parser().parse_args(argv)
    assert e.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_errors_exit_1(tmp_path, nmf_csv, capsys):
    assert main(["nmf", "--input", str(tmp_path / "missing.csv"), "--rank", "2"]) == 1
    assert main(["nmf", "--input", str(nmf_csv), "--rank", "99"]) == 1
    assert main(["nmf", "--input", str(nmf_csv), "--rank", "2", "--alpha", "1"]) == 1
    assert main(["mc", "--input", str(nmf_csv), "--rank", "2", "--eta", "1"]) == 1  # no --sr
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    assert main(["nmf", "--input", str(bad), "--rank", "1"]) == 1
    err = capsys.readouterr().err
    assert "line 2" in err and "error" in err


def test_module_entry_point(nmf_csv):
    proc = subprocess.run([sys.executable, "-m", "naum", "nmf", "--input", str(nmf_csv),
                           "--rank", "0"], capture_output=True, text=True)
    assert proc.returncode == 1
    proc = subprocess.run([sys.executable, "-m", "naum", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2
