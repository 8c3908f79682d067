from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

import pytest

from mhsde.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_simulate_writes_files_and_manifest(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", str(CONFIGS / "ctmc_two_state.yaml"), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["audit.csv", "manifest.json", "path.csv"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 1
    assert manifest["outputs"] == {name: _sha(out / name) for name in ("path.csv", "audit.csv")}
    assert (out / "path.csv").read_text().startswith("# schema_version=1")


def test_simulate_dump_tape(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", str(CONFIGS / "gbm_zero_intensity.yaml"), "--out", str(out), "--dump-tape"]) == 0
    assert (out / "tape.bin").stat().st_size > 0
    assert "tape.bin" in json.loads((out / "manifest.json").read_text())["outputs"]


def test_simulate_rate_bound_exit_code(tmp_path, capsys):
    code = main(["simulate", str(CONFIGS / "ctmc_two_state.yaml"), "--set", "model.lambda_per_time=0.2",
                 "--set", "run.horizon_time=100.0", "--out", str(tmp_path / "run")])
    assert code == 3
    err = _error(capsys)
    assert err["error"] == "rate_bound" and err["exit_code"] == 3
    assert err["time"] > 0 and err["lam"] == 0.2


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "a")]) == 2
    assert _error(capsys)["error"] == "config"
    assert main(["scenario", "nonexistent", "--out", str(tmp_path / "b")]) == 2
    assert "unknown scenario" in _error(capsys)["message"]
    assert main(["converge", str(CONFIGS / "gbm_zero_intensity.yaml"), "--levels", "8,16", "--n-fine", "64",
                 "--out", str(tmp_path / "c")]) == 2
    assert "at least 3 levels" in _error(capsys)["message"]
    assert main(["simulate", str(CONFIGS / "ctmc_two_state.yaml"), "--set", "model.nope=1",
                 "--out", str(tmp_path / "d")]) == 2


def test_scenario_rerun_is_byte_identical(tmp_path):
    texts = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["scenario", "insurance", "--seed", "7", "--horizon", "2", "--n", "64", "--out", str(out)]) == 0
        assert sorted(p.name for p in out.iterdir()) == [
            "audit.csv", "indicators.csv", "manifest.json", "path.csv", "plot.py"]
        texts.append({name: (out / name).read_bytes() for name in ("path.csv", "audit.csv", "indicators.csv")})
    assert texts[0] == texts[1]


def _slope(summary):
    return float(re.search(r"fitted log2-slope: (-?[0-9.]+)", summary).group(1))


def test_converge_zero_intensity_slope(tmp_path, capsys):
    code = main(["converge", str(CONFIGS / "gbm_zero_intensity.yaml"), "--levels", "8,16,32,64,128,256",
                 "--n-fine", "1024", "--paths", "200", "--metric", "nodes", "--jobs", "1",
                 "--out", str(tmp_path / "c")])
    assert code == 0
    summary = capsys.readouterr().out
    assert -0.6 <= _slope(summary) <= -0.4
    assert (tmp_path / "c" / "summary.txt").read_text() == summary
    assert "consistency violations: 0" in summary


def test_converge_insurance_reports_trend(tmp_path, capsys):
    code = main(["converge", str(CONFIGS / "insurance.yaml"), "--levels", "16,32,64", "--n-fine", "256",
                 "--paths", "40", "--horizon", "1", "--jobs", "1", "--out", str(tmp_path / "c")])
    assert code == 0
    summary = capsys.readouterr().out
    assert re.search(r"decoupling trend \(non-increasing, \d+% bootstrap\): (PASS|FAIL)", summary)
    assert "consistency violations: 0" in summary


def test_bad_levels_argument(tmp_path, capsys):
    assert main(["converge", str(CONFIGS / "gbm_zero_intensity.yaml"), "--levels", "8,x,32", "--n-fine", "64",
                 "--out", str(tmp_path / "c")]) == 2
    assert _error(capsys)["error"] == "config"


@pytest.mark.parametrize("argv", [[], ["bogus"]])
def test_argparse_usage_errors(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2
