import json
import subprocess
import sys

import pytest

from dftgamma.cli import main


@pytest.fixture
def cli(cache, tables, capsys):
    """Run the CLI in-process against the session table cache."""

    def run(*argv, cache_dir=True):
        args = list(argv)
        if cache_dir:
            args += ["--cache-dir", str(cache.directory)]
        code = main(args)
        out, err = capsys.readouterr()
        return code, out, err

    return run


def test_solve_single_writes_both_files(cli, tmp_path):
    code, out, _ = cli("solve-single", "--t", "0.5", "--out", str(tmp_path))
    assert code == 0
    doc = json.loads(out)
    assert doc == json.loads((tmp_path / "solution.json").read_text())
    lines = (tmp_path / "density.csv").read_text().splitlines()
    assert lines[0] == "r,rho" and len(lines) == 4097


def test_tf_d_neutral_atom_has_zero_multiplier(cli):
    code, out, _ = cli("solve-single", "--t", "1")
    doc = json.loads(out)
    assert code == 0 and abs(doc["theta"]) <= 1e-6


def test_repeated_runs_are_byte_identical(cli, tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        assert cli("allocate", "--model", "tf-c0", "--z", "1", "--z", "2", "--m", "3", "--out", str(d))[0] == 0
        outs.append((d / "allocation.json").read_bytes())
    assert outs[0] == outs[1]


def test_allocate_examples(cli):
    code, out, _ = cli("allocate", "--model", "tf-c0", "--z", "1", "--z", "2", "--m", "3")
    doc = json.loads(out)
    assert code == 0 and doc["alphas"] == pytest.approx([1 / 3, 8 / 3], abs=1e-3)
    assert doc["kkt"]["passed"] and not doc["ionized"]
    code, out, _ = cli("allocate", "--model", "tf-d", "--z", "1", "--z", "2", "--m", "5", "--format", "csv")
    lines = out.splitlines()
    assert code == 0 and lines[0] == "Z,alpha"
    assert [float(v.split(",")[1]) for v in lines[1:]] == pytest.approx([1.0, 2.0], abs=1e-3)


def test_l_table_is_idempotent(cli, tmp_path):
    code, out, _ = cli("l-table", "--model", "tf-d", "--out", str(tmp_path / "a"))
    doc = json.loads(out)
    assert code == 0 and doc["monotone_audit"] == "pass" and doc["convexity_audit"] == "pass"
    assert cli("l-table", "--model", "tf-d", "--out", str(tmp_path / "b"))[0] == 0
    for name in ("ltable.csv", "ltable.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gb_and_threshold(cli):
    code, out, _ = cli("gb", "--model", "tf-d", "--z", "2", "--alpha", "0.5", "--alpha", "3")
    rows = json.loads(out)["values"]
    assert code == 0 and rows[1]["g"] < rows[0]["g"] and rows[1]["dg"] == 0.0
    code, out, _ = cli("threshold", "--model", "tf-c0", "--z", "2")
    assert code == 0 and json.loads(out)["threshold"] == "infinite"
    code, out, _ = cli("threshold", "--model", "tf-d", "--z", "2", "--b", "0.5")
    assert code == 0 and json.loads(out)["threshold"] == 4.0


def test_gamma_check_single_and_recovery(cli):
    code, out, _ = cli("gamma-check", "--t", "0.5", "--eps", "1", "--eps", "0.01")
    doc = json.loads(out)
    assert code == 0 and doc["kind"] == "single-nucleus" and doc["passed"]
    args = ["gamma-check", "--z", "1", "--z", "2", "--x", "0,0,0", "--x", "5,0,0"]
    code, out, _ = cli(*args, "--m", "3", "--format", "csv")
    assert code == 0 and out.splitlines()[0] == "epsilon,G_eps,cross_attraction,cross_correlation,gap"
    code, _, err = cli(*args, "--alpha", "1", "--alpha", "2", "--eps", "0.1")
    assert code == 2 and "overlap" in err


def test_config_errors_list_every_problem_and_write_nothing(cli, tmp_path):
    code, out, err = cli("allocate", "--z", "-1", "--b", "0", "--out", str(tmp_path / "o"))
    assert code == 1 and out == ""
    assert "b: need b > 0" in err and "z: need" in err and "m: allocate needs --m" in err
    assert not (tmp_path / "o").exists()


def test_config_file_with_flag_override(cli, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": "tf-c0", "z": [1, 2], "m": 6}))
    code, out, _ = cli("allocate", "--config", str(cfg), "--m", "3")
    assert code == 0 and json.loads(out)["alphas"] == pytest.approx([1 / 3, 8 / 3], abs=1e-3)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": "tf-d", "grid": {"nodes": 10}, "colour": 1}))
    code, _, err = cli("allocate", "--config", str(bad))
    assert code == 1 and "'colour'" in err and "nested" in err


def test_out_of_range_is_a_config_error(cli):
    code, _, err = cli("gb", "--model", "tf-c0", "--alpha", "1e9")
    assert code == 1 and "extend the table" in err


def test_verify_subset(cli):
    code, out, err = cli("verify", "--criteria", "1", "--criteria", "3")
    doc = json.loads(out)
    assert code == 0 and doc["passed"]
    assert "[PASS] criterion 1" in err and "[PASS] criterion 3" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dftgamma", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "allocate" in proc.stdout
