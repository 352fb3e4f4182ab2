import json
import subprocess
import sys

import numpy as np
import pytest

from gcmm.cli import main
from gcmm.data import load_sync_csv, write_sync_csv
from gcmm.experiment import GeneratorSpec, sample_ground_truth


@pytest.fixture
def synth(tmp_path):
    path = tmp_path / "synth.csv"
    write_sync_csv(path, sample_ground_truth(GeneratorSpec.default(), 400, np.random.default_rng(0)))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# -- exit codes ------------------------------------------------------------------------------

def test_missing_subcommand_is_usage_error(capsys):
    assert run(capsys)[0] == 1


def test_missing_required_flag(capsys):
    code, _, err = run(capsys, "fit", "--data", "x.csv")
    assert code == 1 and "--k" in err


def test_unknown_flag(capsys):
    assert run(capsys, "ks", "--a", "a", "--b", "b", "--frobnicate")[0] == 1


def test_help_exits_zero(capsys):
    assert run(capsys, "--help")[0] == 0


def test_missing_file_is_data_error(capsys, tmp_path):
    code, _, err = run(capsys, "fit", "--data", tmp_path / "nope.csv", "--k", 1, "--model-out", tmp_path / "m")
    assert code == 2 and "data error" in err


def test_nan_in_csv_is_data_error(capsys, tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n3,nan\n")
    code, _, err = run(capsys, "fit-gmm", "--data", p, "--k", 1, "--model-out", tmp_path / "m")
    assert code == 2 and "row 2 col 2" in err


def test_invalid_config_is_usage_error(capsys, synth, tmp_path):
    assert run(capsys, "fit", "--data", synth, "--k", 0, "--model-out", tmp_path / "m")[0] == 1
    assert run(capsys, "fit", "--data", synth, "--k", 1, "--model-out", tmp_path / "m", "--use-unsync")[0] == 1


def test_infeasible_k_is_data_error(capsys, tmp_path):
    p = tmp_path / "small.csv"
    p.write_text("a,b\n1,2\n3,4\n5,7\n")
    assert run(capsys, "fit", "--data", p, "--k", 2, "--model-out", tmp_path / "m")[0] == 2


def test_ks_too_small_is_data_error(capsys, tmp_path):
    p = tmp_path / "small.csv"
    p.write_text("a\n1\n2\n3\n")
    assert run(capsys, "ks", "--a", p, "--b", p)[0] == 2


def test_bad_seed_list_is_usage_error(capsys):
    assert run(capsys, "benchmark", "--seeds", "a-b")[0] == 1


# -- pipelines ---------------------------------------------------------------------------------

def test_fit_sample_ks_pipeline(capsys, synth, tmp_path):
    model, draws = tmp_path / "model.json", tmp_path / "draws.csv"
    code, out, _ = run(capsys, "fit", "--data", synth, "--k", 2, "--model-out", model, "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["K"] == 2 and len(doc["weights"]) == 2
    assert doc["log_likelihood"] == doc["log_likelihood_trace"][-1]
    assert json.loads(model.read_text())["schema"] == "gcmm-v1"

    assert run(capsys, "sample", "--model", model, "--n", 500, "--out", draws, "--seed", 3)[0] == 0
    d = load_sync_csv(draws)
    assert (d.N, d.D) == (500, 2)

    code, out, _ = run(capsys, "ks", "--a", draws, "--b", synth)
    lines = out.splitlines()
    assert code == 0 and lines[0].startswith("statistic ") and lines[1].startswith("p ")
    assert float(lines[1].split()[1]) > 0.01


def test_ks_identical_files(capsys, synth):
    code, out, _ = run(capsys, "ks", "--a", synth, "--b", synth)
    assert code == 0
    assert out.splitlines()[:2] == ["statistic 0", "p 1"]


def test_ks_named_column(capsys, synth, tmp_path):
    code, out, _ = run(capsys, "ks", "--a", synth, "--b", synth, "--column", "x2", "--json")
    assert code == 0 and json.loads(out)["statistic"] == 0.0
    assert run(capsys, "ks", "--a", synth, "--b", synth, "--column", "zz")[0] == 2


def test_fit_gmm_and_sample(capsys, synth, tmp_path):
    model = tmp_path / "gmm.json"
    assert run(capsys, "fit-gmm", "--data", synth, "--k", 2, "--model-out", model)[0] == 0
    assert json.loads(model.read_text())["schema"] == "gmm-v1"
    assert run(capsys, "sample", "--model", model, "--n", 50, "--out", tmp_path / "s.csv",
               "--names", "p,q")[0] == 0
    assert load_sync_csv(tmp_path / "s.csv").dimension_names == ("p", "q")


def test_select_k_table(capsys, synth):
    code, out, _ = run(capsys, "select-k", "--data", synth, "--k-min", 1, "--k-max", 6, "--max-iters", 30)
    lines = out.splitlines()
    assert code == 0
    rows = [line for line in lines[1:] if line.strip() and line.split()[0].isdigit()]
    assert len(rows) == 6
    assert sum(line.rstrip().endswith("*") for line in rows) == 1


def test_select_k_bad_range(capsys, synth):
    assert run(capsys, "select-k", "--data", synth, "--k-min", 3, "--k-max", 2)[0] == 1


def test_fit_with_unsync_dir(capsys, synth, tmp_path):
    pools = tmp_path / "pools"
    pools.mkdir()
    (pools / "x1.csv").write_text("x1\n5.0\n6.0\n")
    code, out, _ = run(capsys, "fit", "--data", synth, "--unsync-dir", pools, "--use-unsync",
                       "--k", 1, "--model-out", tmp_path / "m.json", "--json")
    assert code == 0 and json.loads(out)["K"] == 1


def test_benchmark_writes_reports(capsys, tmp_path):
    out_dir = tmp_path / "bench"
    code, out, _ = run(capsys, "benchmark", "--seeds", "0,1", "--k", 1, "--n-train", 200,
                       "--n-resample", 100, "--n-holdout", 100, "--out", out_dir)
    assert code == 0
    assert sorted(p.name for p in out_dir.iterdir()) == ["report.json", "report.txt", "spec.json"]
    rep = json.loads((out_dir / "report.json").read_text())
    assert [r["seed"] for r in rep["rows"]] == [0, 1]
    assert (out_dir / "report.txt").read_text().rstrip("\n") == out.rstrip("\n")
    assert GeneratorSpec.from_dict(json.loads((out_dir / "spec.json").read_text())).K == 3


def test_benchmark_custom_spec(capsys, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"components": [
        {"rho": 0.2, "marginals": [{"family": "gaussian", "mu": 0, "sigma": 1}] * 2}]}))
    code, out, _ = run(capsys, "benchmark", "--spec", spec, "--seeds", "1", "--k", 1,
                       "--n-train", 200, "--n-resample", 100, "--n-holdout", 100, "--json")
    assert code == 0 and len(json.loads(out)["rows"]) == 1
    spec.write_text("{}")
    assert run(capsys, "benchmark", "--spec", spec, "--seeds", "1")[0] == 2


def test_export_plots(capsys, synth, tmp_path):
    model = tmp_path / "m.json"
    run(capsys, "fit", "--data", synth, "--k", 1, "--model-out", model)
    code, out, _ = run(capsys, "export-plots", "--model", model, "--data", synth,
                       "--out-dir", tmp_path / "plots", "--n-sample", 1000)
    assert code == 0 and len(out.splitlines()) == 6


def test_console_entry_point(tmp_path, synth):
    res = subprocess.run([sys.executable, "-m", "gcmm.cli", "ks", "--a", str(synth), "--b", str(synth)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("statistic 0")
