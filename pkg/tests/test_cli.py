import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from varorder.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, main
from varorder.io import read_data_csv, read_json

FAST = ["--chains", "2", "--warmup", "150", "--samples", "150", "--p-max", "3"]


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--m", "2", "--p", "1", "--n", "120", "--seed", "3", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def run_dir(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "fit"
    assert main(["fit", str(sim_dir / "data.csv"), "--out", str(out), "--seed", "5", *FAST]) == EXIT_OK
    return out


def test_simulate_outputs(sim_dir):
    d = read_data_csv(sim_dir / "data.csv")
    assert d.y.shape == (120, 2) and d.names == ["y1", "y2"]
    truth = read_json(sim_dir / "truth.json")
    assert truth["spec"]["seed"] == 3 and np.array(truth["phi"]).shape == (1, 2, 2)


def test_simulate_deterministic(tmp_path, sim_dir):
    main(["simulate", "--m", "2", "--p", "1", "--n", "120", "--seed", "3", "--out", str(tmp_path)])
    assert (tmp_path / "data.csv").read_bytes() == (sim_dir / "data.csv").read_bytes()
    assert (tmp_path / "truth.json").read_bytes() == (sim_dir / "truth.json").read_bytes()


def test_simulate_spec_file(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"m": 3, "p": 2, "n": 500, "seed": 7}))
    assert main(["simulate", "--spec", str(spec), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["simulate", "--spec", str(spec), "--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a" / "data.csv").read_bytes() == (tmp_path / "b" / "data.csv").read_bytes()


def test_simulate_bad_spec(tmp_path, capsys):
    assert main(["simulate", "--m", "1", "--p", "3", "--n", "2", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "n=2" in capsys.readouterr().err
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"m": 1, "p": 1, "n": 10, "colour": 1}))
    assert main(["simulate", "--spec", str(spec), "--out", str(tmp_path)]) == EXIT_USAGE


def test_fit_structure(run_dir):
    names = {p.name for p in run_dir.iterdir()}
    for f in ("config.json", "data.csv", "data_means.json", "draws_chain1.csv", "draws_chain2.csv",
              "diagnostics.json", "order_pmf.json", "order_pmf.csv", "order_pmf.svg", "manifest.json"):
        assert f in names
    header = (run_dir / "draws_chain1.csv").read_text().splitlines()[0]
    assert header.startswith("lp__,") and '"a[1,1,1]"' in header and '"L[2,2]"' in header
    pmf = read_json(run_dir / "order_pmf.json")
    assert sum(pmf["pmf"].values()) == pytest.approx(1.0, abs=1e-12)
    man = read_json(run_dir / "manifest.json")
    assert man["seed"] == 5 and len(man["config_hash"]) == 64
    assert "wall_time_seconds" not in man
    assert set(man["outputs"]) == names - {"manifest.json"}
    assert man["config"]["chains"] == 2


def test_fit_reproducible(sim_dir, run_dir, tmp_path):
    out = tmp_path / "again"
    assert main(["fit", str(sim_dir / "data.csv"), "--out", str(out), "--seed", "5", *FAST]) == EXIT_OK
    for f in sorted(run_dir.iterdir()):
        assert (out / f.name).read_bytes() == f.read_bytes(), f.name


def test_fit_missing_cell(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n3,\n5,6\n")
    assert main(["fit", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "line 3" in err and "'b'" in err


def test_fit_input_errors(tmp_path):
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("a,b\n1,2\n3\n")
    text = tmp_path / "text.csv"
    text.write_text("a\n1\nx\n")
    short = tmp_path / "short.csv"
    short.write_text("a\n" + "\n".join(str(i % 3) for i in range(5)) + "\n")
    for f in (ragged, text):
        assert main(["fit", str(f), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["fit", str(short), "--out", str(tmp_path / "o"), "--p-max", "5"]) == EXIT_USAGE
    assert main(["fit", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_config_unknown_key(tmp_path, sim_dir):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"chains": 2, "stepsize": 0.1}))
    assert main(["fit", str(sim_dir / "data.csv"), "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_unknown_command():
    assert main(["frobnicate"]) == EXIT_USAGE


def test_analyze_smaller_beta(run_dir, tmp_path):
    import shutil

    work = tmp_path / "w"
    shutil.copytree(run_dir, work)
    before = read_json(work / "order_pmf.json")
    assert main(["analyze", str(work), "--beta", "0.95"]) == EXIT_OK
    after = read_json(work / "order_pmf.json")
    assert after["threshold"] < before["threshold"]
    cdf_b = np.cumsum([before["pmf"][k] for k in sorted(before["pmf"], key=int)])
    cdf_a = np.cumsum([after["pmf"][k] for k in sorted(after["pmf"], key=int)])
    # stochastic dominance: mass moves toward larger orders
    assert np.all(cdf_a <= cdf_b + 1e-12)
    assert read_json(work / "manifest.json")["analysis"]["beta"] == 0.95


def test_analyze_flags_and_regions(run_dir, tmp_path):
    import shutil

    work = tmp_path / "w"
    shutil.copytree(run_dir, work)
    mode = read_json(work / "order_pmf.json")["mode"]
    if mode == 0:
        pytest.skip("modal order 0: no conditional analyses")
    assert (work / "granger.dot").exists()
    assert main(["analyze", str(work), "--no-granger"]) == EXIT_OK
    assert not (work / "granger.dot").exists() and not (work / "granger.json").exists()
    regions = tmp_path / "regions.csv"
    regions.write_text("name,label,x,y\ny1,Frontal,0.5,1.5\ny2,Occipital,0.5,-1.5\n")
    assert main(["analyze", str(work), "--regions", str(regions)]) == EXIT_OK
    dot = (work / "granger.dot").read_text()
    assert 'label="Frontal"' in dot and 'pos="0.5,1.5!"' in dot and 'label="Occipital"' in dot


def test_analyze_missing_draws(tmp_path, run_dir):
    import shutil

    work = tmp_path / "w"
    shutil.copytree(run_dir, work)
    for f in work.glob("draws_chain*.csv"):
        f.unlink()
    assert main(["analyze", str(work)]) == EXIT_USAGE
    assert main(["analyze", str(tmp_path / "none")]) == EXIT_USAGE


def test_diagnose(run_dir, capsys):
    assert main(["diagnose", str(run_dir)]) == EXIT_OK
    assert "R-hat" in capsys.readouterr().out


def test_study(tmp_path):
    cfg = tmp_path / "study.json"
    cfg.write_text(json.dumps({"m": [1], "p": [1], "n": [200], "seed": 2,
                               "sampler": {"chains": 2, "warmup": 60, "samples": 60},
                               "model": {"p_max": 2}}))
    assert main(["study", "--config", str(cfg), "--out", str(tmp_path / "s")]) == EXIT_OK
    assert (tmp_path / "s" / "cell_0000.json").exists()
    rows = (tmp_path / "s" / "study.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[0].startswith("cell,m,p,n")


def test_study_partial_failure(tmp_path):
    cfg = tmp_path / "study.json"
    # p_max larger than n makes the second cell fail inside the model
    cfg.write_text(json.dumps({"grid": [{"m": 1, "p": 1, "n": 100, "seed": 1}, {"m": 1, "p": 1, "n": 2, "seed": 2}],
                               "sampler": {"chains": 2, "warmup": 40, "samples": 40}, "model": {"p_max": 3}}))
    assert main(["study", "--config", str(cfg), "--out", str(tmp_path / "s")]) == EXIT_PARTIAL
    rec = read_json(tmp_path / "s" / "cell_0001.json")
    assert rec["ok"] is False and rec["error"]


def test_study_unknown_keys(tmp_path):
    cfg = tmp_path / "study.json"
    cfg.write_text(json.dumps({"sampler": {"thin": 2}}))
    assert main(["study", "--config", str(cfg), "--out", str(tmp_path / "s")]) == EXIT_USAGE


def test_numerical_exit_code(tmp_path, monkeypatch):
    from varorder import pipeline
    from varorder.exceptions import InitializationError

    data = tmp_path / "d.csv"
    data.write_text("a\n" + "\n".join(str(float(i % 5)) for i in range(40)) + "\n")

    def boom(*a, **k):
        raise InitializationError("no finite start")

    monkeypatch.setattr(pipeline, "sample", boom)
    assert main(["fit", str(data), "--out", str(tmp_path / "o"), "--p-max", "2"]) == EXIT_NUMERICAL


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "varorder.cli", "simulate", "--m", "1", "--p", "1", "--n", "20",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert Path(tmp_path / "data.csv").exists()
    r = subprocess.run([sys.executable, "-m", "varorder.cli", "fit"], capture_output=True, text=True)
    assert r.returncode == EXIT_USAGE
