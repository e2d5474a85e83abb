import json
import os
import subprocess
import sys

import numpy as np
import pytest

from compiv.cli import ConfigError, ingest_real, load_experiment_config, main
from compiv.datagen import IVDataset

TOY = """\
taxon_a,taxon_b,taxon_c,treated,weight
10,0,5,1,1
3,4,0,0,2
7,7,7,1,3
0,1,9,0,4
2,8,1,1,5
"""


@pytest.fixture
def toy_csv(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text(TOY)
    return path


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--preset", "A-p3", "--seed", "7", "--n", "300", "--out", str(d / "a.csv")]) == 0
    return d


def test_simulate_writes_csv_and_truth(simulated):
    lines = (simulated / "a.csv").read_text().splitlines()
    assert lines[0] == "z_1,z_2,x_1,x_2,x_3,y"
    assert len(lines) == 301
    truth = json.loads((simulated / "a.truth.json").read_text())
    assert {"beta_log", "beta0", "setting", "oracle_const", "seed"} <= set(truth)
    assert truth["seed"] == 7


def test_simulate_default_size(tmp_path):
    assert main(["simulate", "--preset", "A-p3", "--seed", "7", "--out", str(tmp_path / "d.csv")]) == 0
    assert len((tmp_path / "d.csv").read_text().splitlines()) == 1001


def test_simulate_unknown_preset(tmp_path, capsys):
    assert main(["simulate", "--preset", "A-p4", "--out", str(tmp_path / "x.csv")]) == 2
    assert "unknown preset" in capsys.readouterr().err


def test_bad_flag_exits_2():
    assert main(["fit", "--method", "nope", "--data", "x.csv"]) == 2


def test_help_for_every_subcommand():
    for cmd in ("simulate", "fit", "evaluate", "benchmark", "diversity-iv", "ingest"):
        assert main([cmd, "--help"]) == 0


def test_fit_and_evaluate(simulated, capsys):
    fit_path = simulated / "fit.json"
    assert main(["fit", "--method", "2sls-ilr", "--data", str(simulated / "a.csv"), "--out", str(fit_path)]) == 0
    fit = json.loads(fit_path.read_text())
    assert len(fit["diagnostics"]["f_stats"]) == 2
    capsys.readouterr()
    assert main(["evaluate", "--fit", str(fit_path), "--truth", str(simulated / "a.truth.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["n_interventions"] == 250 and rep["oos_mse"] >= 0


def test_fit_numerical_failure_exit_3(simulated, tmp_path):
    ds = IVDataset.from_csv(simulated / "a.csv")
    IVDataset(ds.Z[:, :1], ds.X, ds.y).to_csv(tmp_path / "one_z.csv")
    out = tmp_path / "f.json"
    assert main(["fit", "--method", "2sls-ilr", "--data", str(tmp_path / "one_z.csv"), "--out", str(out)]) == 3


def test_fit_missing_file_exit_2(tmp_path):
    assert main(["fit", "--method", "ilr-lc", "--data", str(tmp_path / "none.csv")]) == 2


def test_fit_loss_only_for_log_contrast(simulated, tmp_path):
    args = ["fit", "--method", "2sls", "--loss", "huber", "--data", str(simulated / "a.csv"),
            "--out", str(tmp_path / "f.json")]
    assert main(args) == 2


def test_benchmark_outputs(tmp_path):
    csv = tmp_path / "t.csv"
    args = ["benchmark", "--presets", "A-p3", "--methods", "2sls", "2sls-ilr", "--n-seeds", "2", "--n", "200",
            "--out-csv", str(csv), "--out-jsonl", str(tmp_path / "r.jsonl")]
    assert main(args) == 0
    rows = csv.read_text().splitlines()
    assert rows[0].startswith("scenario,method") and len(rows) == 3
    assert len((tmp_path / "r.jsonl").read_text().splitlines()) == 4


def test_benchmark_single_seed_rejected():
    assert main(["benchmark", "--methods", "2sls", "--n-seeds", "1"]) == 2


def test_experiment_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys"):
        load_experiment_config({"scenarios": ["A-p3"], "methods": ["2sls"], "seedz": 3})
    cfg = load_experiment_config({"scenarios": ["A-p3"], "methods": ["ilr-lc", "OnlyLC"], "n": 100})
    assert cfg["methods"] == ["ILR+LC", "OnlyLC"] and cfg["specs"][0].n == 100


def test_ingest_toy(toy_csv):
    ds = ingest_real(toy_csv, "treated", "weight")
    assert ds.X.shape == (5, 3)
    assert np.all(ds.X > 0)
    np.testing.assert_allclose(ds.X.sum(axis=1), 1.0)
    np.testing.assert_array_equal(ds.Z[:, 0], [1, 0, 1, 0, 1])
    assert ds.meta["taxa"] == ["taxon_a", "taxon_b", "taxon_c"]


def test_ingest_binary(tmp_path):
    path = tmp_path / "b.csv"
    path.write_text("a,b,z,y\n1,2,0,1\n3,4,1,2\n5,6,0,3\n7,8,1,4\n")
    np.testing.assert_array_equal(ingest_real(path, "z", "y", binary=True).y, [-1, -1, 1, 1])


@pytest.mark.parametrize("body,msg", [("1,x,0,1\n", "non-numeric"), ("0,0,1,1\n", "all-zero")])
def test_ingest_errors(tmp_path, body, msg):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,z,y\n1,2,0,1\n" + body)
    with pytest.raises(ConfigError, match=msg):
        ingest_real(path, "z", "y")


def test_ingest_and_diversity_commands(toy_csv, tmp_path, capsys):
    out = tmp_path / "d.csv"
    assert main(["ingest", "--counts-csv", str(toy_csv), "--instrument-col", "treated", "--outcome-col", "weight",
                 "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 6
    rc = main(["diversity-iv", "--counts-csv", str(toy_csv), "--instrument-col", "treated",
               "--outcome-col", "weight", "--measure", "shannon", "richness", "--out", str(tmp_path / "s.json")])
    assert rc == 0
    doc = json.loads((tmp_path / "s.json").read_text())
    assert set(doc) == {"shannon", "richness"}


def test_seed_from_environment(tmp_path):
    env_out = tmp_path / "env.csv"
    flag_out = tmp_path / "flag.csv"
    code = "import sys; from compiv.cli import main; sys.exit(main(sys.argv[1:]))"
    env = dict(os.environ, COMPIV_SEED="11")
    subprocess.run([sys.executable, "-c", code, "simulate", "--preset", "B-p3", "--n", "20", "--out", str(env_out)],
                   check=True, env=env, capture_output=True)
    assert main(["simulate", "--preset", "B-p3", "--n", "20", "--seed", "11", "--out", str(flag_out)]) == 0
    assert env_out.read_text() == flag_out.read_text()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "compiv", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
