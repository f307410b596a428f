import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from cggd.cli import main
from cggd.constraints import load_constraints
from cggd.config import OUTPUT_ENV, load_config, parse_config
from cggd.model import ConfigError, load_checkpoint

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_scalar_demo_outputs(tmp_path, capsys):
    assert main(["scalar-demo", "--out", str(tmp_path), "--curve-points", "101"]) == 0
    rows = list(csv.reader((tmp_path / "fuzzy_update.csv").open()))
    assert rows[0] == ["w", "update"] and len(rows) == 102
    assert (tmp_path / "cggd_update.csv").exists()
    rep = json.loads((tmp_path / "attractors.json").read_text())
    stable = [round(a["location"], 2) for a in rep["cggd"]["attractors"] if a["stable"]]
    assert stable == [1.16, 2.0, 3.63]
    assert rep["fuzzy"]["metadata"]["fuzzy_weight"] == 1.0


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env-out"))
    assert main(["gen-synthetic", "--n", "50"]) == 0
    assert (tmp_path / "env-out" / "synthetic.csv").exists()
    assert main(["gen-synthetic", "--n", "50", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "synthetic_constraints.json").exists()


def test_verify_lemmas_exit_code(capsys):
    assert main(["verify-lemmas", "--trials1", "20", "--trials2", "100"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "expected to fail" in out


def test_check_gradients_exit_codes(capsys):
    assert main(["check-gradients", "--models", "2"]) == 0
    assert main(["check-gradients", "--models", "2", "--tol", "1e-300"]) == 1


def test_train_and_experiment_with_generated_data(tmp_path, capsys):
    gen = tmp_path / "gen"
    assert main(["gen-synthetic", "--n", "120", "--out", str(gen)]) == 0
    cfg_path = gen / "synthetic_config.json"
    doc = json.loads(cfg_path.read_text())
    doc["dataset"]["split_sizes"] = [40, 40, 40]
    doc["training"] = {"max_epochs": 10, "eta": 0.01}
    doc["model"] = {"hidden": [8]}
    cfg_path.write_text(json.dumps(doc))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--method", "fuzzy", "--out", str(out)]) == 0
    assert (out / "history_fuzzy_seed0.csv").exists()
    assert load_checkpoint(out / "checkpoint_fuzzy_seed0.json").layer_sizes == [4, 8, 2]
    assert main(["experiment", "--config", str(cfg_path), "--seeds", "0", "1",
                 "--out", str(out), "--format", "csv"]) == 0
    printed = capsys.readouterr().out
    assert (out / "report.csv").read_text() in printed
    assert main(["report", str(out / "report.json"), "--format", "table"]) == 0
    assert "cggd" in capsys.readouterr().out
    assert json.loads((out / "constraints_used.json").read_text())[-1]["label"] == "t_min <= t_max"


def test_toml_config(tmp_path):
    cfg = load_config(CONFIGS / "synthetic.toml")
    assert cfg.seeds == [0, 1, 2, 3] and cfg.hidden == [64, 32]
    assert cfg.cggd_config().schedule(100) == 1e-3 and cfg.fuzzy_config().weight == 1.0


@pytest.mark.parametrize("doc", [{"training": {"momentum": 0.9}}, {"optimizer": {}},
                                 {"methods": ["sgd"]}, {"cggd": {"rescale": 0.5}}])
def test_bad_config_rejected(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"training": {"eta": -1}}')
    assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_bc_template_on_bc_shaped_csv(tmp_path, capsys):
    text = (CONFIGS / "bc.toml").read_text()
    cfg = load_config(CONFIGS / "bc.toml")
    cols = cfg.dataset.input_columns + cfg.dataset.target_columns
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(800, len(cols)))
    rows[:, -1] = rows[:, -2] + np.abs(rows[:, -1])   # Next_Tmax >= Next_Tmin
    rows = rows.astype(object)
    rows[5, 3] = ""                                  # blank cells are skipped
    with open(tmp_path / "Bias_correction_ucl.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station", "Date"] + cols)
        w.writerows([[1, "2017-06-30"] + list(r) for r in rows])
    shutil.copy(CONFIGS / "bc_constraints.json", tmp_path)
    text = text.replace("max_epochs = 2000", "max_epochs = 5").replace("seeds = [0, 1, 2, 3]", "seeds = [0]")
    (tmp_path / "bc.toml").write_text(text)
    out = tmp_path / "out"
    assert main(["experiment", "--config", str(tmp_path / "bc.toml"), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert [s["method"] for s in rep["summaries"]] == ["baseline", "fuzzy", "cggd"]
    assert len(json.loads((out / "constraints_used.json").read_text())) == 5


def test_fi_template_constraints_resolve():
    cfg = load_config(CONFIGS / "fi.toml")
    cs = load_constraints(cfg.dataset.constraint_file, len(cfg.dataset.input_columns),
                          len(cfg.dataset.target_columns), cfg.dataset.input_columns,
                          cfg.dataset.target_columns)
    # food 1 + housing 2 + medical 3 against income 10
    x = np.zeros(9)
    x[0] = 10.0
    y = np.array([1.0, 0, 0, 0, 2.0, 3.0, 0, 0])
    assert cs.values(x, y)[0, 1] == -4.0
