import csv
import io
import json

import numpy as np
import pytest

from cggd.constraints import satisfaction_ratio
from cggd.data import prepare, synthetic_dataset
from cggd.experiment import (MethodSummary, RunRecord, RunReport, emit_report, format_cell,
                             run_experiment, summarize)
from cggd.model import ConfigError, load_checkpoint
from cggd.optim import CggdConfig, FixedStep


@pytest.fixture(scope="module")
def small():
    x, y, cs = synthetic_dataset(120, seed=1)
    return prepare(x, y, (40, 40, 40), seed=0), cs


def quick_cfg(epochs=30):
    return CggdConfig(schedule=FixedStep(0.01), max_epochs=epochs)


def test_format_cells():
    assert format_cell(0.0079, 0.0084, 4) == "0.0079±0.0084"
    assert format_cell(99.96, 0.05, 2) == "99.96±0.05"
    assert format_cell(float("nan"), float("nan"), 2) == "failed"


def test_protocol_shape(small):
    data, cs = small
    rep = run_experiment(data, cs, seeds=(0, 1, 2, 3), cfg=quick_cfg(5), layer_sizes=[4, 8, 2])
    assert len(rep.runs) == 12
    assert [s.method for s in rep.summaries] == ["baseline", "fuzzy", "cggd"]
    table = emit_report(rep, "table").splitlines()
    assert table[0].split()[:3] == ["Method", "MSE", "SR"]
    assert len(table) == 5


def test_single_seed_std_is_zero(small):
    data, cs = small
    rep = run_experiment(data, cs, ["cggd"], [3], quick_cfg(5), [4, 8, 2])
    s = rep.summary("cggd")
    assert s.mse_std == 0.0 and s.sr_std == 0.0 and s.n_runs == 1


def test_bad_requests(small):
    data, cs = small
    with pytest.raises(ConfigError):
        run_experiment(data, cs, [], [0])
    with pytest.raises(ConfigError):
        run_experiment(data, cs, ["cggd"], [])
    with pytest.raises(ConfigError):
        run_experiment(data, cs, ["sgd"], [0])
    with pytest.raises(ConfigError):
        run_experiment(data, cs, ["cggd"], [0], layer_sizes=[3, 8, 2])
    with pytest.raises(ConfigError):
        emit_report(RunReport([], []), "table")
    rep = RunReport([], [MethodSummary("cggd", 0.1, 0.0, 99.0, 0.0, 1, 0)])
    with pytest.raises(ConfigError):
        emit_report(rep, "xml")


def test_diverged_runs_excluded_and_counted():
    runs = [RunRecord("cggd", 0, 0.1, 1.0, 1.0, False, 5),
            RunRecord("cggd", 1, float("inf"), 0.0, 0.0, True, 0),
            RunRecord("fuzzy", 0, float("nan"), 0.0, 0.0, True, 0)]
    cggd, fuzzy = summarize(runs, ["cggd", "fuzzy"])
    assert cggd.n_runs == 1 and cggd.n_diverged == 1 and cggd.mse_mean == 0.1
    assert fuzzy.failed and fuzzy.n_diverged == 1
    assert "failed" in emit_report(RunReport(runs, [cggd, fuzzy]), "table")


def test_reports_are_byte_identical(small, tmp_path):
    data, cs = small
    a = run_experiment(data, cs, seeds=(0, 1), cfg=quick_cfg(), layer_sizes=[4, 8, 2])
    b = run_experiment(data, cs, seeds=(0, 1), cfg=quick_cfg(), layer_sizes=[4, 8, 2])
    for fmt in ("csv", "json", "table"):
        assert emit_report(a, fmt) == emit_report(b, fmt)
    back = RunReport.from_dict(json.loads(emit_report(a, "json")))
    assert emit_report(back, "csv") == emit_report(a, "csv")


def test_history_sr_matches_checkpoint(small, tmp_path):
    data, cs = small
    cfg = CggdConfig(schedule=FixedStep(0.01), max_epochs=25, selection="final")
    run_experiment(data, cs, ["cggd", "fuzzy"], [0], cfg, [4, 8, 2], out_dir=tmp_path)
    for method in ("cggd", "fuzzy"):
        rows = list(csv.DictReader(io.StringIO((tmp_path / f"history_{method}_seed0.csv").read_text())))
        last = [r for r in rows if r["split"] == "train"][-1]
        model = load_checkpoint(tmp_path / f"checkpoint_{method}_seed0.json")
        sr = satisfaction_ratio(cs, data.train.raw_x, data.scaling.apply(model.predict(data.train.x)))
        assert abs(sr - float(last["satisfaction_ratio"])) <= 1e-12


def test_sr_reported_in_percent(small):
    data, cs = small
    rep = run_experiment(data, cs, ["baseline"], [0], quick_cfg(3), [4, 8, 2])
    r = rep.runs[0]
    assert rep.summary("baseline").sr_mean == pytest.approx(100 * r.test_sr)
    assert 0.0 <= r.test_sr <= 1.0
    assert rep.metadata["std"].startswith("population")
