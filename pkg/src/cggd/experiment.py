"""Multi-seed comparison of baseline, fuzzy and CGGD training."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .constraints import ConstraintSet, satisfaction_ratio
from .data import Dataset
from .model import ConfigError, init_mlp, save_checkpoint
from .optim import METHODS, CggdConfig, FuzzyConfig, history_csv, train

log = logging.getLogger(__name__)


@dataclass
class RunRecord:
    method: str
    seed: int
    test_mse: float
    test_sr: float
    train_sr: float
    diverged: bool
    selected_epoch: int


@dataclass
class MethodSummary:
    method: str
    mse_mean: float
    mse_std: float
    sr_mean: float      # percent
    sr_std: float
    n_runs: int
    n_diverged: int
    failed: bool = False


@dataclass
class RunReport:
    runs: list[RunRecord]
    summaries: list[MethodSummary]
    metadata: dict = field(default_factory=dict)

    def summary(self, method: str) -> MethodSummary:
        for s in self.summaries:
            if s.method == method:
                return s
        raise KeyError(method)

    def to_dict(self) -> dict:
        return {"metadata": self.metadata,
                "summaries": [asdict(s) for s in self.summaries],
                "runs": [asdict(r) for r in self.runs]}

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls([RunRecord(**r) for r in d["runs"]],
                   [MethodSummary(**s) for s in d["summaries"]], d.get("metadata", {}))


def summarize(runs: Sequence[RunRecord], methods: Sequence[str]) -> list[MethodSummary]:
    """Mean and population standard deviation over non-diverged runs per method."""
    out = []
    for m in methods:
        ok = [r for r in runs if r.method == m and not r.diverged]
        n_div = sum(1 for r in runs if r.method == m and r.diverged)
        if not ok:
            nan = float("nan")
            out.append(MethodSummary(m, nan, nan, nan, nan, 0, n_div, failed=True))
            continue
        mse = np.array([r.test_mse for r in ok])
        sr = 100.0 * np.array([r.test_sr for r in ok])
        out.append(MethodSummary(m, float(mse.mean()), float(mse.std()),
                                 float(sr.mean()), float(sr.std()), len(ok), n_div))
    return out


def run_experiment(data: Dataset, cs: ConstraintSet, methods: Sequence[str] = METHODS,
                   seeds: Sequence[int] = (0, 1, 2, 3), cfg: CggdConfig | None = None,
                   layer_sizes: Sequence[int] | None = None,
                   fuzzy: FuzzyConfig | None = None, out_dir=None) -> RunReport:
    """Train every (method, seed) pair and aggregate test metrics.

    Each seed fixes the network initialisation, shared across methods.  When
    ``out_dir`` is given, per-run history CSVs and selected checkpoints are
    written there.
    """
    methods, seeds = list(methods), list(seeds)
    if not methods or not seeds:
        raise ConfigError("need at least one method and one seed")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    cfg = cfg or CggdConfig()
    fuzzy = fuzzy or FuzzyConfig()
    cs.check_dims(data.n_inputs, data.n_outputs)
    sizes = list(layer_sizes or [data.n_inputs, 64, 32, data.n_outputs])
    if sizes[0] != data.n_inputs or sizes[-1] != data.n_outputs:
        raise ConfigError(f"layer sizes {sizes} do not match the data "
                          f"({data.n_inputs} inputs, {data.n_outputs} outputs)")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    runs = []
    scaling = data.scaling
    for method in methods:
        for seed in seeds:
            model = init_mlp(sizes, seed)
            res = train(model, data, cs, method, cfg, seed, fuzzy)
            sel = res.selected
            pred_test = sel.predict(data.test.x)
            pred_train = sel.predict(data.train.x)
            test_mse = float(np.mean((pred_test - data.test.y) ** 2))
            if len(cs) and len(data.test):
                test_sr = satisfaction_ratio(cs, data.test.raw_x, scaling.apply(pred_test))
                train_sr = satisfaction_ratio(cs, data.train.raw_x, scaling.apply(pred_train))
            else:
                test_sr = train_sr = float("nan")
            diverged = res.failed or not math.isfinite(test_mse)
            runs.append(RunRecord(method, int(seed), test_mse, test_sr, train_sr,
                                  diverged, res.selected_epoch))
            log.info("%s seed %d: test mse %.4g, test SR %.4f, train SR %.4f (epoch %d)",
                     method, seed, test_mse, test_sr, train_sr, res.selected_epoch)
            if out_dir is not None:
                (out_dir / f"history_{method}_seed{seed}.csv").write_text(history_csv(res.history))
                save_checkpoint(sel, out_dir / f"checkpoint_{method}_seed{seed}.json")

    meta = {
        "methods": methods, "seeds": seeds, "layer_sizes": sizes,
        "rescale": cfg.rescale, "epsilon": cfg.epsilon, "max_epochs": cfg.max_epochs,
        "batch_size": cfg.batch_size, "schedule": repr(cfg.schedule),
        "selection": cfg.selection, "fuzzy_weight": fuzzy.weight,
        "split_sizes": [len(data.train), len(data.val), len(data.test)],
        "std": "population (ddof=0)",
    }
    return RunReport(runs, summarize(runs, methods), meta)


def format_cell(mean: float, std: float, decimals: int) -> str:
    if not math.isfinite(mean):
        return "failed"
    return f"{mean:.{decimals}f}±{std:.{decimals}f}"


def emit_report(report: RunReport, fmt: str = "table") -> str:
    """Render per-method aggregates; MSE to 4 decimals, SR in percent to 2."""
    if not report.summaries:
        raise ConfigError("report has no methods")
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "mse_mean", "mse_std", "sr_mean", "sr_std", "n_runs", "n_diverged"])
        for s in report.summaries:
            w.writerow([s.method, repr(s.mse_mean), repr(s.mse_std), repr(s.sr_mean),
                        repr(s.sr_std), s.n_runs, s.n_diverged])
        return buf.getvalue()
    if fmt == "table":
        rows = [("Method", "MSE", "SR", "runs", "diverged")]
        for s in report.summaries:
            rows.append((s.method, format_cell(s.mse_mean, s.mse_std, 4),
                         format_cell(s.sr_mean, s.sr_std, 2), str(s.n_runs), str(s.n_diverged)))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(wd) for c, wd in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * wd for wd in widths))
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown report format {fmt!r}")
