"""Command-line entry point: ``cggd <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, scalar
from .config import OUTPUT_ENV, RunConfig, load_config, output_dir
from .constraints import satisfaction_ratio, save_constraints
from .data import (SYNTH_INPUTS, SYNTH_TARGETS, dataset_constraints,
                   load_and_split, prepare, synthetic_dataset)
from .experiment import RunReport, emit_report, run_experiment
from .model import init_mlp, save_checkpoint
from .optim import history_csv, train

log = logging.getLogger("cggd")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def _load_data(cfg: RunConfig):
    if cfg.dataset is not None:
        data = load_and_split(cfg.dataset)
        return data, dataset_constraints(cfg.dataset, data)
    syn = dict(cfg.synthetic or {})
    x, y, cs = synthetic_dataset(int(syn.get("n", 700)), int(syn.get("seed", 0)))
    data = prepare(x, y, tuple(syn.get("split_sizes", (200, 250, 250))),
                   int(syn.get("shuffle_seed", 0)), SYNTH_INPUTS, SYNTH_TARGETS)
    return data, cs


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def cmd_scalar_demo(args) -> int:
    out = output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = scalar.paper_problem()
    lo, hi = problem.working_interval
    curve = np.linspace(lo, hi, args.curve_points)
    kw = dict(rescale=args.rescale, epsilon=args.epsilon, fuzzy_weight=args.fuzzy_weight)
    for method in ("fuzzy", "cggd"):
        _write_csv(out / f"{method}_update.csv", ["w", "update"],
                   scalar.update_curve(method, problem, curve, **kw))
    schedule = scalar.default_schedule(problem, args.eta0, args.epsilon)
    grid = np.linspace(lo, hi, args.grid_points)
    reports = {}
    for method in ("cggd", "fuzzy"):
        probes = [r for r, _ in scalar.stationary_candidates(method, problem, **kw)]
        rep = scalar.classify_attractors(method, problem, grid, schedule, probes,
                                         rescale=args.rescale, fuzzy_weight=args.fuzzy_weight)
        rep.metadata.update(rescale=args.rescale)
        reports[method] = rep.to_dict()
        stable = ", ".join(f"{a.location:.4f}" for a in rep.attractors if a.stable)
        unstable = ", ".join(f"{a.location:.4f}" for a in rep.attractors if not a.stable)
        print(f"{method}: stable [{stable}]  unstable [{unstable}]  "
              f"diverged {len(rep.diverged)}")
    (out / "attractors.json").write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}/fuzzy_update.csv, cggd_update.csv, attractors.json")
    return 0


def cmd_verify_lemmas(args) -> int:
    poly = scalar.paper_problem()
    quad = scalar.quadratic_problem()
    suites = [
        ("lemma1 quadratic", scalar.verify_lemma1(quad, args.trials1, seed=args.seed), True),
        ("lemma1 polynomial", scalar.verify_lemma1(poly, args.trials1, seed=args.seed), True),
        ("lemma1 negative control (no shrink)",
         scalar.verify_lemma1(poly, args.trials1, seed=args.seed, shrink=False,
                              stop_on_failure=False), False),
        ("lemma2 1D", scalar.verify_lemma2(poly, args.trials2, seed=args.seed), True),
        ("lemma2 2D", scalar.verify_lemma2_box(args.trials2, seed=args.seed), True),
    ]
    ok = True
    for name, res, expect in suites:
        good = res.passed == expect
        ok &= good
        print(f"{'PASS' if good else 'FAIL'}  {name}: {res.checks} checks, "
              f"{res.failures} failures, {res.skipped} skipped"
              + ("" if expect else " (expected to fail)"))
        if not good and args.verbose:
            for line in res.log[:10]:
                print("    " + line)
    return 0 if ok else 1


def cmd_check_gradients(args) -> int:
    res = gradcheck.audit(args.models, args.seed, tol=args.tol)
    for c in res.cases:
        print(f"{str(c.layer_sizes):24s} mse {c.mse_error:.2e}  fuzzy {c.fuzzy_error:.2e}")
    print(f"{'PASS' if res.passed else 'FAIL'}  max relative error {res.max_error:.2e} "
          f"(tol {res.tol:g})")
    return 0 if res.passed else 1


def cmd_gen_synthetic(args) -> int:
    out = output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x, y, cs = synthetic_dataset(args.n, args.seed)
    _write_csv(out / "synthetic.csv", SYNTH_INPUTS + SYNTH_TARGETS, np.hstack([x, y]))
    save_constraints(cs, out / "synthetic_constraints.json")
    cfg = {"dataset": {"csv_path": "synthetic.csv", "input_columns": SYNTH_INPUTS,
                       "target_columns": SYNTH_TARGETS,
                       "constraint_file": "synthetic_constraints.json",
                       "split_sizes": [200, 250, 250], "shuffle_seed": 0}}
    (out / "synthetic_config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    print(f"wrote {args.n} rows and {len(cs)} constraints to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    data, cs = _load_data(cfg)
    out = output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_constraints(cs, out / "constraints_used.json")
    sizes = [data.n_inputs, *cfg.hidden, data.n_outputs]
    res = train(init_mlp(sizes, args.seed), data, cs, args.method, cfg.cggd_config(),
                args.seed, cfg.fuzzy_config())
    stem = f"{args.method}_seed{args.seed}"
    (out / f"history_{stem}.csv").write_text(history_csv(res.history))
    save_checkpoint(res.selected, out / f"checkpoint_{stem}.json")
    pred = res.selected.predict(data.test.x)
    mse = float(np.mean((pred - data.test.y) ** 2))
    line = f"{args.method} seed {args.seed}: epoch {res.selected_epoch}, test MSE {mse:.4f}"
    if len(cs):
        sr = satisfaction_ratio(cs, data.test.raw_x, data.scaling.apply(pred))
        line += f", test SR {100 * sr:.2f}%"
    print(line + ("  (diverged)" if res.failed else ""))
    return 0


def cmd_experiment(args) -> int:
    cfg = _config(args)
    if args.seeds:
        cfg.seeds = args.seeds
    if args.methods:
        cfg.methods = args.methods
    data, cs = _load_data(cfg)
    out = output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_constraints(cs, out / "constraints_used.json")
    report = run_experiment(data, cs, cfg.methods, cfg.seeds, cfg.cggd_config(),
                            [data.n_inputs, *cfg.hidden, data.n_outputs],
                            cfg.fuzzy_config(), out_dir=out)
    (out / "report.json").write_text(emit_report(report, "json"))
    (out / "report.csv").write_text(emit_report(report, "csv"))
    print(emit_report(report, args.format), end="")
    return 0


def cmd_report(args) -> int:
    report = RunReport.from_dict(json.loads(Path(args.results).read_text()))
    print(emit_report(report, args.format), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cggd", description="Constraint guided gradient descent.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_out(sp):
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./cggd-out)")
        return sp

    s = with_out(sub.add_parser("scalar-demo", help="1D update curves and attractor report"))
    s.add_argument("--curve-points", type=int, default=2001)
    s.add_argument("--grid-points", type=int, default=64)
    s.add_argument("--eta0", type=float, default=1e-4)
    s.add_argument("--epsilon", type=float, default=0.01)
    s.add_argument("--rescale", type=float, default=1.5)
    s.add_argument("--fuzzy-weight", type=float, default=1.0)
    s.set_defaults(func=cmd_scalar_demo)

    s = sub.add_parser("verify-lemmas", help="step-size and contraction suites")
    s.add_argument("--trials1", type=int, default=100)
    s.add_argument("--trials2", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_verify_lemmas)

    s = sub.add_parser("check-gradients", help="finite-difference gradient audit")
    s.add_argument("--models", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-5)
    s.set_defaults(func=cmd_check_gradients)

    s = with_out(sub.add_parser("gen-synthetic", help="write the synthetic benchmark"))
    s.add_argument("--n", type=int, default=700)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gen_synthetic)

    s = with_out(sub.add_parser("train", help="one training run"))
    s.add_argument("--config")
    s.add_argument("--method", choices=("baseline", "fuzzy", "cggd"), default="cggd")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = with_out(sub.add_parser("experiment", help="all methods over all seeds"))
    s.add_argument("--config")
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--methods", nargs="+", choices=("baseline", "fuzzy", "cggd"))
    s.add_argument("--format", choices=("table", "csv", "json"), default="table")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("report", help="reformat a saved report.json")
    s.add_argument("results")
    s.add_argument("--format", choices=("table", "csv", "json"), default="table")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
