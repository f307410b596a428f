"""Tabular ingestion, splitting, normalization and the synthetic benchmark."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .constraints import ConstraintSet, LinearConstraint, OutputScaling, bound_constraints
from .model import ConfigError


class IngestionError(ValueError):
    pass


@dataclass
class DatasetSpec:
    csv_path: str
    input_columns: list[str]
    target_columns: list[str]
    constraint_file: str | None = None
    split_sizes: tuple[int, int, int] = (200, 250, 250)
    shuffle_seed: int = 0
    n_rows: int | None = None       # subsample after shuffling, e.g. 750
    bound_margin: float | None = None  # add box bounds widened by this fraction of the range
    drop_incomplete: bool = False   # skip rows with empty cells in the used columns

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        if "split_sizes" in d:
            d["split_sizes"] = tuple(int(s) for s in d["split_sizes"])
        return cls(**d)


@dataclass(frozen=True)
class Normalizer:
    """Per-feature affine map v -> (v - shift) / scale."""

    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def zscore(cls, values) -> "Normalizer":
        v = np.asarray(values, dtype=np.float64)
        std = v.std(axis=0)
        return cls(v.mean(axis=0), np.where(std > 0, std, 1.0))

    @classmethod
    def minmax(cls, values) -> "Normalizer":
        v = np.asarray(values, dtype=np.float64)
        lo, hi = v.min(axis=0), v.max(axis=0)
        return cls(lo, np.where(hi > lo, hi - lo, 1.0))

    def transform(self, v) -> np.ndarray:
        return (np.asarray(v, dtype=np.float64) - self.shift) / self.scale

    def inverse(self, v) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) * self.scale + self.shift

    def as_output_scaling(self) -> OutputScaling:
        return OutputScaling(self.scale.copy(), self.shift.copy())


@dataclass
class Split:
    raw_x: np.ndarray
    raw_y: np.ndarray
    x: np.ndarray = field(default=None)
    y: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return self.raw_x.shape[0]


@dataclass
class Dataset:
    train: Split
    val: Split
    test: Split
    input_norm: Normalizer
    target_norm: Normalizer
    input_columns: list[str]
    target_columns: list[str]

    @property
    def scaling(self) -> OutputScaling:
        return self.target_norm.as_output_scaling()

    @property
    def n_inputs(self) -> int:
        return self.train.raw_x.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.train.raw_y.shape[1]


def read_table(path, columns: Sequence[str], drop_incomplete: bool = False) -> np.ndarray:
    """Read the named numeric columns of a CSV file into an (n, len(columns)) array.

    With ``drop_incomplete``, rows with an empty cell in any named column are
    skipped; any other unparseable cell is still an error.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in columns if c not in header]
        if missing:
            raise IngestionError(f"{path}: missing column(s) {missing}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if drop_incomplete and any((row[c] or "").strip() == "" for c in columns):
                continue
            vals = []
            for c in columns:
                cell = row[c]
                try:
                    v = float(cell)
                except (TypeError, ValueError):
                    raise IngestionError(f"{path}: row {lineno}, column {c!r}: "
                                         f"cannot parse {cell!r} as a number") from None
                if not np.isfinite(v):
                    raise IngestionError(f"{path}: row {lineno}, column {c!r}: non-finite value")
                vals.append(v)
            rows.append(vals)
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(columns))


def shuffle_split(n_rows: int, sizes: Sequence[int], seed: int) -> list[np.ndarray]:
    sizes = [int(s) for s in sizes]
    if any(s < 0 for s in sizes) or sum(sizes) > n_rows:
        raise IngestionError(f"split sizes {sizes} do not fit in {n_rows} rows")
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n_rows)
    out, start = [], 0
    for s in sizes:
        out.append(np.sort(order[start:start + s]))
        start += s
    return out


def prepare(raw_x, raw_y, sizes=(200, 250, 250), seed: int = 0,
            input_columns=None, target_columns=None, n_rows: int | None = None) -> Dataset:
    """Shuffle, split and normalize using training-split statistics only.

    Inputs are z-scored; targets are min-max scaled to [0, 1].
    """
    raw_x = np.asarray(raw_x, dtype=np.float64)
    raw_y = np.asarray(raw_y, dtype=np.float64)
    if raw_x.shape[0] != raw_y.shape[0]:
        raise IngestionError("inputs and targets have different row counts")
    n = raw_x.shape[0]
    if n_rows is not None:
        if n_rows > n:
            raise IngestionError(f"asked for {n_rows} rows, file has {n}")
        keep = np.random.Generator(np.random.PCG64(seed)).permutation(n)[:n_rows]
        raw_x, raw_y, n = raw_x[np.sort(keep)], raw_y[np.sort(keep)], n_rows
    idx = shuffle_split(n, sizes, seed)
    splits = [Split(raw_x[i], raw_y[i]) for i in idx]
    if len(splits[0]) == 0:
        raise IngestionError("training split is empty")
    xn = Normalizer.zscore(splits[0].raw_x)
    yn = Normalizer.minmax(splits[0].raw_y)
    for s in splits:
        s.x, s.y = xn.transform(s.raw_x), yn.transform(s.raw_y)
    return Dataset(*splits, xn, yn,
                   list(input_columns or [f"x{i}" for i in range(raw_x.shape[1])]),
                   list(target_columns or [f"y{i}" for i in range(raw_y.shape[1])]))


def load_and_split(spec: DatasetSpec) -> Dataset:
    table = read_table(spec.csv_path, list(spec.input_columns) + list(spec.target_columns),
                       spec.drop_incomplete)
    n_in = len(spec.input_columns)
    xs, ys = table[:, :n_in], table[:, n_in:]
    return prepare(xs, ys, spec.split_sizes, spec.shuffle_seed,
                   spec.input_columns, spec.target_columns, spec.n_rows)


def widened_bounds(values, margin: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(axis=0), v.max(axis=0)
    pad = margin * (hi - lo)
    return lo - pad, hi + pad


def dataset_constraints(spec: DatasetSpec, data: Dataset) -> ConstraintSet:
    """Constraints from the dataset's constraint file plus optional data-derived box bounds."""
    from .constraints import load_constraints

    cs = ConstraintSet()
    if spec.bound_margin is not None:
        lo, hi = widened_bounds(data.train.raw_y, spec.bound_margin)
        cs.constraints += bound_constraints(data.n_outputs, data.n_inputs, lo, hi,
                                            data.target_columns)
    if spec.constraint_file:
        cs.constraints += load_constraints(spec.constraint_file, data.n_inputs, data.n_outputs,
                                           data.input_columns, data.target_columns).constraints
    return cs


# -- synthetic benchmark --------------------------------------------------

SYNTH_INPUTS = ["x0", "x1", "x2", "x3"]
SYNTH_TARGETS = ["t_min", "t_max"]


def synthetic_constraints() -> ConstraintSet:
    cs = ConstraintSet(bound_constraints(2, 4, [-1.0, -1.0], [1.0, 1.0], SYNTH_TARGETS))
    cs.constraints.append(LinearConstraint([1.0, -1.0], np.zeros(4), 0.0, "t_min <= t_max"))
    return cs


def synthetic_dataset(n: int = 700, seed: int = 0) -> tuple[np.ndarray, np.ndarray, ConstraintSet]:
    """Two-output regression task in the style of a daily min/max forecast.

    Inputs are uniform on [-1, 1]^4.  A smooth centre and half-width plus noise
    give (t_min, t_max); both are clipped to [-1, 1] and then ordered, so
    every row satisfies the returned constraints, and a sizeable share of
    targets sits exactly on a bound.
    """
    if n < 10:
        raise ConfigError("synthetic dataset needs n >= 10")
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.uniform(-1.0, 1.0, size=(n, 4))
    centre = 0.9 * np.sin(1.8 * x[:, 0]) + 0.4 * x[:, 1] * x[:, 2] + 0.25 * np.cos(2.5 * x[:, 3])
    half = 0.35 + 0.15 * np.sin(x[:, 1] + x[:, 3])
    lo = np.clip(centre - half + 0.05 * rng.standard_normal(n), -1.0, 1.0)
    hi = np.clip(centre + half + 0.05 * rng.standard_normal(n), -1.0, 1.0)
    y = np.column_stack([np.minimum(lo, hi), np.maximum(lo, hi)])
    return x, y, synthetic_constraints()
