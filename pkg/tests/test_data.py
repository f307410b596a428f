import csv

import numpy as np
import pytest

from cggd.constraints import satisfaction_ratio
from cggd.data import (DatasetSpec, IngestionError, Normalizer, dataset_constraints, load_and_split,
                       prepare, read_table, shuffle_split, synthetic_dataset, widened_bounds)
from cggd.model import ConfigError


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def test_split_sizes_disjoint_and_cover():
    idx = shuffle_split(750, (200, 250, 250), seed=0)
    assert [len(i) for i in idx] == [200, 250, 250]
    used = np.concatenate(idx)
    assert len(set(used.tolist())) == 700
    assert used.max() < 750


def test_split_is_deterministic():
    a = shuffle_split(750, (200, 250, 250), seed=4)
    b = shuffle_split(750, (200, 250, 250), seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_oversized_split_rejected():
    with pytest.raises(IngestionError):
        shuffle_split(750, (200, 250, 301), seed=0)


def test_load_and_split_from_csv(tmp_path):
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(750, 3))
    write_csv(tmp_path / "d.csv", ["a", "b", "t"], rows.tolist())
    spec = DatasetSpec(str(tmp_path / "d.csv"), ["a", "b"], ["t"])
    data = load_and_split(spec)
    assert (len(data.train), len(data.val), len(data.test)) == (200, 250, 250)
    assert data.n_inputs == 2 and data.n_outputs == 1
    again = load_and_split(spec)
    assert np.array_equal(data.test.raw_x, again.test.raw_x)


def test_missing_column_named(tmp_path):
    write_csv(tmp_path / "d.csv", ["a", "b"], [[1, 2]])
    with pytest.raises(IngestionError, match="'c'"):
        read_table(tmp_path / "d.csv", ["a", "c"])


def test_bad_cell_names_row_and_column(tmp_path):
    write_csv(tmp_path / "d.csv", ["a", "b"], [[1, 2], [3, "x"], [5, 6]])
    with pytest.raises(IngestionError, match=r"row 3, column 'b'"):
        read_table(tmp_path / "d.csv", ["a", "b"])
    write_csv(tmp_path / "e.csv", ["a", "b"], [[1, ""]])
    with pytest.raises(IngestionError, match=r"row 2, column 'b'"):
        read_table(tmp_path / "e.csv", ["a", "b"])


def test_subsample_rows():
    x, y = np.arange(2000.0).reshape(1000, 2), np.arange(1000.0).reshape(1000, 1)
    d = prepare(x, y, (200, 250, 250), seed=1, n_rows=750)
    rows = np.concatenate([d.train.raw_y, d.val.raw_y, d.test.raw_y]).ravel()
    assert len(set(rows.tolist())) == 700
    with pytest.raises(IngestionError):
        prepare(x, y, (200, 250, 250), seed=1, n_rows=1001)


def test_normalizer_round_trip_and_positive_scale():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(50, 4)) * [1, 10, 1e-3, 0]
    for norm in (Normalizer.zscore(v), Normalizer.minmax(v)):
        assert np.all(norm.scale > 0)
        np.testing.assert_allclose(norm.inverse(norm.transform(v)), v, atol=1e-10)
    mm = Normalizer.minmax(v[:, :3])
    t = mm.transform(v[:, :3])
    assert t.min() == pytest.approx(0.0) and t.max() == pytest.approx(1.0)


def test_normalizer_ignores_val_and_test():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(700, 3)), rng.normal(size=(700, 2))
    base = prepare(x, y, seed=5)
    train_idx = shuffle_split(700, (200, 250, 250), 5)[0]
    poisoned_x, poisoned_y = x * 1e6 + 17, y * -1e6
    poisoned_x[train_idx], poisoned_y[train_idx] = x[train_idx], y[train_idx]
    p = prepare(poisoned_x, poisoned_y, seed=5)
    for a, b in ((base.input_norm, p.input_norm), (base.target_norm, p.target_norm)):
        assert np.array_equal(a.shift, b.shift) and np.array_equal(a.scale, b.scale)


def test_synthetic_rows_satisfy_constraints():
    x, y, cs = synthetic_dataset(700, seed=0)
    assert x.shape == (700, 4) and y.shape == (700, 2)
    assert np.all(cs.values(x, y) <= 0)
    assert satisfaction_ratio(cs, x, y) == 1.0
    assert len(cs) == 5


def test_synthetic_is_deterministic():
    a = synthetic_dataset(200, seed=7)
    b = synthetic_dataset(200, seed=7)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_synthetic_rejects_tiny_n():
    with pytest.raises(ConfigError):
        synthetic_dataset(9)


def test_widened_bounds_and_dataset_constraints(tmp_path):
    lo, hi = widened_bounds(np.array([[0.0, 10.0], [1.0, 20.0]]), 0.05)
    np.testing.assert_allclose(lo, [-0.05, 9.5])
    np.testing.assert_allclose(hi, [1.05, 20.5])
    rng = np.random.default_rng(0)
    rows = np.column_stack([rng.normal(size=(40, 2)), rng.uniform(0, 1, 40), rng.uniform(1, 2, 40)])
    write_csv(tmp_path / "d.csv", ["a", "b", "lo", "hi"], rows.tolist())
    (tmp_path / "c.json").write_text('[{"a": [1, -1], "b": [0, 0], "c": 0, "label": "lo <= hi"}]')
    spec = DatasetSpec(str(tmp_path / "d.csv"), ["a", "b"], ["lo", "hi"], str(tmp_path / "c.json"),
                       (20, 10, 10), bound_margin=0.05)
    data = load_and_split(spec)
    cs = dataset_constraints(spec, data)
    assert len(cs) == 5 and cs.labels[-1] == "lo <= hi"
    assert satisfaction_ratio(cs, data.train.raw_x, data.train.raw_y) == 1.0
