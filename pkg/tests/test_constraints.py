import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cggd.autodiff import ContractError, vjp
from cggd.constraints import (ConstraintSet, LinearConstraint, OutputScaling, UndefinedMetricError,
                              evaluate, load_constraints, output_direction, satisfaction_ratio,
                              save_constraints, weight_direction)
from cggd.model import MlpModel, forward, init_mlp


def ordering():
    return LinearConstraint([1.0, -1.0], [], 0.0, "min <= max")


def test_ordering_violated_value():
    assert evaluate(ordering(), [], [25.0, 20.0]) == 5.0


def test_upper_bound_satisfied_value():
    c = LinearConstraint([1.0], [], -1.0)
    assert evaluate(c, [], [0.5]) == -0.5


def test_budget_constraint_value():
    c = LinearConstraint([1.0, 1.0, 1.0], [-1.0], 0.0, "budget")
    assert evaluate(c, [10.0], [1.0, 2.0, 3.0]) == -4.0


def test_dimension_mismatch():
    with pytest.raises(ContractError):
        evaluate(ordering(), [], [1.0, 2.0, 3.0])
    with pytest.raises(ContractError):
        ConstraintSet([ordering()]).check_dims(0, 3)


def test_zero_normal_rejected():
    with pytest.raises(ValueError):
        LinearConstraint([0.0, 0.0], [], 1.0)


def test_satisfaction_ratio_all_satisfied():
    cs = ConstraintSet([ordering()])
    assert satisfaction_ratio(cs, np.zeros((3, 0)), [[0, 1], [1, 2], [2, 2]]) == 1.0


def test_satisfaction_ratio_ten_of_twelve():
    cs = ConstraintSet([LinearConstraint([1.0], [], -t) for t in (1.0, 2.0, 3.0)])
    ys = np.array([[0.0], [0.0], [0.0], [2.5]])   # last row violates two bounds
    assert satisfaction_ratio(cs, np.zeros((4, 0)), ys) == pytest.approx(10 / 12)


def test_satisfaction_ratio_empty_batch():
    with pytest.raises(UndefinedMetricError):
        satisfaction_ratio(ConstraintSet([ordering()]), np.zeros((0, 0)), np.zeros((0, 2)))
    with pytest.raises(UndefinedMetricError):
        satisfaction_ratio(ConstraintSet(), np.zeros((3, 0)), np.zeros((3, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_satisfaction_ratio_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    cons = [LinearConstraint(rng.normal(size=2), rng.normal(size=3), rng.normal()) for _ in range(4)]
    xs, ys = rng.normal(size=(9, 3)), rng.normal(size=(9, 2))
    base = satisfaction_ratio(ConstraintSet(cons), xs, ys)
    rows = rng.permutation(9)
    shuffled = ConstraintSet([cons[i] for i in rng.permutation(4)])
    assert satisfaction_ratio(shuffled, xs[rows], ys[rows]) == base


def test_output_direction_examples():
    c = LinearConstraint([1.0, 0.0, 0.0], [], -1.0)
    assert np.array_equal(output_direction(c, [], [2.0, 0.0, 0.0]), [1.0, 0.0, 0.0])
    assert not output_direction(c, [], [0.5, 0.0, 0.0]).any()


def test_output_direction_ordering_descends():
    c = ordering()
    y = np.array([3.0, 1.0])
    d = output_direction(c, [], y)
    np.testing.assert_allclose(d, [2 ** -0.5, -(2 ** -0.5)])
    for t in (1e-3, 0.1, 1.0):
        assert evaluate(c, [], y - t * d) < evaluate(c, [], y)


def test_weight_direction_zero_when_satisfied():
    m = init_mlp([2, 4, 2], seed=0)
    x = np.random.default_rng(0).normal(size=(5, 2))
    cs = ConstraintSet([LinearConstraint([1.0, 0.0], np.zeros(2), -1e6)])
    assert weight_direction(cs, m, x).is_zero()


def test_weight_direction_single_bound_is_normalized_vjp():
    m = init_mlp([3, 6, 2], seed=1)
    x = np.array([[0.3, -0.2, 0.9]])
    y = m.predict(x)[0, 1]
    cs = ConstraintSet([LinearConstraint([0.0, 1.0], np.zeros(3), -(y - 0.5))])
    d = weight_direction(cs, m, x)
    fp = forward(m, x)
    ref = vjp(fp.tape, fp.outputs, np.array([[0.0, 1.0]]), fp.params)
    np.testing.assert_allclose(d.flat(), ref.flat() / np.linalg.norm(ref.flat()), rtol=1e-12)
    assert d.global_l2_norm == pytest.approx(1.0)


def test_identity_network_step_reduces_violation():
    m = MlpModel([2, 2], [np.eye(2)], [np.zeros(2)])
    x = np.array([[3.0, 1.0]])
    c = ordering()
    cs = ConstraintSet([LinearConstraint(c.a, np.zeros(2), 0.0)])
    d = weight_direction(cs, m, x)
    before = cs.values(x, m.predict(x))[0, 0]
    stepped = m.with_params([p - 1e-2 * g for p, g in zip(m.params, d.blocks)])
    assert cs.values(x, stepped.predict(x))[0, 0] < before


def test_cancelling_directions_fall_back_to_worst_pair():
    # bias-only network, network input 0: opposite violations cancel in weight space
    m = MlpModel([1, 1], [np.zeros((1, 1))], [np.array([0.0])])
    x = np.zeros((2, 1))
    cs = ConstraintSet([LinearConstraint([1.0], [-1.0], 0.0),    # y <= x_raw
                        LinearConstraint([-1.0], [1.0], -0.5)])  # y >= x_raw - 0.5
    raw_x = np.array([[-1.0], [2.0]])  # example 0 violates by 1, example 1 by 1.5
    d = weight_direction(cs, m, x, raw_xs=raw_x)
    assert d.global_l2_norm == pytest.approx(1.0)
    assert d.blocks[1][0] == pytest.approx(-1.0)  # worst pair pushes y upward


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_descent_property(seed):
    rng = np.random.default_rng(seed)
    m = init_mlp([3, 8, 2], seed=int(rng.integers(1000)))
    x = rng.normal(size=(1, 3))
    a = rng.normal(size=2)
    c_val = -float(a @ m.predict(x)[0]) + 0.5
    cs = ConstraintSet([LinearConstraint(a, np.zeros(3), c_val)])
    d = weight_direction(cs, m, x)
    if d.is_zero():
        return
    before = cs.values(x, m.predict(x))[0, 0]
    after = cs.values(x, m.with_params([p - 1e-6 * g for p, g in zip(m.params, d.blocks)]).predict(x))
    assert after[0, 0] < before


def test_scaling_folds_into_direction():
    m = init_mlp([2, 2], seed=3)
    x = np.array([[0.5, 0.5]])
    sc = OutputScaling(np.array([10.0, 1.0]), np.array([0.0, 0.0]))
    cs = ConstraintSet([LinearConstraint([1.0, 1.0], np.zeros(2), 1.0 - sc.apply(m.predict(x)).sum())])
    d = weight_direction(cs, m, x, scaling=sc)
    fp = forward(m, x)
    ref = vjp(fp.tape, fp.outputs, np.array([[10.0, 1.0]]) / np.sqrt(2), fp.params)
    np.testing.assert_allclose(d.flat(), ref.flat() / np.linalg.norm(ref.flat()), rtol=1e-12)


def test_constraint_file_round_trip(tmp_path):
    cs = ConstraintSet([ordering(), LinearConstraint([1.0, 0.0], [], -1.0, "ub")])
    save_constraints(cs, tmp_path / "c.json")
    back = load_constraints(tmp_path / "c.json", 0, 2)
    assert back.labels == cs.labels
    np.testing.assert_array_equal(back.A, cs.A)
    with pytest.raises(ContractError):
        load_constraints(tmp_path / "c.json", 0, 3)
