"""Affine inequality constraints on network outputs (and inputs).

A constraint ``a . y + b . x + c <= 0`` is satisfied for an example when its
value is non-positive.  Violated constraints contribute their unit normal
``a / |a|`` as the output-space shortest-path direction, which is pulled back
to weight space through the network Jacobian.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .autodiff import ContractError, GradientVector, vjp
from .model import ForwardPass, MlpModel, forward

log = logging.getLogger(__name__)

# below this the pulled-back direction is treated as vanished
VANISH_TOL = 1e-12


class UndefinedMetricError(ValueError):
    pass


class DirectionOracle(Protocol):
    """Anything that can say whether (x, yhat) is feasible and, if not, where to go.

    ``direction`` returns a nonzero output-space vector pointing *away* from the
    feasible set (the update subtracts it), or zeros when satisfied.
    """

    def satisfied(self, x, yhat) -> bool: ...

    def direction(self, x, yhat) -> np.ndarray: ...


@dataclass
class LinearConstraint:
    a: np.ndarray
    b: np.ndarray
    c: float = 0.0
    label: str = ""

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64).ravel()
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        self.c = float(self.c)
        if not np.any(self.a):
            raise ContractError(f"constraint {self.label!r} has a zero output coefficient vector")

    def satisfied(self, x, yhat) -> bool:
        return evaluate(self, x, yhat) <= 0.0

    def direction(self, x, yhat) -> np.ndarray:
        return output_direction(self, x, yhat)

    def to_dict(self) -> dict:
        return {"label": self.label, "a": self.a.tolist(), "b": self.b.tolist(), "c": self.c}


def _check_dims(c: LinearConstraint, x, yhat):
    x = np.asarray(x, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if yhat.shape != c.a.shape or x.shape != c.b.shape:
        raise ContractError(
            f"constraint {c.label!r} expects {c.a.size} outputs / {c.b.size} inputs, "
            f"got {yhat.size} / {x.size}")
    return x, yhat


def evaluate(c: LinearConstraint, x, yhat) -> float:
    x, yhat = _check_dims(c, x, yhat)
    return float(c.a @ yhat + c.b @ x + c.c)


def output_direction(c: LinearConstraint, x, yhat) -> np.ndarray:
    if evaluate(c, x, yhat) <= 0.0:
        return np.zeros_like(c.a)
    return c.a / np.linalg.norm(c.a)


@dataclass
class ConstraintSet:
    constraints: list[LinearConstraint] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.constraints)

    def __iter__(self):
        return iter(self.constraints)

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.constraints]

    @property
    def A(self) -> np.ndarray:
        return np.array([c.a for c in self.constraints])

    @property
    def B(self) -> np.ndarray:
        return np.array([c.b for c in self.constraints])

    @property
    def offsets(self) -> np.ndarray:
        return np.array([c.c for c in self.constraints])

    def check_dims(self, n_inputs: int, n_outputs: int) -> None:
        for c in self.constraints:
            if c.a.size != n_outputs or c.b.size != n_inputs:
                raise ContractError(
                    f"constraint {c.label!r} has {c.a.size} output / {c.b.size} input "
                    f"coefficients, data has {n_outputs} / {n_inputs}")

    def values(self, xs, yhats) -> np.ndarray:
        """Constraint values for every (example, constraint) pair, shape (n, N)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        yhats = np.atleast_2d(np.asarray(yhats, dtype=np.float64))
        if xs.shape[0] != yhats.shape[0]:
            raise ContractError("inputs and predictions have different row counts")
        if not self.constraints:
            return np.zeros((xs.shape[0], 0))
        self.check_dims(xs.shape[1], yhats.shape[1])
        return yhats @ self.A.T + xs @ self.B.T + self.offsets

    def to_json(self) -> str:
        return json.dumps([c.to_dict() for c in self.constraints], indent=2)

    @classmethod
    def from_records(cls, records, n_inputs: int | None = None, n_outputs: int | None = None,
                     input_names: Sequence[str] | None = None,
                     output_names: Sequence[str] | None = None) -> "ConstraintSet":
        """Build from dicts with keys ``a``, ``b`` (optional), ``c``, ``label``.

        ``a`` and ``b`` are coefficient lists, or mappings from column name to
        coefficient (missing names get 0), which needs ``output_names`` /
        ``input_names``.  An omitted ``b`` means no input dependence.
        """
        cons = []
        for i, r in enumerate(records):
            label = r.get("label", f"c{i}")
            a = _coefficients(r["a"], output_names, n_outputs, label)
            b = _coefficients(r.get("b", {}), input_names, n_inputs, label)
            cons.append(LinearConstraint(a, b, r.get("c", 0.0), label))
        cs = cls(cons)
        if n_inputs is not None and n_outputs is not None:
            cs.check_dims(n_inputs, n_outputs)
        return cs


def _coefficients(coefs, names, size, label) -> np.ndarray:
    if not isinstance(coefs, dict):
        return np.asarray(coefs, dtype=np.float64)
    if names is None and coefs:
        raise ContractError(f"constraint {label!r} names columns but none are known")
    n = len(names) if names is not None else (size or 0)
    out = np.zeros(n)
    for name, coef in coefs.items():
        if name not in names:
            raise ContractError(f"constraint {label!r} refers to unknown column {name!r}")
        out[list(names).index(name)] = float(coef)
    return out


def load_constraints(path, n_inputs: int | None = None, n_outputs: int | None = None,
                     input_names: Sequence[str] | None = None,
                     output_names: Sequence[str] | None = None) -> ConstraintSet:
    return ConstraintSet.from_records(json.loads(Path(path).read_text()), n_inputs, n_outputs,
                                      input_names, output_names)


def save_constraints(cs: ConstraintSet, path) -> None:
    Path(path).write_text(cs.to_json() + "\n")


def satisfaction_ratio(cs: ConstraintSet, xs, yhats) -> float:
    """Fraction of (example, constraint) pairs whose value is <= 0."""
    vals = cs.values(xs, yhats)
    if vals.size == 0:
        raise UndefinedMetricError("satisfaction ratio needs at least one example and one constraint")
    return float(np.count_nonzero(vals <= 0.0)) / vals.size


@dataclass(frozen=True)
class OutputScaling:
    """Affine map from network outputs to raw target units: raw = y * scale + shift."""

    scale: np.ndarray
    shift: np.ndarray

    def apply(self, y) -> np.ndarray:
        return np.asarray(y) * self.scale + self.shift

    @classmethod
    def identity(cls, n: int) -> "OutputScaling":
        return cls(np.ones(n), np.zeros(n))


def output_cotangent(cs: ConstraintSet, raw_xs, raw_yhats) -> tuple[np.ndarray, np.ndarray]:
    """Summed unit normals of violated constraints per example, in raw output units.

    Returns ``(cotangent, values)`` with shapes (n, k) and (n, N).
    """
    vals = cs.values(raw_xs, raw_yhats)
    if not len(cs):
        return np.zeros_like(np.asarray(raw_yhats, dtype=np.float64)), vals
    A = cs.A
    normals = A / np.linalg.norm(A, axis=1, keepdims=True)
    return (vals > 0.0).astype(np.float64) @ normals, vals


def weight_direction(cs: ConstraintSet, model: MlpModel, xs, *, raw_xs=None,
                     scaling: OutputScaling | None = None,
                     fp: ForwardPass | None = None) -> GradientVector:
    """Unit-norm weight-space direction for the constraints violated on ``xs``.

    ``xs`` is what the network sees; ``raw_xs`` (default ``xs``) is what the
    constraints see.  Outputs are mapped through ``scaling`` before evaluation
    and the scale is folded into the cotangent.  Returns zeros when nothing is
    violated.  An optional precomputed forward pass ``fp`` is reused.
    """
    if fp is None:
        fp = forward(model, xs)
    raw_xs = xs if raw_xs is None else raw_xs
    k = model.layer_sizes[-1]
    scaling = scaling or OutputScaling.identity(k)
    yhat = fp.outputs.value
    cot_raw, vals = output_cotangent(cs, raw_xs, scaling.apply(yhat))
    zero = GradientVector.zeros_like(model.params)
    if not np.any(vals > 0.0):
        return zero

    g = vjp(fp.tape, fp.outputs, cot_raw * scaling.scale, fp.params)
    norm = g.global_l2_norm
    if norm < VANISH_TOL:
        # opposing violations cancelled out; fall back to the single worst pair
        A = cs.A
        dist = vals / np.linalg.norm(A, axis=1)
        i, j = np.unravel_index(np.argmax(dist), dist.shape)
        log.info("constraint directions cancelled; using %r on example %d",
                 cs.constraints[j].label, i)
        cot = np.zeros_like(yhat)
        cot[i] = A[j] / np.linalg.norm(A[j]) * scaling.scale
        g = vjp(fp.tape, fp.outputs, cot, fp.params)
        norm = g.global_l2_norm
        if norm < VANISH_TOL:
            log.info("constraint direction vanished in weight space")
            return zero
    return g.scaled(1.0 / norm)


def bound_constraints(n_outputs: int, n_inputs: int, lower: Sequence[float],
                      upper: Sequence[float], names: Sequence[str] | None = None
                      ) -> list[LinearConstraint]:
    """Two box constraints per output: y_k >= lower_k and y_k <= upper_k."""
    names = names or [f"y{k}" for k in range(n_outputs)]
    out = []
    for k in range(n_outputs):
        e = np.zeros(n_outputs)
        e[k] = 1.0
        out.append(LinearConstraint(-e, np.zeros(n_inputs), float(lower[k]), f"{names[k]} >= {lower[k]:.6g}"))
        out.append(LinearConstraint(e, np.zeros(n_inputs), -float(upper[k]), f"{names[k]} <= {upper[k]:.6g}"))
    return out
