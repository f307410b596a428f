"""Central finite-difference audit of tape gradients.

The oracle re-evaluates losses with plain numpy (``MlpModel.predict``), so it
shares nothing with the tape except the parameter layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import grad
from .constraints import ConstraintSet, LinearConstraint, OutputScaling
from .model import MlpModel, forward, init_mlp, mse_loss
from .optim import FuzzyConfig, fuzzy_loss

KINK_GUARD = 1e-4
# relative error denominator floor, so exactly-zero gradients compare absolutely
REL_FLOOR = 1e-3


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = REL_FLOOR) -> float:
    a, b = np.ravel(a), np.ravel(b)
    if a.size == 0:
        return 0.0
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / den))


def numpy_loss(model: MlpModel, x, y, cs: ConstraintSet | None = None, raw_x=None,
               scaling: OutputScaling | None = None, weight: float = 1.0) -> float:
    pred = model.predict(x)
    loss = float(np.mean((pred - y) ** 2))
    if cs is not None and len(cs):
        raw = scaling.apply(pred) if scaling is not None else pred
        loss += weight * float(np.sum(np.maximum(cs.values(raw_x, raw), 0.0)))
    return loss


def fd_gradient(f, model: MlpModel, h: float = 1e-6) -> list[np.ndarray]:
    params = [p.copy() for p in model.params]
    out = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = f(model.with_params(params))
            p[idx] = orig - h
            down = f(model.with_params(params))
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def tape_gradient(model: MlpModel, x, y, cs: ConstraintSet | None = None, raw_x=None,
                  scaling: OutputScaling | None = None, weight: float = 1.0) -> list[np.ndarray]:
    fp = forward(model, x)
    loss = mse_loss(fp.tape, fp.outputs, y)
    if cs is not None and len(cs):
        loss = fuzzy_loss(fp.tape, loss, fp.outputs, cs, raw_x, scaling, FuzzyConfig(weight))
    return list(grad(fp.tape, loss, fp.params).blocks)


def pre_activations(model: MlpModel, x) -> list[np.ndarray]:
    h = np.asarray(x, dtype=np.float64)
    out = []
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        if k < len(model.weights) - 1:
            out.append(z)
        h = np.maximum(z, 0.0)
    return out


def _near_kink(model, x, cs, raw_x, scaling) -> bool:
    if any(np.any(np.abs(z) < KINK_GUARD) for z in pre_activations(model, x)):
        return True
    if cs is not None and len(cs):
        raw = scaling.apply(model.predict(x))
        return bool(np.any(np.abs(cs.values(raw_x, raw)) < KINK_GUARD))
    return False


@dataclass
class AuditCase:
    layer_sizes: list[int]
    mse_error: float
    fuzzy_error: float
    resamples: int


@dataclass
class AuditResult:
    cases: list[AuditCase] = field(default_factory=list)
    tol: float = 1e-5

    @property
    def max_error(self) -> float:
        return max((max(c.mse_error, c.fuzzy_error) for c in self.cases), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol


def random_constraints(rng, n_inputs: int, n_outputs: int, n: int = 3) -> ConstraintSet:
    cons = []
    for i in range(n):
        a = rng.normal(size=n_outputs)
        b = rng.normal(size=n_inputs) * 0.1
        cons.append(LinearConstraint(a, b, float(rng.normal()) * 0.1, f"rand{i}"))
    return ConstraintSet(cons)


def audit(n_models: int = 20, seed: int = 0, h: float = 1e-6, tol: float = 1e-5,
          max_hidden_layers: int = 3, max_units: int = 64, batch: int = 6) -> AuditResult:
    """Compare tape and finite-difference gradients of the MSE and fuzzy losses."""
    rng = np.random.Generator(np.random.PCG64(seed))
    result = AuditResult(tol=tol)
    for case in range(n_models):
        depth = int(rng.integers(1, max_hidden_layers + 1))
        sizes = ([int(rng.integers(1, 6))]
                 + [int(rng.integers(1, max_units + 1)) for _ in range(depth)]
                 + [int(rng.integers(1, 4))])
        model = init_mlp(sizes, seed=int(rng.integers(2**31)))
        # nonzero biases so the bias gradients are exercised away from symmetry
        model = model.with_params([p if p.ndim == 2 else rng.normal(size=p.shape) * 0.1
                                   for p in model.params])
        scaling = OutputScaling(rng.uniform(0.5, 2.0, sizes[-1]), rng.normal(size=sizes[-1]))
        cs = random_constraints(rng, sizes[0], sizes[-1])
        resamples = 0
        while True:
            x = rng.normal(size=(batch, sizes[0]))
            y = rng.normal(size=(batch, sizes[-1]))
            raw_x = rng.normal(size=(batch, sizes[0]))
            if not _near_kink(model, x, cs, raw_x, scaling):
                break
            resamples += 1
        errs = []
        for use_cs in (None, cs):
            f = lambda m: numpy_loss(m, x, y, use_cs, raw_x, scaling)
            ad = tape_gradient(model, x, y, use_cs, raw_x, scaling)
            fd = fd_gradient(f, model, h)
            errs.append(max(relative_error(a, b) for a, b in zip(ad, fd)))
        result.cases.append(AuditCase(sizes, errs[0], errs[1], resamples))
    return result
