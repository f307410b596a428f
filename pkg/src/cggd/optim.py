"""The CGGD update, step-size schedules, the fuzzy (hinge) baseline and training."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import GradientVector, Node, Tape, grad
from .constraints import ConstraintSet, OutputScaling, satisfaction_ratio, weight_direction
from .model import ConfigError, MlpModel, forward, mse_loss

log = logging.getLogger(__name__)

METHODS = ("baseline", "fuzzy", "cggd")
DIVERGENCE_LIMIT = 1e12


class NumericError(ArithmeticError):
    pass


# -- schedules ------------------------------------------------------------

@dataclass(frozen=True)
class FixedStep:
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError("step size must be positive")

    def __call__(self, epoch: int) -> float:
        return self.eta


@dataclass(frozen=True)
class ExponentialDecay:
    eta0: float
    gamma: float

    def __post_init__(self):
        if not self.eta0 > 0 or not 0 < self.gamma <= 1:
            raise ConfigError("need eta0 > 0 and 0 < gamma <= 1")

    def __call__(self, epoch: int) -> float:
        return self.eta0 * self.gamma ** epoch


@dataclass(frozen=True)
class Lemma1Schedule:
    """Step size that shrinks by :func:`lemma1_next_eta` near the feasible region.

    Only usable where a distance-to-feasible-region oracle exists, i.e. the
    scalar problems in :mod:`cggd.scalar`; it is stateful per trajectory and
    is driven by the caller rather than indexed by epoch.
    """

    eta0: float
    lipschitz: float
    epsilon: float
    distance: Callable | None = None

    def __post_init__(self):
        if not self.eta0 > 0 or not self.lipschitz > 0:
            raise ConfigError("lemma1 schedule needs eta0 > 0 and M > 0")
        if not 0 < self.epsilon < 1:
            raise ConfigError("lemma1 schedule needs 0 < epsilon < 1")


def lemma1_next_eta(eta: float, lipschitz: float, epsilon: float,
                    grad_norm_next: float, grad_norm_curr: float) -> float:
    """Largest step size for which the step outside the feasible region shrinks.

    ``grad_norm_next`` is the gradient norm at the point about to be stepped
    from, ``grad_norm_curr`` the one at the previous point.
    """
    if not eta > 0 or not lipschitz > 0:
        raise ConfigError("eta and the Lipschitz constant must be positive")
    if not 0 < epsilon < 1:
        raise ConfigError("epsilon must lie in (0, 1)")
    if grad_norm_next >= epsilon:
        return min(2 * eta * epsilon / (25 * eta * lipschitz + 10), eta / 5)
    return eta * max(epsilon, grad_norm_curr) / (5 * epsilon)


# -- configs --------------------------------------------------------------

@dataclass
class CggdConfig:
    rescale: float = 1.5
    epsilon: float = 0.01
    schedule: Callable[[int], float] = field(default_factory=lambda: FixedStep(1e-3))
    max_epochs: int = 2000
    batch_size: int | None = None  # None: full batch
    selection: str = "best-val"     # or "final"

    def __post_init__(self):
        if not self.rescale > 1:
            raise ConfigError("rescale factor must exceed 1")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.selection not in ("best-val", "final"):
            raise ConfigError(f"unknown selection rule {self.selection!r}")
        if isinstance(self.schedule, Lemma1Schedule):
            raise ConfigError("the lemma1 schedule needs a distance oracle; "
                              "networks support fixed or exponential-decay schedules")


@dataclass
class FuzzyConfig:
    weight: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise ConfigError("fuzzy penalty weight must be >= 0")


# -- update rule ----------------------------------------------------------

def cggd_step(params: Sequence[np.ndarray], grad_loss: GradientVector,
              direction: GradientVector, eta: float, rescale: float = 1.5,
              epsilon: float = 0.01) -> list[np.ndarray]:
    """params - eta * (grad + rescale * dir * max(epsilon, |grad|))."""
    gnorm = grad_loss.global_l2_norm
    if not (math.isfinite(gnorm) and math.isfinite(eta)):
        raise NumericError("non-finite gradient or step size")
    if direction.is_zero():
        return [p - eta * g for p, g in zip(params, grad_loss.blocks)]
    k = rescale * max(epsilon, gnorm)
    out = []
    for p, g, d in zip(params, grad_loss.blocks, direction.blocks):
        if not np.all(np.isfinite(d)):
            raise NumericError("non-finite constraint direction")
        out.append(p - eta * (g + k * d))
    return out


# -- fuzzy baseline -------------------------------------------------------

def constraint_values_node(tape: Tape, outputs: Node, cs: ConstraintSet, raw_xs,
                           scaling: OutputScaling) -> Node:
    """Constraint values (n, N) as a differentiable function of the network outputs."""
    raw_y = tape.add(tape.scale(outputs, scaling.scale), scaling.shift)
    fixed = np.asarray(raw_xs, dtype=np.float64) @ cs.B.T + cs.offsets
    return tape.add(tape.matmul(raw_y, cs.A.T), fixed)


def fuzzy_loss(tape: Tape, base_loss: Node, outputs: Node, cs: ConstraintSet, raw_xs,
               scaling: OutputScaling | None = None, cfg: FuzzyConfig | None = None) -> Node:
    """base_loss + weight * sum of hinge(constraint value) over examples and constraints."""
    cfg = cfg or FuzzyConfig()
    if not len(cs):
        return base_loss
    scaling = scaling or OutputScaling.identity(outputs.shape[1])
    cs.check_dims(np.shape(raw_xs)[1], outputs.shape[1])
    penalty = tape.sum(tape.relu(constraint_values_node(tape, outputs, cs, raw_xs, scaling)))
    return tape.add(base_loss, tape.scale(penalty, cfg.weight))


# -- training -------------------------------------------------------------

@dataclass
class TrainResult:
    method: str
    model: MlpModel              # parameters after the last completed update
    selected: MlpModel           # parameters chosen by the selection rule
    selected_epoch: int
    selection_note: str
    history: list[dict]
    failed: bool = False


HISTORY_FIELDS = ("epoch", "split", "mse", "satisfaction_ratio", "grad_norm", "eta", "violated_flag")


def _metrics(model: MlpModel, split, cs: ConstraintSet, scaling: OutputScaling):
    pred = model.predict(split.x)
    mse = float(np.mean((pred - split.y) ** 2))
    sr = satisfaction_ratio(cs, split.raw_x, scaling.apply(pred)) if len(cs) else float("nan")
    return mse, sr


def train(model: MlpModel, data, cs: ConstraintSet, method: str = "cggd",
          cfg: CggdConfig | None = None, seed: int = 0,
          fuzzy: FuzzyConfig | None = None) -> TrainResult:
    """Run ``cfg.max_epochs`` epochs of plain gradient descent with the chosen method.

    ``data`` needs ``train`` and ``val`` splits (attributes ``x``, ``y``,
    ``raw_x``) and a ``scaling`` mapping network outputs to raw units.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    cfg = cfg or CggdConfig()
    fuzzy = fuzzy or FuzzyConfig()
    scaling: OutputScaling = data.scaling
    tr, va = data.train, data.val
    n = tr.x.shape[0]
    if n == 0:
        raise ConfigError("empty training split")
    rng = np.random.Generator(np.random.PCG64(seed))

    params = [p.copy() for p in model.params]
    current = model.with_params(params)
    history: list[dict] = []
    best = (math.inf, None, 0)
    best_any = (math.inf, None, 0)
    failed = False

    for epoch in range(1, cfg.max_epochs + 1):
        eta = cfg.schedule(epoch - 1)
        order = rng.permutation(n) if cfg.batch_size else np.arange(n)
        size = cfg.batch_size or n
        violated = False
        try:
            for start in range(0, n, size):
                idx = order[start:start + size]
                fp = forward(current, tr.x[idx])
                loss = mse_loss(fp.tape, fp.outputs, tr.y[idx])
                if method == "fuzzy":
                    loss = fuzzy_loss(fp.tape, loss, fp.outputs, cs, tr.raw_x[idx], scaling, fuzzy)
                lval = float(loss.value)
                if not math.isfinite(lval) or abs(lval) > DIVERGENCE_LIMIT:
                    raise NumericError(f"loss {lval!r} at epoch {epoch}")
                g = grad(fp.tape, loss, fp.params)
                if method == "cggd" and len(cs):
                    d = weight_direction(cs, current, tr.x[idx], raw_xs=tr.raw_x[idx],
                                         scaling=scaling, fp=fp)
                else:
                    d = GradientVector.zeros_like(params)
                violated = violated or not d.is_zero()
                params = cggd_step(params, g, d, eta, cfg.rescale, cfg.epsilon)
                current = model.with_params(params)
        except NumericError as exc:
            log.warning("%s run (seed %d) diverged: %s", method, seed, exc)
            failed = True
            break

        gnorm = g.global_l2_norm
        tr_mse, tr_sr = _metrics(current, tr, cs, scaling)
        va_mse, va_sr = _metrics(current, va, cs, scaling)
        if not (math.isfinite(tr_mse) and tr_mse <= DIVERGENCE_LIMIT):
            failed = True
            break
        for split, mse, sr in (("train", tr_mse, tr_sr), ("val", va_mse, va_sr)):
            history.append({"epoch": epoch, "split": split, "mse": mse,
                            "satisfaction_ratio": sr, "grad_norm": gnorm,
                            "eta": eta, "violated_flag": int(violated)})
        if va_mse < best_any[0]:
            best_any = (va_mse, params, epoch)
        if (method != "cggd" or not len(cs) or tr_sr == 1.0) and va_mse < best[0]:
            best = (va_mse, params, epoch)

    last_epoch = history[-1]["epoch"] if history else 0
    if cfg.selection == "final" or not history:
        sel_params, sel_epoch, note = params, last_epoch, "final epoch"
    elif best[1] is not None:
        sel_params, sel_epoch = best[1], best[2]
        note = ("best validation MSE among fully train-feasible epochs"
                if method == "cggd" and len(cs) else "best validation MSE")
    else:
        sel_params, sel_epoch = best_any[1], best_any[2]
        note = "best validation MSE (no fully train-feasible epoch)"
    return TrainResult(method, current, model.with_params(sel_params), sel_epoch, note,
                       history, failed)


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=HISTORY_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
