"""Dense ReLU networks with a linear output layer."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ContractError, Node, Tape


class ConfigError(ValueError):
    pass


@dataclass
class MlpModel:
    layer_sizes: list[int]
    weights: list[np.ndarray]  # layer k: (layer_sizes[k+1], layer_sizes[k])
    biases: list[np.ndarray]   # layer k: (layer_sizes[k+1],)
    seed: int = 0

    @property
    def params(self) -> list[np.ndarray]:
        """Parameters in canonical order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params) -> "MlpModel":
        params = [np.asarray(p, dtype=np.float64) for p in params]
        if [p.shape for p in params] != [p.shape for p in self.params]:
            raise ContractError("parameter shapes do not match the model")
        return MlpModel(list(self.layer_sizes), params[0::2], params[1::2], self.seed)

    def copy(self) -> "MlpModel":
        return self.with_params([p.copy() for p in self.params])

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def predict(self, batch) -> np.ndarray:
        """Forward pass without recording a tape."""
        h = _check_batch(self, batch)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h


def param_count(layer_sizes) -> int:
    return sum(n * m + m for n, m in zip(layer_sizes[:-1], layer_sizes[1:]))


def init_mlp(layer_sizes, seed: int = 0) -> MlpModel:
    """Glorot-uniform weights and zero biases, drawn from numpy's PCG64 generator."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes) or list(layer_sizes) != sizes:
        raise ConfigError(f"invalid layer sizes {list(layer_sizes)!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(sizes, weights, biases, seed)


def _check_batch(model: MlpModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_sizes[0]:
        raise ContractError(
            f"batch shape {x.shape} does not match input size {model.layer_sizes[0]}")
    return x


@dataclass
class ForwardPass:
    """Result of a recorded forward pass.

    ``params`` are the tape leaves for the model parameters (canonical order),
    which is what :func:`cggd.autodiff.grad` and ``vjp`` differentiate against.
    """

    tape: Tape
    outputs: Node
    params: list[Node]
    inputs: Node


def forward(model: MlpModel, batch) -> ForwardPass:
    x = _check_batch(model, batch)
    tape = Tape()
    inputs = tape.const(x)
    params = [tape.param(p) for p in model.params]
    h = inputs
    last = len(model.weights) - 1
    for k in range(len(model.weights)):
        w, b = params[2 * k], params[2 * k + 1]
        h = tape.add(tape.matmul(h, tape.transpose(w)), b)
        if k < last:
            h = tape.relu(h)
    return ForwardPass(tape, h, params, inputs)


def mse_loss(tape: Tape, outputs: Node, targets) -> Node:
    return tape.mean(tape.square(tape.sub(outputs, tape.const(targets))))


# -- checkpoints ----------------------------------------------------------

def to_dict(model: MlpModel) -> dict:
    return {
        "layer_sizes": list(model.layer_sizes),
        "seed": int(model.seed),
        # Python float repr is the shortest string that round-trips exactly
        "params": [p.ravel().tolist() for p in model.params],
    }


def from_dict(doc: dict) -> MlpModel:
    template = init_mlp(doc["layer_sizes"], doc.get("seed", 0))
    flat = doc["params"]
    if len(flat) != len(template.params):
        raise ConfigError("checkpoint has the wrong number of parameter arrays")
    params = []
    for arr, ref in zip(flat, template.params):
        a = np.asarray(arr, dtype=np.float64)
        if a.size != ref.size:
            raise ConfigError("checkpoint parameter size mismatch")
        params.append(a.reshape(ref.shape))
    return template.with_params(params)


def save_checkpoint(model: MlpModel, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model)))


def load_checkpoint(path) -> MlpModel:
    return from_dict(json.loads(Path(path).read_text()))
