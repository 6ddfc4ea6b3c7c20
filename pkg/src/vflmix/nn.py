"""Dense-network numerics shared by every party.

Everything is float64 numpy. Backpropagation is written out by hand so the
gradient flow between parties stays explicit; there is no autograd graph.
Functions are pure over their inputs except for SgdOptimizer.step, which
mutates the model it is given. RNGs are always passed in explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "identity")
DIRECTIONS = ("descent", "ascent")


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class NumericsError(ArithmeticError):
    """A public operation produced non-finite values."""


def _require_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericsError(f"{name} produced non-finite values")


def _as_matrix(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    return x


@dataclass
class DenseLayer:
    """One affine map plus pointwise activation; weights is [in_dim, out_dim]."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.ndim != 1 or self.bias.shape[0] != self.weights.shape[1]:
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match out_dim {self.weights.shape[1]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class Mlp:
    """A stack of DenseLayers with compatible consecutive dimensions."""

    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ContractError("Mlp needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer chain broken: out_dim {a.out_dim} feeds in_dim {b.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...], aliasing the live arrays."""
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations retained for one backward pass."""

    model: Mlp
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]

    @property
    def batch_size(self) -> int:
        return self.inputs[0].shape[0]


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def forward(model: Mlp, batch) -> tuple[np.ndarray, ForwardCache]:
    """Run the model on a [n x in_dim] batch, keeping what backward needs."""
    x = _as_matrix(batch, "batch")
    if x.shape[0] < 1:
        raise ContractError("batch must contain at least one row")
    if x.shape[1] != model.in_dim:
        raise ShapeError(
            f"batch width {x.shape[1]} does not match model input dim {model.in_dim}"
        )
    inputs, preacts = [], []
    for layer in model.layers:
        inputs.append(x)
        z = x @ layer.weights + layer.bias
        preacts.append(z)
        x = _activate(z, layer.activation)
    _require_finite("forward", x)
    return x, ForwardCache(model=model, inputs=inputs, preacts=preacts)


def backward(
    model: Mlp, cache: ForwardCache, grad_output
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Chain-rule pass; returns (grad wrt batch, per-layer (dW, db)).

    grad_output is the gradient of the downstream scalar loss with respect to
    the forward output; the returned gradients are with respect to that same
    scalar.
    """
    if cache.model is not model:
        raise ContractError("forward cache does not belong to this model")
    g = _as_matrix(grad_output, "grad_output")
    if g.shape != (cache.batch_size, model.out_dim):
        raise ShapeError(
            f"grad_output shape {g.shape} does not match output "
            f"({cache.batch_size}, {model.out_dim})"
        )
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        dz = g * _activate_grad(cache.preacts[i], layer.activation)
        dw = cache.inputs[i].T @ dz
        db = dz.sum(axis=0)
        grads[i] = (dw, db)
        g = dz @ layer.weights.T
    _require_finite("backward", g, *(a for pair in grads for a in pair))
    return g, grads


def softmax(logits) -> np.ndarray:
    z = _as_matrix(logits, "logits")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, targets) -> tuple[float, np.ndarray]:
    """Mean cross-entropy against soft target rows.

    Each target row must be a probability vector (entries in [0,1], summing
    to 1 within 1e-9). Returns (loss, gradient wrt logits), the gradient
    already divided by the row count.
    """
    z = _as_matrix(logits, "logits")
    t = _as_matrix(targets, "targets")
    if t.shape != z.shape:
        raise ShapeError(f"targets shape {t.shape} does not match logits {z.shape}")
    if np.any(t < -1e-12) or np.any(t > 1.0 + 1e-12):
        raise ContractError("target entries must lie in [0, 1]")
    sums = t.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise ContractError("every target row must sum to 1 within 1e-9")
    n = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-(t * log_probs).sum(axis=1).mean())
    grad = (np.exp(log_probs) - t) / n
    _require_finite("softmax_cross_entropy", grad)
    if not np.isfinite(loss):
        raise NumericsError("softmax_cross_entropy produced a non-finite loss")
    return loss, grad


@dataclass(frozen=True)
class SgdConfig:
    """SGD hyperparameters; direction selects loss descent or ascent."""

    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    direction: str = "descent"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be non-negative")
        if self.direction not in DIRECTIONS:
            raise ContractError(f"direction must be one of {DIRECTIONS}")


def sgd_step(
    param, grad, config: SgdConfig, velocity=None
) -> tuple[np.ndarray, np.ndarray]:
    """One SGD update; returns (new param, new velocity).

    Weight decay is added to the raw gradient, the momentum buffer is
    advanced as v <- m*v + g, and the signed step is p -/+ lr*v.
    """
    p = np.asarray(param, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeError(f"param shape {p.shape} does not match grad {g.shape}")
    if velocity is None:
        velocity = np.zeros_like(p)
    elif np.shape(velocity) != p.shape:
        raise ShapeError("velocity shape does not match param")
    g = g + config.weight_decay * p
    v = config.momentum * velocity + g
    sign = 1.0 if config.direction == "ascent" else -1.0
    return p + sign * config.learning_rate * v, v


class SgdOptimizer:
    """Holds momentum buffers for one model and applies steps in place."""

    def __init__(self, config: SgdConfig):
        self.config = config
        self._velocity: list[np.ndarray] | None = None

    def reset(self) -> None:
        self._velocity = None

    def step(self, model: Mlp, grads: list[tuple[np.ndarray, np.ndarray]]) -> None:
        if len(grads) != len(model.layers):
            raise ShapeError("gradient list does not match model layers")
        params = model.parameters()
        flat_grads = [a for pair in grads for a in pair]
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        for i, (p, g) in enumerate(zip(params, flat_grads)):
            new_p, new_v = sgd_step(p, g, self.config, self._velocity[i])
            p[...] = new_p
            self._velocity[i] = new_v


def init_dense(
    in_dim: int,
    out_dim: int,
    activation: str,
    rng: np.random.Generator,
    weight_scale: float | None = None,
) -> DenseLayer:
    if weight_scale is None:
        fan = 2.0 if activation == "relu" else 1.0
        weight_scale = np.sqrt(fan / in_dim)
    w = rng.normal(0.0, weight_scale, size=(in_dim, out_dim))
    return DenseLayer(weights=w, bias=np.zeros(out_dim), activation=activation)


def init_mlp(
    dims: Sequence[int],
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    output_activation: str = "identity",
    weight_scale: float | None = None,
) -> Mlp:
    """Build an Mlp with the given layer widths, e.g. dims=[784, 64, 10]."""
    if len(dims) < 2:
        raise ContractError("dims must name at least input and output widths")
    layers = []
    for i in range(len(dims) - 1):
        act = output_activation if i == len(dims) - 2 else hidden_activation
        layers.append(init_dense(dims[i], dims[i + 1], act, rng, weight_scale))
    return Mlp(layers=layers)


def clone_mlp(model: Mlp) -> Mlp:
    return Mlp(
        layers=[
            DenseLayer(l.weights.copy(), l.bias.copy(), l.activation)
            for l in model.layers
        ]
    )


def one_hot(labels, num_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1:
        raise ShapeError("labels must be 1-D")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ContractError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((y.shape[0], num_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def model_is_finite(model: Mlp) -> bool:
    return all(np.all(np.isfinite(p)) for p in model.parameters())
