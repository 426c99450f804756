"""ReLU multilayer perceptron split into a shared feature extractor and a private head."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import LayoutError, ParamVector, Shape, concat, layout_size, split

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = (32, 16)

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.num_classes < 1:
            raise ValueError("input_dim and num_classes must be positive")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims needs at least one positive entry")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def extractor_layout(self) -> tuple[Shape, ...]:
        layout: list[Shape] = []
        for fan_in, fan_out in self.layer_dims[:-1]:
            layout += [(fan_in, fan_out), (fan_out,)]
        return tuple(layout)

    @property
    def head_layout(self) -> tuple[Shape, ...]:
        fan_in, fan_out = self.layer_dims[-1]
        return ((fan_in, fan_out), (fan_out,))

    @property
    def full_layout(self) -> tuple[Shape, ...]:
        return self.extractor_layout + self.head_layout

    @property
    def extractor_size(self) -> int:
        return layout_size(self.extractor_layout)

    @property
    def head_size(self) -> int:
        return layout_size(self.head_layout)

    @property
    def total_size(self) -> int:
        return self.extractor_size + self.head_size


@dataclass(frozen=True)
class ModelParams:
    theta: ParamVector
    phi: ParamVector

    def omega(self) -> ParamVector:
        return concat(self.theta, self.phi)

    @classmethod
    def from_omega(cls, omega: ParamVector) -> "ModelParams":
        theta, phi = split(omega, 2)
        return cls(theta, phi)

    def check(self, spec: ModelSpec) -> None:
        if self.theta.layout != spec.extractor_layout or self.phi.layout != spec.head_layout:
            raise LayoutError("parameters do not match the model spec")


@dataclass(frozen=True)
class MomentumState:
    velocity: ParamVector

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "MomentumState":
        return cls(ParamVector.zeros(spec.full_layout))


def init_params(spec: ModelSpec, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    chunks = []
    for fan_in, fan_out in spec.layer_dims:
        s = math.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-s, s, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    omega = ParamVector(np.concatenate(chunks), spec.full_layout)
    return ModelParams.from_omega(omega)


def _layers(params: ModelParams) -> list[tuple[np.ndarray, np.ndarray]]:
    tensors = params.theta.tensors() + params.phi.tensors()
    return list(zip(tensors[0::2], tensors[1::2]))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class probabilities for an (N, input_dim) batch."""
    a = np.asarray(features, dtype=np.float64)
    layers = _layers(params)
    if a.ndim != 2 or a.shape[1] != layers[0][0].shape[0]:
        raise ValueError(
            f"expected features of width {layers[0][0].shape[0]}, got shape {a.shape}"
        )
    for W, b in layers[:-1]:
        a = np.maximum(a @ W + b, 0.0)
    W, b = layers[-1]
    return softmax(a @ W + b)


def forward(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward takes a single feature vector")
    return forward_batch(params, x[None, :])[0]


def cross_entropy(probs: np.ndarray, y: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= int(y) < probs.shape[-1]:
        raise ValueError(f"class index {y} outside [0, {probs.shape[-1]})")
    return -math.log(max(float(probs[int(y)]), PROB_FLOOR))


def mean_loss(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> float:
    probs = forward_batch(params, features)
    picked = probs[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def loss_and_grad(
    params: ModelParams, features: np.ndarray, labels: np.ndarray
) -> tuple[float, ParamVector]:
    """Mean cross-entropy over the batch and its exact gradient over [theta; phi]."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("backward needs a nonempty (N, input_dim) batch")
    if len(y) != len(X):
        raise ValueError("features and labels differ in length")
    layers = _layers(params)
    n = len(X)

    acts = [X]
    pre = []
    a = X
    for W, b in layers[:-1]:
        z = a @ W + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    W_out, b_out = layers[-1]
    probs = softmax(a @ W_out + b_out)
    rows = np.arange(n)
    loss = float(-np.log(np.maximum(probs[rows, y], PROB_FLOOR)).mean())

    dz = probs.copy()
    dz[rows, y] -= 1.0
    dz /= n
    grads: list[np.ndarray] = []
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        grads.append(dz.sum(axis=0))
        grads.append((acts[k].T @ dz).reshape(-1))
        if k > 0:
            dz = (dz @ W.T) * (pre[k - 1] > 0.0)
    flat = np.concatenate(grads[::-1])
    return loss, ParamVector(flat, params.theta.layout + params.phi.layout)


def backward(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> ParamVector:
    return loss_and_grad(params, features, labels)[1]


def sgd_momentum_step(
    params: ModelParams,
    grad: ParamVector,
    state: MomentumState,
    lr: float,
    momentum: float,
) -> tuple[ModelParams, MomentumState]:
    """Heavy-ball step: v <- momentum * v + g, omega <- omega - lr * v."""
    omega = params.omega()
    if grad.layout != omega.layout or state.velocity.layout != omega.layout:
        raise LayoutError("gradient, velocity and parameters must share a layout")
    if lr < 0 or not 0 <= momentum < 1:
        raise ValueError("need lr >= 0 and 0 <= momentum < 1")
    velocity = momentum * state.velocity.values + grad.values
    new_omega = omega.values - lr * velocity
    return (
        ModelParams.from_omega(ParamVector(new_omega, omega.layout)),
        MomentumState(ParamVector(velocity, omega.layout)),
    )
