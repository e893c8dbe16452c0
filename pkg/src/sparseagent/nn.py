"""Multilayer perceptrons with exact reverse-mode gradients.

Parameters live in a ``ParamSet``: an insertion-ordered ``dict`` mapping
``W0, b0, W1, b1, ...`` to float64 arrays. Weights are stored ``[in, out]`` so
a layer computes ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from .data import Batch, Dataset
from .tensor import RngStream, matmul, sum_rows

ParamSet = Dict[str, np.ndarray]

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class Layer:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")

    @classmethod
    def mlp(cls, sizes, activation: str = "relu") -> "ModelSpec":
        """``sizes = [d, h1, ..., C]``; hidden layers use ``activation``, the
        output layer is linear and feeds softmax cross-entropy."""
        sizes = list(sizes)
        layers = [
            Layer(a, b, activation if i < len(sizes) - 2 else "identity")
            for i, (a, b) in enumerate(zip(sizes, sizes[1:]))
        ]
        return cls(tuple(layers))

    @property
    def n_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for i, layer in enumerate(self.layers):
            shapes[f"W{i}"] = (layer.in_dim, layer.out_dim)
            shapes[f"b{i}"] = (layer.out_dim,)
        return shapes

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())


# ---------------------------------------------------------------------------
# ParamSet helpers


def is_weight(name: str) -> bool:
    return name.startswith("W")


def zeros_like(params: ParamSet) -> ParamSet:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy(params: ParamSet) -> ParamSet:
    return {k: v.copy() for k, v in params.items()}


def flatten(params: ParamSet) -> np.ndarray:
    if not params:
        return np.zeros(0)
    return np.concatenate([v.ravel() for v in params.values()])


def unflatten(vector, like: ParamSet) -> ParamSet:
    vector = np.asarray(vector, dtype=np.float64)
    size = sum(v.size for v in like.values())
    if vector.shape != (size,):
        raise ValueError(f"expected a flat vector of length {size}, got {vector.shape}")
    out, offset = {}, 0
    for k, v in like.items():
        out[k] = vector[offset : offset + v.size].reshape(v.shape).copy()
        offset += v.size
    return out


def axpy(a: float, x: ParamSet, y: ParamSet) -> ParamSet:
    """``a * x + y`` per tensor."""
    return {k: a * x[k] + y[k] for k in y}


def scale(a: float, x: ParamSet) -> ParamSet:
    return {k: a * v for k, v in x.items()}


def sub(x: ParamSet, y: ParamSet) -> ParamSet:
    return {k: x[k] - y[k] for k in x}


def global_norm(x: ParamSet) -> float:
    return float(np.sqrt(sum(float(np.sum(v * v)) for v in x.values())))


def all_finite(x: ParamSet) -> bool:
    return all(np.all(np.isfinite(v)) for v in x.values())


# ---------------------------------------------------------------------------
# Softmax cross-entropy


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits: np.ndarray, labels) -> np.ndarray:
    """Per-example ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels)
    return -log_softmax(logits)[np.arange(len(labels)), labels]


def kl_divergence(p_logits: np.ndarray, q_logits: np.ndarray) -> np.ndarray:
    """Per-example ``KL(softmax(p) || softmax(q))``."""
    lp = log_softmax(p_logits)
    lq = log_softmax(q_logits)
    return np.sum(np.exp(lp) * (lp - lq), axis=1)


# ---------------------------------------------------------------------------


class MLP:
    """Forward/backward passes for a :class:`ModelSpec`."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    def init_params(self, rng: RngStream) -> ParamSet:
        """Kaiming fan-in normal weights, ``N(0, 2 / in_dim)``; zero biases."""
        params = {}
        for i, layer in enumerate(self.spec.layers):
            std = np.sqrt(2.0 / layer.in_dim)
            params[f"W{i}"] = rng.gaussian((layer.in_dim, layer.out_dim), std=std)
            params[f"b{i}"] = np.zeros(layer.out_dim)
        return params

    def forward(self, params: ParamSet, x: np.ndarray):
        """Logits and the activations needed by :meth:`backward`."""
        cache = [x]
        h = x
        for i, layer in enumerate(self.spec.layers):
            z = matmul(h, params[f"W{i}"]) + params[f"b{i}"]
            if layer.activation == "relu":
                z = np.maximum(z, 0.0)
            cache.append(z)
            h = z
        return h, cache

    def logits(self, params: ParamSet, x) -> np.ndarray:
        return self.forward(params, np.asarray(x, dtype=np.float64))[0]

    def backward(self, params: ParamSet, cache, dlogits: np.ndarray, wrt_input: bool = False):
        """Pull ``dlogits`` back to parameter (and optionally input) gradients."""
        grads = {}
        delta = dlogits
        for i in reversed(range(len(self.spec.layers))):
            layer = self.spec.layers[i]
            if layer.activation == "relu":
                delta = delta * (cache[i + 1] > 0.0)
            grads[f"W{i}"] = matmul(cache[i].T, delta)
            grads[f"b{i}"] = sum_rows(delta)
            if i > 0 or wrt_input:
                delta = matmul(delta, params[f"W{i}"].T)
        ordered = {k: grads[k] for k in params}
        if wrt_input:
            return ordered, delta
        return ordered

    def per_example_losses(self, params: ParamSet, batch: Batch) -> np.ndarray:
        return cross_entropy(self.logits(params, batch.inputs), batch.labels)

    def loss_and_grad(self, params: ParamSet, batch: Batch) -> tuple[float, ParamSet]:
        """Mean cross-entropy over the batch and its exact gradient."""
        n = len(batch)
        if n == 0:
            raise ValueError("empty batch")
        logits, cache = self.forward(params, batch.inputs)
        losses = cross_entropy(logits, batch.labels)
        dlogits = softmax(logits)
        dlogits[np.arange(n), batch.labels] -= 1.0
        dlogits /= n
        return float(np.mean(losses)), self.backward(params, cache, dlogits)

    def input_grad(self, params: ParamSet, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        """Per-example losses and d(loss_i)/d(x_i) for every row."""
        logits, cache = self.forward(params, batch.inputs)
        losses = cross_entropy(logits, batch.labels)
        dlogits = softmax(logits)
        dlogits[np.arange(len(batch)), batch.labels] -= 1.0
        _, dx = self.backward(params, cache, dlogits, wrt_input=True)
        return losses, dx

    def full_gradient(self, params: ParamSet, dataset: Dataset) -> ParamSet:
        """Exact mean gradient over every sample of ``dataset``."""
        if len(dataset) == 0:
            raise ValueError("empty dataset")
        return self.loss_and_grad(params, dataset.as_batch())[1]

    def loss(self, params: ParamSet, dataset: Dataset) -> float:
        return float(np.mean(self.per_example_losses(params, dataset.as_batch())))

    def predict(self, params: ParamSet, x) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class index
        return np.argmax(self.logits(params, x), axis=1)

    def accuracy(self, params: ParamSet, dataset: Dataset) -> float:
        if len(dataset) == 0:
            raise ValueError("empty dataset")
        return float(np.mean(self.predict(params, dataset.inputs) == dataset.labels))
