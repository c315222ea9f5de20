"""Dense feedforward networks with analytic backpropagation.

A :class:`Network` is an ordered stack of :class:`Dense`, :class:`ReLU` and
:class:`Softmax` layers.  Networks are treated as immutable values: training
returns a new network and never touches the parameters of its input.

Activations follow the row convention, ``x`` is ``(n, d)`` and a dense layer
computes ``x @ W.T + b`` with ``W`` of shape ``(out, in)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError, UnsupportedHeadError


@dataclass(frozen=True, eq=False)
class Dense:
    weight: np.ndarray
    bias: np.ndarray
    kind = "dense"

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise DimensionError(
                f"dense weight {w.shape} and bias {b.shape} are inconsistent")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class ReLU:
    kind = "relu"


@dataclass(frozen=True)
class Softmax:
    kind = "softmax"


Layer = Dense | ReLU | Softmax


@dataclass(frozen=True, eq=False)
class Network:
    """Layer stack with an explicit input width.

    ``frozen`` counts leading layers that training must leave untouched.
    ``train_losses`` holds the mean loss of every epoch of the last
    :func:`train_classifier` call that produced this network.
    """

    layers: tuple
    input_dim: int
    frozen: int = 0
    train_losses: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_dim < 1:
            raise DimensionError("input_dim must be positive")
        if not 0 <= self.frozen <= len(self.layers):
            raise IndexError(f"frozen={self.frozen} outside 0..{len(self.layers)}")
        width = self.input_dim
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                if layer.in_dim != width:
                    raise DimensionError(
                        f"layer {i} (dense) expects {layer.in_dim} inputs, "
                        f"previous layer yields {width}")
                width = layer.out_dim
            elif isinstance(layer, Softmax) and i != len(self.layers) - 1:
                raise DimensionError(f"softmax at layer {i} is not the final layer")
        object.__setattr__(self, "_output_dim", width)

    @property
    def output_dim(self) -> int:
        return self._output_dim

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def has_softmax_head(self) -> bool:
        return bool(self.layers) and isinstance(self.layers[-1], Softmax)

    def dims(self) -> list[int]:
        """Width of every activation, input included."""
        out = [self.input_dim]
        for layer in self.layers:
            out.append(layer.out_dim if isinstance(layer, Dense) else out[-1])
        return out

    def params_equal(self, other: "Network") -> bool:
        if len(self) != len(other) or self.input_dim != other.input_dim:
            return False
        for a, b in zip(self.layers, other.layers):
            if type(a) is not type(b):
                return False
            if isinstance(a, Dense) and not (
                    np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)):
                return False
        return True


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def glorot_dense(fan_in: int, fan_out: int, rng: np.random.Generator) -> Dense:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Dense(rng.uniform(-a, a, size=(fan_out, fan_in)), np.zeros(fan_out))


def init_network(sizes: Sequence[int], seed: int = 0, softmax: bool = True) -> Network:
    """Dense/ReLU stack ``sizes[0] -> ... -> sizes[-1]``.

    ReLU follows every hidden dense layer; the last dense layer is followed by
    a softmax when ``softmax`` is true.
    """
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    rng = np.random.default_rng(seed)
    layers: list = []
    for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(glorot_dense(fi, fo, rng))
        if i < len(sizes) - 2:
            layers.append(ReLU())
    if softmax:
        layers.append(Softmax())
    return Network(tuple(layers), int(sizes[0]))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _apply(layer, a: np.ndarray) -> np.ndarray:
    if isinstance(layer, Dense):
        return a @ layer.weight.T + layer.bias
    if isinstance(layer, ReLU):
        return np.maximum(a, 0.0)
    return softmax(a)


def forward(net: Network, x) -> list[np.ndarray]:
    """Return ``[x, a_1, ..., a_L]``; the last entry is the network output.

    A 1-D ``x`` is treated as a single sample and 1-D activations come back.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.ndim != 2 or a.shape[1] != net.input_dim:
        raise DimensionError(
            f"layer 0 ({net.layers[0].kind if net.layers else 'input'}) expects "
            f"input width {net.input_dim}, got shape {x.shape}")
    acts = [a]
    for layer in net.layers:
        a = _apply(layer, a)
        acts.append(a)
    return [t[0] for t in acts] if single else acts


def predict_proba(net: Network, x) -> np.ndarray:
    return forward(net, x)[-1]


def _check_head(net: Network) -> None:
    if not net.has_softmax_head:
        raise UnsupportedHeadError("loss gradients need a network ending in softmax")


def _targets(y, n: int, n_classes: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (n,):
        raise DimensionError(f"expected {n} targets, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("class targets must be integers")
        y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"target class outside 0..{n_classes - 1}")
    return y


def cross_entropy(net: Network, x, y) -> float:
    """Mean softmax cross-entropy of ``net`` on ``(x, y)``."""
    _check_head(net)
    acts = forward(net, np.atleast_2d(x))
    y = _targets(y, acts[0].shape[0], net.output_dim)
    logp = log_softmax(acts[-2])
    return float(-logp[np.arange(len(y)), y].mean())


def backprop(net: Network, acts: list[np.ndarray], grad: np.ndarray, start: int,
             inject: Optional[dict] = None) -> list:
    """Push ``grad`` (d loss / d ``acts[start]``) down to the input.

    ``inject`` maps activation index to an extra gradient added on the way
    down, which is how losses defined on intermediate layers enter.  Returns
    ``(dW, db)`` for dense layers below ``start`` and ``None`` elsewhere.
    """
    grads: list = [None] * len(net.layers)
    inject = inject or {}
    for i in range(start - 1, -1, -1):
        if i + 1 in inject:
            grad = grad + inject[i + 1]
        layer = net.layers[i]
        if isinstance(layer, Dense):
            grads[i] = (grad.T @ acts[i], grad.sum(axis=0))
            grad = grad @ layer.weight
        elif isinstance(layer, ReLU):
            grad = grad * (acts[i] > 0)
        else:
            raise UnsupportedHeadError(f"cannot backpropagate through softmax at layer {i}")
    return grads


def backward(net: Network, x, target_class, inject: Optional[dict] = None) -> list:
    """Gradients of mean cross-entropy w.r.t. every parameter.

    ``x`` may be one sample or a batch; ``target_class`` matches.  The result
    is a list aligned with ``net.layers`` holding ``(dW, db)`` for dense
    layers and ``None`` for parameter-free ones.
    """
    _check_head(net)
    acts = forward(net, np.atleast_2d(x))
    n = acts[0].shape[0]
    y = _targets(target_class, n, net.output_dim)
    delta = acts[-1].copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return backprop(net, acts, delta, len(net.layers) - 1, inject)


def apply_gradients(net: Network, grads: list, lr: float) -> Network:
    layers = list(net.layers)
    for i, g in enumerate(grads):
        if g is None or i < net.frozen:
            continue
        layer = layers[i]
        layers[i] = Dense(layer.weight - lr * g[0], layer.bias - lr * g[1])
    return replace(net, layers=tuple(layers))


def freeze_prefix(net: Network, i: int) -> Network:
    """Copy of ``net`` whose first ``i`` layers training will not update."""
    if not 0 <= i <= len(net.layers):
        raise IndexError(f"freeze index {i} outside 0..{len(net.layers)}")
    return replace(net, frozen=i)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def train_classifier(x, y, net: Network, cfg: TrainConfig) -> Network:
    """Mini-batch SGD on softmax cross-entropy.

    ``net`` supplies both the architecture and the initial parameters; its
    frozen prefix is respected.  Deterministic for a fixed ``cfg.seed``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInputError("training set is empty")
    _check_head(net)
    if x.shape[1] != net.input_dim:
        raise DimensionError(f"data has {x.shape[1]} features, network expects {net.input_dim}")
    y = _targets(y, x.shape[0], net.output_dim)
    if cfg.batch_size > x.shape[0]:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {x.shape[0]}")
    if cfg.epochs == 0:
        return net
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for _ in range(cfg.epochs):
        total = 0.0
        for idx in _batches(x.shape[0], cfg.batch_size, rng):
            acts = forward(net, x[idx])
            logp = log_softmax(acts[-2])
            total += -logp[np.arange(len(idx)), y[idx]].sum()
            delta = acts[-1].copy()
            delta[np.arange(len(idx)), y[idx]] -= 1.0
            delta /= len(idx)
            grads = backprop(net, acts, delta, len(net.layers) - 1)
            net = apply_gradients(net, grads, cfg.learning_rate)
        losses.append(total / x.shape[0])
    return replace(net, train_losses=tuple(losses))


def accuracy(net: Network, x, y) -> float:
    y = np.asarray(y)
    if y.size == 0:
        raise EmptyInputError("no samples to score")
    return float(np.mean(predict_proba(net, x).argmax(axis=1) == y))
