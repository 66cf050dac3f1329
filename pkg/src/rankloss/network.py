"""Dense feed-forward networks: evaluation, loss, reverse-mode gradients.

Column-vector convention: a layer maps ``x`` (length d_in) to
``act(W @ x + b)`` with ``W`` of shape (d_out, d_in). Batches are stored
row-wise, so internally a batch ``X`` (m, d_in) maps to ``act(X @ W.T + b)``.

Networks and layers are immutable values; every operation that changes a
weight returns a new :class:`Network`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInputError, StateError, TrainingError
from .linalg import FactorPair, as_matrix

ACTIVATIONS = ("identity", "relu", "tanh")
LOSS_KINDS = ("softmax-cross-entropy", "mean-squared-error")


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    factors: FactorPair | None = None

    def __post_init__(self):
        w = as_matrix(self.weight, "layer weight")
        b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if b.shape[0] != w.shape[0]:
            raise InvalidInputError(f"bias length {b.shape[0]} != weight rows {w.shape[0]}")
        if not np.all(np.isfinite(b)):
            raise InvalidInputError("bias contains NaN or Inf")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        if self.factors is not None and self.factors.shape != w.shape:
            raise InvalidInputError(
                f"factor product shape {self.factors.shape} != weight shape {w.shape}")
        object.__setattr__(self, "weight", _frozen(w))
        object.__setattr__(self, "bias", _frozen(b))

    @property
    def decomposed(self):
        return self.factors is not None

    @property
    def shape(self):
        return self.weight.shape

    @property
    def param_count(self):
        """Weight parameters only: N*M intact, N*k + M*k when factorized."""
        if self.factors is not None:
            return self.factors.param_count
        return self.weight.shape[0] * self.weight.shape[1]


@dataclass(frozen=True)
class Network:
    layers: tuple
    loss_kind: str = "softmax-cross-entropy"

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InvalidInputError("network needs at least one layer")
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidInputError(f"unknown loss kind {self.loss_kind!r}")
        for i in range(len(layers) - 1):
            if layers[i].shape[0] != layers[i + 1].shape[1]:
                raise InvalidInputError(
                    f"layer {i} outputs {layers[i].shape[0]} but layer {i + 1} "
                    f"expects {layers[i + 1].shape[1]}")
        object.__setattr__(self, "layers", layers)

    @property
    def d_in(self):
        return self.layers[0].shape[1]

    @property
    def d_out(self):
        return self.layers[-1].shape[0]

    @property
    def param_count(self):
        return sum(layer.param_count for layer in self.layers)

    def __len__(self):
        return len(self.layers)


@dataclass(frozen=True)
class Dataset:
    """Samples row-wise. ``labels`` are class indices (m,) or targets (m, d_out)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = as_matrix(self.inputs, "dataset inputs")
        y = np.asarray(self.labels)
        if y.shape[0] != x.shape[0]:
            raise InvalidInputError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if y.dtype.kind == "f" and not np.all(np.isfinite(y)):
            raise InvalidInputError("labels contain NaN or Inf")
        object.__setattr__(self, "inputs", _frozen(x))
        y = y.copy()
        y.flags.writeable = False
        object.__setattr__(self, "labels", y)

    @property
    def m(self):
        return self.inputs.shape[0]

    def __len__(self):
        return self.m


@dataclass(frozen=True)
class GradientSnapshot:
    """Per-layer mean gradient of the per-sample loss w.r.t. each weight matrix."""

    grads: tuple

    def __getitem__(self, i):
        return self.grads[i]

    def __len__(self):
        return len(self.grads)

    def __iter__(self):
        return iter(self.grads)


def _act(kind, z):
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(kind, z, a):
    if kind == "identity":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _check_layer_index(net, i):
    if not isinstance(i, (int, np.integer)) or not 0 <= i < len(net.layers):
        raise InvalidInputError(f"layer index {i!r} outside [0, {len(net.layers) - 1}]")
    return int(i)


def _trace(net, x):
    """Forward pass keeping each layer's input and pre-activation."""
    inputs, pre = [], []
    a = x
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weight.T + layer.bias
        pre.append(z)
        a = _act(layer.activation, z)
    return inputs, pre, a


def forward(net, x):
    """Network output before the loss. ``x`` may be a vector or an (m, d_in) batch."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr.reshape(1, -1) if single else arr
    if batch.ndim != 2 or batch.shape[1] != net.d_in:
        raise InvalidInputError(f"input shape {arr.shape} incompatible with d_in={net.d_in}")
    if not np.all(np.isfinite(batch)):
        raise InvalidInputError("input contains NaN or Inf")
    out = _trace(net, batch)[2]
    return out[0] if single else out


def _targets(net, data):
    y = data.labels
    if net.loss_kind == "softmax-cross-entropy":
        if y.ndim != 1 or y.dtype.kind not in "iu":
            if y.ndim == 1 and y.dtype.kind == "f" and np.all(y == np.round(y)):
                y = y.astype(np.int64)
            else:
                raise InvalidInputError("cross-entropy needs integer class labels")
        if y.size and (y.min() < 0 or y.max() >= net.d_out):
            raise InvalidInputError(f"class labels must lie in [0, {net.d_out})")
        return y
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    if y.shape[1] != net.d_out:
        raise InvalidInputError(f"target width {y.shape[1]} != network output {net.d_out}")
    return y


def _check_data(net, data):
    if data.m < 1:
        raise InvalidInputError("dataset is empty")
    if data.inputs.shape[1] != net.d_in:
        raise InvalidInputError(
            f"dataset has {data.inputs.shape[1]} features, network expects {net.d_in}")
    return _targets(net, data)


def _loss_and_dlogits(kind, out, y):
    """Per-sample losses and their gradients w.r.t. the network output."""
    if kind == "softmax-cross-entropy":
        shift = out - out.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shift).sum(axis=1))
        rows = np.arange(out.shape[0])
        losses = lse - shift[rows, y]
        probs = np.exp(shift - lse[:, None])
        probs[rows, y] -= 1.0
        return losses, probs
    diff = out - y
    d = out.shape[1]
    return np.einsum("ij,ij->i", diff, diff) / d, 2.0 * diff / d


def sample_losses(net, data):
    y = _check_data(net, data)
    out = _trace(net, data.inputs)[2]
    return _loss_and_dlogits(net.loss_kind, out, y)[0]


def dataset_loss(net, data):
    """Mean per-sample loss over ``data``."""
    return float(np.mean(sample_losses(net, data)))


def _backprop(net, data):
    """Per-sample layer inputs and output-side error signals for every layer.

    The per-sample weight gradient of layer i is ``outer(signals[i][s], inputs[i][s])``.
    """
    y = _check_data(net, data)
    inputs, pre, out = _trace(net, data.inputs)
    losses, g = _loss_and_dlogits(net.loss_kind, out, y)
    signals = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a = out if i == len(net.layers) - 1 else inputs[i + 1]
        g = g * _act_grad(layer.activation, pre[i], a)
        signals[i] = g
        if i:
            g = g @ layer.weight
    return losses, inputs, signals


def gradients(net, data):
    """Exact mean gradient of the dataset loss w.r.t. every layer weight."""
    _, inputs, signals = _backprop(net, data)
    m = data.m
    grads = tuple(_frozen(signals[i].T @ inputs[i] / m) for i in range(len(net.layers)))
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise InvalidInputError("gradient is not finite")
    return GradientSnapshot(grads)


def sample_directional(net, data, layer_index, delta):
    """Per-sample first-order loss change <d loss_s / d W_i, delta>."""
    i = _check_layer_index(net, layer_index)
    delta = _check_delta(net, i, delta)
    _, inputs, signals = _backprop(net, data)
    return np.einsum("ij,ij->i", signals[i], inputs[i] @ delta.T)


def _check_delta(net, i, delta):
    d = as_matrix(delta, "delta")
    if d.shape != net.layers[i].shape:
        raise InvalidInputError(
            f"delta shape {d.shape} != layer {i} weight shape {net.layers[i].shape}")
    return d


def perturb(net, layer_index, delta):
    """Copy of ``net`` with layer ``layer_index``'s weight replaced by weight + delta."""
    i = _check_layer_index(net, layer_index)
    d = _check_delta(net, i, delta)
    old = net.layers[i]
    new = Layer(old.weight + d, old.bias, old.activation, None)
    layers = list(net.layers)
    layers[i] = new
    return replace(net, layers=tuple(layers))


def apply_factorization(net, layer_index, f):
    """Replace a layer's weight by ``f.l @ f.r.T`` and keep the factors."""
    i = _check_layer_index(net, layer_index)
    old = net.layers[i]
    if old.decomposed:
        raise StateError(f"layer {i} is already decomposed")
    if f.shape != old.shape:
        raise InvalidInputError(f"factor product shape {f.shape} != layer {i} shape {old.shape}")
    layers = list(net.layers)
    layers[i] = Layer(f.product(), old.bias, old.activation, f)
    return replace(net, layers=tuple(layers))


def init_network(arch, seed, activation="tanh", loss_kind="softmax-cross-entropy",
                 init_scale=1.0):
    """Gaussian init, std = init_scale / sqrt(d_in); zero biases; identity output layer."""
    arch = [int(d) for d in arch]
    if len(arch) < 2 or min(arch) < 1:
        raise InvalidInputError(f"architecture needs >= 2 positive sizes, got {arch}")
    rng = np.random.default_rng(seed)
    layers = []
    for j, (d_in, d_out) in enumerate(zip(arch[:-1], arch[1:])):
        w = rng.standard_normal((d_out, d_in)) * (init_scale / np.sqrt(d_in))
        act = "identity" if j == len(arch) - 2 else activation
        layers.append(Layer(w, np.zeros(d_out), act))
    return Network(tuple(layers), loss_kind)


def train_toy(arch, data, steps, learning_rate, seed, activation="tanh",
              loss_kind="softmax-cross-entropy", init_scale=1.0):
    """Full-batch gradient descent from a seeded init; returns (network, final loss)."""
    if steps < 0:
        raise InvalidInputError("steps must be >= 0")
    if not learning_rate > 0:
        raise InvalidInputError("learning_rate must be > 0")
    net = init_network(arch, seed, activation, loss_kind, init_scale)
    for step in range(steps):
        # overflow is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            _, inputs, signals = _backprop(net, data)
            new_w, new_b = [], []
            for layer, a, g in zip(net.layers, inputs, signals):
                new_w.append(layer.weight - learning_rate * (g.T @ a) / data.m)
                new_b.append(layer.bias - learning_rate * g.mean(axis=0))
        if not all(np.all(np.isfinite(w)) for w in new_w + new_b):
            raise TrainingError(f"training diverged at step {step}")
        net = replace(net, layers=tuple(
            Layer(w, b, layer.activation) for layer, w, b in zip(net.layers, new_w, new_b)))
    final = dataset_loss(net, data)
    if not np.isfinite(final):
        raise TrainingError("training diverged: final loss is not finite")
    return net, final
