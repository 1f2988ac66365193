"""Minimal dense-network engine: forward, exact backprop, and Adam.

Every learnable component in this package is a small fully connected
net, so the engine stays deliberately tiny: float64 arrays, explicit
forward caches, hand-written gradients, no autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("sigmoid", "relu", "tanh", "identity")


class NumericalError(RuntimeError):
    """Raised when training produces NaN/Inf where finite values are required."""


def sigmoid(x):
    """Numerically stable logistic function sigma(x) = 1 / (1 + exp(-x))."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(name, z):
    if name == "sigmoid":
        return sigmoid(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name, z, a):
    # Derivative of the activation at z; a is the cached activation(z).
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "relu":
        return (z > 0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str


@dataclass
class ForwardCache:
    """Per-layer state kept by forward() so backward() can replay it."""

    owner: object
    single: bool
    xs: list  # input to each layer, 2D
    zs: list  # pre-activations
    acts: list  # activations before any dropout mask
    masks: list  # inverted-dropout masks or None


class DenseNet:
    """A chain of dense layers with dropout on hidden activations only.

    Dropout uses inverted scaling: surviving units are divided by the
    keep probability during training, so inference needs no rescale.
    The output layer is never masked.
    """

    def __init__(self, layers: list[Layer], dropout: float = 0.0):
        if not layers:
            raise ValueError("a network needs at least one layer")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        for k, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.weight.shape[0],):
                raise ValueError(f"layer {k}: weight/bias shapes disagree")
            if k > 0 and layer.weight.shape[1] != layers[k - 1].weight.shape[0]:
                raise ValueError(
                    f"layer {k}: input size {layer.weight.shape[1]} does not chain "
                    f"with layer {k - 1} output size {layers[k - 1].weight.shape[0]}"
                )
        self.layers = layers
        self.dropout = float(dropout)

    @classmethod
    def create(cls, dims, activations, dropout=0.0, rng=None):
        """Build a net with Glorot-uniform weights, +-sqrt(6/(fan_in+fan_out))."""
        if len(activations) != len(dims) - 1:
            raise ValueError("need one activation per layer")
        if rng is None:
            rng = np.random.default_rng()
        layers = []
        for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
            r = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-r, r, size=(fan_out, fan_in))
            layers.append(Layer(weight=w, bias=np.zeros(fan_out), activation=act))
        return cls(layers, dropout=dropout)

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def param_names(self) -> list[str]:
        out = []
        for k in range(len(self.layers)):
            out.append(f"layer{k}.weight")
            out.append(f"layer{k}.bias")
        return out

    def forward(self, x, train: bool = False, rng=None):
        """Run the net on a vector or a (batch, in) matrix.

        Returns (output, cache); pass the cache to backward(). In train
        mode hidden activations are masked with rate ``self.dropout``.
        """
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        h = arr[None, :] if single else arr
        if h.ndim != 2:
            raise ValueError("input must be a vector or a 2D batch")
        xs, zs, acts, masks = [], [], [], []
        last = len(self.layers) - 1
        for k, layer in enumerate(self.layers):
            if h.shape[1] != layer.weight.shape[1]:
                raise ValueError(
                    f"layer {k}: expected input of size {layer.weight.shape[1]}, "
                    f"got {h.shape[1]}"
                )
            xs.append(h)
            z = h @ layer.weight.T + layer.bias
            a = _activate(layer.activation, z)
            zs.append(z)
            acts.append(a)
            if k < last and train and self.dropout > 0.0:
                if rng is None:
                    raise ValueError("dropout in train mode needs an rng")
                keep = 1.0 - self.dropout
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
                masks.append(mask)
            else:
                masks.append(None)
            h = a
        cache = ForwardCache(owner=self, single=single, xs=xs, zs=zs, acts=acts, masks=masks)
        return (h[0] if single else h), cache

    def backward(self, cache: ForwardCache, grad_out):
        """Exact gradients for the scalar loss whose output-gradient is grad_out.

        Returns (param_grads, input_grad) with param_grads aligned with
        params(). Reuses the dropout masks recorded by the forward pass.
        """
        if not isinstance(cache, ForwardCache) or cache.owner is not self:
            raise ValueError("forward cache missing or produced by a different network")
        g = np.asarray(grad_out, dtype=float)
        if cache.single:
            g = g[None, :]
        expected = (cache.xs[-1].shape[0], self.out_dim)
        if g.shape != expected:
            raise ValueError(f"upstream gradient shape {g.shape} != output shape {expected}")
        grads: list = [None] * (2 * len(self.layers))
        for k in reversed(range(len(self.layers))):
            layer = self.layers[k]
            if cache.masks[k] is not None:
                g = g * cache.masks[k]
            dz = g * _activation_grad(layer.activation, cache.zs[k], cache.acts[k])
            grads[2 * k] = dz.T @ cache.xs[k]
            grads[2 * k + 1] = dz.sum(axis=0)
            g = dz @ layer.weight
        return grads, (g[0] if cache.single else g)


@dataclass
class AdamSlot:
    """First/second moment accumulators for one named parameter block."""

    m: list
    v: list
    step: int = 0


class Adam:
    """Bias-corrected Adam over named blocks of parameter arrays.

    Parameters are updated in place. An optional L2 term adds
    ``l2 * param`` to the gradient before the moment update, which is
    how the pairwise-ranking regularizer is realized.
    """

    def __init__(self, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("lr must be > 0")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.slots: dict[str, AdamSlot] = {}

    def _slot(self, name, params):
        slot = self.slots.get(name)
        if slot is None:
            slot = AdamSlot(m=[np.zeros_like(p) for p in params],
                            v=[np.zeros_like(p) for p in params])
            self.slots[name] = slot
        if len(slot.m) != len(params) or any(
            m.shape != p.shape for m, p in zip(slot.m, params)
        ):
            raise ValueError(f"parameter shapes changed for Adam block {name!r}")
        return slot

    def step(self, name: str, params, grads, l2: float = 0.0):
        """One Adam update of ``params`` (in place) using ``grads``."""
        if len(params) != len(grads):
            raise ValueError("params and grads must align")
        slot = self._slot(name, params)
        for i, (p, g) in enumerate(zip(params, grads)):
            g = np.asarray(g, dtype=float)
            if g.shape != p.shape:
                raise ValueError(f"gradient {i} of block {name!r} has shape "
                                 f"{g.shape}, parameter has {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in block {name!r}, parameter {i}")
            if l2:
                g = g + l2 * p
            slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g
            slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * (g * g)
        slot.step += 1
        bc1 = 1.0 - self.beta1 ** slot.step
        bc2 = 1.0 - self.beta2 ** slot.step
        for i, p in enumerate(params):
            m_hat = slot.m[i] / bc1
            v_hat = slot.v[i] / bc2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if not np.all(np.isfinite(p)):
                raise NumericalError(f"non-finite parameter in block {name!r}, parameter {i}")
