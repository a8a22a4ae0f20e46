"""Small fully connected networks with hand-written backprop, AdamW and a
cosine learning-rate schedule. Everything is float64 and batch-first."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericError

ACTIVATIONS = ("linear", "relu", "tanh")
NORM_EPS = 1e-12


@dataclass
class MlpParams:
    widths: tuple
    activations: tuple  # one per layer
    weights: list  # layer l has shape (widths[l], widths[l + 1])
    biases: list

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.activations = tuple(self.activations)
        if len(self.widths) < 2:
            raise InvalidInputError("an MLP needs at least input and output widths")
        if len(self.activations) != len(self.widths) - 1:
            raise InvalidInputError("need exactly one activation per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise InvalidInputError(f"unknown activation {a!r}")
        if len(self.weights) != len(self.activations) or len(self.biases) != len(self.activations):
            raise InvalidInputError("need one weight matrix and one bias per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[l], self.widths[l + 1]) or b.shape != (self.widths[l + 1],):
                raise InvalidInputError(f"layer {l} parameter shapes do not match widths")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InvalidInputError(f"layer {l} has non-finite parameters")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list:
        """Parameters in layer order ``[W0, b0, W1, b1, ...]`` (live references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.widths, self.activations,
                         [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class Cache:
    inputs: list = field(default_factory=list)  # input to each layer
    outputs: list = field(default_factory=list)  # post-activation output of each layer
    squeeze: bool = False


def mlp_init(widths, activation="relu", rng=None, out_activation="linear") -> MlpParams:
    """Fan-in scaled uniform weights, zero biases.

    ``activation`` applies to hidden layers; pass a sequence to set every
    layer explicitly.
    """
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise InvalidInputError("widths must list at least two layer sizes")
    if any(w <= 0 for w in widths):
        raise InvalidInputError(f"layer widths must be positive, got {widths}")
    if isinstance(activation, str):
        acts = (activation,) * (len(widths) - 2) + (out_activation,)
    else:
        acts = tuple(activation)
    rng = np.random.default_rng() if rng is None else rng
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = math.sqrt(6.0 / fan_in)  # He-uniform
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(widths, acts, weights, biases)


def _act(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_grad(kind, y, g):
    # derivative expressed through the activation output y
    if kind == "relu":
        return g * (y > 0)
    if kind == "tanh":
        return g * (1.0 - y * y)
    return g


def forward(params: MlpParams, x):
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.widths[0]:
        raise InvalidInputError(f"expected input width {params.widths[0]}, got shape {x.shape}")
    cache = Cache(squeeze=squeeze)
    h = x
    for w, b, kind in zip(params.weights, params.biases, params.activations):
        cache.inputs.append(h)
        h = _act(kind, h @ w + b)
        cache.outputs.append(h)
    return (h[0] if squeeze else h), cache


def backward(params: MlpParams, cache: Cache, grad_out):
    """Reverse pass. Returns ``(grads, grad_input)`` with ``grads`` laid out
    like :meth:`MlpParams.arrays`."""
    g = np.asarray(grad_out, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.outputs[-1].shape:
        raise InvalidInputError(f"output gradient shape {g.shape} does not match {cache.outputs[-1].shape}")
    grads = [None] * (2 * params.n_layers)
    for l in reversed(range(params.n_layers)):
        g = _act_grad(params.activations[l], cache.outputs[l], g)
        grads[2 * l] = cache.inputs[l].T @ g
        grads[2 * l + 1] = g.sum(axis=0)
        g = g @ params.weights[l].T
    return grads, (g[0] if cache.squeeze else g)


def l2_normalize(v):
    """Unit vectors along the last axis."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n <= NORM_EPS):
        raise NumericError("cannot normalise a vector with near-zero norm")
    return v / n


def l2_normalize_backward(v, grad_u):
    """Pull ``grad_u`` back through ``u = v / |v|``: ``(g - u (u . g)) / |v|``."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / n
    return (grad_u - u * np.sum(u * grad_u, axis=-1, keepdims=True)) / n


def cosine_lr(step, total_steps, lr_start=5e-4, lr_end=1e-5) -> float:
    if not 0 <= step <= total_steps:
        raise InvalidInputError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return float(lr_start)
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class AdamWState:
    m: list
    v: list
    step: int = 0
    lr_start: float = 5e-4
    lr_end: float = 1e-5
    weight_decay: float = 1e-4
    total_steps: int = 1
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamWState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adamw_step(params: list, grads: list, state: AdamWState) -> float:
    """One decoupled-weight-decay Adam update, in place. Returns the lr used.

    Nothing is modified when a gradient is non-finite.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidInputError("params, grads and optimizer moments must align")
    if state.step >= state.total_steps:
        raise InvalidInputError(f"optimizer already ran its {state.total_steps} scheduled steps")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise InvalidInputError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {i} at step {state.step}")
    lr = cosine_lr(state.step, state.total_steps, state.lr_start, state.lr_end)
    b1, b2 = state.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p *= 1.0 - lr * state.weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return lr
