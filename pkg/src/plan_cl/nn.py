"""A small ReLU network whose linear layers carry stacked low-rank adapters.

Layout: ``x -> AdapterLinear -> ReLU -> AdapterLinear -> ... -> GrowingHead``.
Weights follow the ``(out, in)`` convention, so a layer computes
``x @ W.T + bias`` on a row batch and ``dL/dW`` has the weight's shape.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError


class StaleCacheError(RuntimeError):
    pass


class AdapterLinear:
    """Frozen ``w0`` plus frozen adapters ``B_i A_i`` plus an optional live ``(B, A)``."""

    def __init__(self, w0: np.ndarray, bias: np.ndarray | None = None):
        self.w0 = np.array(w0, dtype=np.float64)
        self.bias = None if bias is None else np.array(bias, dtype=np.float64)
        self.frozen: list[tuple[np.ndarray, np.ndarray]] = []
        self._live_b: np.ndarray | None = None
        self._live_a: np.ndarray | None = None
        self._base = self.w0.copy()
        self.version = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.w0.shape

    @property
    def live_b(self) -> np.ndarray | None:
        return self._live_b

    @live_b.setter
    def live_b(self, value: np.ndarray) -> None:
        if self._live_a is None:
            raise RuntimeError("no live adapter to update")
        if value.shape != (self.w0.shape[0], self._live_a.shape[0]):
            raise ShapeError(f"B must be {self.w0.shape[0]}x{self._live_a.shape[0]}, got {value.shape}")
        self._live_b = value
        self.version += 1

    @property
    def live_a(self) -> np.ndarray | None:
        return self._live_a

    @live_a.setter
    def live_a(self, value: np.ndarray) -> None:
        if self._live_a is None or value.shape != self._live_a.shape:
            raise ShapeError("A may only be replaced by a matrix of the same shape")
        self._live_a = value
        self.version += 1

    def attach(self, b: np.ndarray, a: np.ndarray) -> None:
        d, k = self.w0.shape
        if self._live_a is not None:
            raise RuntimeError("a live adapter is already attached")
        if b.shape[0] != d or a.shape[1] != k or b.shape[1] != a.shape[0]:
            raise ShapeError(f"adapter {b.shape} x {a.shape} does not fit weight {d}x{k}")
        self._live_b = np.array(b, dtype=np.float64)
        self._live_a = np.array(a, dtype=np.float64)
        self.version += 1

    def freeze_live(self) -> None:
        """Move the live adapter into the frozen list."""
        if self._live_a is None:
            raise RuntimeError("no live adapter to freeze")
        b, a = self._live_b.copy(), self._live_a.copy()
        b.setflags(write=False)
        a.setflags(write=False)
        self.frozen.append((b, a))
        self._base = self._base + b @ a
        self._live_b = self._live_a = None
        self.version += 1

    def live_delta(self) -> np.ndarray | None:
        if self._live_a is None:
            return None
        return self._live_b @ self._live_a

    def previous_weight(self) -> np.ndarray:
        """``w0 + sum_i B_i A_i`` over the frozen adapters."""
        return self._base

    def effective_weight(self) -> np.ndarray:
        delta = self.live_delta()
        return self._base if delta is None else self._base + delta

    def set_w0(self, w0: np.ndarray, bias: np.ndarray | None) -> None:
        if self.frozen or self._live_a is not None:
            raise RuntimeError("w0 can only be replaced before any adapter exists")
        self.w0 = np.array(w0, dtype=np.float64)
        self.bias = None if bias is None else np.array(bias, dtype=np.float64)
        self._base = self.w0.copy()
        self.version += 1


@dataclass
class HeadBlock:
    weight: np.ndarray  # (features, classes)
    bias: np.ndarray
    frozen: bool = False


@dataclass
class GrowingHead:
    """Class-incremental classifier: one weight block per task."""

    in_dim: int
    blocks: list[HeadBlock] = field(default_factory=list)
    version: int = 0

    @property
    def n_classes(self) -> int:
        return sum(b.bias.shape[0] for b in self.blocks)

    def add_block(self, n_classes: int, rng: np.random.Generator, std: float = 0.01) -> HeadBlock:
        for b in self.blocks:
            b.frozen = True
        block = HeadBlock(rng.normal(0.0, std, size=(self.in_dim, n_classes)), np.zeros(n_classes))
        self.blocks.append(block)
        self.version += 1
        return block

    def freeze_all(self) -> None:
        for b in self.blocks:
            b.frozen = True

    def set_block(self, i: int, weight: np.ndarray, bias: np.ndarray) -> None:
        if self.blocks[i].frozen:
            raise RuntimeError(f"head block {i} is frozen")
        self.blocks[i].weight = weight
        self.blocks[i].bias = bias
        self.version += 1


class Mlp:
    def __init__(self, layers: list[AdapterLinear], head: GrowingHead):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.shape[0] != nxt.shape[1]:
                raise ShapeError(f"layer output {prev.shape[0]} does not feed layer input {nxt.shape[1]}")
        if layers and layers[-1].shape[0] != head.in_dim:
            raise ShapeError(f"last layer output {layers[-1].shape[0]} != head input {head.in_dim}")
        self.layers = layers
        self.head = head

    @classmethod
    def build(cls, dims: list[int], rng: np.random.Generator, bias: bool = True) -> "Mlp":
        """He-initialized layers for ``dims = [in, hidden_1, ..., hidden_L]``."""
        layers = []
        for k, d in zip(dims, dims[1:]):
            w0 = rng.normal(0.0, np.sqrt(2.0 / k), size=(d, k))
            layers.append(AdapterLinear(w0, np.zeros(d) if bias else None))
        return cls(layers, GrowingHead(dims[-1]))

    @property
    def in_dim(self) -> int:
        return self.layers[0].shape[1]

    @property
    def version(self) -> tuple:
        return tuple(l.version for l in self.layers) + (self.head.version,)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each AdapterLinear
    pre: list[np.ndarray]  # pre-activation output of each AdapterLinear
    weights: list[np.ndarray]  # effective (possibly perturbed) weights used
    features: np.ndarray  # input to the head
    version: tuple
    model_id: int


@dataclass
class Gradients:
    weights: list[np.ndarray]  # dL/dW_eff per AdapterLinear
    head: list[tuple[np.ndarray, np.ndarray]]  # (dW, db) per head block
    biases: list[np.ndarray | None]


def forward(model: Mlp, x: np.ndarray, deltas: list[np.ndarray | None] | None = None):
    """Logits over all seen classes; ``deltas`` are extra additive weight offsets per layer."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise ShapeError(f"input has shape {x.shape}, model expects (*, {model.in_dim})")
    inputs, pres, weights = [], [], []
    h = x
    n_layers = len(model.layers)
    for i, layer in enumerate(model.layers):
        w = layer.effective_weight()
        if deltas is not None and deltas[i] is not None:
            w = w + deltas[i]
        z = h @ w.T
        if layer.bias is not None:
            z = z + layer.bias
        inputs.append(h)
        pres.append(z)
        weights.append(w)
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
    if model.head.blocks:
        logits = np.concatenate([h @ b.weight + b.bias for b in model.head.blocks], axis=1)
    else:
        logits = np.zeros((x.shape[0], 0))
    cache = ForwardCache(inputs, pres, weights, h, model.version, id(model))
    return logits, cache


def backward(model: Mlp, cache: ForwardCache, dlogits: np.ndarray) -> Gradients:
    if cache.model_id != id(model) or cache.version != model.version:
        raise StaleCacheError("forward cache does not match the current model parameters")
    head_grads = []
    dh = np.zeros_like(cache.features)
    col = 0
    for b in model.head.blocks:
        c = b.bias.shape[0]
        dl = dlogits[:, col : col + c]
        head_grads.append((cache.features.T @ dl, dl.sum(axis=0)))
        dh += dl @ b.weight.T
        col += c
    n_layers = len(model.layers)
    grads: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    bias_grads: list[np.ndarray | None] = [None] * n_layers
    dz = dh
    for i in range(n_layers - 1, -1, -1):
        grads[i] = dz.T @ cache.inputs[i]
        if model.layers[i].bias is not None:
            bias_grads[i] = dz.sum(axis=0)
        if i > 0:
            dz = (dz @ cache.weights[i]) * (cache.pre[i - 1] > 0)
    return Gradients(grads, head_grads, bias_grads)


def backward_wrt_effective_weight(model: Mlp, cache: ForwardCache, dlogits: np.ndarray) -> list[np.ndarray]:
    return backward(model, cache, dlogits).weights


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its exact gradient."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_z - shifted[rows, labels]))
    probs = np.exp(shifted - log_z[:, None])
    probs[rows, labels] -= 1.0
    return loss, probs / n


def task_cross_entropy(logits: np.ndarray, labels: np.ndarray, n_live: int, mask_old: bool) -> tuple[float, np.ndarray]:
    """Cross-entropy for training; with ``mask_old`` only the last ``n_live`` logits compete.

    Labels stay global ids; the returned gradient is zero on masked columns.
    """
    if not mask_old:
        return cross_entropy(logits, labels)
    start = logits.shape[1] - n_live
    loss, dl_live = cross_entropy(logits[:, start:], np.asarray(labels) - start)
    dl = np.zeros_like(logits)
    dl[:, start:] = dl_live
    return loss, dl


def squared_error(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """``0.5 * mean ||logits - onehot||^2`` and its gradient (used for exactness checks)."""
    n, c = logits.shape
    target = np.zeros_like(logits)
    target[np.arange(n), labels] = 1.0
    r = logits - target
    return 0.5 * float(np.sum(r * r)) / n, r / n


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; returns a new array and advances ``state``."""
    if param.shape != grad.shape:
        raise ShapeError(f"parameter {param.shape} and gradient {grad.shape} differ")
    if state.m is None:
        state.m = np.zeros_like(param)
        state.v = np.zeros_like(param)
    elif state.m.shape != param.shape:
        raise ShapeError(f"optimizer state {state.m.shape} does not match parameter {param.shape}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def predict(model: Mlp, x: np.ndarray) -> np.ndarray:
    logits, _ = forward(model, x)
    return np.argmax(logits, axis=1)


def frozen_checksum(model: Mlp) -> str:
    """Digest of everything training must not touch: w0, biases, frozen adapters, frozen head blocks."""
    h = hashlib.sha256()
    for layer in model.layers:
        h.update(layer.w0.tobytes())
        if layer.bias is not None:
            h.update(layer.bias.tobytes())
        for b, a in layer.frozen:
            h.update(b.tobytes())
            h.update(a.tobytes())
    for block in model.head.blocks:
        if block.frozen:
            h.update(block.weight.tobytes())
            h.update(block.bias.tobytes())
    return h.hexdigest()


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def pretrain_backbone(
    model: Mlp,
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
) -> list[float]:
    """Train ``w0`` and biases on a base task with a throwaway head, then leave them frozen."""
    head = GrowingHead(model.head.in_dim)
    block = head.add_block(n_classes, rng, std=0.1)
    probe = Mlp(model.layers, head)
    states = {}
    losses = []
    for _ in range(epochs):
        total = 0.0
        for idx in iterate_minibatches(len(y), batch_size, rng):
            logits, cache = forward(probe, x[idx])
            loss, dl = cross_entropy(logits, y[idx])
            grads = backward(probe, cache, dl)
            total += loss * len(idx)
            for i, layer in enumerate(model.layers):
                new_w = adam_step(states.setdefault(("w", i), AdamState(lr=lr)), layer.w0, grads.weights[i])
                new_b = layer.bias
                if layer.bias is not None:
                    new_b = adam_step(states.setdefault(("b", i), AdamState(lr=lr)), layer.bias, grads.biases[i])
                layer.set_w0(new_w, new_b)
            dw, db = grads.head[0]
            w = adam_step(states.setdefault("hw", AdamState(lr=lr)), block.weight, dw)
            b = adam_step(states.setdefault("hb", AdamState(lr=lr)), block.bias, db)
            head.set_block(0, w, b)
        losses.append(total / len(y))
    return losses
