"""Dense float64 tensors with reverse-mode autodiff, a ReLU MLP, SGD with
momentum, cosine learning-rate decay, and a parameter-space EMA used for
evaluation.

Everything is define-by-run: each training step rebuilds a fresh graph, and
``backward()`` on a scalar root fills ``.grad`` on every reachable leaf.
Single-threaded mutation; tensor values are safe to share read-only.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (weak-branch forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus an optional gradient accumulator.

    Operations record parents and a backward closure while gradients are
    enabled and at least one operand requires them. Leaves created by the
    caller with ``requires_grad=True`` receive ``d(root)/d(leaf)`` after
    ``backward()`` runs on a scalar root.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple["Tensor", ...], bwd) -> "Tensor":
        if _grad_enabled and any(p.requires_grad for p in parents):
            out = Tensor(data, requires_grad=True)
            out._parents = parents
            out._bwd = bwd
            return out
        return Tensor(data)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))

        return Tensor._make(out_data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            if self.requires_grad:
                self._accum(-g)

        return Tensor._make(-self.data, (self,), bwd)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._make(out_data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accum(
                    _unbroadcast(-g * self.data / (other.data * other.data), other.data.shape)
                )

        return Tensor._make(out_data, (self, other), bwd)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p: float):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** p

        def bwd(g):
            if self.requires_grad:
                self._accum(g * p * self.data ** (p - 1))

        return Tensor._make(out_data, (self,), bwd)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul expects 2-D operands")
        if self.data.shape[1] != other.data.shape[0]:
            raise ValueError(
                f"matmul dimension mismatch: {self.data.shape} @ {other.data.shape}"
            )
        out_data = self.data @ other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(g @ other.data.T)
            if other.requires_grad:
                other._accum(self.data.T @ g)

        return Tensor._make(out_data, (self, other), bwd)

    # -- elementwise nonlinearities -------------------------------------------

    def relu(self):
        out_data = np.maximum(self.data, 0.0)

        def bwd(g):
            if self.requires_grad:
                self._accum(g * (self.data > 0.0))

        return Tensor._make(out_data, (self,), bwd)

    def exp(self):
        out_data = np.exp(self.data)

        def bwd(g):
            if self.requires_grad:
                self._accum(g * out_data)

        return Tensor._make(out_data, (self,), bwd)

    def log(self):
        out_data = np.log(self.data)

        def bwd(g):
            if self.requires_grad:
                self._accum(g / self.data)

        return Tensor._make(out_data, (self,), bwd)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accum(np.broadcast_to(g, self.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, self.data.shape).copy())

        return Tensor._make(out_data, (self,), bwd)

    def mean(self, axis: int | None = None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    # -- backward ---------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar root."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar root")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def backward(root: Tensor) -> None:
    root.backward()


def softmax(logits):
    """Row-stabilized softmax; accepts a Tensor (graph op) or a plain array."""
    if isinstance(logits, Tensor):
        if not np.isfinite(logits.data).all():
            raise ValueError("softmax requires finite inputs")
        shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=-1, keepdims=True)

        def bwd(g):
            if logits.requires_grad:
                inner = (g * out_data).sum(axis=-1, keepdims=True)
                logits._accum(out_data * (g - inner))

        return Tensor._make(out_data, (logits,), bwd)
    x = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("softmax requires finite inputs")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: Tensor) -> Tensor:
    """Row-stabilized log-softmax as a single graph op."""
    if not np.isfinite(logits.data).all():
        raise ValueError("log_softmax requires finite inputs")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_data = shifted - lse
    probs = np.exp(out_data)

    def bwd(g):
        if logits.requires_grad:
            logits._accum(g - probs * g.sum(axis=-1, keepdims=True))

    return Tensor._make(out_data, (logits,), bwd)


# -- model ----------------------------------------------------------------------


@dataclass
class MlpModel:
    """Fully connected ReLU network. Forward yields raw logits; consumers
    apply softmax themselves so one forward serves both hard pseudo-label
    extraction and soft probabilities."""

    layers: list[tuple[Tensor, Tensor]]

    def __post_init__(self):
        for (w, b) in self.layers:
            if w.data.ndim != 2 or b.data.ndim != 1 or w.data.shape[1] != b.data.shape[0]:
                raise ValueError("layer weight/bias shapes are inconsistent")
        for (w0, _), (w1, _) in zip(self.layers, self.layers[1:]):
            if w0.data.shape[1] != w1.data.shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")

    @classmethod
    def init(cls, dims: list[int], seed: int | np.random.Generator = 0) -> "MlpModel":
        """Xavier-uniform weights and zero biases from a seeded generator."""
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        layers = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w = Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)
            b = Tensor(np.zeros(fan_out), requires_grad=True)
            layers.append((w, b))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].data.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].data.shape[1]

    def parameters(self) -> list[Tensor]:
        return [t for pair in self.layers for t in pair]


def forward(model: MlpModel, x) -> Tensor:
    """Run the MLP on a [B, d] batch, returning [B, C] logits."""
    h = as_tensor(x)
    if h.data.ndim != 2:
        raise ValueError("forward expects a 2-D batch")
    if h.data.shape[1] != model.in_dim:
        raise ValueError(
            f"input width {h.data.shape[1]} does not match model width {model.in_dim}"
        )
    last = len(model.layers) - 1
    for i, (w, b) in enumerate(model.layers):
        h = h @ w + b
        if i != last:
            h = h.relu()
    return h


# -- optimizer -------------------------------------------------------------------


@dataclass
class OptimState:
    """SGD-with-momentum state: one velocity buffer per parameter."""

    velocity: list[np.ndarray]
    momentum: float = 0.9
    lr0: float = 0.03
    k: int = 0
    K: int = 1

    @classmethod
    def for_params(
        cls, params: list[Tensor], momentum: float = 0.9, lr0: float = 0.03, total_steps: int = 1
    ) -> "OptimState":
        if total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        return cls(
            velocity=[np.zeros_like(p.data) for p in params],
            momentum=momentum,
            lr0=lr0,
            k=0,
            K=total_steps,
        )


def sgd_step(params: list[Tensor], opt: OptimState, lr: float) -> None:
    """v <- momentum*v + g; theta <- theta - lr*v; grads cleared."""
    if len(params) != len(opt.velocity):
        raise ValueError("parameter count does not match optimizer state")
    for p, v in zip(params, opt.velocity):
        if p.grad is None:
            raise ValueError("sgd_step requires populated gradients")
        if p.grad.shape != v.shape:
            raise ValueError("gradient shape does not match velocity shape")
        v *= opt.momentum
        v += p.grad
        p.data -= lr * v
        p.grad = None


def cosine_lr(lr0: float, k: int, K: int) -> float:
    """lr0 * cos(7*pi*k / (16*K)); strictly decreasing in k, positive on [0, K]."""
    if K <= 0:
        raise ValueError("K must be positive")
    if not 0 <= k <= K:
        raise ValueError(f"step {k} outside [0, {K}]")
    return lr0 * math.cos(7.0 * math.pi * k / (16.0 * K))


# -- parameter EMA -----------------------------------------------------------------


@dataclass
class ParamEma:
    """Shadow copy of the parameters, smoothed with decay m per update."""

    shadow: list[np.ndarray]
    decay: float = 0.999

    @classmethod
    def from_model(cls, model: MlpModel, decay: float = 0.999) -> "ParamEma":
        if not 0.0 <= decay < 1.0:
            raise ValueError("decay must be in [0, 1)")
        return cls(shadow=[p.data.copy() for p in model.parameters()], decay=decay)


def ema_update(ema: ParamEma, params: list[Tensor]) -> None:
    """shadow <- m*shadow + (1-m)*theta."""
    if len(params) != len(ema.shadow):
        raise ValueError("parameter count does not match EMA state")
    m = ema.decay
    for s, p in zip(ema.shadow, params):
        if s.shape != p.data.shape:
            raise ValueError("parameter shape drifted from EMA shadow")
        s *= m
        s += (1.0 - m) * p.data


def ema_model(ema: ParamEma) -> MlpModel:
    """Wrap the shadow weights in a model for inference."""
    if len(ema.shadow) % 2 != 0:
        raise ValueError("shadow list does not pair into (weight, bias) layers")
    layers = [
        (Tensor(w.copy()), Tensor(b.copy()))
        for w, b in zip(ema.shadow[0::2], ema.shadow[1::2])
    ]
    return MlpModel(layers)
