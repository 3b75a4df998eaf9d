"""Dense float64 tensors with reverse-mode automatic differentiation.

Every tensor produced by an operation gets a monotonically increasing node
id.  Inputs of a node always carry smaller ids than the node itself, so the
computation graph is acyclic by construction and a reverse sweep over ids is
a valid topological order for backpropagation.

The module also hosts the fully connected layers and the Adam optimizer used
by all trainers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, NumericError, UsageError

_node_ids = itertools.count()


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array with an optional gradient slot.

    ``requires_grad`` marks leaves whose gradient we want; non-leaf tensors
    inherit it from their inputs.  Leaves are checked for finiteness on
    construction, op outputs raise :class:`NumericError` naming the node id.
    """

    __array_priority__ = 100.0

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        values = np.array(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise NumericError("tensor values must be finite")
        self.values = values
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.id = next(_node_ids)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @classmethod
    def _from_op(cls, values, parents, backward, op):
        out = cls.__new__(cls)
        out.values = np.asarray(values, dtype=np.float64)
        out.grad = None
        out.name = None
        out.id = next(_node_ids)
        out.op = op
        if not np.all(np.isfinite(out.values)):
            raise NumericError(f"non-finite output at node {out.id} ({op})")
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # --- plumbing ---------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.size != 1:
            raise UsageError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, id={self.id})"

    def __len__(self):
        return len(self.values)

    # --- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._from_op(
            self.values + other.values, (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._from_op(
            self.values - other.values, (self, other),
            lambda g: (_unbroadcast(g, a), -_unbroadcast(g, b)), "sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.values, other.values
        return Tensor._from_op(
            x * y, (self, other),
            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.values, other.values
        out = x / y
        return Tensor._from_op(
            out, (self, other),
            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * out / y, y.shape)), "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return Tensor._from_op(-self.values, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise UsageError("only constant exponents are supported")
        x = self.values
        return Tensor._from_op(
            x ** exponent, (self,),
            lambda g: (g * exponent * x ** (exponent - 1),), "pow")

    def __matmul__(self, other):
        other = as_tensor(other)
        x, y = self.values, other.values
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
            raise ConfigError(f"matmul shape mismatch: {x.shape} @ {y.shape}")
        return Tensor._from_op(x @ y, (self, other), lambda g: (g @ y.T, x.T @ g), "matmul")

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    def __getitem__(self, index):
        x = self.values

        def backward(g):
            full = np.zeros_like(x)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._from_op(x[index], (self,), backward, "getitem")

    # --- shape ops --------------------------------------------------------
    def reshape(self, *shape):
        old = self.shape
        return Tensor._from_op(self.values.reshape(*shape), (self,),
                               lambda g: (g.reshape(old),), "reshape")

    @property
    def T(self):
        return Tensor._from_op(self.values.T, (self,), lambda g: (g.T,), "transpose")

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._from_op(self.values.sum(axis=axis, keepdims=keepdims), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        count = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # --- elementwise ------------------------------------------------------
    def exp(self):
        out = np.exp(self.values)
        return Tensor._from_op(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        x = self.values
        if np.any(x <= 0):
            raise NumericError(f"log of non-positive value at input node {self.id}")
        return Tensor._from_op(np.log(x), (self,), lambda g: (g / x,), "log")

    def relu(self):
        mask = self.values > 0  # subgradient 0 at exactly 0
        return Tensor._from_op(self.values * mask, (self,), lambda g: (g * mask,), "relu")

    def tanh(self):
        out = np.tanh(self.values)
        return Tensor._from_op(out, (self,), lambda g: (g * (1.0 - out * out),), "tanh")

    def sigmoid(self):
        out = _sigmoid(self.values)
        return Tensor._from_op(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def softplus(self):
        x = self.values
        return Tensor._from_op(np.logaddexp(0.0, x), (self,), lambda g: (g * _sigmoid(x),), "softplus")

    def clip(self, low: float, high: float):
        x = self.values
        inside = (x >= low) & (x <= high)
        return Tensor._from_op(np.clip(x, low, high), (self,), lambda g: (g * inside,), "clip")

    def square(self):
        return self * self


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def relu(x: Tensor) -> Tensor:
    return x.relu()


def tanh(x: Tensor) -> Tensor:
    return x.tanh()


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def identity(x: Tensor) -> Tensor:
    return x


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "identity": identity,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
}


def backward(loss: Tensor, params: Sequence[Tensor] = ()) -> list[np.ndarray]:
    """Backpropagate from a scalar ``loss``.

    Sets ``.grad`` on every reachable leaf with ``requires_grad`` and returns
    the gradients for ``params`` in order; parameters the loss does not depend
    on get a zero array.
    """
    if loss.size != 1:
        raise UsageError(f"loss must be scalar, got shape {loss.shape}")

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node.id in nodes or not node.requires_grad:
            continue
        nodes[node.id] = node
        stack.extend(node._parents)

    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.values)}
    for node_id in sorted(nodes, reverse=True):
        node = nodes[node_id]
        g = grads.pop(node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg

    out = []
    for p in params:
        out.append(p.grad if p.id in nodes and p.grad is not None else np.zeros_like(p.values))
    return out


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# --- layers -----------------------------------------------------------------

def init_params(layer_dims: Sequence[int], seed: int | np.random.Generator) -> list[Tensor]:
    """Glorot-uniform weights and zero biases for a chain of dense layers.

    Returns ``[W1, b1, W2, b2, ...]`` with ``W`` shaped ``[out, in]``.
    """
    if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
        raise ConfigError(f"layer dims must be >= 1 and at least two long, got {list(layer_dims)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(Tensor(rng.uniform(-limit, limit, size=(fan_out, fan_in)), requires_grad=True))
        params.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return params


class DenseLayer:
    def __init__(self, weights: Tensor, bias: Tensor, activation: str = "identity"):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}; valid: {sorted(ACTIVATIONS)}")
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ConfigError(f"weights {weights.shape} and bias {bias.shape} do not fit together")
        self.weights = weights
        self.bias = bias
        self.activation = activation

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def preactivation(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ConfigError(f"input shape {x.shape} does not match layer weights {self.weights.shape}")
        return x @ self.weights.T + self.bias

    def __call__(self, x) -> Tensor:
        return ACTIVATIONS[self.activation](self.preactivation(x))

    def parameters(self) -> list[Tensor]:
        return [self.weights, self.bias]


class MLP:
    """A stack of dense layers; the last layer may use a different activation."""

    def __init__(self, layers: Sequence[DenseLayer]):
        self.layers = list(layers)
        for prev, nxt in zip(self.layers[:-1], self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ConfigError(f"layer output {prev.out_dim} does not feed layer input {nxt.in_dim}")

    @classmethod
    def build(cls, dims: Sequence[int], rng, hidden: str = "relu", output: str = "identity") -> "MLP":
        params = init_params(dims, rng)
        acts = [hidden] * (len(dims) - 2) + [output]
        return cls([DenseLayer(w, b, a) for (w, b), a in zip(zip(params[::2], params[1::2]), acts)])

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def activations(self) -> list[str]:
        return [layer.activation for layer in self.layers]

    def __call__(self, x, logits: bool = False) -> Tensor:
        """Forward pass; ``logits=True`` skips the final activation."""
        h = as_tensor(x)
        for layer in self.layers[:-1]:
            h = layer(h)
        last = self.layers[-1]
        return last.preactivation(h) if logits else last(h)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def copy(self) -> "MLP":
        return MLP([DenseLayer(Tensor(l.weights.values, True), Tensor(l.bias.values, True), l.activation)
                    for l in self.layers])


# --- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    alpha: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))


class Adam:
    """Bias-corrected Adam over a fixed list of parameter tensors.

    Moments live in flat vectors whose length is the total parameter count.
    """

    def __init__(self, params: Sequence[Tensor], alpha=1e-3, beta1=0.5, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        total = sum(p.size for p in self.params)
        self.state = AdamState(alpha, beta1, beta2, epsilon, 0, np.zeros(total), np.zeros(total))

    def step(self, grads: Sequence[np.ndarray], lr_scale: float = 1.0) -> None:
        adam_step(self.state, self.params, grads, lr_scale)


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray],
              lr_scale: float = 1.0) -> None:
    """In-place Adam update: ``p -= alpha * m_hat / (sqrt(v_hat) + eps)``."""
    if len(params) != len(grads):
        raise UsageError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {i}")
    flat = np.concatenate([np.asarray(g, dtype=np.float64).reshape(-1) for g in grads]) if grads else np.zeros(0)
    if flat.size != state.m.size:
        raise UsageError(f"gradient length {flat.size} != optimizer state length {state.m.size}")

    state.step += 1
    t = state.step
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * flat
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * flat * flat
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    update = (state.alpha * lr_scale) * m_hat / (np.sqrt(v_hat) + state.epsilon)

    offset = 0
    for p in params:
        n = p.size
        p.values = p.values - update[offset:offset + n].reshape(p.shape)
        offset += n
