"""Minimal reverse-mode autodiff on top of numpy, plus the layers the solver needs.

Everything numeric in the package flows through :class:`Tensor`. A tensor that
requires a gradient records its parents and a closure that pushes the upstream
gradient back to them; :func:`backward` walks that graph in reverse
topological order.

Two numeric modes exist: ``"test"`` (float64, used for gradient checks and
oracles) and ``"train"`` (float32). The mode is global and should be set once
per run, before any parameters are created.
"""

from __future__ import annotations

import contextlib
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, GradCheckError, InvalidInputError, ShapeError

_MODES = {"test": np.float64, "train": np.float32}
_state = {"mode": "test", "record": True}


def set_mode(mode: str) -> None:
    if mode not in _MODES:
        raise ConfigurationError(f"unknown numeric mode {mode!r}; expected 'test' or 'train'")
    _state["mode"] = mode


def get_mode() -> str:
    return _state["mode"]


def get_dtype():
    return _MODES[_state["mode"]]


@contextlib.contextmanager
def numeric_mode(mode: str):
    """Temporarily switch the global numeric mode."""
    previous = get_mode()
    set_mode(mode)
    try:
        yield
    finally:
        set_mode(previous)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=get_dtype())
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (inference, beam search)."""
    previous = _state["record"]
    _state["record"] = False
    try:
        yield
    finally:
        _state["record"] = previous


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    """Wrap an op result; only record the graph when some parent needs a gradient."""
    out = Tensor(data)
    if _state["record"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if g.shape != t.data.shape:
        g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _node(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    return _node(a.data / b.data, (a, b), bw)


def square(x) -> Tensor:
    x = as_tensor(x)
    return _node(x.data * x.data, (x,), lambda g: _accumulate(x, 2.0 * x.data * g))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _node(y, (x,), lambda g: _accumulate(x, g * y))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _node(np.log(x.data), (x,), lambda g: _accumulate(x, g / x.data))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _node(y, (x,), lambda g: _accumulate(x, g * (1.0 - y * y)))


def _sigmoid_np(z):
    # split by sign so large |z| never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid_np(np.atleast_1d(x.data)).reshape(x.data.shape)
    return _node(y, (x,), lambda g: _accumulate(x, g * y * (1.0 - y)))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _node(np.where(pos, x.data, 0.0), (x,), lambda g: _accumulate(x, g * pos))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input was inside the range."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _node(np.clip(x.data, lo, hi), (x,), lambda g: _accumulate(x, g * inside))


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` is true, else ``b``. Values are copied exactly."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)

    def bw(g):
        _accumulate(a, np.where(cond, g, 0.0))
        _accumulate(b, np.where(cond, 0.0, g))

    return _node(np.where(cond, a.data, b.data), (a, b), bw)


# reductions and shape ops

def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.data.shape))

    return _node(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _node(x.data.reshape(shape), (x,), lambda g: _accumulate(x, g.reshape(x.data.shape)))


def transpose(x) -> Tensor:
    x = as_tensor(x)
    return _node(x.data.T, (x,), lambda g: _accumulate(x, g.T))


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    basic = isinstance(idx, (int, slice)) or (
        isinstance(idx, tuple) and all(isinstance(i, (int, slice)) for i in idx))

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _accumulate(x, full)

    return _node(x.data[idx], (x,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, part)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    return _node(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")

    def bw(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            _accumulate(a, g * bd)
            _accumulate(b, g * ad)
        elif ad.ndim == 1:
            _accumulate(a, bd @ g)
            _accumulate(b, np.outer(ad, g))
        elif bd.ndim == 1:
            _accumulate(a, np.outer(g, bd))
            _accumulate(b, ad.T @ g)
        else:
            if a.requires_grad:
                _accumulate(a, g @ bd.T)
            if b.requires_grad:
                _accumulate(b, ad.T @ g)

    return _node(a.data @ b.data, (a, b), bw)


# normalized activations

def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax (the row maximum is subtracted first)."""
    x = as_tensor(x)
    if x.data.size == 0 or x.data.shape[axis] == 0:
        raise InvalidInputError("softmax of an empty row")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _node(y, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.data.size == 0:
        raise InvalidInputError("log_softmax of an empty row")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bw(g):
        _accumulate(x, g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _node(y, (x,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    n = x.data.shape[-1]

    def bw(g):
        _accumulate(gamma, (g * xhat).reshape(-1, n).sum(axis=0))
        _accumulate(beta, g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv / n * (
                n * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
            _accumulate(x, dx)

    return _node(xhat * gamma.data + beta.data, (x, gamma, beta), bw)


def scaled_dot_attention(Q, K, V, key_mask=None) -> Tensor:
    """softmax(Q Kᵀ / √d) V, one row per query.

    ``key_mask`` is an optional boolean vector over the rows of K; keys where it
    is false receive zero weight.
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ShapeError("attention expects 2-d Q, K, V")
    d = Q.shape[1]
    if d == 0 or K.shape[1] != d:
        raise ShapeError(f"query/key width mismatch: {Q.shape} vs {K.shape}")
    if K.shape[0] != V.shape[0]:
        raise ShapeError(f"key/value row mismatch: {K.shape} vs {V.shape}")
    scores = matmul(Q, transpose(K)) * (1.0 / math.sqrt(d))
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if not key_mask.any():
            raise InvalidInputError("attention key mask excludes every key")
        scores = where(key_mask[None, :], scores, -np.inf)
    return matmul(softmax(scores, axis=-1), V)


# graph traversal

def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

    Intermediate gradients are released once consumed; leaf gradients add onto
    whatever is already stored, so several losses can be accumulated before an
    optimizer step.
    """
    if loss.data.size != 1:
        raise InvalidInputError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        node.grad = None


# parameters and layers

class ParamSet:
    """Named parameter store; frozen entries never take part in gradients.

    Uniform initialization draws from [-1/sqrt(fan_in), 1/sqrt(fan_in)] using a
    random stream keyed by (seed, name).
    """

    def __init__(self, seed: int = 0):
        self._params: dict[str, Tensor] = {}
        self._frozen: set[str] = set()
        self.seed = seed

    def add(self, name: str, shape, init: str = "uniform", fan_in: int | None = None) -> Tensor:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if init == "empty":
            # placeholder awaiting a checkpoint load
            data = np.full(shape, np.nan)
        elif init == "uniform":
            # per-name stream: values do not depend on construction order
            rng = np.random.default_rng([self.seed, zlib.crc32(name.encode())])
            bound = 1.0 / math.sqrt(fan_in if fan_in else shape[0])
            data = rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ConfigurationError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def freeze(self, prefix: str = "") -> None:
        for name, t in self._params.items():
            if name.startswith(prefix):
                self._frozen.add(name)
                t.requires_grad = False
                t.grad = None

    def unfreeze(self, prefix: str = "") -> None:
        for name, t in self._params.items():
            if name.startswith(prefix):
                self._frozen.discard(name)
                t.requires_grad = True

    def is_frozen(self, name: str) -> bool:
        return name in self._frozen

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items() if n not in self._frozen]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items() if n.startswith(prefix)}

    def load_state(self, state: dict, strict: bool = True) -> None:
        for name, value in state.items():
            if name not in self._params:
                if strict:
                    raise ConfigurationError(f"unexpected parameter {name!r}")
                continue
            t = self._params[name]
            value = np.asarray(value)
            if value.shape != t.data.shape:
                raise ShapeError(f"parameter {name!r}: shape {value.shape} != {t.data.shape}")
            t.data = value.astype(get_dtype(), copy=True)
        if strict:
            missing = [n for n in self._params if n not in state]
            if missing:
                raise ConfigurationError(f"missing parameters: {missing[:5]}")


class Linear:
    def __init__(self, params: ParamSet, name: str, n_in: int, n_out: int, bias: bool = True):
        self.n_in, self.n_out = n_in, n_out
        self.weight = params.add(f"{name}.weight", (n_in, n_out), fan_in=n_in)
        self.bias = params.add(f"{name}.bias", (n_out,), fan_in=n_in) if bias else None

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"linear expects width {self.n_in}, got {x.shape[-1]}")
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


class LayerNorm:
    def __init__(self, params: ParamSet, name: str, dim: int):
        self.gamma = params.add(f"{name}.gamma", (dim,), init="ones")
        self.beta = params.add(f"{name}.beta", (dim,), init="zeros")

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class Embedding:
    def __init__(self, params: ParamSet, name: str, n_rows: int, dim: int):
        self.table = params.add(f"{name}.table", (n_rows, dim), fan_in=dim)

    def __call__(self, ids) -> Tensor:
        return getitem(self.table, np.asarray(ids, dtype=np.int64))


class MLP:
    """Two-layer perceptron with ReLU between the layers."""

    def __init__(self, params: ParamSet, name: str, n_in: int, n_hidden: int, n_out: int):
        self.fc1 = Linear(params, f"{name}.fc1", n_in, n_hidden)
        self.fc2 = Linear(params, f"{name}.fc2", n_hidden, n_out)

    def __call__(self, x) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class GRU:
    """GRU cell with fused gate matrices in (reset, update, candidate) order.

    n = tanh(x W_n + b_xn + r * (h U_n + b_hn)); h' = (1 - z) * n + z * h
    """

    def __init__(self, params: ParamSet, name: str, n_in: int, n_hidden: int):
        self.n_in, self.n_hidden = n_in, n_hidden
        self.w_x = params.add(f"{name}.w_x", (n_in, 3 * n_hidden), fan_in=n_hidden)
        self.w_h = params.add(f"{name}.w_h", (n_hidden, 3 * n_hidden), fan_in=n_hidden)
        self.b_x = params.add(f"{name}.b_x", (3 * n_hidden,), fan_in=n_hidden)
        self.b_h = params.add(f"{name}.b_h", (3 * n_hidden,), fan_in=n_hidden)

    def step(self, x_proj: Tensor, h: Tensor) -> Tensor:
        """One step given the precomputed input projection ``x W + b_x``."""
        H = self.n_hidden
        h_proj = add(matmul(h, self.w_h), self.b_h)
        r = sigmoid(add(x_proj[0:H], h_proj[0:H]))
        z = sigmoid(add(x_proj[H:2 * H], h_proj[H:2 * H]))
        n = tanh(add(x_proj[2 * H:], mul(r, h_proj[2 * H:])))
        return add(mul(sub(1.0, z), n), mul(z, h))


def gru_last_hidden(seq, gru: GRU) -> Tensor:
    """Run ``gru`` left to right over the rows of ``seq`` from a zero state."""
    seq = as_tensor(seq)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise InvalidInputError("gru_last_hidden needs a non-empty n×d sequence")
    if seq.shape[1] != gru.n_in:
        raise ShapeError(f"GRU expects width {gru.n_in}, got {seq.shape[1]}")
    x_proj = add(matmul(seq, gru.w_x), gru.b_x)
    h = Tensor(np.zeros(gru.n_hidden))
    for t in range(seq.shape[0]):
        h = gru.step(x_proj[t], h)
    return h


class LSTMCell:
    """LSTM cell with fused gate matrices in (input, forget, candidate, output) order."""

    def __init__(self, params: ParamSet, name: str, n_in: int, n_hidden: int):
        self.n_in, self.n_hidden = n_in, n_hidden
        self.w_x = params.add(f"{name}.w_x", (n_in, 4 * n_hidden), fan_in=n_hidden)
        self.w_h = params.add(f"{name}.w_h", (n_hidden, 4 * n_hidden), fan_in=n_hidden)
        self.bias = params.add(f"{name}.bias", (4 * n_hidden,), fan_in=n_hidden)

    def gates(self, gate_pre: Tensor, c: Tensor):
        H = self.n_hidden
        i = sigmoid(gate_pre[0:H])
        f = sigmoid(gate_pre[H:2 * H])
        g = tanh(gate_pre[2 * H:3 * H])
        o = sigmoid(gate_pre[3 * H:])
        c_new = add(mul(f, c), mul(i, g))
        h_new = mul(o, tanh(c_new))
        return h_new, c_new

    def __call__(self, x, h, c):
        return lstm_cell(x, h, c, self)


def lstm_cell(x, h, c, cell: LSTMCell):
    """One LSTM step: c' = f*c + i*g, h' = o*tanh(c')."""
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    if x.shape != (cell.n_in,) or h.shape != (cell.n_hidden,) or c.shape != (cell.n_hidden,):
        raise ShapeError(
            f"lstm_cell expects x({cell.n_in},), h/c({cell.n_hidden},); "
            f"got {x.shape}, {h.shape}, {c.shape}"
        )
    pre = add(add(matmul(x, cell.w_x), matmul(h, cell.w_h)), cell.bias)
    return cell.gates(pre, c)


class Adam:
    """Adam with per-prefix learning rates (longest matching prefix wins)."""

    def __init__(self, params: ParamSet, lr: float = 1e-3, lr_groups: dict | None = None,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.lr_groups = dict(lr_groups or {})
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def lr_for(self, name: str) -> float:
        best, best_len = self.lr, -1
        for prefix, lr in self.lr_groups.items():
            if name.startswith(prefix) and len(prefix) > best_len:
                best, best_len = lr, len(prefix)
        return best

    def step(self, grad_scale: float = 1.0) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.trainable():
            if p.grad is None:
                continue
            g = p.grad * grad_scale
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr_for(name) * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays: dict, t: int) -> None:
        self.t = int(t)
        for key, value in arrays.items():
            kind, name = key[len("adam."):].split(".", 1)
            target = self.m if kind == "m" else self.v
            target[name] = np.asarray(value, dtype=get_dtype()).copy()


# finite-difference verification

@dataclass
class GradReport:
    errors: dict = field(default_factory=dict)
    tolerance: float = 1e-4
    skipped: list = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.errors.values())

    def failures(self) -> dict:
        return {n: e for n, e in self.errors.items() if e > self.tolerance}

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "max_error": self.max_error,
            "errors": dict(self.errors),
            "skipped_frozen": list(self.skipped),
        }


def relative_error(a: float, n: float, eps: float = 1e-8) -> float:
    return abs(a - n) / max(abs(a), abs(n), eps)


def grad_check(loss_fn: Callable[[], Tensor], params: ParamSet, h: float = 1e-5,
               tolerance: float = 1e-4, n_coords: int = 3, seed: int = 0,
               names: Iterable[str] | None = None) -> GradReport:
    """Compare backward() against central differences for every trainable parameter.

    Each parameter is probed along one ±1 direction covering all of its entries
    (signed like the analytic gradient), plus its ``n_coords`` largest-gradient
    coordinates. The reported error is the worst of those probes. Frozen
    parameters are listed as skipped.

    A single coordinate is only probed when its gradient is above the level
    central differences can resolve to ``tolerance``: rounding in the loss is
    about eps*|L|, so the difference quotient carries noise of roughly
    eps*|L|/h, and coordinates below eps*max(|L|, 1)/(h*tolerance) are left to
    the whole-parameter probe.
    """
    if get_mode() != "test":
        raise ConfigurationError("grad_check requires the 64-bit 'test' numeric mode")
    rng = np.random.default_rng(seed)
    params.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise GradCheckError("non-finite loss at the base point")
    backward(loss)
    floor = np.finfo(np.float64).eps * max(abs(float(loss.data)), 1.0) / (h * tolerance)

    wanted = set(names) if names is not None else None
    report = GradReport(tolerance=tolerance)
    report.skipped = [n for n in params if params.is_frozen(n)]

    def loss_at(p, delta):
        saved = p.data.copy()
        p.data = saved + delta
        try:
            value = float(loss_fn().data)
        finally:
            p.data = saved
        return value

    for name, p in params.trainable():
        if wanted is not None and name not in wanted:
            continue
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        # signed like the analytic gradient so the probe cannot cancel to zero;
        # entries with zero gradient get a random sign
        direction = np.sign(analytic)
        zero = direction == 0
        direction[zero] = rng.choice([-1.0, 1.0], size=int(zero.sum()))
        probes = [direction]
        flat_order = np.argsort(-np.abs(analytic).reshape(-1), kind="stable")[:n_coords]
        for flat in flat_order:
            if abs(analytic.reshape(-1)[flat]) < floor:
                continue
            e = np.zeros(p.data.size)
            e[flat] = 1.0
            probes.append(e.reshape(p.data.shape))
        worst = 0.0
        for direction in probes:
            plus = loss_at(p, h * direction)
            minus = loss_at(p, -h * direction)
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise GradCheckError(f"non-finite loss while perturbing {name}", param_name=name)
            numeric = (plus - minus) / (2.0 * h)
            worst = max(worst, relative_error(float((analytic * direction).sum()), numeric))
        report.errors[name] = worst
    params.zero_grad()
    return report
