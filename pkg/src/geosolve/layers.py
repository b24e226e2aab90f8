"""Attention building blocks shared by the encoders and the reasoner."""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import LayerNorm, Linear, MLP, ParamSet, Tensor


class AttentionLayer:
    """Single-head attention with affine Q/K/V/output projections.

    Queries come from ``x``; keys and values from ``y`` (``y = x`` gives
    self-attention, anything else guided attention).
    """

    def __init__(self, params: ParamSet, name: str, d_query: int, d_memory: int, d: int):
        self.q = Linear(params, f"{name}.q", d_query, d)
        # no key bias: it adds the same amount to every score in a row, which
        # softmax cancels, so its gradient is identically zero
        self.k = Linear(params, f"{name}.k", d_memory, d, bias=False)
        self.v = Linear(params, f"{name}.v", d_memory, d)
        self.o = Linear(params, f"{name}.o", d, d)

    def __call__(self, x, y=None, key_mask=None) -> Tensor:
        y = x if y is None else y
        attended = nx.scaled_dot_attention(self.q(x), self.k(y), self.v(y), key_mask=key_mask)
        return self.o(attended)


class FeedForward:
    def __init__(self, params: ParamSet, name: str, d: int, d_ff: int):
        self.mlp = MLP(params, name, d, d_ff, d)

    def __call__(self, x):
        return self.mlp(x)


class Sublayer:
    """Post-norm wrapper ``LN(x + f(x))``; residual and norm can be switched off."""

    def __init__(self, params: ParamSet, name: str, d: int, residual: bool = True,
                 norm: bool = True):
        self.residual = residual
        self.norm = LayerNorm(params, f"{name}.ln", d) if norm else None

    def __call__(self, x, fx):
        out = nx.add(x, fx) if self.residual else fx
        return self.norm(out) if self.norm is not None else out


class PreNormBlock:
    """ViT-style block: x + SA(LN(x)), then x + FF(LN(x))."""

    def __init__(self, params: ParamSet, name: str, d: int, d_ff: int):
        self.ln1 = LayerNorm(params, f"{name}.ln1", d)
        self.attn = AttentionLayer(params, f"{name}.attn", d, d, d)
        self.ln2 = LayerNorm(params, f"{name}.ln2", d)
        self.ff = FeedForward(params, f"{name}.ff", d, d_ff)

    def __call__(self, x):
        h = self.ln1(x)
        x = nx.add(x, self.attn(h))
        return nx.add(x, self.ff(self.ln2(x)))


class SAUnit:
    """Self-attention unit: attention sublayer then feed-forward sublayer."""

    def __init__(self, params: ParamSet, name: str, d: int, d_ff: int, residual=True, norm=True):
        self.attn = AttentionLayer(params, f"{name}.sa", d, d, d)
        self.sub1 = Sublayer(params, f"{name}.sa", d, residual, norm)
        self.ff = FeedForward(params, f"{name}.ff", d, d_ff)
        self.sub2 = Sublayer(params, f"{name}.ff", d, residual, norm)

    def __call__(self, x, key_mask=None):
        x = self.sub1(x, self.attn(x, key_mask=key_mask))
        return self.sub2(x, self.ff(x))


class SGAUnit:
    """Self-attention, then attention guided by another sequence, then feed-forward."""

    def __init__(self, params: ParamSet, name: str, d: int, d_ff: int, residual=True, norm=True):
        self.sa = AttentionLayer(params, f"{name}.sa", d, d, d)
        self.sub1 = Sublayer(params, f"{name}.sa", d, residual, norm)
        self.ga = AttentionLayer(params, f"{name}.ga", d, d, d)
        self.sub2 = Sublayer(params, f"{name}.ga", d, residual, norm)
        self.ff = FeedForward(params, f"{name}.ff", d, d_ff)
        self.sub3 = Sublayer(params, f"{name}.ff", d, residual, norm)

    def __call__(self, y, guide):
        y = self.sub1(y, self.sa(y))
        y = self.sub2(y, self.ga(y, guide))
        return self.sub3(y, self.ff(y))


class AttentionReduce:
    """Collapse rows to one vector: alpha = softmax(MLP(F)), f = sum_i alpha_i F_i."""

    def __init__(self, params: ParamSet, name: str, d: int):
        self.mlp = MLP(params, f"{name}.mlp", d, max(d // 2, 1), 1)

    def weights(self, rows) -> Tensor:
        scores = nx.reshape(self.mlp(rows), (-1,))
        return nx.softmax(scores)

    def __call__(self, rows) -> Tensor:
        return nx.matmul(self.weights(rows), rows)


def repeat_row(v: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of a vector into an n×d matrix."""
    return nx.matmul(Tensor(np.ones((n, 1))), nx.reshape(v, (1, -1)))
