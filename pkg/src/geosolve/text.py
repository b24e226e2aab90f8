"""Character-aware text encoder.

Pipeline: embed -> zero out non-character rows -> align the character rows
with diagram patches (guided attention then self-attention, twice) -> restore
non-character rows -> merge runs of consecutive characters through a GRU ->
bidirectional LSTM. A separate small transformer over the same tokens acts as
the context branch, and the two are fused by a linear layer.
"""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np

from . import numerics as nx
from .config import RunConfig
from .corpus import merge_runs
from .errors import ShapeError
from .layers import AttentionLayer, PreNormBlock, Sublayer
from .numerics import GRU, Embedding, Linear, LSTMCell, ParamSet, Tensor

PAD, UNK = "<pad>", "<unk>"


class Vocab:
    """Token <-> index map with pad and unknown entries."""

    def __init__(self, tokens: Sequence[str]):
        self.itos = [PAD, UNK] + [t for t in dict.fromkeys(tokens) if t not in (PAD, UNK)]
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, token_lists, n_vars: int = 10) -> "Vocab":
        seen = [f"N_{i}" for i in range(n_vars)]
        for toks in token_lists:
            seen.extend(toks)
        return cls(seen)

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        unk = self.stoi[UNK]
        return np.array([self.stoi.get(t, unk) for t in tokens], dtype=np.int64)

    def to_json(self) -> str:
        return json.dumps(self.stoi, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        stoi = json.loads(text)
        v = cls.__new__(cls)
        v.itos = [t for t, _ in sorted(stoi.items(), key=lambda kv: kv[1])]
        v.stoi = {t: i for i, t in enumerate(v.itos)}
        return v


def mask_embed(E_T, m_align) -> Tensor:
    """Keep rows where m_align is 1, zero the others."""
    E_T = nx.as_tensor(E_T)
    m = np.asarray(m_align)
    if m.shape != (E_T.shape[0],):
        raise ShapeError(f"mask length {m.shape} does not match {E_T.shape[0]} tokens")
    return nx.mul(E_T, m.astype(np.float64)[:, None])


class AlignBlock:
    """Guided attention from text to diagram followed by self-attention among characters."""

    def __init__(self, params: ParamSet, name: str, d: int, d_diag: int, residual=True, norm=True):
        self.ga = AttentionLayer(params, f"{name}.ga", d, d_diag, d)
        self.ga_sub = Sublayer(params, f"{name}.ga", d, residual, norm)
        self.sa = AttentionLayer(params, f"{name}.sa", d, d, d)
        self.sa_sub = Sublayer(params, f"{name}.sa", d, residual, norm)

    def __call__(self, x, F_D, key_mask):
        x = self.ga_sub(x, self.ga(x, F_D))
        return self.sa_sub(x, self.sa(x, key_mask=key_mask))


class TextEncoder:
    def __init__(self, params: ParamSet, cfg: RunConfig, vocab_size: int):
        d = cfg.d_model
        if d % 2:
            raise ShapeError("d_model must be even for the bidirectional LSTM")
        self.cfg = cfg
        self.embedding = Embedding(params, "text.embed", vocab_size, d)
        self.align_blocks = [
            AlignBlock(params, f"align.block{i}", d, cfg.diag_dim, cfg.residual, cfg.layer_norm)
            for i in range(cfg.align_blocks)
        ]
        self.gru = GRU(params, "merge.gru", d, d)
        self.fuse_merge = Linear(params, "merge.fuse", 2 * d, d)
        self.lstm_fwd = LSTMCell(params, "text.lstm_fwd", d, d // 2)
        self.lstm_bwd = LSTMCell(params, "text.lstm_bwd", d, d // 2)
        self.ctx_embed = Embedding(params, "ctx.embed", vocab_size, d)
        self.ctx_pos = params.add("ctx.pos", (cfg.max_text_len, d), fan_in=d)
        self.ctx_blocks = [PreNormBlock(params, f"ctx.block{i}", d, cfg.d_ff)
                           for i in range(cfg.ctx_blocks)]
        self.fuse = Linear(params, "text.fuse", 2 * d, d)

    def embed(self, ids) -> Tensor:
        return self.embedding(ids)

    def align(self, E_T, F_D, m_align) -> Tensor:
        """Aligned features at character rows; every other row is E_T unchanged."""
        E_T = nx.as_tensor(E_T)
        m = np.asarray(m_align, dtype=bool)
        if m.shape != (E_T.shape[0],):
            raise ShapeError(f"mask length {m.shape} does not match {E_T.shape[0]} tokens")
        if nx.as_tensor(F_D).shape[-1] != self.cfg.diag_dim:
            raise ShapeError(f"diagram features must have width {self.cfg.diag_dim}")
        if not m.any():
            return E_T
        x = mask_embed(E_T, m)
        for block in self.align_blocks:
            x = block(x, F_D, m)
        return nx.where(m[:, None], x, E_T)

    def merge(self, H_align, m_merge) -> Tensor:
        """Each run of consecutive characters is fused with the GRU summary of the run."""
        H_align = nx.as_tensor(H_align)
        runs = merge_runs(m_merge)
        if not runs:
            return H_align
        pieces, pos = [], 0
        for start, stop in runs:
            if start > pos:
                pieces.append(H_align[pos:start])
            rows = H_align[start:stop]
            h = nx.gru_last_hidden(rows, self.gru)
            hs = nx.matmul(Tensor(np.ones((stop - start, 1))), nx.reshape(h, (1, -1)))
            pieces.append(nx.relu(self.fuse_merge(nx.concat([rows, hs], axis=1))))
            pos = stop
        if pos < H_align.shape[0]:
            pieces.append(H_align[pos:])
        return nx.concat(pieces, axis=0)

    def _lstm_pass(self, x_proj, cell: LSTMCell, order) -> list:
        H = cell.n_hidden
        h, c = Tensor(np.zeros(H)), Tensor(np.zeros(H))
        out = [None] * len(order)
        for t in order:
            pre = nx.add(x_proj[t], nx.matmul(h, cell.w_h))
            h, c = cell.gates(pre, c)
            out[t] = h
        return out

    def bilstm(self, x) -> Tensor:
        """Single-layer bidirectional LSTM; output width d (d/2 per direction)."""
        x = nx.as_tensor(x)
        n = x.shape[0]
        fwd_proj = nx.add(nx.matmul(x, self.lstm_fwd.w_x), self.lstm_fwd.bias)
        bwd_proj = nx.add(nx.matmul(x, self.lstm_bwd.w_x), self.lstm_bwd.bias)
        fwd = self._lstm_pass(fwd_proj, self.lstm_fwd, range(n))
        bwd = self._lstm_pass(bwd_proj, self.lstm_bwd, range(n - 1, -1, -1))
        return nx.concat([nx.stack(fwd), nx.stack(bwd)], axis=1)

    def context_encode(self, ids) -> Tensor:
        ids = np.asarray(ids)
        if len(ids) > self.cfg.max_text_len:
            raise ShapeError(f"text has {len(ids)} tokens; max_text_len is {self.cfg.max_text_len}")
        x = nx.add(self.ctx_embed(ids), self.ctx_pos[0:len(ids)])
        for block in self.ctx_blocks:
            x = block(x)
        return x

    def dual_fuse(self, H_merge, H_ctx) -> Tensor:
        H_merge, H_ctx = nx.as_tensor(H_merge), nx.as_tensor(H_ctx)
        if H_merge.shape[0] != H_ctx.shape[0]:
            raise ShapeError(f"branch lengths differ: {H_merge.shape[0]} vs {H_ctx.shape[0]}")
        return self.fuse(nx.concat([H_merge, H_ctx], axis=1))

    def __call__(self, ids, F_D, m_align, m_merge) -> Tensor:
        """Full text path: returns F_T (l×d)."""
        E_T = self.embed(ids)
        H = self.align(E_T, F_D, m_align) if self.cfg.use_align else E_T
        if self.cfg.use_merge:
            H = self.merge(H, m_merge)
        return self.dual_fuse(self.bilstm(H), self.context_encode(ids))
