"""Attention LSTM program decoder, NLL loss, greedy and beam decoding."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .config import RunConfig
from .errors import InvalidInputError, ShapeError
from .executor import OP_TABLE
from .numerics import Embedding, Linear, LSTMCell, ParamSet, Tensor

BOS, EOS, PAD = "<bos>", "<eos>", "<pad>"
DEFAULT_CONSTANTS = ("C_PI", "C_2", "C_3", "C_30", "C_45", "C_60", "C_90", "C_180")
NLL_CLIP = 1e-12


class ProgramVocab:
    """Program tokens: specials, operation names, N_i, V_i and constants."""

    def __init__(self, n_vars: int = 10, n_steps: int = 10, constants: Sequence[str] = ()):
        consts = sorted(set(DEFAULT_CONSTANTS) | set(constants))
        self.itos = ([PAD, BOS, EOS] + sorted(OP_TABLE)
                     + [f"N_{i}" for i in range(n_vars)]
                     + [f"V_{i}" for i in range(n_steps)] + consts)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        self.n_vars, self.n_steps, self.constants = n_vars, n_steps, consts

    @classmethod
    def from_programs(cls, programs, n_vars: int = 10, n_steps: int = 10) -> "ProgramVocab":
        consts = {t for p in programs for t in p if t.startswith("C_")}
        return cls(n_vars, n_steps, sorted(consts))

    def __len__(self):
        return len(self.itos)

    @property
    def bos(self) -> int:
        return self.stoi[BOS]

    @property
    def eos(self) -> int:
        return self.stoi[EOS]

    @property
    def pad(self) -> int:
        return self.stoi[PAD]

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.stoi[t] for t in tokens], dtype=np.int64)
        except KeyError as exc:
            raise InvalidInputError(f"program token {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids) -> list[str]:
        return [self.itos[int(i)] for i in ids if int(i) not in (self.bos, self.eos, self.pad)]

    def to_json(self) -> str:
        return json.dumps({"n_vars": self.n_vars, "n_steps": self.n_steps,
                           "constants": self.constants}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ProgramVocab":
        d = json.loads(text)
        return cls(d["n_vars"], d["n_steps"], d["constants"])


def nll_loss(step_probs, gold: Sequence[int]) -> Tensor:
    """-(1/T) sum_t log P_t(y_t), with probabilities clipped below at 1e-12."""
    gold = np.asarray(gold, dtype=np.int64)
    if gold.size == 0:
        raise InvalidInputError("nll_loss needs at least one target token")
    probs = nx.as_tensor(step_probs)
    if probs.shape[0] != gold.size:
        raise ShapeError(f"{probs.shape[0]} distributions for {gold.size} targets")
    picked = probs[np.arange(gold.size), gold]
    return nx.mul(nx.mean(nx.log(nx.clip(picked, NLL_CLIP, 1.0))), -1.0)


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor


class ProgramDecoder:
    """LSTM over previous-token embeddings; each hidden state attends to F_R."""

    def __init__(self, params: ParamSet, cfg: RunConfig, vocab_size: int):
        d = cfg.d_model
        self.d, self.vocab_size = d, vocab_size
        self.embed = Embedding(params, "decoder.embed", vocab_size, d)
        self.init_h = Linear(params, "decoder.init_h", d, d)
        self.init_c = Linear(params, "decoder.init_c", d, d)
        self.cell = LSTMCell(params, "decoder.lstm", d, d)
        self.out = Linear(params, "decoder.out", 2 * d, vocab_size)

    def init_state(self, f_R) -> DecoderState:
        return DecoderState(self.init_h(f_R), self.init_c(f_R))

    def _check_token(self, token: int) -> None:
        if not 0 <= int(token) < self.vocab_size:
            raise InvalidInputError(f"token index {token} outside vocabulary of {self.vocab_size}")

    def _logits(self, H, F_R) -> Tensor:
        ctx = nx.scaled_dot_attention(H, F_R, F_R)
        return self.out(nx.concat([H, ctx], axis=-1))

    def decode_step(self, state: DecoderState, prev_token: int, F_R):
        """Returns (distribution over the vocabulary, next state)."""
        self._check_token(prev_token)
        x = self.embed(np.array([prev_token]))[0]
        h, c = nx.lstm_cell(x, state.h, state.c, self.cell)
        H = nx.reshape(h, (1, -1))
        probs = nx.softmax(self._logits(H, F_R))[0]
        return probs, DecoderState(h, c)

    def step_log_probs(self, state: DecoderState, prev_token: int, F_R):
        """Inference-only step returning numpy log-probabilities."""
        self._check_token(prev_token)
        x = self.embed(np.array([prev_token]))[0]
        h, c = nx.lstm_cell(x, state.h, state.c, self.cell)
        logp = nx.log_softmax(self._logits(nx.reshape(h, (1, -1)), F_R))[0]
        return np.asarray(logp.data, dtype=np.float64), DecoderState(h, c)

    def teacher_forced_loss(self, F_R, f_R, targets: Sequence[int], bos: int) -> Tensor:
        """Mean NLL of ``targets`` (which should end with EOS) given gold prefixes."""
        targets = np.asarray(targets, dtype=np.int64)
        if targets.size == 0:
            raise InvalidInputError("empty target sequence")
        inputs = np.concatenate([[bos], targets[:-1]])
        state = self.init_state(f_R)
        h, c = state.h, state.c
        x_all = self.embed(inputs)
        x_proj = nx.add(nx.matmul(x_all, self.cell.w_x), self.cell.bias)
        hs = []
        for t in range(len(inputs)):
            pre = nx.add(x_proj[t], nx.matmul(h, self.cell.w_h))
            h, c = self.cell.gates(pre, c)
            hs.append(h)
        logp = nx.log_softmax(self._logits(nx.stack(hs), F_R))
        picked = logp[np.arange(targets.size), targets]
        return nx.mul(nx.mean(picked), -1.0)


# search

@dataclass
class Hypothesis:
    tokens: list
    score: float
    finished: bool
    completed_at: int


def beam_search_core(step_fn: Callable, init_state, bos: int, eos: int, beam_size: int,
                     max_len: int = 40, length_norm: bool = False) -> list[Hypothesis]:
    """Length-bounded beam search over ``step_fn(state, prev) -> (log_probs, state)``.

    Each round expands every live beam by every token and keeps the best
    ``beam_size`` candidates, ordered by score, then lower token index, then
    the rank of the parent beam. Candidates ending in EOS retire to the result
    pool. Beams still live at ``max_len`` are returned as truncated results.
    The output holds at most ``beam_size`` hypotheses, best first; equal
    scores keep the earlier completion first.
    """
    if beam_size < 1:
        raise InvalidInputError("beam size must be at least 1")

    def key(tokens, score):
        if length_norm:
            return score / max(len(tokens), 1)
        return score

    live = [([], 0.0, init_state, bos)]
    done: list[Hypothesis] = []
    for t in range(max_len):
        cands = []
        for rank, (tokens, score, state, prev) in enumerate(live):
            logp, new_state = step_fn(state, prev)
            for tok in range(len(logp)):
                s = score + float(logp[tok])
                cands.append((-key(tokens + [tok], s), tok, rank, s, new_state))
        cands.sort(key=lambda c: c[:3])
        parents = [beam[0] for beam in live]
        live = []
        for _, tok, rank, s, new_state in cands[:beam_size]:
            tokens = parents[rank] + [tok]
            if tok == eos:
                done.append(Hypothesis(tokens, s, True, t))
            else:
                live.append((tokens, s, new_state, tok))
        if not live:
            break
        if len(done) >= beam_size and not length_norm:
            # log-probs only decrease, so no live beam can overtake the pool
            kth_best = sorted((h.score for h in done), reverse=True)[beam_size - 1]
            if max(s for _, s, _, _ in live) <= kth_best:
                live = []
                break
    for tokens, s, _, _ in live:
        done.append(Hypothesis(tokens, s, False, max_len))
    done.sort(key=lambda h: (-key(h.tokens, h.score), h.completed_at))
    return done[:beam_size]


def greedy_core(step_fn: Callable, init_state, bos: int, eos: int,
                max_len: int = 40) -> Hypothesis:
    """Argmax decoding (lowest index on ties) until EOS or ``max_len`` tokens."""
    tokens, score, state, prev = [], 0.0, init_state, bos
    for t in range(max_len):
        logp, state = step_fn(state, prev)
        tok = int(np.argmax(logp))
        tokens.append(tok)
        score += float(logp[tok])
        if tok == eos:
            return Hypothesis(tokens, score, True, t)
        prev = tok
    return Hypothesis(tokens, score, False, max_len)
