"""End-to-end solver: frozen diagram encoder, text encoder, reasoner, decoder.

Also holds solver training, evaluation metrics and the whole-model gradient
check.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .config import RunConfig
from .corpus import N_CLASSES, TYPE_TAGS, Problem, gold_answer_index
from .decoder import ProgramDecoder, ProgramVocab, beam_search_core, greedy_core
from .diagram import DiagramEncoder, PretrainSample, patchify, stream_batch
from .errors import TrainingError
from .executor import adjudicate
from .numerics import Adam, ParamSet
from .reasoner import Reasoner
from .text import TextEncoder, Vocab


class GeoSolver:
    """All solver modules sharing one :class:`ParamSet`.

    The diagram encoder is frozen on construction; its features are computed
    once per problem and cached. With ``init_diagram=False`` the encoder
    weights are placeholders until :meth:`load_diagram` fills them.
    """

    def __init__(self, cfg: RunConfig, text_vocab: Vocab, program_vocab: ProgramVocab,
                 init_diagram: bool = True):
        self.cfg = cfg
        self.text_vocab = text_vocab
        self.program_vocab = program_vocab
        self.params = ParamSet(cfg.seed)
        self.diagram = DiagramEncoder(self.params, cfg, initialize=init_diagram)
        self.text = TextEncoder(self.params, cfg, len(text_vocab))
        self.reasoner = Reasoner(self.params, cfg)
        self.decoder = ProgramDecoder(self.params, cfg, len(program_vocab))
        self.params.freeze("diagram.")
        self._feature_cache: dict = {}

    @classmethod
    def for_corpus(cls, cfg: RunConfig, problems: Sequence[Problem], **kwargs) -> "GeoSolver":
        text_vocab = Vocab.build(p.text_tokens for p in problems)
        program_vocab = ProgramVocab.from_programs(p.gold_program for p in problems)
        return cls(cfg, text_vocab, program_vocab, **kwargs)

    def load_diagram(self, state: dict) -> None:
        self.params.load_state({k: v for k, v in state.items() if k.startswith("diagram.")},
                               strict=False)
        self.diagram.check_loaded()
        self.clear_cache()

    # features

    def diagram_features(self, problem: Problem, patches=None):
        key = problem.id
        if key not in self._feature_cache:
            if patches is None:
                patches = patchify(problem.diagram, self.cfg.grid, self.cfg.patch)
            with nx.no_grad():
                self._feature_cache[key] = self.diagram.encode(patches).detach()
        return self._feature_cache[key]

    def clear_cache(self) -> None:
        self._feature_cache.clear()

    def encode(self, problem: Problem, F_D=None):
        """Returns (F_R, f_R) for one problem."""
        if F_D is None:
            F_D = self.diagram_features(problem)
        ids = self.text_vocab.encode(problem.text_tokens)
        F_T = self.text(ids, F_D, problem.m_align, problem.m_merge)
        return self.reasoner(F_T, F_D)

    def targets(self, problem: Problem) -> np.ndarray:
        ids = self.program_vocab.encode(problem.gold_program)
        return np.concatenate([ids, [self.program_vocab.eos]])

    def loss(self, problem: Problem, F_D=None):
        F_R, f_R = self.encode(problem, F_D)
        return self.decoder.teacher_forced_loss(F_R, f_R, self.targets(problem),
                                                self.program_vocab.bos)

    # decoding

    def _search_inputs(self, problem: Problem):
        F_R, f_R = self.encode(problem)

        def step(state, prev):
            return self.decoder.step_log_probs(state, prev, F_R)

        return step, self.decoder.init_state(f_R)

    def greedy(self, problem: Problem) -> list[str]:
        with nx.no_grad():
            step, s0 = self._search_inputs(problem)
            hyp = greedy_core(step, s0, self.program_vocab.bos, self.program_vocab.eos,
                              self.cfg.max_program_len)
        return self.program_vocab.decode(hyp.tokens)

    def beam(self, problem: Problem, beam_size: int | None = None) -> list[tuple[list[str], float]]:
        B = beam_size or self.cfg.beam_size
        with nx.no_grad():
            step, s0 = self._search_inputs(problem)
            hyps = beam_search_core(step, s0, self.program_vocab.bos, self.program_vocab.eos,
                                    B, self.cfg.max_program_len, self.cfg.length_norm)
        return [(self.program_vocab.decode(h.tokens), h.score) for h in hyps]

    def solve(self, problem: Problem, beam_size: int | None = None):
        """Returns (beams, adjudication)."""
        beams = self.beam(problem, beam_size)
        verdict = adjudicate([b for b, _ in beams], problem.number_table, problem.choices,
                             self.cfg.choice_tol)
        return beams, verdict


def params_digest(params: ParamSet, prefix: str = "") -> str:
    """SHA-256 over names and raw bytes of the matching parameters."""
    h = hashlib.sha256()
    for name in sorted(params):
        if name.startswith(prefix):
            h.update(name.encode())
            h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


# training

@dataclass
class TrainResult:
    steps: int
    history: list = field(default_factory=list)
    exact_match: float | None = None


def exact_match(model: GeoSolver, problems: Sequence[Problem]) -> float:
    """Fraction of problems whose greedy program equals the gold program."""
    hits = sum(model.greedy(p) == list(p.gold_program) for p in problems)
    return hits / len(problems)


def train_solver(model: GeoSolver, problems: Sequence[Problem], steps: int,
                 optimizer: Adam | None = None, start_step: int = 0,
                 stop_at_exact: float | None = None, check_every: int = 25,
                 callback=None) -> TrainResult:
    """Teacher-forced training of every non-frozen parameter.

    Each step averages the loss over a batch drawn from a seeded shuffled
    stream. With ``stop_at_exact`` set, greedy exact match on ``problems`` is
    measured every ``check_every`` steps and training stops once it is reached.
    """
    cfg = model.cfg
    if optimizer is None:
        optimizer = make_optimizer(model.params, cfg)
    history = []
    result = TrainResult(steps=0, history=history)
    for step in range(start_step, start_step + steps):
        idx = stream_batch(step, len(problems), cfg.batch_size, cfg.seed)
        model.params.zero_grad()
        losses = [model.loss(problems[i]) for i in idx]
        batch_loss = nx.mul(nx.sum(nx.stack(losses)), 1.0 / len(idx))
        value = float(batch_loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite solver loss at step {step}")
        nx.backward(batch_loss)
        optimizer.step()
        history.append((step, value))
        result.steps = step + 1 - start_step
        if callback is not None:
            callback(step, value)
        if stop_at_exact is not None and (step + 1 - start_step) % check_every == 0:
            result.exact_match = exact_match(model, problems)
            if result.exact_match >= stop_at_exact:
                break
    return result


def make_optimizer(params: ParamSet, cfg: RunConfig) -> Adam:
    return Adam(params, lr=cfg.lr_other, lr_groups=cfg.lr_groups())


# evaluation

@dataclass
class EvalReport:
    n_problems: int
    accuracy: float
    per_type: dict
    no_result: float
    avg_steps: float | None
    details: list = field(default_factory=list)

    def to_dict(self, details: bool = False) -> dict:
        d = asdict(self)
        if not details:
            d.pop("details")
        return d


def summarize(outcomes: Sequence[dict]) -> EvalReport:
    """Aggregate per-problem outcomes ``{id, type, correct, no_result, steps}``."""
    n = len(outcomes)
    pct = (lambda k, m: 100.0 * k / m if m else 0.0)
    per_type = {}
    for tag in TYPE_TAGS:
        rows = [o for o in outcomes if o["type"] == tag]
        per_type[tag] = pct(sum(o["correct"] for o in rows), len(rows)) if rows else None
    solved_steps = [o["steps"] for o in outcomes if o["correct"]]
    return EvalReport(
        n_problems=n,
        accuracy=pct(sum(o["correct"] for o in outcomes), n),
        per_type=per_type,
        no_result=pct(sum(o["no_result"] for o in outcomes), n),
        avg_steps=float(np.mean(solved_steps)) if solved_steps else None,
        details=list(outcomes),
    )


def evaluate(model: GeoSolver, problems: Sequence[Problem], beam_size: int | None = None) -> EvalReport:
    outcomes = []
    for p in problems:
        beams, verdict = model.solve(p, beam_size)
        gold = p.answer_index if p.answer_index is not None else gold_answer_index(p)
        correct = verdict.index is not None and verdict.index == gold
        outcomes.append({
            "id": p.id, "type": p.type_tag, "correct": bool(correct),
            "no_result": verdict.no_result,
            "steps": verdict.steps_used if correct else None,
            "predicted": verdict.index, "gold": gold,
            "program": beams[verdict.beam_rank][0] if verdict.beam_rank is not None else None,
        })
    return summarize(outcomes)


# whole-model gradient check

TOY_CONFIG = dict(grid=2, patch=4, diag_dim=16, diag_ff=32, diag_blocks=1, d_model=16, d_ff=32,
                  align_blocks=2, ctx_blocks=1, reasoner_units=2, max_text_len=8, mode="test")


def toy_problem(seed: int = 0, size: int = 8) -> Problem:
    """Two-token problem ("A B") on a small random diagram."""
    rng = np.random.default_rng(seed)
    return Problem(id="toy", text_tokens=["A", "B"], number_table={"N_0": 3.0, "N_1": 4.0},
                   diagram=rng.integers(0, 256, size=(size, size)).astype(np.uint8),
                   choices=[5.0, 6.0, 7.0, 8.0], gold_program=["gougu_plus", "N_0", "N_1"],
                   type_tag="Length", text="A B")


def end_to_end_loss(model: GeoSolver, problem: Problem, mask_seed=0, weights=None):
    """Auxiliary diagram loss plus solver NLL, with gradients flowing through F_D.

    The first half of the patches stand in for detected character patches.
    """
    cfg = model.cfg
    patches = patchify(problem.diagram, cfg.grid, cfg.patch)
    det = np.zeros(cfg.n_patches, dtype=np.int8)
    det[: max(1, cfg.n_patches // 2)] = 1
    sample = PretrainSample(patches, det, problem.labels)
    w = np.ones(N_CLASSES) if weights is None else weights
    l_aux, _, _ = model.diagram.pretrain_loss(sample, mask_seed, w, tasks="mim+mlc")
    F_D = model.diagram.encode(patches)
    return nx.add(l_aux, model.loss(problem, F_D=F_D))


def toy_gradcheck(seed: int = 0, freeze_diagram: bool = False, overrides: dict | None = None,
                  tolerance: float = 1e-4) -> nx.GradReport:
    """Finite-difference check of the whole model on the two-token toy problem."""
    cfg = RunConfig(seed=seed, **{**TOY_CONFIG, **(overrides or {})})
    with nx.numeric_mode("test"):
        problem = toy_problem(seed, cfg.image_size)
        model = GeoSolver.for_corpus(cfg, [problem])
        if not freeze_diagram:
            model.params.unfreeze("diagram.")
        return nx.grad_check(lambda: end_to_end_loss(model, problem), model.params,
                             tolerance=tolerance, seed=seed)
