"""Whole-run orchestration shared by the CLI, the demos and the tests."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ck
from . import numerics as nx
from .config import RunConfig, apply_overrides
from .corpus import Problem, class_weights
from .decoder import ProgramVocab
from .detect import boxes_to_patch_mask, detect_characters, load_cutouts
from .diagram import DiagramEncoder, PretrainSample, pretrain
from .errors import CheckpointError
from .model import GeoSolver, evaluate, make_optimizer, train_solver
from .text import Vocab

CURVE_FIELDS = ("step", "L_mim", "L_char", "L_aux")


def n_steps(cfg: RunConfig, n_items: int, epochs: int, override: int) -> int:
    if override > 0:
        return override
    return epochs * math.ceil(n_items / min(cfg.batch_size, n_items))


def _adam_arrays(opt: nx.Adam) -> dict:
    return opt.state()


def _restore_adam(opt: nx.Adam, ckpt: ck.Checkpoint) -> None:
    opt.load_state(ckpt.prefixed("adam."), ckpt.meta.get("adam_t", 0))


def detection_mask(problem: Problem, cfg: RunConfig, cutouts_dir=None) -> np.ndarray:
    """Patch mask from a ``<id>.json`` cut-out file if present, else connected components."""
    cutouts = None
    if cutouts_dir is not None:
        path = Path(cutouts_dir) / f"{problem.id}.json"
        if path.exists():
            cutouts, _ = load_cutouts(path)
    boxes = detect_characters(problem.diagram, cfg.binarize_threshold, cfg.max_aspect,
                              (cfg.area_min, cfg.area_max), cfg.iou_threshold, cutouts)
    return boxes_to_patch_mask(boxes, cfg.grid, cfg.patch)


def pretrain_samples(problems: Sequence[Problem], cfg: RunConfig, cutouts_dir=None):
    return [PretrainSample.from_problem(p, cfg, detection_mask(p, cfg, cutouts_dir))
            for p in problems]


def write_curve(path, rows, append: bool = False) -> None:
    path = Path(path)
    exists = append and path.exists()
    with open(path, "a" if exists else "w", newline="") as fh:
        w = csv.writer(fh)
        if not exists:
            w.writerow(CURVE_FIELDS)
        for step, l_mim, l_char, l_aux in rows:
            w.writerow([step, repr(l_mim), repr(l_char), repr(l_aux)])


def run_pretrain(cfg: RunConfig, problems: Sequence[Problem], out_path, curve_path=None,
                 resume=None, steps: int | None = None, cutouts_dir=None) -> list:
    """Pretrain the diagram encoder and write a ``diagram.*`` checkpoint.

    With ``resume`` the encoder, optimizer state and step counter continue
    from that checkpoint.
    """
    with nx.numeric_mode(cfg.mode):
        params = nx.ParamSet(cfg.seed)
        encoder = DiagramEncoder(params, cfg)
        opt = nx.Adam(params, lr=cfg.lr_diagram, lr_groups=cfg.lr_groups())
        start = 0
        if resume is not None:
            prev = ck.load(resume, cfg.diagram_fingerprint())
            params.load_state(prev.prefixed("diagram."))
            _restore_adam(opt, prev)
            start = int(prev.meta.get("step", 0))
        samples = pretrain_samples(problems, cfg, cutouts_dir)
        weights = class_weights([s.labels for s in samples])
        total = steps if steps is not None else n_steps(cfg, len(samples), cfg.diagram_epochs,
                                                        cfg.diagram_steps)
        history = pretrain(encoder, samples, opt, total, weights=weights, start_step=start,
                           seed=cfg.seed)
        arrays = {**params.state("diagram."), **_adam_arrays(opt)}
        meta = {"kind": "diagram", "step": start + total, "adam_t": opt.t,
                "config": cfg.to_dict()}
        ck.save(out_path, ck.Checkpoint(arrays, cfg.diagram_fingerprint(), cfg.seed, meta))
    if curve_path is not None:
        write_curve(curve_path, history, append=resume is not None)
    return history


def run_train(cfg: RunConfig, problems: Sequence[Problem], diagram_ckpt, out_path,
              steps: int | None = None, stop_at_exact: float | None = None,
              log=None):
    """Train the solver on top of a pretrained (frozen) diagram encoder.

    Returns ``(model, TrainResult)``.
    """
    with nx.numeric_mode(cfg.mode):
        dck = ck.load(diagram_ckpt, cfg.diagram_fingerprint())
        if dck.meta.get("kind") != "diagram":
            raise CheckpointError(f"{diagram_ckpt} is not a diagram-encoder checkpoint")
        model = GeoSolver.for_corpus(cfg, problems, init_diagram=False)
        model.load_diagram(dck.arrays)
        opt = make_optimizer(model.params, cfg)
        total = steps if steps is not None else n_steps(cfg, len(problems), cfg.epochs,
                                                        cfg.max_steps)
        target = stop_at_exact if stop_at_exact is not None else (cfg.stop_at_exact or None)
        result = train_solver(model, problems, total, opt, stop_at_exact=target, callback=log)
        save_solver(out_path, model, opt, result.steps)
    return model, result


def save_solver(path, model: GeoSolver, opt: nx.Adam | None = None, step: int = 0) -> None:
    cfg = model.cfg
    arrays = model.params.state()
    if opt is not None:
        arrays.update(_adam_arrays(opt))
    meta = {
        "kind": "solver", "step": int(step), "adam_t": opt.t if opt is not None else 0,
        "config": cfg.to_dict(),
        "text_vocab": model.text_vocab.to_json(),
        "program_vocab": model.program_vocab.to_json(),
    }
    ck.save(path, ck.Checkpoint(arrays, cfg.fingerprint(), cfg.seed, meta))


def load_solver(path, overrides: dict | None = None, allow_mismatch: bool = False) -> GeoSolver:
    """Rebuild a solver from its checkpoint.

    The stored configuration is the base; ``overrides`` (e.g. ``beam_size``)
    are applied on top. Overrides that change the architecture are refused
    unless ``allow_mismatch`` is set.
    """
    ckpt = ck.load(path)
    if ckpt.meta.get("kind") != "solver":
        raise CheckpointError(f"{path} is not a solver checkpoint")
    cfg = RunConfig(**ckpt.meta["config"])
    if overrides:
        cfg = apply_overrides(cfg, overrides).validate()
    if cfg.fingerprint() != ckpt.fingerprint and not allow_mismatch:
        raise CheckpointError(f"{path}: configuration fingerprint {cfg.fingerprint()} does not "
                              f"match the checkpoint's {ckpt.fingerprint}")
    with nx.numeric_mode(cfg.mode):
        model = GeoSolver(cfg, Vocab.from_json(ckpt.meta["text_vocab"]),
                          ProgramVocab.from_json(ckpt.meta["program_vocab"]), init_diagram=False)
        model.params.load_state({k: v for k, v in ckpt.arrays.items() if not k.startswith("adam.")})
    return model


def run_evaluate(problems: Sequence[Problem], solver_ckpt, overrides: dict | None = None,
                 allow_mismatch: bool = False):
    model = load_solver(solver_ckpt, overrides, allow_mismatch)
    with nx.numeric_mode(model.cfg.mode):
        return evaluate(model, problems, model.cfg.beam_size)
