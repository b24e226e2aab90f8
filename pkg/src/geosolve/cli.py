"""``geosolve`` command line.

Machine-readable results go to stdout as JSON; diagnostics go to stderr.
Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import executor
from .config import RunConfig, apply_overrides, load_config
from .corpus import load_corpus, problem_from_record, read_png, save_corpus, synthetic_corpus, write_png
from .detect import annotate, detect_characters, load_cutouts
from .errors import ConfigurationError, GeoSolveError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=_json_default)
    sys.stdout.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args):
    return load_config(args.config, _overrides(args.set))


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# subcommands

def cmd_synth(args) -> int:
    pairs = synthetic_corpus(args.n, seed=args.seed,
                             templates=args.templates.split(",") if args.templates else None)
    out = Path(args.out)
    path = save_corpus([p for p, _ in pairs], out)
    boxes = {p.id: [list(map(int, b)) for b in bx] for p, bx in pairs}
    (out / "boxes.json").write_text(json.dumps(boxes, indent=1, sort_keys=True))
    _emit({"corpus": str(path), "problems": len(pairs), "boxes": str(out / "boxes.json")})
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from .pipeline import run_pretrain
    cfg = _config(args)
    problems = load_corpus(args.corpus, cfg.image_size)
    history = run_pretrain(cfg, problems, args.out, args.curve, resume=args.resume,
                           steps=args.steps, cutouts_dir=args.cutouts_dir)
    first, last = history[0], history[-1]
    _emit({"checkpoint": args.out, "steps": len(history), "first_step": first[0],
           "initial_L_aux": first[3], "final_L_aux": last[3], "curve": args.curve})
    return EXIT_OK


def cmd_train(args) -> int:
    from .model import params_digest
    from .pipeline import run_train
    cfg = _config(args)
    problems = load_corpus(args.corpus, cfg.image_size)
    every = max(1, args.log_every)
    log = None if args.quiet else (
        lambda step, loss: _log(f"step {step} loss {loss:.6f}") if step % every == 0 else None)
    model, result = run_train(cfg, problems, args.diagram_ckpt, args.out, steps=args.steps,
                              stop_at_exact=args.stop_at_exact, log=log)
    _emit({"checkpoint": args.out, "steps": result.steps,
           "final_loss": result.history[-1][1] if result.history else None,
           "exact_match": result.exact_match,
           "diagram_digest": params_digest(model.params, "diagram.")})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .pipeline import run_evaluate
    overrides = _overrides(args.set)
    problems = load_corpus(args.corpus)
    report = run_evaluate(problems, args.ckpt, overrides, args.allow_mismatch)
    _emit(report.to_dict(details=args.details))
    return EXIT_OK


def _problems_from_file(path):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        return [problem_from_record(data, Path(path).parent)]
    return load_corpus(path)


def cmd_solve(args) -> int:
    from . import numerics as nx
    from .pipeline import load_solver
    model = load_solver(args.ckpt, _overrides(args.set), args.allow_mismatch)
    out = []
    with nx.numeric_mode(model.cfg.mode):
        for p in _problems_from_file(args.problem):
            beams, verdict = model.solve(p)
            out.append({
                "id": p.id,
                "beams": [{"program": " ".join(toks), "log_prob": score} for toks, score in beams],
                "answer_index": verdict.index,
                "answer": p.choices[verdict.index] if verdict.index is not None else None,
                "no_result": verdict.no_result,
                "beam_rank": verdict.beam_rank,
                "steps": verdict.steps_used,
                "value": verdict.value,
            })
    _emit(out if len(out) != 1 else out[0])
    return EXIT_OK


def cmd_exec(args) -> int:
    if args.numbers_file:
        table = json.loads(Path(args.numbers_file).read_text())
    else:
        try:
            table = json.loads(args.numbers or "{}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"--numbers is not valid JSON: {exc}") from exc
    result = executor.execute(args.program, {k: float(v) for k, v in table.items()})
    _emit(result.to_dict())
    return EXIT_OK if result.ok else EXIT_RUNTIME


def cmd_op_table(args) -> int:
    sys.stdout.write(executor.op_table_json() + "\n")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args)
    if args.image is None and args.cutouts is None:
        raise UsageError("detect needs --image, --cutouts, or both")
    image = read_png(args.image) if args.image else None
    cutouts = None
    if args.cutouts:
        cutouts, (h, w) = load_cutouts(args.cutouts)
        if image is None:
            image = np.full((h, w), 255, dtype=np.uint8)
    boxes = detect_characters(image, cfg.binarize_threshold, cfg.max_aspect,
                              (cfg.area_min, cfg.area_max), cfg.iou_threshold, cutouts)
    if args.annotate:
        if args.image is None:
            raise UsageError("--annotate needs --image")
        write_png(args.annotate, annotate(image, boxes))
    _emit({"boxes": [{"x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1} for b in boxes],
           "count": len(boxes), "annotated": args.annotate})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .model import toy_gradcheck
    report = toy_gradcheck(seed=args.seed, freeze_diagram=args.freeze_diagram,
                           overrides=_typed(_overrides(args.set)))
    _emit(report.to_dict())
    return EXIT_OK if report.passed else EXIT_RUNTIME


def _typed(pairs: dict) -> dict:
    """Coerce string overrides to the configuration's field types."""
    if not pairs:
        return {}
    cfg = apply_overrides(RunConfig(), pairs)
    return {k: getattr(cfg, k) for k in pairs}


# parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geosolve", description="Symbolic-character-aware geometry problem solver.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="flat key=value configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")

    sp = sub.add_parser("synth", help="write a synthetic corpus")
    sp.add_argument("--n", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--templates", help="comma-separated template names")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("pretrain-diagram", help="pretrain the diagram encoder (MIM + MLC)")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--curve", help="loss curve CSV path")
    sp.add_argument("--resume", help="continue from a diagram checkpoint")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--cutouts-dir", help="directory of <problem id>.json cut-out files")
    common(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("train", help="train the solver on a frozen diagram encoder")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--diagram-ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--stop-at-exact", type=float,
                    help="stop once greedy exact match on the corpus reaches this fraction")
    sp.add_argument("--log-every", type=int, default=25)
    sp.add_argument("--quiet", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="accuracy, per-type accuracy, No Result %%, avg steps")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--details", action="store_true")
    sp.add_argument("--allow-mismatch", action="store_true")
    common(sp, config=False)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("solve", help="beam-decode and adjudicate problems")
    sp.add_argument("--problem", required=True, help="corpus file or single problem object")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--allow-mismatch", action="store_true")
    common(sp, config=False)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("exec", help="execute a program")
    sp.add_argument("program", help='e.g. "g_minus N_0 N_1"')
    sp.add_argument("--numbers", help='JSON object, e.g. \'{"N_0": 16, "N_1": 4}\'')
    sp.add_argument("--numbers-file")
    sp.set_defaults(func=cmd_exec)

    sp = sub.add_parser("op-table", help="print the operation table")
    sp.set_defaults(func=cmd_op_table)

    sp = sub.add_parser("detect", help="symbolic-character boxes for a diagram")
    sp.add_argument("--image")
    sp.add_argument("--cutouts", help="run-length-encoded cut-out JSON")
    sp.add_argument("--annotate", help="write an annotated PNG here")
    common(sp)
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the toy model")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--freeze-diagram", action="store_true")
    common(sp, config=False)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        _log(json.dumps({"error": str(exc), "kind": "usage"}))
        return EXIT_USAGE
    except ConfigurationError as exc:
        _log(json.dumps({"error": str(exc), "kind": "configuration"}))
        return EXIT_USAGE
    except (GeoSolveError, OSError, ValueError, KeyError) as exc:
        _log(json.dumps({"error": str(exc), "kind": type(exc).__name__}))
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
