import csv

import numpy as np
import pytest

from geosolve import checkpoint as ck
from geosolve import numerics as nx
from geosolve.config import RunConfig
from geosolve.corpus import synthetic_corpus
from geosolve.errors import CheckpointError
from geosolve.executor import parse_program
from geosolve.model import (
    GeoSolver, evaluate, params_digest, summarize, toy_gradcheck, toy_problem, train_solver,
)
from geosolve.pipeline import load_solver, run_evaluate, run_pretrain, run_train

TINY = RunConfig(diag_dim=8, diag_ff=16, diag_blocks=1, d_model=8, d_ff=16, align_blocks=1,
                 ctx_blocks=1, reasoner_units=1, batch_size=4, beam_size=3, max_program_len=12)


@pytest.fixture(scope="module")
def corpus():
    return [p for p, _ in synthetic_corpus(4, seed=0)]


@pytest.fixture(scope="module")
def diagram_ckpt(corpus, tmp_path_factory):
    path = tmp_path_factory.mktemp("pre") / "diagram.ckpt"
    run_pretrain(TINY, corpus, path, steps=3)
    return path


def _outcome(i, correct, no_result=False, steps=None, type_tag="Angle"):
    return {"id": f"p{i}", "type": type_tag, "correct": correct, "no_result": no_result,
            "steps": steps}


# metrics

def test_summary_seven_of_eight():
    rows = [_outcome(i, True, steps=2) for i in range(7)] + [_outcome(7, False, no_result=True)]
    r = summarize(rows)
    assert r.n_problems == 8 and r.accuracy == 87.5 and r.no_result == 12.5
    assert r.avg_steps == 2.0 and r.per_type["Angle"] == 87.5 and r.per_type["Other"] is None


def test_summary_all_fail():
    r = summarize([_outcome(i, False, no_result=True) for i in range(4)])
    assert r.accuracy == 0.0 and r.no_result == 100.0 and r.avg_steps is None


def test_avg_steps_counts_solved_only():
    rows = [_outcome(0, True, steps=1), _outcome(1, True, steps=4),
            _outcome(2, False, steps=None), _outcome(3, False, no_result=True)]
    r = summarize(rows)
    assert r.avg_steps == 2.5 and r.accuracy == 50.0 and r.no_result == 25.0


def test_per_type_breakdown():
    rows = [_outcome(0, True, steps=1, type_tag="Length"), _outcome(1, False, type_tag="Length"),
            _outcome(2, True, steps=1, type_tag="Other")]
    r = summarize(rows)
    assert r.per_type["Length"] == 50.0 and r.per_type["Other"] == 100.0


def test_evaluate_counts_invalid_beams_as_no_result(corpus):
    with nx.numeric_mode("train"):
        model = GeoSolver.for_corpus(TINY, corpus)
        model.beam = lambda p, B=None: [(["g_minus"], -1.0), (["g_half", "X_9"], -2.0)]
        r = evaluate(model, corpus)
    assert r.accuracy == 0.0 and r.no_result == 100.0


def test_evaluate_with_gold_beams_is_perfect(corpus):
    with nx.numeric_mode("train"):
        model = GeoSolver.for_corpus(TINY, corpus)
        model.beam = lambda p, B=None: [(list(p.gold_program), -0.1)]
        r = evaluate(model, corpus)
    assert r.accuracy == 100.0 and r.no_result == 0.0
    assert r.avg_steps == np.mean([len(parse_program(p.gold_program)) for p in corpus])


# model

def test_diagram_frozen_by_construction(corpus):
    with nx.numeric_mode("train"):
        model = GeoSolver.for_corpus(TINY, corpus)
        assert all(model.params.is_frozen(n) for n in model.params if n.startswith("diagram."))
        before = params_digest(model.params, "diagram.")
        train_solver(model, corpus, 2)
        assert params_digest(model.params, "diagram.") == before
        assert params_digest(model.params) != before


def test_params_digest_sensitivity():
    ps = nx.ParamSet(0)
    ps.add("a.w", (2, 2))
    d = params_digest(ps)
    assert params_digest(ps) == d
    ps["a.w"].data[0, 0] += 1e-12
    assert params_digest(ps) != d


def test_toy_problem_is_two_tokens():
    p = toy_problem()
    assert p.text_tokens == ["A", "B"] and p.diagram.shape == (8, 8)


def test_toy_gradcheck_passes():
    report = toy_gradcheck()
    assert report.passed, report.failures()
    assert any(n.startswith("diagram.") for n in report.errors)
    assert not report.skipped


def test_toy_gradcheck_frozen_diagram_reports_skips():
    report = toy_gradcheck(freeze_diagram=True)
    assert report.passed
    assert report.skipped and all(n.startswith("diagram.") for n in report.skipped)


# pipeline

def test_pretrain_checkpoint_and_curve(corpus, tmp_path):
    curve = tmp_path / "curve.csv"
    hist = run_pretrain(TINY, corpus, tmp_path / "d.ckpt", curve, steps=2)
    c = ck.load(tmp_path / "d.ckpt", TINY.diagram_fingerprint())
    assert c.meta["kind"] == "diagram" and c.meta["step"] == 2
    assert all(k.startswith(("diagram.", "adam.")) for k in c.arrays)
    rows = list(csv.DictReader(curve.open()))
    assert [int(r["step"]) for r in rows] == [0, 1] and len(hist) == 2
    for r in rows:
        assert float(r["L_aux"]) == pytest.approx(float(r["L_mim"]) + 0.1 * float(r["L_char"]),
                                                  rel=1e-6)


def test_pretrain_resume_continues(corpus, tmp_path):
    straight = tmp_path / "straight.ckpt"
    run_pretrain(TINY, corpus, straight, steps=4)
    half, resumed, curve = tmp_path / "half.ckpt", tmp_path / "resumed.ckpt", tmp_path / "c.csv"
    run_pretrain(TINY, corpus, half, curve, steps=2)
    run_pretrain(TINY, corpus, resumed, curve, resume=half, steps=2)
    assert [int(r["step"]) for r in csv.DictReader(curve.open())] == [0, 1, 2, 3]
    assert ck.load(resumed).meta["step"] == 4
    assert resumed.read_bytes() == straight.read_bytes()


def test_resume_refuses_other_architecture(corpus, diagram_ckpt, tmp_path):
    with pytest.raises(CheckpointError, match="fingerprint"):
        run_pretrain(TINY.replace(diag_dim=16), corpus, tmp_path / "x.ckpt", resume=diagram_ckpt,
                     steps=1)


def test_train_save_load_evaluate(corpus, diagram_ckpt, tmp_path):
    out = tmp_path / "solver.ckpt"
    model, result = run_train(TINY, corpus, diagram_ckpt, out, steps=3)
    assert result.steps == 3 and len(result.history) == 3
    pre = ck.load(diagram_ckpt)
    for name, arr in pre.prefixed("diagram.").items():
        assert model.params[name].data.astype(np.float32).tobytes() == arr.tobytes()
    loaded = load_solver(out)
    assert params_digest(loaded.params) == params_digest(model.params)
    a = run_evaluate(corpus, out).to_dict(details=True)
    b = run_evaluate(corpus, out).to_dict(details=True)
    assert a == b and a["n_problems"] == 4


def test_train_rejects_solver_checkpoint_as_diagram(corpus, diagram_ckpt, tmp_path):
    out = tmp_path / "solver.ckpt"
    run_train(TINY, corpus, diagram_ckpt, out, steps=1)
    with pytest.raises(CheckpointError):
        run_train(TINY, corpus, out, tmp_path / "again.ckpt", steps=1)


def test_load_solver_overrides(corpus, diagram_ckpt, tmp_path):
    out = tmp_path / "solver.ckpt"
    run_train(TINY, corpus, diagram_ckpt, out, steps=1)
    assert load_solver(out, {"beam_size": "5"}).cfg.beam_size == 5
    with pytest.raises(CheckpointError, match="fingerprint"):
        load_solver(out, {"residual": "false"})
    assert load_solver(out, {"residual": "false"}, allow_mismatch=True).cfg.residual is False
