"""Pretrain a small diagram encoder, train the solver on 16 problems, evaluate, solve one."""

import sys
import time
from pathlib import Path

from geosolve import numerics as nx
from geosolve.config import RunConfig
from geosolve.corpus import synthetic_corpus
from geosolve.pipeline import load_solver, run_evaluate, run_pretrain, run_train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "train_demo")
out.mkdir(parents=True, exist_ok=True)
cfg = RunConfig(d_model=32, d_ff=64, diag_dim=32, diag_ff=64, diag_blocks=1, batch_size=16)
problems = [p for p, _ in synthetic_corpus(16, seed=7)]

t = time.time()
history = run_pretrain(cfg, problems, out / "diagram.ckpt", out / "curve.csv", steps=100)
print(f"pretrain: L_aux {history[0][3]:.3f} -> {history[-1][3]:.3f} ({time.time() - t:.0f}s)")

t = time.time()
model, result = run_train(cfg, problems, out / "diagram.ckpt", out / "solver.ckpt", steps=2000,
                          stop_at_exact=0.95,
                          log=lambda s, v: print(f"  step {s} loss {v:.4f}") if s % 50 == 0 else None)
print(f"train: exact match {result.exact_match:.2f} after {result.steps} steps ({time.time() - t:.0f}s)")

report = run_evaluate(problems, out / "solver.ckpt")
print(f"evaluate: accuracy {report.accuracy:.1f}%  no_result {report.no_result:.1f}%  "
      f"avg steps {report.avg_steps}")

solver = load_solver(out / "solver.ckpt")
p = problems[0]
with nx.numeric_mode(solver.cfg.mode):
    beams, verdict = solver.solve(p)
print(p.text)
for tokens, score in beams[:3]:
    print(f"  {score:8.3f}  {' '.join(tokens)}")
print("answer:", p.choices[verdict.index] if verdict.index is not None else "no result")
