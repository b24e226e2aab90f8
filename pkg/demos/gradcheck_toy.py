"""Finite-difference check of the whole model on the two-token toy problem."""

from geosolve.model import toy_gradcheck

report = toy_gradcheck()
worst = sorted(report.errors.items(), key=lambda kv: -kv[1])[:5]
print(f"passed {report.passed}, max relative error {report.max_error:.2e} over {len(report.errors)} tensors")
for name, err in worst:
    print(f"  {err:.2e}  {name}")
