"""Composite bar: patch test, blend insensitivity and a refinement study.

Run with ``python demos/bar_patch_and_convergence.py``.
"""
import warnings

import numpy as np

from qcerkpm.assembly import run
from qcerkpm.benchmarks import Bar1DSpec, bar_convergence, build_bar_1d, error_norms, exact_bar_solution

warnings.simplefilter("ignore", RuntimeWarning)


def patch(recovery, alpha=1.0):
    spec = Bar1DSpec()
    problem, d = build_bar_1d(spec, recovery=recovery, alpha=alpha)
    res = run(problem, d)
    fields = lambda p, tag=None: res.fields.evaluate(p, tag)
    l2, h1 = error_norms(fields, exact_bar_solution(spec), d.domain, 0.025, order=10)
    return res, l2, h1


for rec in (True, False):
    res, l2, h1 = patch(rec)
    d = res.discretization
    print(f"recovery={rec!s:5}  nodes={d.cloud.n:3d}  cells={d.cells.n:3d}  "
          f"L2={l2:.2e}  H1={h1:.2e}  residual={res.solution.residual:.1e}")

sols = [patch(True, a)[0].solution.d for a in (0.0, 0.5, 1.0)]
print("largest nodal change over alpha in {0, 0.5, 1}:",
      f"{max(np.abs(a - b).max() for a in sols for b in sols):.2e}")

print("\nsinusoidal load, five uniform levels")
for rec in (True, False):
    rep = bar_convergence(Bar1DSpec(load="sine"), levels=5, recovery=rec)
    for k, h, n, l2, h1, _ in rep.rows():
        print(f"  level {k}  h={h:.4f}  nodes={n:4d}  L2={l2:.3e}  H1={h1:.3e}")
    r2, r1 = rep.rates()
    print(f"  recovery={rec}: L2 rate {r2:.2f}, H1 rate {r1:.2f}")
