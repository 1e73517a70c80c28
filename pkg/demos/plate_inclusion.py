"""Stiff circular inclusion in a plate under remote tension.

Solves one level, compares against the exact solution and writes a VTK
file with the fields.  Pass ``--study`` for the four-level refinement
study with and without recovery cells (a few minutes).
"""
import argparse

import numpy as np

from qcerkpm.assembly import run
from qcerkpm.benchmarks import build_plate, error_norms, plate_convergence, principal_stress
from qcerkpm.io import write_vtk

ap = argparse.ArgumentParser()
ap.add_argument("--h", type=float, default=0.1)
ap.add_argument("--study", action="store_true")
ap.add_argument("--vtk", default="plate.vtk")
args = ap.parse_args()

problem, d, ref = build_plate(h_background=args.h)
res = run(problem, d)
fields = lambda p, tag=None: res.fields.evaluate(p, tag)
l2, h1 = error_norms(fields, ref.as_field(), d.domain, args.h)
print(f"h={args.h}: {d.cloud.n} nodes, {d.cells.n} cells, quadtree levels {d.n_levels}")
print(f"L2 error {l2:.3e}, H1 error {h1:.3e}, backward error {res.solution.residual:.1e}")

# normal stress along the horizontal centre line, off the interface
x = np.linspace(-1.9, 1.9, 9)[:, None] * [1.0, 0.0]
_, _, s = res.fields.evaluate(x)
for xi, si, se in zip(x[:, 0], s[:, 1], ref.stress(x)[:, 1]):
    print(f"  x={xi:+.2f}  syy={si:9.3f}  exact={se:9.3f}")

u, e, s = res.fields.evaluate(d.cloud.x)
write_vtk(args.vtk, d.cloud.x, {"displacement": u, "strain": e, "stress": s,
                                "max_principal_stress": principal_stress(s)})
print("fields written to", args.vtk)

if args.study:
    spacings = (0.2, 0.1, 0.05, 0.025)
    for rec in (True, False):
        rep = plate_convergence(spacings=spacings, recovery=rec)
        r2, r1 = rep.rates()
        print(f"recovery={rec}: L2 {['%.2e' % v for v in rep.l2]}  rates L2 {r2:.2f}, H1 {r1:.2f}")
