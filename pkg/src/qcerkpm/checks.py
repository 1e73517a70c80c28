"""Built-in patch tests and consistency checks with pass/fail thresholds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import run
from .benchmarks import Bar1DSpec, build_affine_patch, build_bar_1d, error_norms, exact_bar_solution
from .integration import all_tables


@dataclass
class Check:
    name: str
    value: float
    threshold: float

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.value <= self.threshold)

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e} (limit {self.threshold:.1e})"


def _fields(res):
    return lambda p, tag=None: res.fields.evaluate(p, tag)


def bar_patch(recovery=True, alpha=1.0):
    """L2 error of the bimaterial bar under end displacement."""
    spec = Bar1DSpec()
    problem, d = build_bar_1d(spec, recovery=recovery, alpha=alpha)
    res = run(problem, d)
    l2, _ = error_norms(_fields(res), exact_bar_solution(spec), d.domain, 0.025, order=10)
    return res, l2


def alpha_spread():
    """Largest pairwise nodal difference over interface blends 0, 0.5 and 1."""
    sols = [bar_patch(alpha=a)[0].solution.d for a in (0.0, 0.5, 1.0)]
    return max(np.abs(a - b).max() for k, a in enumerate(sols) for b in sols[k + 1:])


def affine_patch():
    """Relative L2 error of the equal-material affine patch test."""
    problem, d, exact = build_affine_patch()
    res = run(problem, d)
    l2, _ = error_norms(_fields(res), exact, d.domain, d.h_background)
    area = np.prod(d.domain.size)
    scale = np.sqrt(area) * np.abs(exact.u(d.cloud.x)).max()
    return l2 / scale


def constraint_residual(d):
    """Largest corrected integration-constraint residual relative to the subdomain perimeter."""
    worst = 0.0
    for tag, tb in all_tables(d).items():
        r = np.abs(tb.constraint_residual(True)).max()
        worst = max(worst, r / d.boundary_length(tag))
    return worst


def volume_error(d):
    total = d.cells.volume.sum()
    box = d.domain.box_measure
    return abs(total - box) / box


def patch_suite():
    """Fast checks run by ``qce patch-test``."""
    out = []
    for rec in (True, False):
        res, l2 = bar_patch(recovery=rec)
        label = "with" if rec else "without"
        out.append(Check(f"bar patch test {label} recovery cells, L2 error", l2, 1e-10))
        d = res.discretization
        out.append(Check(f"bar constraint residual {label} recovery cells", constraint_residual(d), 1e-12))
    out.append(Check("bar recovery-cell volume error", volume_error(bar_patch(True)[0].discretization), 1e-10))
    out.append(Check("interface blend spread", alpha_spread(), 1e-9))
    out.append(Check("2D affine patch test, relative L2 error", affine_patch(), 1e-9))
    problem, d, _ = build_affine_patch()
    out.append(Check("2D constraint residual", constraint_residual(d), 1e-12))
    out.append(Check("2D recovery-cell volume error", volume_error(d), 1e-10))
    return out

