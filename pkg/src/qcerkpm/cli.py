"""Command-line front end: ``qce run|converge|patch-test|export-discretization``.

Exit codes: 0 success, 1 invalid usage or configuration, 2 an acceptance
threshold was missed, 3 a geometry or coverage error stopped the run.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import io
from .assembly import run as run_pipeline
from .benchmarks import (AffinePatchSpec, Bar1DSpec, MicrostructureSpec, PlateInclusionSpec,
                         bar_convergence, build_affine_patch, build_bar_1d, build_microstructure,
                         build_plate, error_norms, exact_bar_solution, plate_convergence,
                         principal_stress)
from .checks import patch_suite
from .discretize import SubdivisionParams
from .errors import (CoverageError, GeometryError, GridMismatch, InvalidArgument, IsolatedNode, QCEError,
                     UnderResolvedInclusion)

log = logging.getLogger("qcerkpm")

EXIT_OK, EXIT_USAGE, EXIT_THRESHOLD, EXIT_GEOMETRY = 0, 1, 2, 3
FAMILIES = ("bar", "plate", "microstructure", "affine")

DEFAULTS = {
    "problem": {"family": "plate"},
    "discretization": {"h_background": 0.1, "h_foreground": None, "k": 0.5, "band": 1.5,
                       "balance": True, "recovery": True},
    "interface": {"alpha": 1.0, "beta": None, "beta_factor": 100.0},
    "study": {"levels": 4, "spacings": None, "min_l2_rate": None, "min_h1_rate": None},
    "output": {"directory": "qce-out"},
    "solver": {"backend": "auto"},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_config(path):
    """Read a TOML config and fill in defaults section by section."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    cfg = {k: dict(v) for k, v in DEFAULTS.items()}
    for section, values in raw.items():
        if not isinstance(values, dict):
            raise InvalidArgument(f"top-level key {section!r} must be a table")
        cfg.setdefault(section, {}).update(values)
    fam = cfg["problem"]["family"]
    if fam not in FAMILIES:
        raise InvalidArgument(f"unknown problem family {fam!r}; expected one of {FAMILIES}")
    return cfg


def _spec(cfg, cls, section):
    vals = {k: tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v
            for k, v in cfg.get(section, {}).items()}
    try:
        return cls(**vals)
    except TypeError as exc:
        raise InvalidArgument(f"[{section}]: {exc}") from exc


def _params(cfg):
    dc = cfg["discretization"]
    return SubdivisionParams(k=dc["k"], band=dc["band"], balance=dc["balance"])


def build(cfg, h_background=None, level=0):
    """Problem, discretization and exact field (or ``None``) for a config."""
    fam = cfg["problem"]["family"]
    dc = cfg["discretization"]
    itf = cfg["interface"]
    hb = dc["h_background"] if h_background is None else h_background
    hf = dc["h_foreground"]
    if fam == "bar":
        spec = _spec(cfg, Bar1DSpec, "bar")
        problem, d = build_bar_1d(spec, hb, hf, recovery=dc["recovery"], alpha=itf["alpha"],
                                  beta=itf["beta"], params=_params(cfg))
        exact = exact_bar_solution(spec)
    elif fam == "plate":
        spec = _spec(cfg, PlateInclusionSpec, "plate")
        problem, d, ref = build_plate(spec, hb, hf, recovery=dc["recovery"], alpha=itf["alpha"],
                                      beta=itf["beta"], params=_params(cfg))
        exact = ref.as_field()
    elif fam == "affine":
        spec = _spec(cfg, AffinePatchSpec, "affine")
        problem, d, exact = build_affine_patch(spec, hb, hf, recovery=dc["recovery"], alpha=itf["alpha"],
                                               params=_params(cfg))
    else:
        spec = _spec(cfg, MicrostructureSpec, "microstructure")
        problem, d = build_microstructure(spec, level, recovery=dc["recovery"], params=_params(cfg))
        problem.alpha = itf["alpha"]
        problem.beta = itf["beta"]
        exact = None
    problem.beta_factor = itf["beta_factor"]
    return problem, d, exact


def _outdir(cfg, override):
    path = override or cfg["output"]["directory"]
    os.makedirs(path, exist_ok=True)
    return path


def _nodal_table(res):
    d = res.discretization
    u, e, s = res.fields.evaluate(d.cloud.x)
    return d.cloud.x, u, e, s


def cmd_run(args):
    cfg = load_config(args.config)
    out = _outdir(cfg, args.output)
    problem, d, exact = build(cfg)
    res = run_pipeline(problem, d, backend=cfg["solver"]["backend"])
    x, u, e, s = _nodal_table(res)
    dim = d.dim
    axes = "xy"[:dim]
    comps = ["xx"] if dim == 1 else ["xx", "yy", "xy"]
    header = ([f"{a}" for a in axes] + [f"u{a}" for a in axes] + [f"strain_{c}" for c in comps]
              + [f"stress_{c}" for c in comps])
    io.write_csv(os.path.join(out, "nodes.csv"), header, np.column_stack([x, u, e, s]).tolist())
    data = {"displacement": u, "strain": e, "stress": s}
    if dim == 2:
        data["max_principal_stress"] = principal_stress(s)
    io.write_vtk(os.path.join(out, "fields.vtk"), x, data)
    summary = [("nodes", d.cloud.n), ("cells", d.cells.n), ("residual", res.solution.residual),
               ("condition", res.solution.condition)]
    if exact is not None:
        spacing = 0.25 * d.h_background if dim == 1 else d.h_background
        l2, h1 = error_norms(lambda p, tag=None: res.fields.evaluate(p, tag), exact, d.domain, spacing,
                             order=10 if dim == 1 else 6)
        summary += [("l2_error", l2), ("h1_error", h1)]
    io.write_csv(os.path.join(out, "summary.csv"), ["quantity", "value"],
                 [(k, float(v)) for k, v in summary])
    for k, v in summary:
        print(f"{k:>10s}  {v:.6g}" if isinstance(v, float) else f"{k:>10s}  {v}")
    return EXIT_OK


def cmd_converge(args):
    cfg = load_config(args.config)
    out = _outdir(cfg, args.output)
    fam = cfg["problem"]["family"]
    st = cfg["study"]
    rec = cfg["discretization"]["recovery"]
    levels = int(st["levels"])
    if levels < 3:
        raise InvalidArgument("a convergence study needs at least three levels")
    if fam == "bar":
        rep = bar_convergence(_spec(cfg, Bar1DSpec, "bar"), levels, recovery=rec)
    elif fam == "plate":
        spacings = st["spacings"] or [cfg["discretization"]["h_background"] / 2 ** k for k in range(levels)]
        rep = plate_convergence(_spec(cfg, PlateInclusionSpec, "plate"), tuple(spacings), recovery=rec)
    else:
        raise InvalidArgument("convergence studies need an exact solution (family 'bar' or 'plate')")
    l2r, h1r = io.write_report(os.path.join(out, "convergence.csv"), rep)
    for row in rep.rows():
        print("level %d  h=%.5g  nodes=%d  L2=%.6e  H1=%.6e%s" % (row[0], row[1], row[2], row[3], row[4],
                                                                 "  FAILED" if row[5] else ""))
    print(f"rates: L2 {l2r:.3f}  H1 {h1r:.3f}")
    ok = not rep.failed
    if st["min_l2_rate"] is not None:
        ok &= bool(l2r >= st["min_l2_rate"])
    if st["min_h1_rate"] is not None:
        ok &= bool(h1r >= st["min_h1_rate"])
    return EXIT_OK if ok else EXIT_THRESHOLD


def cmd_patch_test(args):
    checks = patch_suite()
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_THRESHOLD


def cmd_export(args):
    cfg = load_config(args.config)
    out = _outdir(cfg, args.output)
    _, d, _ = build(cfg)
    io.write_discretization(os.path.join(out, "discretization.txt"), d)
    c = d.cloud
    io.write_vtk(os.path.join(out, "nodes.vtk"), c.x,
                 {"spacing": c.h, "interface": c.interface.astype(float),
                  "matrix": c.member[:, 0].astype(float)}, title="qce nodes")
    print(f"{c.n} nodes, {d.cells.n} cells written to {out}")
    return EXIT_OK


def make_parser():
    p = _Parser(prog="qce", description="Embedded reproducing kernel solver for heterogeneous elasticity.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (("run", cmd_run, "single solve with field output"),
                               ("converge", cmd_converge, "refinement study with rates"),
                               ("export-discretization", cmd_export, "write the discretization")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config", help="TOML configuration file")
        s.add_argument("-o", "--output", help="output directory (overrides the config)")
        s.set_defaults(func=fn)
    s = sub.add_parser("patch-test", help="built-in patch tests and consistency checks")
    s.set_defaults(func=cmd_patch_test)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (GeometryError, GridMismatch, UnderResolvedInclusion, CoverageError, IsolatedNode) as exc:
        print(f"qce: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except (InvalidArgument, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"qce: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QCEError as exc:
        print(f"qce: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
