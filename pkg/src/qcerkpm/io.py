"""CSV tables, legacy VTK field files and a plain-text discretization format."""
from __future__ import annotations

import csv
import io as _io

import numpy as np

from .discretize import BoundaryQuad, CellSet, EmbeddedDiscretization
from .errors import InvalidArgument
from .geometry import Domain, Inclusion
from .rk import NodeCloud

FORMAT_NAME = "qce-discretization"
FORMAT_VERSION = 1


def _num(x):
    return "%.17g" % x


def write_csv(path, header, rows):
    """Write a table with a fixed column order and 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def report_rows(report):
    """Rows of a refinement study followed by the fitted rates."""
    rows = list(report.rows())
    try:
        rates = report.rates()
    except InvalidArgument:
        rates = (float("nan"), float("nan"))
    return rows, rates


def write_report(path, report):
    rows, rates = report_rows(report)
    write_csv(path, ["level", "h", "nodes", "l2", "h1", "failed"], rows)
    return rates


def write_vtk(path, points, point_data, title="qce fields"):
    """Legacy ASCII VTK unstructured grid of vertex cells carrying point data.

    ``point_data`` maps names to arrays of shape ``(n,)`` (scalars) or
    ``(n, k)`` (written as k-component field arrays; 2-vectors are padded to
    3D vectors).
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    n, dim = p.shape
    p3 = np.zeros((n, 3))
    p3[:, :dim] = p
    out = _io.StringIO()
    out.write("# vtk DataFile Version 3.0\n%s\nASCII\nDATASET UNSTRUCTURED_GRID\n" % title)
    out.write("POINTS %d double\n" % n)
    np.savetxt(out, p3, fmt="%.17g")
    out.write("CELLS %d %d\n" % (n, 2 * n))
    np.savetxt(out, np.column_stack([np.ones(n, int), np.arange(n)]), fmt="%d")
    out.write("CELL_TYPES %d\n" % n)
    np.savetxt(out, np.ones(n, int), fmt="%d")
    out.write("POINT_DATA %d\n" % n)
    fields = []
    for name, val in point_data.items():
        v = np.asarray(val, dtype=float)
        if v.ndim == 1:
            out.write("SCALARS %s double 1\nLOOKUP_TABLE default\n" % name)
            np.savetxt(out, v, fmt="%.17g")
        elif v.shape[1] in (2, 3) and name.startswith("displacement"):
            v3 = np.zeros((n, 3))
            v3[:, :v.shape[1]] = v
            out.write("VECTORS %s double\n" % name)
            np.savetxt(out, v3, fmt="%.17g")
        else:
            fields.append((name, v))
    if fields:
        out.write("FIELD extra %d\n" % len(fields))
        for name, v in fields:
            out.write("%s %d %d double\n" % (name, v.shape[1], n))
            np.savetxt(out, v, fmt="%.17g")
    with open(path, "w") as fh:
        fh.write(out.getvalue())


# -- discretization text format -------------------------------------------------------

def _block(out, name, arr, fmt):
    arr = np.asarray(arr)
    if arr.ndim == 1:
        arr = arr[:, None]
    out.write("%s %d %d\n" % (name, arr.shape[0], arr.shape[1]))
    if arr.size:
        np.savetxt(out, arr, fmt=fmt)


def dumps_discretization(d):
    """Serialize a discretization to text (nodes, memberships, cells, contours)."""
    out = _io.StringIO()
    dom = d.domain
    out.write("%s %d\n" % (FORMAT_NAME, FORMAT_VERSION))
    out.write("dim %d\n" % d.dim)
    out.write("box %s %s\n" % (" ".join(map(_num, dom.lo)), " ".join(map(_num, dom.hi))))
    out.write("h_background %s\n" % _num(d.h_background))
    out.write("kernel_c %s\n" % _num(d.cloud.c))
    out.write("missing_volume %s\n" % _num(d.missing_volume))
    out.write("flags shared=%d recovery=%d\n" % (int(d.shared), int(d.recovery)))
    out.write("inclusions %d\n" % len(dom.inclusions))
    for i, inc in enumerate(dom.inclusions):
        out.write("inclusion %d %s %s %s\n" % (i, " ".join(map(_num, np.atleast_1d(inc.center))),
                                                _num(inc.radius), _num(d.h_foreground[i])))
        _block(out, "vertices", inc.vertices, "%.17g")
    c = d.cloud
    _block(out, "nodes", np.column_stack([c.x, c.h]), "%.17g")
    _block(out, "membership", np.column_stack([c.member, c.interface]).astype(int), "%d")
    cells = d.cells
    _block(out, "cells", np.column_stack([cells.owner, cells.subdomain, cells.origin, cells.level]), "%d")
    _block(out, "cell_geometry", np.column_stack([cells.volume, cells.moments]), "%.17g")
    out.write("polygons %d\n" % cells.n)
    for poly in cells.polygons:
        flat = np.asarray(poly, dtype=float).ravel()
        out.write("%d %s\n" % (len(np.atleast_2d(poly)), " ".join(map(_num, flat))))
    _block(out, "cell_quadrature", np.column_stack([cells.bq_cell, cells.bq_points, cells.bq_normals,
                                                    cells.bq_weights]), "%.17g")
    for name, q in (("interface_quadrature", d.interface_quad), ("outer_quadrature", d.outer_quad)):
        _block(out, name, np.column_stack([q.tag, q.points, q.normals, q.weights]), "%.17g")
    out.write("end\n")
    return out.getvalue()


def write_discretization(path, d):
    with open(path, "w") as fh:
        fh.write(dumps_discretization(d))


class _Reader:
    def __init__(self, text):
        self.lines = text.splitlines()
        self.k = 0

    def line(self, key=None):
        parts = self.lines[self.k].split()
        self.k += 1
        if key is not None and (not parts or parts[0] != key):
            raise InvalidArgument(f"expected {key!r} at line {self.k}")
        return parts

    def block(self, key):
        _, n, m = self.line(key)
        n, m = int(n), int(m)
        rows = self.lines[self.k:self.k + n]
        self.k += n
        if n == 0:
            return np.zeros((0, m))
        return np.loadtxt(rows, ndmin=2).reshape(n, m)


def loads_discretization(text):
    """Inverse of :func:`dumps_discretization` (fields needed by the solver)."""
    r = _Reader(text)
    head = r.line(FORMAT_NAME)
    if int(head[1]) != FORMAT_VERSION:
        raise InvalidArgument(f"unsupported format version {head[1]}")
    dim = int(r.line("dim")[1])
    box = np.array(r.line("box")[1:], dtype=float)
    hb = float(r.line("h_background")[1])
    kc = float(r.line("kernel_c")[1])
    missing = float(r.line("missing_volume")[1])
    flags = dict(f.split("=") for f in r.line("flags")[1:])
    n_inc = int(r.line("inclusions")[1])
    incs, hf = [], []
    for _ in range(n_inc):
        parts = r.line("inclusion")
        centre = np.array(parts[2:2 + dim], dtype=float)
        radius = float(parts[2 + dim])
        hf.append(float(parts[3 + dim]))
        verts = r.block("vertices")
        incs.append(Inclusion(centre, radius, verts))
    domain = Domain(box[:dim], box[dim:], incs)
    nodes = r.block("nodes")
    mem = r.block("membership").astype(bool)
    cloud = NodeCloud(nodes[:, :dim], nodes[:, dim], mem[:, :-1], mem[:, -1], c=kc)
    ci = r.block("cells").astype(int)
    geo = r.block("cell_geometry")
    n_poly = int(r.line("polygons")[1])
    polys = []
    for _ in range(n_poly):
        parts = r.lines[r.k].split()
        r.k += 1
        polys.append(np.array(parts[1:], dtype=float).reshape(int(parts[0]), dim))
    cq = r.block("cell_quadrature")
    cells = CellSet(ci[:, 0], ci[:, 1], ci[:, 2], ci[:, 3], geo[:, 0], geo[:, 1:], polys,
                    cq[:, 1:1 + dim], cq[:, 1 + dim:1 + 2 * dim], cq[:, 1 + 2 * dim],
                    cq[:, 0].astype(int))

    def quad(key):
        q = r.block(key)
        return BoundaryQuad(q[:, 1:1 + dim], q[:, 1 + dim:1 + 2 * dim], q[:, 1 + 2 * dim], q[:, 0].astype(int))

    iq = quad("interface_quadrature")
    oq = quad("outer_quadrature")
    r.line("end")
    iface = tuple(np.flatnonzero(cloud.interface & cloud.member[:, 1 + i]) for i in range(n_inc))
    return EmbeddedDiscretization(domain, cloud, cells, hb, tuple(hf), (), iface, iq, oq,
                                  missing_volume=missing, shared=bool(int(flags["shared"])),
                                  recovery=bool(int(flags["recovery"])))


def read_discretization(path):
    with open(path) as fh:
        return loads_discretization(fh.read())
