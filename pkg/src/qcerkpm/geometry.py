"""Geometric primitives: domains with convex polyline inclusions, polygon
moments, boundary quadrature, straddle classification and line-of-sight.

All 1D/2D logic shares one representation: an inclusion is a convex region
``{x : n_k . x <= d_k}`` bounded by its interface.  In 2D the interface is a
closed counter-clockwise polyline through the foreground interface nodes; in
1D it is the two end points of an interval with normals -1 and +1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import DegenerateCell, GeometryError, InvalidLayout, OutsideDomain

MATRIX = -1
INTERFACE = -2

FULLY_MATRIX = "matrix"
FULLY_INCLUSION = "inclusion"
STRADDLES = "straddles"

_CHUNK = 400_000  # pair x edge entries processed per vectorised block


@lru_cache(maxsize=None)
def _gauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_legendre(n):
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = _gauss(n)
    return x.copy(), w.copy()


@dataclass(frozen=True, eq=False)
class Inclusion:
    """A convex inclusion bounded by a polyline (2D) or an interval (1D).

    ``vertices`` is an ``(n, 2)`` counter-clockwise loop in 2D and the
    ``(2, 1)`` end points ``[[lo], [hi]]`` in 1D.  ``center``/``radius``
    describe the generating circle (or the interval midpoint/half-length).
    """

    center: np.ndarray
    radius: float
    vertices: np.ndarray
    normals: np.ndarray = field(init=False, repr=False)
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        v = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "vertices", v)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(c))):
            raise GeometryError("inclusion geometry must be finite")
        if c.size == 1:
            lo, hi = float(v[0, 0]), float(v[1, 0])
            if not hi > lo:
                raise DegenerateCell("inclusion interval has non-positive length")
            normals = np.array([[-1.0], [1.0]])
            offsets = np.array([-lo, hi])
        else:
            if len(v) < 3:
                raise DegenerateCell("interface polyline needs at least 3 vertices")
            e = np.roll(v, -1, axis=0) - v
            length = np.hypot(e[:, 0], e[:, 1])
            if np.any(length <= 0):
                raise DegenerateCell("interface polyline has repeated vertices")
            normals = np.column_stack([e[:, 1], -e[:, 0]]) / length[:, None]
            offsets = np.einsum("ij,ij->i", normals, v)
            cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
            if np.any(cross < -1e-12 * length.max() ** 2):
                raise GeometryError("interface polyline must be convex and counter-clockwise")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def circle(cls, center, radius, spacing=None, n=None):
        """Polyline inscribed in a circle, first vertex at angle 0."""
        if n is None:
            n = int(round(2.0 * np.pi * radius / spacing))
        n = max(int(n), 3)
        theta = 2.0 * np.pi * np.arange(n) / n
        c = np.asarray(center, dtype=float)
        v = c + radius * np.column_stack([np.cos(theta), np.sin(theta)])
        return cls(c, float(radius), v)

    @classmethod
    def interval(cls, lo, hi):
        return cls(np.array([0.5 * (lo + hi)]), 0.5 * (hi - lo), np.array([[lo], [hi]], dtype=float))

    @property
    def dim(self):
        return self.center.size

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def edges(self):
        """Edge end points ``(n, 2, 2)`` of the 2D polyline."""
        return np.stack([self.vertices, np.roll(self.vertices, -1, axis=0)], axis=1)

    @property
    def area(self):
        if self.dim == 1:
            return float(self.vertices[1, 0] - self.vertices[0, 0])
        return polygon_properties(self.vertices).area

    @property
    def perimeter(self):
        if self.dim == 1:
            return 2.0
        e = np.roll(self.vertices, -1, axis=0) - self.vertices
        return float(np.hypot(e[:, 0], e[:, 1]).sum())

    @property
    def spacing(self):
        """Averaged nodal spacing of the interface nodes."""
        if self.dim == 1:
            return float("nan")
        return self.perimeter / self.n_vertices

    def signed_excess(self, points):
        """``max_k (n_k . x - d_k)``: negative strictly inside, positive outside.

        Points clearly beyond the generating circle only get a lower bound
        (their distance past the circle), which preserves the sign and any
        comparison against tolerances far below the radius.
        """
        p = np.atleast_2d(points)
        out = np.linalg.norm(p - self.center, axis=1) - self.radius
        near = np.flatnonzero(out <= 1e-6 * self.radius if self.dim == 2 else np.ones(len(p), dtype=bool))
        step = max(1, _CHUNK // len(self.offsets))
        for s in range(0, len(near), step):
            q = near[s:s + step]
            out[q] = (p[q] @ self.normals.T - self.offsets).max(axis=1)
        return out

    def contains(self, points, tol=0.0, strict=False):
        s = self.signed_excess(points)
        return s < -tol if strict else s <= tol

    def distance(self, points):
        """Unsigned distance from points to the interface."""
        return np.linalg.norm(np.atleast_2d(points) - self.project(points), axis=1)

    def project(self, points):
        """Closest point on the interface for every point."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.dim == 1:
            v = self.vertices[:, 0]
            pick = np.abs(p[:, 0] - v[0]) <= np.abs(p[:, 0] - v[1])
            return np.where(pick, v[0], v[1])[:, None]
        a = self.vertices
        e = np.roll(a, -1, axis=0) - a
        ee = np.einsum("ij,ij->i", e, e)
        out = np.empty_like(p)
        step = max(1, _CHUNK // len(a))
        for s in range(0, len(p), step):
            q = p[s:s + step, None, :] - a[None]
            t = np.clip(np.einsum("mkj,kj->mk", q, e) / ee, 0.0, 1.0)
            foot = a[None] + t[..., None] * e[None]
            d2 = ((p[s:s + step, None, :] - foot) ** 2).sum(axis=2)
            k = d2.argmin(axis=1)
            out[s:s + step] = foot[np.arange(len(k)), k]
        return out


@dataclass(frozen=True, eq=False)
class Domain:
    """Axis-aligned matrix box with embedded, pairwise disjoint inclusions."""

    lo: np.ndarray
    hi: np.ndarray
    inclusions: tuple = ()

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        if lo.shape != hi.shape or lo.size not in (1, 2) or np.any(hi <= lo):
            raise GeometryError("matrix region must be a non-empty interval or rectangle")
        tol = self.tol
        for inc in self.inclusions:
            if inc.dim != self.dim:
                raise GeometryError("inclusion dimension does not match the domain")
            if np.any(inc.vertices < lo + tol) or np.any(inc.vertices > hi - tol):
                raise InvalidLayout("inclusions must lie strictly inside the matrix region")
        for i, a in enumerate(self.inclusions):
            for b in self.inclusions[i + 1:]:
                if _convex_overlap(a, b, tol):
                    raise InvalidLayout("inclusions must be pairwise disjoint")

    @property
    def dim(self):
        return self.lo.size

    @property
    def size(self):
        return self.hi - self.lo

    @property
    def diameter(self):
        return float(np.linalg.norm(self.size))

    @property
    def tol(self):
        return 1e-9 * self.diameter

    @property
    def box_measure(self):
        return float(np.prod(self.size))

    @property
    def matrix_measure(self):
        """Matrix area (length in 1D) bounded by the interface polylines."""
        return self.box_measure - sum(inc.area for inc in self.inclusions)

    def inside_box(self, points, tol=None):
        tol = self.tol if tol is None else tol
        p = np.atleast_2d(points)
        return np.all((p >= self.lo - tol) & (p <= self.hi + tol), axis=1)

    def interface_distance(self, points):
        """Distance from each point to the nearest interface (inf without inclusions)."""
        p = np.atleast_2d(points)
        d = np.full(len(p), np.inf)
        for inc in self.inclusions:
            d = np.minimum(d, inc.distance(p))
        return d


def _convex_overlap(a, b, tol):
    for axis_set in (a.normals, b.normals):
        pa = a.vertices @ axis_set.T
        pb = b.vertices @ axis_set.T
        gap = np.minimum(pa.max(0), pb.max(0)) - np.maximum(pa.min(0), pb.min(0))
        if np.any(gap <= tol):
            return False
    return True


def classify_points(domain, points, tol=None):
    """Vectorised region tags: ``INTERFACE``, inclusion index, or ``MATRIX``."""
    tol = domain.tol if tol is None else tol
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(np.isfinite(p)):
        raise GeometryError("points must be finite")
    out = np.full(len(p), MATRIX, dtype=int)
    for i, inc in enumerate(domain.inclusions):
        out[inc.contains(p, tol=tol, strict=True)] = i
        out[inc.distance(p) <= tol] = INTERFACE
    bad = ~domain.inside_box(p, tol)
    if np.any(bad):
        raise OutsideDomain(f"point {p[np.argmax(bad)]} lies outside the matrix region")
    return out


def classify_point(domain, p, tol=None):
    """Region tag of a single point."""
    return int(classify_points(domain, np.atleast_1d(np.asarray(p, dtype=float))[None, :], tol)[0])


class PolygonProps(NamedTuple):
    area: float
    centroid: np.ndarray
    mx: float
    my: float


def polygon_properties(vertices, ref=None):
    """Area, centroid and second moments ``int (x-x_ref)^2`` / ``int (y-y_ref)^2``.

    Exact polynomial integration over the polygon by Green's theorem.
    """
    v = np.asarray(vertices, dtype=float)
    ref = np.zeros(2) if ref is None else np.asarray(ref, dtype=float)
    if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
        raise DegenerateCell("a polygon cell needs at least three 2D vertices")
    x, y = (v - ref).T
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    c = x * yn - xn * y
    area = 0.5 * c.sum()
    if not area > 0:
        raise DegenerateCell(f"polygon area {area} is not positive")
    cx = ((x + xn) * c).sum() / (6.0 * area)
    cy = ((y + yn) * c).sum() / (6.0 * area)
    mx = (c * (x * x + x * xn + xn * xn)).sum() / 12.0
    my = (c * (y * y + y * yn + yn * yn)).sum() / 12.0
    return PolygonProps(float(area), np.array([cx, cy]) + ref, float(mx), float(my))


def interval_properties(lo, hi, ref):
    """Length and second moment of ``[lo, hi]`` about ``ref``."""
    if not hi > lo:
        raise DegenerateCell("interval length must be positive")
    return hi - lo, ((hi - ref) ** 3 - (lo - ref) ** 3) / 3.0


def boundary_quadrature(vertices, order=2):
    """Gauss points, outward normals and weights on a CCW polygon boundary."""
    v = np.asarray(vertices, dtype=float)
    e = np.roll(v, -1, axis=0) - v
    length = np.hypot(e[:, 0], e[:, 1])
    keep = length > 0
    v, e, length = v[keep], e[keep], length[keep]
    t, w = gauss_legendre(order)
    pts = v[:, None, :] + t[None, :, None] * e[:, None, :]
    nrm = np.column_stack([e[:, 1], -e[:, 0]]) / length[:, None]
    return (pts.reshape(-1, 2),
            np.repeat(nrm, order, axis=0),
            (length[:, None] * w[None, :]).ravel())


def clip_halfplane(poly, n, d, tol=0.0):
    """Sutherland-Hodgman clip of a convex polygon by ``n . x <= d``."""
    if len(poly) == 0:
        return poly
    s = poly @ n - d
    inside = s <= tol
    if inside.all():
        return poly
    if not inside.any():
        return poly[:0]
    out = []
    m = len(poly)
    for k in range(m):
        j = (k + 1) % m
        if inside[k]:
            out.append(poly[k])
        if inside[k] != inside[j]:
            t = s[k] / (s[k] - s[j])
            out.append(poly[k] + t * (poly[j] - poly[k]))
    return np.array(out) if out else poly[:0]


def dedupe_polygon(poly, tol):
    """Drop consecutive vertices closer than ``tol``."""
    if len(poly) < 2:
        return poly
    keep = np.linalg.norm(poly - np.roll(poly, 1, axis=0), axis=1) > tol
    if not keep.any():
        return poly[:1]
    return poly[keep]


def _clip_interval(inc, P, Q):
    """Cyrus-Beck parameters of the part of segment PQ inside ``inc``."""
    dp = P @ inc.normals.T - inc.offsets
    dq = Q @ inc.normals.T - inc.offsets
    den = dq - dp
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -dp / den
    enter = np.where(den < 0, t, -np.inf).max(axis=1)
    leave = np.where(den > 0, t, np.inf).min(axis=1)
    parallel_out = np.any((den == 0) & (dp > 0), axis=1)
    return np.maximum(enter, 0.0), np.minimum(leave, 1.0), parallel_out


def _blocked_by(inc, P, Q, tol):
    """Segments whose interior passes through the open inclusion."""
    out = np.zeros(len(P), dtype=bool)
    step = max(1, _CHUNK // len(inc.offsets))
    for s in range(0, len(P), step):
        p, q = P[s:s + step], Q[s:s + step]
        t0, t1, empty = _clip_interval(inc, p, q)
        length = (t1 - t0) * np.linalg.norm(q - p, axis=1)
        mid = p + (0.5 * (t0 + t1))[:, None] * (q - p)
        out[s:s + step] = ~empty & (length > tol) & (inc.signed_excess(mid) < -tol)
    return out


def _near_disc(inc, P, Q):
    """Segments that come closer to the generating centre than its radius."""
    c = inc.center
    e = Q - P
    ee = np.einsum("ij,ij->i", e, e)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ee > 0, np.einsum("ij,ij->i", c - P, e) / ee, 0.0)
    foot = P + np.clip(t, 0.0, 1.0)[:, None] * e
    return np.linalg.norm(foot - c, axis=1) < inc.radius * (1.0 + 1e-12)


def lift_points(domain, subdomain, points, tol=None):
    """Project points that fall outside ``subdomain`` onto its interface.

    Matrix evaluation points inside an inclusion (boundaries of
    volume-recovery cells) see nodes as their closest interface point does.
    """
    tol = domain.tol if tol is None else tol
    p = np.array(points, dtype=float, copy=True)
    if subdomain == MATRIX:
        for inc in domain.inclusions:
            inside = inc.contains(p, tol=tol, strict=True)
            if inside.any():
                p[inside] = inc.project(p[inside])
    else:
        inc = domain.inclusions[subdomain]
        outside = ~inc.contains(p, tol=tol)
        if outside.any():
            p[outside] = inc.project(p[outside])
    return p


def segment_visibility(domain, subdomain, P, Q, tol=None, lifted=False):
    """Vectorised line-of-sight for paired end points ``P[i] -> Q[i]``.

    A segment is visible in the matrix unless its interior crosses the open
    interior of an inclusion; running along an interface counts as visible.
    Inclusions are convex, so any two points of one closed inclusion see
    each other.
    """
    tol = domain.tol if tol is None else tol
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if not lifted:
        P = lift_points(domain, subdomain, P, tol)
    vis = np.ones(len(P), dtype=bool)
    if subdomain != MATRIX:
        return vis
    for inc in domain.inclusions:
        cand = np.flatnonzero(_near_disc(inc, P, Q))
        if len(cand):
            vis[cand] &= ~_blocked_by(inc, P[cand], Q[cand], tol)
    return vis


def line_of_sight(p, q, domain, subdomain, tol=None):
    """True iff the open segment pq stays within the closure of ``subdomain``."""
    tol = domain.tol if tol is None else tol
    P = np.atleast_1d(np.asarray(p, dtype=float))[None, :]
    Q = np.atleast_1d(np.asarray(q, dtype=float))[None, :]
    if subdomain == MATRIX:
        return bool(segment_visibility(domain, MATRIX, P, Q, tol, lifted=True)[0])
    inc = domain.inclusions[subdomain]
    t0, t1, empty = _clip_interval(inc, P, Q)
    length = float(np.linalg.norm(Q - P))
    if length == 0.0:
        return bool(inc.contains(P, tol)[0])
    return bool(not empty[0] and t0[0] * length <= tol and (1.0 - t1[0]) * length <= tol)


def classify_boxes(domain, lo, hi, tol=None):
    """Classify axis-aligned boxes against every inclusion.

    Returns ``(inside, straddle)`` integer arrays holding the index of the
    inclusion that wholly contains / cuts each box, or -1.  A box straddles
    when it overlaps the open inclusion with positive measure (separating
    axis test) without lying inside it, so tangency within ``tol`` is not a
    straddle.
    """
    tol = domain.tol if tol is None else tol
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    c = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    inside = np.full(len(lo), -1)
    straddle = np.full(len(lo), -1)
    for i, inc in enumerate(domain.inclusions):
        vlo, vhi = inc.vertices.min(0), inc.vertices.max(0)
        overlap = np.all((np.minimum(hi, vhi) - np.maximum(lo, vlo)) > tol, axis=1)
        idx = np.flatnonzero(overlap)
        if len(idx) == 0:
            continue
        n = inc.normals
        proj_c = c[idx] @ n.T
        reach = half[idx] @ np.abs(n).T
        pv = inc.vertices @ n.T
        sep = ((proj_c - reach) >= inc.offsets - tol) | ((proj_c + reach) <= pv.min(0) + tol)
        cut = ~sep.any(axis=1)
        whole = np.all(proj_c + reach <= inc.offsets + tol, axis=1)
        inside[idx[whole]] = i
        straddle[idx[cut & ~whole]] = i
    return inside, straddle


def clip_cell_against_interface(vertices, domain, tol=None):
    """Classify a convex polygon (or interval) as fully-matrix, fully-inclusion or straddling."""
    tol = domain.tol if tol is None else tol
    v = np.asarray(vertices, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    for inc in domain.inclusions:
        if np.all(inc.contains(v, tol)):
            return FULLY_INCLUSION
        axes = inc.normals
        if domain.dim == 2:
            e = np.roll(v, -1, axis=0) - v
            length = np.hypot(e[:, 0], e[:, 1])
            cell_n = np.column_stack([e[:, 1], -e[:, 0]])[length > 0] / length[length > 0, None]
            axes = np.vstack([axes, cell_n])
        pa = v @ axes.T
        pb = inc.vertices @ axes.T
        gap = np.minimum(pa.max(0), pb.max(0)) - np.maximum(pa.min(0), pb.min(0))
        if np.all(gap > tol):
            return STRADDLES
    return FULLY_MATRIX
