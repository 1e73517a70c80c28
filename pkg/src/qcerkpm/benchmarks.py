"""Benchmark problems, closed-form references, error norms and convergence
studies for the embedded solver.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .assembly import HeterogeneousProblem, Material, run
from .discretize import SubdivisionParams, build_discretization, circle_domain
from .errors import GeometryError, InvalidArgument, InvalidLayout, QCEError
from .geometry import MATRIX, Domain, Inclusion, classify_boxes, clip_halfplane, gauss_legendre

log = logging.getLogger(__name__)


# -- 1D composite bar ---------------------------------------------------------------

@dataclass(frozen=True)
class Bar1DSpec:
    """Three-segment bar: matrix, inclusion, matrix.

    ``load`` is ``"patch"`` (end displacement ``g``, no body force) or
    ``"sine"`` (half-wave body force per segment, fixed left end, free
    right end).
    """

    lengths: tuple = (23.0 / 30.0, 22.0 / 15.0, 23.0 / 30.0)
    E_matrix: float = 1.0e3
    E_inclusion: float = 1.0e5
    load: str = "patch"
    g: float = 0.3
    amplitudes: tuple = (10.0, 50.0, 10.0)

    def __post_init__(self):
        if len(self.lengths) != 3 or min(self.lengths) <= 0:
            raise InvalidArgument("three positive segment lengths are required")
        if self.load not in ("patch", "sine"):
            raise InvalidArgument(f"unknown load case {self.load!r}")

    @property
    def breakpoints(self):
        return np.cumsum(self.lengths)

    @property
    def length(self):
        return float(sum(self.lengths))

    def moduli(self):
        return (self.E_matrix, self.E_inclusion, self.E_matrix)


def bar_body_force(spec):
    """Piecewise half-sine body force on the whole bar."""
    starts = np.concatenate([[0.0], spec.breakpoints[:-1]])

    def b(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        k = np.clip(np.searchsorted(spec.breakpoints, x, side="left"), 0, 2)
        L = np.asarray(spec.lengths)[k]
        A = np.asarray(spec.amplitudes)[k]
        return (A * np.sin(np.pi * (x - starts[k]) / L))[:, None]

    return b


@dataclass
class ExactField:
    """Exact displacement, strain (engineering Voigt) and stress per region."""

    u: callable
    strain: callable
    stress: callable


def exact_bar_solution(spec):
    """Closed-form displacement, strain and stress of the composite bar.

    The callables take ``(x, tag=None)``; the tag is ignored because the 1D
    regions are unambiguous.
    """
    L = np.asarray(spec.lengths, dtype=float)
    E = np.asarray(spec.moduli(), dtype=float)
    xb = spec.breakpoints
    starts = np.concatenate([[0.0], xb[:-1]])

    def seg(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return x, np.clip(np.searchsorted(xb, x, side="left"), 0, 2)

    if spec.load == "patch":
        sigma = spec.g / float((L / E).sum())
        u_start = np.concatenate([[0.0], np.cumsum(sigma * L / E)[:-1]])

        def u(x, tag=None):
            x, k = seg(x)
            return (u_start[k] + sigma / E[k] * (x - starts[k]))[:, None]

        def stress(x, tag=None):
            x, _ = seg(x)
            return np.full((len(x), 1), sigma)
    else:
        A = np.asarray(spec.amplitudes, dtype=float)
        # stress carried past each segment end: sum of downstream resultants
        resultant = 2.0 * A * L / np.pi
        tail = np.concatenate([np.cumsum(resultant[::-1])[::-1][1:], [0.0]])

        def stress(x, tag=None):
            x, k = seg(x)
            th = np.pi * (x - starts[k]) / L[k]
            return (A[k] * L[k] / np.pi * (1.0 + np.cos(th)) + tail[k])[:, None]

        def _u_local(k, x):
            th = np.pi * (x - starts[k]) / L[k]
            return ((A[k] * L[k] / np.pi * ((x - starts[k]) + L[k] / np.pi * np.sin(th))
                     + tail[k] * (x - starts[k])) / E[k])

        u_start = np.zeros(3)
        for k in range(1, 3):
            u_start[k] = u_start[k - 1] + _u_local(k - 1, xb[k - 1])

        def u(x, tag=None):
            x, k = seg(x)
            return (u_start[k] + _u_local(k, x))[:, None]

    def strain(x, tag=None):
        x, k = seg(x)
        return stress(x) / E[k][:, None]

    return ExactField(u, strain, stress)


def build_bar_1d(spec=None, h_background=0.1, h_foreground=None, recovery=True, alpha=1.0,
                 beta=None, params=None, share=True):
    """Problem and embedded discretization of the composite bar.

    The default foreground spacing puts 30 nodes on the inclusion segment.
    """
    spec = spec or Bar1DSpec()
    x1, x2, x3 = spec.breakpoints
    dom = Domain([0.0], [x3], [Inclusion.interval(x1, x2)])
    n_fg = 30 if h_foreground is None else int(round((x2 - x1) / h_foreground)) + 1
    d = build_discretization(dom, h_background, None, params=params, recovery=recovery,
                             share=share, n_foreground=n_fg)
    mat_m, mat_p = Material(spec.E_matrix, 0.0), Material(spec.E_inclusion, 0.0)
    if spec.load == "patch":
        g = spec.g
        problem = HeterogeneousProblem(dom, mat_m, mat_p, dirichlet=(0, 1),
                                       g=lambda p: np.where(p[:, 0] > 0.5 * x3, g, 0.0)[:, None],
                                       alpha=alpha, beta=beta)
    else:
        b = bar_body_force(spec)
        problem = HeterogeneousProblem(dom, mat_m, mat_p, dirichlet=(0,), g=lambda p: np.zeros((len(p), 1)),
                                       body_matrix=b, body_inclusion=b, alpha=alpha, beta=beta)
    return problem, d


# -- affine patch test ----------------------------------------------------------------

@dataclass(frozen=True)
class AffinePatchSpec:
    """Equal-material square with embedded circles and an affine exact field."""

    side: float = 2.0
    circles: tuple = (((0.1, -0.05), 0.55),)
    E: float = 1.0e3
    nu: float = 0.3
    grad: tuple = ((1.0e-3, 2.0e-3), (-5.0e-4, 1.5e-3))
    shift: tuple = (1.0e-2, -2.0e-2)


def affine_solution(spec):
    """Exact affine displacement with its constant strain and stress."""
    A = np.asarray(spec.grad, dtype=float)
    c = np.asarray(spec.shift, dtype=float)
    eps = np.array([A[0, 0], A[1, 1], A[0, 1] + A[1, 0]])
    sig = Material(spec.E, spec.nu).C(2) @ eps

    def u(p, tag=None):
        return np.atleast_2d(p) @ A.T + c

    def strain(p, tag=None):
        return np.tile(eps, (len(np.atleast_2d(p)), 1))

    def stress(p, tag=None):
        return np.tile(sig, (len(np.atleast_2d(p)), 1))

    return ExactField(u, strain, stress)


def build_affine_patch(spec=None, h_background=0.1, h_foreground=None, recovery=True, alpha=1.0,
                       params=None):
    """Embedded discretization of an equal-material affine patch test."""
    spec = spec or AffinePatchSpec()
    hf = 0.5 * h_background if h_foreground is None else h_foreground
    half = 0.5 * spec.side
    dom = circle_domain([-half, -half], [half, half], list(spec.circles), hf)
    d = build_discretization(dom, h_background, hf, params=params, recovery=recovery)
    exact = affine_solution(spec)
    mat = Material(spec.E, spec.nu)
    problem = HeterogeneousProblem(dom, mat, mat, dirichlet=(0, 1, 2, 3), g=exact.u, alpha=alpha)
    return problem, d, exact


# -- circular inclusion in an infinite plate ---------------------------------------------

@dataclass(frozen=True)
class PlateInclusionSpec:
    """Square plate with a central circular inclusion under remote uniaxial tension."""

    side: float = 4.0
    diameter: float = 2.0
    traction: float = 100.0
    direction: str = "y"
    E_matrix: float = 1.0e3
    nu_matrix: float = 0.3
    E_inclusion: float = 1.0e5
    nu_inclusion: float = 0.3

    def __post_init__(self):
        if not 0 < self.diameter < self.side:
            raise InvalidArgument("the inclusion must fit inside the plate")
        if self.direction not in ("x", "y"):
            raise InvalidArgument("traction direction must be 'x' or 'y'")


class CircularInclusionSolution:
    """Plane-stress field of a circular elastic inhomogeneity in an infinite
    plate under remote uniaxial stress, from Kolosov-Muskhelishvili potentials.

    Outside: ``phi = G z + C / z``, ``psi = G' z + D / z + E / z**3``;
    inside: ``phi = A z``, ``psi = B z``.  Every method takes a ``tag``
    selecting the branch (``MATRIX`` or an inclusion index); without one the
    branch follows ``|z|`` against the radius.
    """

    def __init__(self, spec=None, center=(0.0, 0.0)):
        s = spec or PlateInclusionSpec()
        self.spec = s
        self.center = np.asarray(center, dtype=float)
        self.a = 0.5 * s.diameter
        sxx, syy = (s.traction, 0.0) if s.direction == "x" else (0.0, s.traction)
        G = 0.25 * (sxx + syy)
        Gp = 0.5 * (syy - sxx)
        self.mu_m = s.E_matrix / (2.0 * (1.0 + s.nu_matrix))
        self.mu_i = s.E_inclusion / (2.0 * (1.0 + s.nu_inclusion))
        self.k_m = (3.0 - s.nu_matrix) / (1.0 + s.nu_matrix)
        self.k_i = (3.0 - s.nu_inclusion) / (1.0 + s.nu_inclusion)
        mm, mi, km, ki = self.mu_m, self.mu_i, self.k_m, self.k_i
        a2 = self.a ** 2
        self.A = mi * (km + 1.0) * G / (mm * (ki - 1.0) + 2.0 * mi)
        c = Gp * (mi - mm) / (mm + km * mi)
        self.G, self.Gp = G, Gp
        self.C = c * a2
        self.D = (2.0 * self.A - 2.0 * G) * a2
        self.E = self.C * a2
        self.B = c + Gp

    def _disp_outside(self, z):
        phi = self.G * z + self.C / z
        dphi = self.G - self.C / z ** 2
        psi = self.Gp * z + self.D / z + self.E / z ** 3
        return (self.k_m * phi - z * np.conj(dphi) - np.conj(psi)) / (2.0 * self.mu_m)

    def _z(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        return p[:, 0] + 1j * p[:, 1]

    def _inside(self, z, tag):
        if tag is None:
            return np.abs(z) < self.a
        return np.full(z.shape, tag != MATRIX)

    def displacement(self, points, tag=None):
        z = self._z(points)
        inside = self._inside(z, tag)
        w = np.empty(z.shape, dtype=complex)
        zi, zo = z[inside], z[~inside]
        w[inside] = (self.k_i * self.A * zi - zi * np.conj(self.A) - np.conj(self.B * zi)) / (2.0 * self.mu_i)
        if len(zo):
            w[~inside] = self._disp_outside(zo)
        return np.column_stack([w.real, w.imag])

    def stress(self, points, tag=None):
        z = self._z(points)
        inside = self._inside(z, tag)
        s1 = np.empty(z.shape)
        s2 = np.empty(z.shape, dtype=complex)
        s1[inside] = 4.0 * np.real(self.A)
        s2[inside] = 2.0 * self.B
        zo = z[~inside]
        if len(zo):
            dphi = self.G - self.C / zo ** 2
            d2phi = 2.0 * self.C / zo ** 3
            dpsi = self.Gp - self.D / zo ** 2 - 3.0 * self.E / zo ** 4
            s1[~inside] = 4.0 * np.real(dphi)
            s2[~inside] = 2.0 * (np.conj(zo) * d2phi + dpsi)
        sxx = 0.5 * (s1 - s2.real)
        syy = 0.5 * (s1 + s2.real)
        sxy = 0.5 * s2.imag
        return np.column_stack([sxx, syy, sxy])

    def strain(self, points, tag=None):
        z = self._z(points)
        inside = self._inside(z, tag)
        s = self.stress(points, tag)
        E = np.where(inside, self.spec.E_inclusion, self.spec.E_matrix)
        nu = np.where(inside, self.spec.nu_inclusion, self.spec.nu_matrix)
        return np.column_stack([(s[:, 0] - nu * s[:, 1]) / E, (s[:, 1] - nu * s[:, 0]) / E,
                                2.0 * (1.0 + nu) * s[:, 2] / E])

    def as_field(self):
        return ExactField(self.displacement, self.strain, self.stress)


def exact_circular_inclusion(spec=None):
    """Reference fields of the plate problem as ``u, strain, stress`` callables."""
    return CircularInclusionSolution(spec).as_field()


def build_plate(spec=None, h_background=0.2, h_foreground=None, recovery=True, alpha=1.0,
                beta=None, params=None):
    """Square plate with the exact solution prescribed on the whole boundary."""
    spec = spec or PlateInclusionSpec()
    hf = 0.5 * h_background if h_foreground is None else h_foreground
    half = 0.5 * spec.side
    dom = circle_domain([-half, -half], [half, half], [((0.0, 0.0), 0.5 * spec.diameter)], hf)
    d = build_discretization(dom, h_background, hf, params=params, recovery=recovery)
    ref = CircularInclusionSolution(spec)
    problem = HeterogeneousProblem(
        dom, Material(spec.E_matrix, spec.nu_matrix), Material(spec.E_inclusion, spec.nu_inclusion),
        dirichlet=(0, 1, 2, 3), g=lambda p: ref.displacement(p, MATRIX), alpha=alpha, beta=beta)
    return problem, d, ref


# -- multi-inclusion microstructure ----------------------------------------------

@dataclass(frozen=True)
class MicrostructureSpec:
    """Seeded random layout of disjoint circular inclusions in a square."""

    side: float = 4.2
    count: int = 6
    radius_range: tuple = (0.3, 0.55)
    seed: int = 7
    h_background: float = 0.21
    g: tuple = (0.02, 0.02)
    E_matrix: float = 1.0e3
    E_inclusion: float = 1.0e5
    nu: float = 0.3
    circles: tuple = ()

    def layout(self):
        """Circle centres and radii: explicit ``circles`` or a seeded sample."""
        if self.circles:
            return [(tuple(c), float(r)) for c, r in self.circles]
        rng = np.random.default_rng(self.seed)
        # keep interfaces a few background cells apart and away from the edges
        gap = 2.0 * self.h_background
        edge = 3.0 * self.h_background
        for _ in range(200):
            out = []
            for _ in range(500 * self.count):
                r = rng.uniform(*self.radius_range)
                c = rng.uniform(r + edge, self.side - r - edge, size=2)
                if all(np.hypot(*(c - np.asarray(c2))) > r + r2 + gap for c2, r2 in out):
                    out.append(((float(c[0]), float(c[1])), float(r)))
                    if len(out) == self.count:
                        return out
        raise InvalidLayout("could not place the requested inclusions")


def build_microstructure(spec=None, level=0, recovery=True, params=None):
    """Multi-inclusion problem: bottom edge fixed, top edge displaced by ``g``."""
    spec = spec or MicrostructureSpec()
    hb = spec.h_background / 2 ** level
    hf = 0.5 * hb
    circles = spec.layout()
    for i, (c1, r1) in enumerate(circles):
        for c2, r2 in circles[i + 1:]:
            if np.hypot(c1[0] - c2[0], c1[1] - c2[1]) <= r1 + r2:
                raise InvalidLayout("inclusions overlap")
    dom = circle_domain([0.0, 0.0], [spec.side, spec.side], circles, hf)
    d = build_discretization(dom, hb, hf, params=params, recovery=recovery)
    g = np.asarray(spec.g, dtype=float)
    top = spec.side

    def gfun(p):
        return np.where(p[:, 1:2] > 0.5 * top, g[None, :], 0.0)

    problem = HeterogeneousProblem(dom, Material(spec.E_matrix, spec.nu), Material(spec.E_inclusion, spec.nu),
                                   dirichlet=(2, 3), g=gfun)
    return problem, d


# -- error norms --------------------------------------------------------------------

def _triangle_rule(n):
    """Collapsed Gauss rule on the reference triangle, exact to degree ``2n - 2``."""
    t, w = gauss_legendre(n)
    s, r = np.meshgrid(t, t, indexing="ij")
    ws = np.outer(w, w)
    xi = s.ravel()
    eta = (r * (1.0 - s)).ravel()
    wt = (ws * (1.0 - s)).ravel()
    return np.column_stack([xi, eta]), wt


def _fan(poly, rule):
    pts, wts = rule
    if len(poly) < 3:
        return np.zeros((0, 2)), np.zeros(0)
    a = poly[0]
    out_p, out_w = [], []
    for k in range(1, len(poly) - 1):
        b, c = poly[k], poly[k + 1]
        area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if area2 <= 0:
            continue
        out_p.append(a + pts[:, :1] * (b - a) + pts[:, 1:] * (c - a))
        out_w.append(wts * area2)
    if not out_p:
        return np.zeros((0, 2)), np.zeros(0)
    return np.concatenate(out_p), np.concatenate(out_w)


def region_quadrature(domain, spacing, order=6):
    """Quadrature points/weights per region (matrix and each inclusion).

    A grid of squares of size ``spacing`` is laid over the box; whole squares
    use tensor Gauss rules and squares cut by an interface polyline are
    split into convex pieces that are fan-triangulated.  Returns a dict
    ``tag -> (points, weights)``.
    """
    if domain.dim == 1:
        return _interval_quadrature(domain, spacing, order)
    n = np.maximum(1, np.round(domain.size / spacing).astype(int))
    hx, hy = domain.size / n
    ix, iy = np.meshgrid(np.arange(n[0]), np.arange(n[1]), indexing="ij")
    lo = domain.lo + np.column_stack([ix.ravel() * hx, iy.ravel() * hy])
    hi = lo + [hx, hy]
    inside, straddle = classify_boxes(domain, lo, hi, tol=0.0)
    t, w = gauss_legendre(order)
    qx, qy = np.meshgrid(t, t, indexing="ij")
    ref = np.column_stack([qx.ravel(), qy.ravel()])
    wref = np.outer(w, w).ravel() * hx * hy
    rule = _triangle_rule(order)
    acc = {MATRIX: ([], [])}
    for i in range(len(domain.inclusions)):
        acc[i] = ([], [])
    whole = straddle < 0
    for tag in [MATRIX] + list(range(len(domain.inclusions))):
        m = whole & (inside == tag)
        if m.any():
            acc[tag][0].append((lo[m][:, None, :] + ref[None] * [hx, hy]).reshape(-1, 2))
            acc[tag][1].append(np.tile(wref, int(m.sum())))
    for b in np.flatnonzero(~whole):
        square = np.array([lo[b], [hi[b, 0], lo[b, 1]], hi[b], [lo[b, 0], hi[b, 1]]])
        pieces = [square]
        for i, inc in enumerate(domain.inclusions):
            rest = []
            for piece in pieces:
                inner, outer = _split_convex(piece, inc)
                if len(inner) >= 3:
                    p, wq = _fan(inner, rule)
                    acc[i][0].append(p)
                    acc[i][1].append(wq)
                rest.extend(outer)
            pieces = rest
        for piece in pieces:
            p, wq = _fan(piece, rule)
            acc[MATRIX][0].append(p)
            acc[MATRIX][1].append(wq)
    out = {}
    for tag, (p, wq) in acc.items():
        out[tag] = (np.concatenate(p) if p else np.zeros((0, 2)), np.concatenate(wq) if wq else np.zeros(0))
    return out


def _split_convex(poly, inc):
    """Split a convex polygon into its part inside ``inc`` and convex parts outside."""
    s = poly @ inc.normals.T - inc.offsets
    cut = np.flatnonzero((s.max(axis=0) > 0) & (s.min(axis=0) < 0))
    if np.any(s.min(axis=0) >= 0):
        return np.zeros((0, 2)), [poly]
    if len(cut) == 0:
        return poly, []
    outer = []
    remaining = poly
    for k in cut:
        out_part = clip_halfplane(remaining, -inc.normals[k], -inc.offsets[k])
        if len(out_part) >= 3:
            outer.append(out_part)
        remaining = clip_halfplane(remaining, inc.normals[k], inc.offsets[k])
        if len(remaining) < 3:
            break
    return remaining, outer


def _interval_quadrature(domain, spacing, order):
    t, w = gauss_legendre(order)
    lo, hi = float(domain.lo[0]), float(domain.hi[0])
    bounds = [lo]
    tags = []
    for i, inc in enumerate(sorted(enumerate(domain.inclusions), key=lambda p: p[1].vertices[0, 0])):
        idx, inc = inc
        a, b = inc.vertices[:, 0]
        bounds += [a, b]
        tags += [MATRIX, idx]
    bounds.append(hi)
    tags.append(MATRIX)
    acc = {}
    for k, tag in enumerate(tags):
        a, b = bounds[k], bounds[k + 1]
        m = max(1, int(np.ceil((b - a) / spacing - 1e-9)))
        edges = np.linspace(a, b, m + 1)
        p = (edges[:-1, None] + t[None, :] * np.diff(edges)[:, None]).reshape(-1, 1)
        wq = (np.diff(edges)[:, None] * w[None, :]).ravel()
        P, W = acc.get(tag, (np.zeros((0, 1)), np.zeros(0)))
        acc[tag] = (np.concatenate([P, p]), np.concatenate([W, wq]))
    return acc


@dataclass
class ErrorReport:
    h: list = field(default_factory=list)
    l2: list = field(default_factory=list)
    h1: list = field(default_factory=list)
    nodes: list = field(default_factory=list)
    failed: list = field(default_factory=list)

    def rates(self):
        """Least-squares slopes of ``log(error)`` against ``log(h)``."""
        ok = [k for k in range(len(self.h)) if k not in self.failed]
        if len(ok) < 3:
            raise InvalidArgument("at least three successful levels are needed for a rate")
        lh = np.log(np.asarray(self.h)[ok])
        return (float(np.polyfit(lh, np.log(np.asarray(self.l2)[ok]), 1)[0]),
                float(np.polyfit(lh, np.log(np.asarray(self.h1)[ok]), 1)[0]))

    def rows(self):
        """``(level, h, nodes, l2, h1, failed)`` per refinement level."""
        for k in range(len(self.h)):
            yield (k, self.h[k], self.nodes[k], self.l2[k], self.h1[k], int(k in self.failed))


def _strain_norm2(e):
    """Squared tensor norm of engineering strain rows."""
    if e.shape[1] == 1:
        return e[:, 0] ** 2
    return e[:, 0] ** 2 + e[:, 1] ** 2 + 0.5 * e[:, 2] ** 2


def error_norms(fields, exact, domain, spacing, order=6, quad=None):
    """L2 displacement error and strain-energy-free H1 semi-norm error.

    ``fields`` evaluates ``(u, strain, stress)`` at points of a given
    subdomain; ``exact`` is an :class:`ExactField` whose callables accept
    ``(points, tag)``.
    """
    quad = quad or region_quadrature(domain, spacing, order)
    l2 = h1 = 0.0
    for tag, (p, w) in quad.items():
        if len(p) == 0:
            continue
        uh, eh, _ = fields(p, tag)
        du = uh - exact.u(p, tag)
        de = eh - exact.strain(p, tag)
        l2 += float(w @ (du ** 2).sum(axis=1))
        h1 += float(w @ _strain_norm2(de))
    return np.sqrt(l2), np.sqrt(h1)


def difference_norm(fields_a, fields_b, domain, spacing, order=6):
    """L2 norm of the displacement difference of two solutions on ``domain``'s regions."""
    quad = region_quadrature(domain, spacing, order)
    total = 0.0
    for _, (p, w) in quad.items():
        if len(p) == 0:
            continue
        ua = fields_a(p)[0]
        ub = fields_b(p)[0]
        total += float(w @ ((ua - ub) ** 2).sum(axis=1))
    return np.sqrt(total)


def _fields_fn(result):
    fe = result.fields
    return lambda p, tag=None: fe.evaluate(p, tag)


def bar_convergence(spec=None, levels=5, recovery=True, base_background=30, base_foreground=29):
    """Uniform refinement study of the bar: ``base * 2**k`` background cells."""
    spec = spec or Bar1DSpec(load="sine")
    rep = ErrorReport()
    exact = exact_bar_solution(spec)
    for k in range(levels):
        hb = spec.length / (base_background * 2 ** k)
        hf = spec.lengths[1] / (base_foreground * 2 ** k)
        try:
            problem, d = build_bar_1d(spec, hb, hf, recovery=recovery)
            res = run(problem, d, estimate_condition=False)
            l2, h1 = error_norms(_fields_fn(res), exact, d.domain, 0.5 * hf, order=10)
        except QCEError as exc:
            log.warning("level %d failed: %s", k, exc)
            rep.failed.append(k)
            l2 = h1 = np.nan
            d = None
        rep.h.append(hb)
        rep.l2.append(l2)
        rep.h1.append(h1)
        rep.nodes.append(d.cloud.n if d is not None else 0)
    return rep


def plate_convergence(spec=None, spacings=(0.2, 0.1, 0.05, 0.025), recovery=True, order=6):
    """Refinement study of the plate with ``h+ = h-/2`` at every level."""
    spec = spec or PlateInclusionSpec()
    rep = ErrorReport()
    for hb in spacings:
        try:
            problem, d, ref = build_plate(spec, hb, recovery=recovery)
            res = run(problem, d, estimate_condition=False)
            l2, h1 = error_norms(_fields_fn(res), ref.as_field(), d.domain, hb, order=order)
        except QCEError as exc:
            log.warning("level h=%g failed: %s", hb, exc)
            rep.failed.append(len(rep.h))
            l2 = h1 = np.nan
            d = None
        rep.h.append(hb)
        rep.l2.append(l2)
        rep.h1.append(h1)
        rep.nodes.append(d.cloud.n if d is not None else 0)
    return rep


def convergence_study(family="bar", levels=4, recovery=True, **kw):
    """Dispatch a refinement study by problem family (``bar`` or ``plate``)."""
    if levels < 3:
        raise InvalidArgument("a convergence study needs at least three levels")
    if family == "bar":
        return bar_convergence(kw.pop("spec", None), levels, recovery, **kw)
    if family == "plate":
        spacings = tuple(0.2 / 2 ** k for k in range(levels))
        return plate_convergence(kw.pop("spec", None), spacings, recovery, **kw)
    raise InvalidArgument(f"unknown problem family {family!r}")


def principal_stress(s):
    """Maximum in-plane principal stress of Voigt rows."""
    c = 0.5 * (s[:, 0] + s[:, 1])
    r = np.sqrt((0.5 * (s[:, 0] - s[:, 1])) ** 2 + s[:, 2] ** 2)
    return c + r
