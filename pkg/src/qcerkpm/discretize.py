"""Embedded discretization: conforming foreground cells inside inclusions, a
uniform background grid with quadtree refinement near interfaces, removal of
the fictitious region, shared interface nodes and volume-recovery cells.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import Delaunay, Voronoi

from .errors import GridMismatch, InvalidArgument, UnderResolvedInclusion
from .geometry import (
    MATRIX,
    Domain,
    Inclusion,
    boundary_quadrature,
    classify_boxes,
    clip_halfplane,
    dedupe_polygon,
    gauss_legendre,
    interval_properties,
    polygon_properties,
)
from .rk import NodeCloud

FOREGROUND = 0
GRID = 1
REFINED = 2
RECOVERY = 3
ORIGIN_NAMES = {FOREGROUND: "foreground", GRID: "background", REFINED: "refined", RECOVERY: "recovery"}

EDGE_GAUSS = 2


@dataclass(frozen=True)
class SubdivisionParams:
    """Rounding threshold for the refinement ratio and refinement band width."""

    k: float = 0.5
    band: float = 1.5
    balance: bool = True

    def __post_init__(self):
        if not 0.0 < self.k < 1.0:
            raise InvalidArgument("rounding threshold k must lie in (0, 1)")
        if self.band < 1.0:
            raise InvalidArgument("refinement band must be at least one spacing")


@dataclass
class CellSet:
    """Smoothing cells stored as parallel arrays.

    Boundary quadrature points of cell ``L`` are the rows where
    ``bq_cell == L``; ``polygons[L]`` holds the CCW vertex loop (or the two
    end points of an interval in 1D).
    """

    owner: np.ndarray
    subdomain: np.ndarray
    origin: np.ndarray
    level: np.ndarray
    volume: np.ndarray
    moments: np.ndarray
    polygons: list
    bq_points: np.ndarray
    bq_normals: np.ndarray
    bq_weights: np.ndarray
    bq_cell: np.ndarray

    @property
    def n(self):
        return len(self.owner)

    @classmethod
    def empty(cls, dim):
        z = np.zeros(0)
        zi = np.zeros(0, dtype=int)
        return cls(zi, zi, zi, zi, z, np.zeros((0, dim)), [], np.zeros((0, dim)),
                   np.zeros((0, dim)), z, zi)

    def select(self, keep):
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        remap = np.full(self.n, -1)
        remap[keep] = np.arange(len(keep))
        q = np.flatnonzero(remap[self.bq_cell] >= 0)
        order = q[np.argsort(remap[self.bq_cell[q]], kind="stable")]
        return CellSet(self.owner[keep], self.subdomain[keep], self.origin[keep], self.level[keep],
                       self.volume[keep], self.moments[keep], [self.polygons[k] for k in keep],
                       self.bq_points[order], self.bq_normals[order], self.bq_weights[order],
                       remap[self.bq_cell[order]])

    @staticmethod
    def concat(parts):
        parts = [p for p in parts if p.n]
        if not parts:
            raise InvalidArgument("no cells to concatenate")
        offs = np.cumsum([0] + [p.n for p in parts])
        return CellSet(
            np.concatenate([p.owner for p in parts]),
            np.concatenate([p.subdomain for p in parts]),
            np.concatenate([p.origin for p in parts]),
            np.concatenate([p.level for p in parts]),
            np.concatenate([p.volume for p in parts]),
            np.concatenate([p.moments for p in parts]),
            [poly for p in parts for poly in p.polygons],
            np.concatenate([p.bq_points for p in parts]),
            np.concatenate([p.bq_normals for p in parts]),
            np.concatenate([p.bq_weights for p in parts]),
            np.concatenate([p.bq_cell + o for p, o in zip(parts, offs)]),
        )

    def cell(self, L):
        """Single-cell view with its own quadrature rows."""
        q = self.bq_cell == L
        return SmoothingCell(int(self.owner[L]), int(self.subdomain[L]), int(self.origin[L]),
                             self.polygons[L], float(self.volume[L]), self.moments[L].copy(),
                             self.bq_points[q], self.bq_normals[q], self.bq_weights[q])


@dataclass
class SmoothingCell:
    owner: int
    subdomain: int
    origin: int
    polygon: np.ndarray
    volume: float
    moments: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray

    @property
    def conforming(self):
        return self.origin == FOREGROUND


@dataclass
class BoundaryQuad:
    """Quadrature on boundary segments.

    ``tag`` is the outer side index (0..2d-1: x-low, x-high, y-low, y-high)
    for outer boundaries and the inclusion index for interfaces, whose
    normals point from the inclusion into the matrix.
    """

    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    tag: np.ndarray


@dataclass
class Foreground:
    nodes: np.ndarray
    spacing: float
    interface: np.ndarray
    cells: CellSet


@dataclass
class Background:
    lo: np.ndarray
    spacing: float
    counts: np.ndarray


@dataclass
class EmbeddedDiscretization:
    domain: Domain
    cloud: NodeCloud
    cells: CellSet
    h_background: float
    h_foreground: tuple
    n_levels: tuple
    interface_nodes: tuple
    interface_quad: BoundaryQuad
    outer_quad: BoundaryQuad
    removed_nodes: int = 0
    removed_cells: int = 0
    merged_nodes: int = 0
    missing_volume: float = 0.0
    shared: bool = False
    recovery: bool = False
    params: SubdivisionParams = field(default_factory=SubdivisionParams)

    @property
    def dim(self):
        return self.domain.dim

    def cell_volume(self, tag):
        return float(self.cells.volume[self.cells.subdomain == tag].sum())

    def subdomain_measure(self, tag):
        if tag == MATRIX:
            return self.domain.matrix_measure
        return self.domain.inclusions[tag].area

    def boundary_length(self, tag):
        """Perimeter of a subdomain's integration region (point count in 1D)."""
        w = self.interface_quad.weights
        if tag == MATRIX:
            return float(self.outer_quad.weights.sum() + w.sum())
        return float(w[self.interface_quad.tag == tag].sum())


def subdivision_level(h_background, h_interface, k=0.5):
    """Number of quadtree levels that bring ``h_background`` down to the interface spacing."""
    if not (h_background > 0 and h_interface > 0):
        raise InvalidArgument("spacings must be positive")
    R = round(h_background / h_interface, 12)
    if R <= 1.0:
        Rp = 1.0
    else:
        frac = R - math.floor(R)
        Rp = math.ceil(R) if frac >= k else math.floor(R)
    return max(0, int(math.floor(math.log2(Rp) + 1e-12)))


# -- foreground ---------------------------------------------------------------

def _cells_from_polygons(polys, owners, centres, subdomain, origin, level=None):
    n = len(polys)
    dim = centres.shape[1]
    vol = np.empty(n)
    mom = np.zeros((n, dim))
    pts, nrm, wts, cid = [], [], [], []
    t, w = gauss_legendre(EDGE_GAUSS)
    for L, (poly, c) in enumerate(zip(polys, centres)):
        if dim == 1:
            lo, hi = float(poly[0, 0]), float(poly[1, 0])
            vol[L], mom[L, 0] = interval_properties(lo, hi, c[0])
            pts.append(poly)
            nrm.append(np.array([[-1.0], [1.0]]))
            wts.append(np.ones(2))
            cid.append(np.full(2, L))
        else:
            props = polygon_properties(poly, c)
            vol[L] = props.area
            mom[L] = (props.mx, props.my)
            p, q, wq = boundary_quadrature(poly, EDGE_GAUSS)
            pts.append(p)
            nrm.append(q)
            wts.append(wq)
            cid.append(np.full(len(p), L))
    return CellSet(np.asarray(owners, dtype=int), np.full(n, subdomain), np.full(n, origin),
                   np.zeros(n, dtype=int) if level is None else np.asarray(level),
                   vol, mom, list(polys), np.concatenate(pts), np.concatenate(nrm),
                   np.concatenate(wts), np.concatenate(cid))


def _box_cells(blo, bhi, owners, subdomain, origin, level):
    """Vectorised cells for axis-aligned boxes centred on their owners."""
    n, dim = blo.shape
    size = bhi - blo
    vol = np.prod(size, axis=1)
    mom = np.empty((n, dim))
    for k in range(dim):
        other = vol / size[:, k]
        mom[:, k] = other * size[:, k] ** 3 / 12.0
    t, w = gauss_legendre(EDGE_GAUSS)
    if dim == 1:
        pts = np.stack([blo, bhi], axis=1).reshape(-1, 1)
        nrm = np.tile([[-1.0], [1.0]], (n, 1))
        wts = np.ones(2 * n)
        cid = np.repeat(np.arange(n), 2)
        polys = [np.array([a, b]) for a, b in zip(blo, bhi)]
    else:
        corners = np.stack([blo, np.column_stack([bhi[:, 0], blo[:, 1]]), bhi,
                            np.column_stack([blo[:, 0], bhi[:, 1]])], axis=1)
        edge = np.roll(corners, -1, axis=1) - corners
        length = np.linalg.norm(edge, axis=2)
        pts = (corners[:, :, None, :] + t[None, None, :, None] * edge[:, :, None, :]).reshape(-1, 2)
        unit = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        nrm = np.tile(np.repeat(unit, EDGE_GAUSS, axis=0), (n, 1))
        wts = (length[:, :, None] * w[None, None, :]).ravel()
        cid = np.repeat(np.arange(n), 4 * EDGE_GAUSS)
        polys = list(corners)
    return CellSet(np.asarray(owners, dtype=int), np.full(n, subdomain), np.full(n, origin),
                   np.asarray(level, dtype=int), vol, mom, polys, pts, nrm, wts, cid)


def _ring_nodes(inc, h):
    R = inc.radius
    m = int(round(R / h))
    if not h < R or m < 1:
        raise UnderResolvedInclusion(f"spacing {h} does not resolve an inclusion of radius {R}")
    rings = [inc.vertices]
    for k in range(m - 1, 0, -1):
        r = R * k / m
        nk = max(3, int(round(2.0 * np.pi * r / h)))
        theta = 2.0 * np.pi * (np.arange(nk) + 0.5 * ((m - k) % 2)) / nk
        rings.append(inc.center + r * np.column_stack([np.cos(theta), np.sin(theta)]))
    rings.append(inc.center[None, :])
    return np.concatenate(rings)


def _voronoi_cells(nodes, inc, h):
    """Voronoi cells of ``nodes`` restricted to the convex inclusion polygon.

    Bounded regions lying inside the polygon are taken as they are; the
    others are rebuilt by clipping a local box with the polygon edges and
    the bisectors of the Delaunay neighbours.
    """
    vor = Voronoi(nodes)
    tri = Delaunay(nodes)
    ptr, nbr = tri.vertex_neighbor_vertices
    tol = 1e-10 * h
    inside_v = inc.signed_excess(vor.vertices) <= -tol if len(vor.vertices) else np.zeros(0, bool)
    polys = []
    half = 4.0 * h
    for I, x in enumerate(nodes):
        region = vor.regions[vor.point_region[I]]
        if region and -1 not in region and inside_v[region].all():
            poly = vor.vertices[region]
            e = np.roll(poly, -1, axis=0)
            if (poly[:, 0] * e[:, 1] - e[:, 0] * poly[:, 1]).sum() < 0:
                poly = poly[::-1]
            polys.append(dedupe_polygon(poly, tol))
            continue
        poly = x + half * np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
        cut = np.flatnonzero(np.any(poly @ inc.normals.T - inc.offsets > 0, axis=0))
        for k in cut:
            poly = clip_halfplane(poly, inc.normals[k], inc.offsets[k])
        for J in nbr[ptr[I]:ptr[I + 1]]:
            n = nodes[J] - x
            poly = clip_halfplane(poly, n, n @ (0.5 * (x + nodes[J])))
        poly = dedupe_polygon(poly, tol)
        if np.any(np.abs(poly - x).max(axis=1) >= half - tol):
            raise UnderResolvedInclusion("foreground node layout leaves an unbounded cell")
        polys.append(poly)
    return polys


def generate_foreground(inclusion, h, index=0, n_nodes=None):
    """Conforming nodes and cells inside one inclusion.

    2D: concentric rings plus the centre, the outer ring being the interface
    polyline; cells are Voronoi regions clipped to the polyline.  1D: uniform
    nodes including both ends (``n_nodes`` of them if given).
    """
    if inclusion.dim == 1:
        lo, hi = inclusion.vertices[:, 0]
        n = n_nodes if n_nodes is not None else int(round((hi - lo) / h)) + 1
        if n < 3:
            raise UnderResolvedInclusion("a 1D inclusion needs at least 3 nodes")
        x = np.linspace(lo, hi, n)
        spacing = (hi - lo) / (n - 1)
        mid = np.concatenate([[lo], 0.5 * (x[1:] + x[:-1]), [hi]])
        polys = [np.array([[mid[k]], [mid[k + 1]]]) for k in range(n)]
        cells = _cells_from_polygons(polys, np.arange(n), x[:, None], index, FOREGROUND)
        return Foreground(x[:, None], spacing, np.array([0, n - 1]), cells)
    nodes = _ring_nodes(inclusion, h)
    if len(nodes) < 4:
        raise UnderResolvedInclusion("too few foreground nodes")
    polys = _voronoi_cells(nodes, inclusion, h)
    cells = _cells_from_polygons(polys, np.arange(len(nodes)), nodes, index, FOREGROUND)
    return Foreground(nodes, h, np.arange(inclusion.n_vertices), cells)


def generate_background(lo, hi, h):
    """Cell-centred uniform grid covering the box ``[lo, hi]``."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    ratio = (hi - lo) / h
    counts = np.round(ratio).astype(int)
    if np.any(counts < 1) or np.any(np.abs(ratio - counts) > 1e-9 * np.maximum(ratio, 1.0)):
        raise GridMismatch(f"extent {hi - lo} is not a whole number of cells of size {h}")
    return Background(lo, float(h), counts)


def background_cells(bg):
    """Explicit cells of a background grid (row-major, x fastest)."""
    axes = [np.arange(n) for n in bg.counts]
    grids = np.meshgrid(*axes[::-1], indexing="ij")
    ix = np.column_stack([g.ravel() for g in grids[::-1]])
    blo = bg.lo + ix * bg.spacing
    return _box_cells(blo, blo + bg.spacing, np.arange(len(ix)), MATRIX, GRID, np.zeros(len(ix), int))


# -- embedding ------------------------------------------------------------------

def _boxes(bg, level, ix):
    size = bg.spacing / 2.0 ** level
    lo = bg.lo + ix * size[:, None]
    return lo, lo + size[:, None]


def _split(level, ix, mark):
    dim = ix.shape[1]
    offs = np.array(np.meshgrid(*([[0, 1]] * dim), indexing="ij")).reshape(dim, -1).T[:, ::-1]
    kids_ix = (2 * ix[mark][:, None, :] + offs[None]).reshape(-1, dim)
    kids_lv = np.repeat(level[mark] + 1, len(offs))
    keep = ~mark
    return np.concatenate([level[keep], kids_lv]), np.concatenate([ix[keep], kids_ix])


def _sort_cells(level, ix):
    """Deterministic order: by lower corner (y, then x), then level."""
    scale = 2 ** (level.max() - level)
    key = ix * scale[:, None]
    order = np.lexsort((level,) + tuple(key[:, k] for k in range(ix.shape[1])))
    return level[order], ix[order]


def _balance(level, ix, dim):
    """Split cells until face neighbours differ by at most one level."""
    while True:
        top = int(level.max())
        occupied = {}
        for L in range(top + 1):
            sel = level == L
            occupied[L] = set(map(tuple, ix[sel]))
        mark = np.zeros(len(level), dtype=bool)
        for c in range(len(level)):
            L = int(level[c])
            if L + 2 > top:
                continue
            base = ix[c]
            found = False
            for fine in range(L + 2, top + 1):
                f = 2 ** (fine - L)
                for k in range(dim):
                    for side in (-1, f):
                        probe = base * f
                        rng = [range(p, p + f) for p in probe]
                        rng[k] = [probe[k] + side]
                        for q in _product(rng):
                            if q in occupied[fine]:
                                found = True
                                break
                        if found:
                            break
                    if found:
                        break
                if found:
                    break
            mark[c] = found
        if not mark.any():
            return level, ix
        level, ix = _split(level, ix, mark)


def _product(ranges):
    if len(ranges) == 1:
        return ((a,) for a in ranges[0])
    return ((a, b) for a in ranges[0] for b in ranges[1])


def _surface_points(blo, bhi):
    t, _ = gauss_legendre(EDGE_GAUSS)
    dim = blo.shape[1]
    if dim == 1:
        return np.stack([blo, bhi, 0.5 * (blo + bhi)], axis=1)
    corners = np.stack([blo, np.column_stack([bhi[:, 0], blo[:, 1]]), bhi,
                        np.column_stack([blo[:, 0], bhi[:, 1]])], axis=1)
    edge = np.roll(corners, -1, axis=1) - corners
    pts = corners[:, :, None, :] + t[None, None, :, None] * edge[:, :, None, :]
    return np.concatenate([pts.reshape(len(blo), -1, 2), 0.5 * (blo + bhi)[:, None, :]], axis=1)


def embed(domain, background, foregrounds, params=None, merge_tol=None):
    """Immerse the foregrounds in the background grid and remove the overlap.

    The background is refined near each interface by ``subdivision_level``
    quadtree levels; cells inside an inclusion or with a boundary
    evaluation point inside one are removed, leaving a recorded volume gap.
    """
    params = SubdivisionParams() if params is None else params
    dim = domain.dim
    hb = background.spacing
    if len(foregrounds) != len(domain.inclusions):
        raise InvalidArgument("one foreground per inclusion is required")
    h_intf = [fg.spacing if dim == 1 else inc.spacing for fg, inc in zip(foregrounds, domain.inclusions)]
    n_R = [subdivision_level(hb, h, params.k) for h in h_intf]

    ix = background_grid_indices(background)
    level = np.zeros(len(ix), dtype=int)

    removed = [0]

    def drop_inside(level, ix):
        blo, bhi = _boxes(background, level, ix)
        inside, straddle = classify_boxes(domain, blo, bhi)
        keep = inside < 0
        removed[0] += int((~keep).sum())
        return level[keep], ix[keep], straddle[keep], blo[keep], bhi[keep]

    level, ix, straddle, blo, bhi = drop_inside(level, ix)
    deepest = max(n_R, default=0)
    nR_arr = np.array(n_R + [0])
    for r in range(deepest):
        mark = (straddle >= 0) & (nR_arr[straddle] > r)
        if r == 0:
            centre = 0.5 * (blo + bhi)
            for i, inc in enumerate(domain.inclusions):
                if n_R[i] >= 1:
                    mark |= inc.distance(centre) <= params.band * h_intf[i]
        if not mark.any():
            break
        level, ix = _split(level, ix, mark)
        level, ix, straddle, blo, bhi = drop_inside(level, ix)
    if params.balance and deepest >= 2:
        level, ix = _balance(level, ix, dim)
    level, ix = _sort_cells(level, ix)
    blo, bhi = _boxes(background, level, ix)

    # remove cells whose boundary evaluation points or centre enter an inclusion
    surf = _surface_points(blo, bhi)
    flat = surf.reshape(-1, dim)
    bad = np.zeros(len(flat), dtype=bool)
    for inc in domain.inclusions:
        bad |= inc.contains(flat, tol=domain.tol, strict=True)
    keep = ~bad.reshape(len(blo), -1).any(axis=1)
    removed[0] += int((~keep).sum())
    level, ix, blo, bhi = level[keep], ix[keep], blo[keep], bhi[keep]

    # node assembly: foreground nodes per inclusion, then surviving background
    fg_x = [fg.nodes for fg in foregrounds]
    n_fg = sum(len(x) for x in fg_x)
    bg_x = 0.5 * (blo + bhi)
    bg_h = hb / 2.0 ** level
    n_incl = len(domain.inclusions)
    xs = np.concatenate(fg_x + [bg_x]) if n_fg else bg_x
    h = np.concatenate([np.full(len(x), fg.spacing) for x, fg in zip(fg_x, foregrounds)] + [bg_h])
    member = np.zeros((len(xs), 1 + n_incl), dtype=bool)
    interface = np.zeros(len(xs), dtype=bool)
    cell_parts = []
    intf_nodes = []
    off = 0
    for i, fg in enumerate(foregrounds):
        member[off:off + len(fg.nodes), 1 + i] = True
        interface[off + fg.interface] = True
        intf_nodes.append(off + fg.interface)
        c = fg.cells
        cell_parts.append(replace(c, owner=c.owner + off))
        off += len(fg.nodes)
    member[n_fg:, 0] = True
    owners = np.arange(n_fg, n_fg + len(bg_x))

    # coincident foreground / background nodes share one record
    merge_tol = 1e-8 * hb if merge_tol is None else merge_tol
    merged = 0
    if n_fg:
        from scipy.spatial import cKDTree
        hits = cKDTree(xs[:n_fg]).query(bg_x, distance_upper_bound=merge_tol)
        dup = np.flatnonzero(np.isfinite(hits[0]))
        if len(dup):
            merged = len(dup)
            warnings.warn(f"merged {merged} background nodes coincident with foreground nodes",
                          RuntimeWarning, stacklevel=2)
            owners[dup] = hits[1][dup]
            member[hits[1][dup], 0] = True
            alive = np.ones(len(xs), dtype=bool)
            alive[n_fg + dup] = False
            remap = np.cumsum(alive) - 1
            owners = np.where(owners >= n_fg, remap[owners], owners)
            xs, h, member, interface = xs[alive], h[alive], member[alive], interface[alive]

    origin = np.where(level > 0, REFINED, GRID)
    grid = _box_cells(blo, bhi, owners, MATRIX, GRID, level)
    grid.origin = origin
    # merged owners do not sit at the cell centre: recompute their moments
    if merged:
        for L in np.flatnonzero(owners < n_fg):
            x0 = xs[owners[L]]
            c = 0.5 * (blo[L] + bhi[L])
            grid.moments[L] += grid.volume[L] * (c - x0) ** 2
    cells = CellSet.concat(cell_parts + [grid]) if cell_parts else grid
    cloud = NodeCloud(xs, h, member, interface)

    matrix_measure = domain.matrix_measure
    missing = matrix_measure - float(grid.volume.sum())
    return EmbeddedDiscretization(
        domain=domain, cloud=cloud, cells=cells, h_background=hb,
        h_foreground=tuple(fg.spacing for fg in foregrounds), n_levels=tuple(n_R),
        interface_nodes=tuple(intf_nodes), interface_quad=interface_quadrature(domain),
        outer_quad=outer_quadrature(domain, hb), removed_nodes=removed[0],
        removed_cells=removed[0], merged_nodes=merged, missing_volume=missing,
        params=params,
    )


def background_grid_indices(bg):
    axes = [np.arange(n) for n in bg.counts]
    grids = np.meshgrid(*axes[::-1], indexing="ij")
    return np.column_stack([g.ravel() for g in grids[::-1]])


def interface_quadrature(domain):
    pts, nrm, wts, tag = [], [], [], []
    for i, inc in enumerate(domain.inclusions):
        if domain.dim == 1:
            pts.append(inc.vertices)
            nrm.append(inc.normals)
            wts.append(np.ones(2))
            tag.append(np.full(2, i))
        else:
            # halves of each polyline edge are the faces of the conforming foreground cells
            v = inc.vertices
            loop = np.stack([v, 0.5 * (v + np.roll(v, -1, axis=0))], axis=1).reshape(-1, 2)
            p, n, w = boundary_quadrature(loop, EDGE_GAUSS)
            pts.append(p)
            nrm.append(n)
            wts.append(w)
            tag.append(np.full(len(p), i))
    if not pts:
        d = domain.dim
        return BoundaryQuad(np.zeros((0, d)), np.zeros((0, d)), np.zeros(0), np.zeros(0, dtype=int))
    return BoundaryQuad(np.concatenate(pts), np.concatenate(nrm), np.concatenate(wts),
                        np.concatenate(tag))


def outer_quadrature(domain, h):
    """Segments of length ``h`` along the outer boundary, tagged by side."""
    lo, hi = domain.lo, domain.hi
    if domain.dim == 1:
        return BoundaryQuad(np.array([lo, hi]), np.array([[-1.0], [1.0]]), np.ones(2), np.array([0, 1]))
    t, w = gauss_legendre(EDGE_GAUSS)
    pts, nrm, wts, tag = [], [], [], []
    for side in range(4):
        axis, upper = divmod(side, 2)
        along = 1 - axis
        n_seg = max(1, int(round((hi[along] - lo[along]) / h)))
        s = lo[along] + (hi[along] - lo[along]) * (np.arange(n_seg)[:, None] + t[None, :]) / n_seg
        p = np.empty((s.size, 2))
        p[:, along] = s.ravel()
        p[:, axis] = hi[axis] if upper else lo[axis]
        n = np.zeros(2)
        n[axis] = 1.0 if upper else -1.0
        pts.append(p)
        nrm.append(np.tile(n, (len(p), 1)))
        wts.append(np.tile(w * (hi[along] - lo[along]) / n_seg, n_seg))
        tag.append(np.full(len(p), side))
    return BoundaryQuad(np.concatenate(pts), np.concatenate(nrm), np.concatenate(wts), np.concatenate(tag))


def share_interface_nodes(d, share=True):
    """Give every interface node matrix membership (one node, one DOF block)."""
    member = d.cloud.member.copy()
    if share:
        member[d.cloud.interface, 0] = True
    cloud = NodeCloud(d.cloud.x, d.cloud.h, member, d.cloud.interface, d.cloud.c)
    return replace(d, cloud=cloud, shared=share)


def add_volume_recovery_cells(d):
    """Equal-volume square (interval) cells centred on interface nodes.

    Their total volume equals the matrix volume lost when the fictitious
    region was removed, so matrix cell volumes sum to the matrix measure.
    """
    nodes = np.concatenate(d.interface_nodes) if d.interface_nodes else np.zeros(0, dtype=int)
    if len(nodes) == 0:
        return d
    if not d.missing_volume > 1e-14 * d.domain.box_measure:
        warnings.warn("no missing matrix volume: volume-recovery cells not added",
                      RuntimeWarning, stacklevel=2)
        return d
    each = d.missing_volume / len(nodes)
    half = 0.5 * each ** (1.0 / d.dim)
    x = d.cloud.x[nodes]
    cells = _box_cells(x - half, x + half, nodes, MATRIX, RECOVERY, np.zeros(len(nodes), int))
    # exact equal shares regardless of rounding in the side length
    cells.volume[:] = each
    merged = CellSet.concat([d.cells, cells])
    return replace(d, cells=merged, recovery=True)


def build_discretization(domain, h_background, h_foreground, params=None, recovery=True,
                         share=True, n_foreground=None, c=2.0):
    """Full pipeline: foreground, background, embedding, sharing and recovery."""
    bg = generate_background(domain.lo, domain.hi, h_background)
    fgs = []
    for i, inc in enumerate(domain.inclusions):
        n = None if n_foreground is None else n_foreground
        fgs.append(generate_foreground(inc, h_foreground, index=i, n_nodes=n))
    d = embed(domain, bg, fgs, params)
    if c != 2.0:
        d.cloud.c = c
    d = share_interface_nodes(d, share)
    if recovery:
        d = add_volume_recovery_cells(d)
    return d


def circle_domain(lo, hi, circles, h_foreground):
    """Domain whose interface polylines match the foreground ring layout."""
    incs = [Inclusion.circle(cen, r, spacing=h_foreground) for cen, r in circles]
    return Domain(lo, hi, incs)
