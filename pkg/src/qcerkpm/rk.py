"""Reproducing kernel shape functions with line-of-sight visibility.

Evaluation is batched: a set of points is paired with every visible node of
one subdomain whose support covers it, the per-point moment matrices are
formed with ``bincount`` reductions and inverted in one call, and the result
is returned as sparse ``(n_points, n_nodes)`` matrices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import CoverageError, InvalidArgument
from .geometry import MATRIX, lift_points, segment_visibility

COND_LIMIT = 1e12
_PAIR_CHUNK = 1_500_000


def kernel_eval(z):
    """Cubic B-spline kernel value and derivative with respect to ``z``."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(np.isnan(z)):
        raise InvalidArgument("kernel argument must be non-negative")
    inner = z <= 0.5
    outer = (z > 0.5) & (z <= 1.0)
    w = 1.0 - z
    phi = np.where(inner, 2.0 / 3.0 - 4.0 * z**2 + 4.0 * z**3,
                   np.where(outer, 4.0 / 3.0 * w**3, 0.0))
    dphi = np.where(inner, -8.0 * z + 12.0 * z**2, np.where(outer, -4.0 * w**2, 0.0))
    return phi, dphi


def kernel_second(z):
    """Second derivative of the cubic B-spline kernel."""
    z = np.asarray(z, dtype=float)
    return np.where(z <= 0.5, -8.0 + 24.0 * z, np.where(z <= 1.0, 8.0 * (1.0 - z), 0.0))


@dataclass
class NodeCloud:
    """Node positions, local spacings and subdomain memberships.

    ``member[:, 0]`` flags matrix membership and ``member[:, 1 + i]``
    membership in inclusion ``i``; shared interface nodes carry both.
    """

    x: np.ndarray
    h: np.ndarray
    member: np.ndarray
    interface: np.ndarray
    c: float = 2.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.h = np.asarray(self.h, dtype=float)
        self.member = np.asarray(self.member, dtype=bool)
        self.interface = np.asarray(self.interface, dtype=bool)
        if not self.c > 1.0:
            raise InvalidArgument("normalized support must exceed 1")
        if np.any(self.h <= 0):
            raise InvalidArgument("nodal spacings must be positive")

    @property
    def n(self):
        return len(self.x)

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def a(self):
        return self.c * self.h

    def in_subdomain(self, tag):
        return self.member[:, 0] if tag == MATRIX else self.member[:, tag + 1]

    def nodes_of(self, tag):
        return np.flatnonzero(self.in_subdomain(tag))


@dataclass
class ShapeEval:
    """Shape function data at a batch of points.

    ``psi`` is ``(n_points, n_nodes)``; ``grad[k]`` and ``igrad[k]`` hold the
    direct and implicit gradients in direction ``k`` (empty when not asked for).
    """

    points: np.ndarray
    psi: sp.csr_matrix
    grad: tuple = ()
    igrad: tuple = ()


@dataclass
class PointShape:
    """Shape data at a single point, restricted to contributing nodes."""

    point: np.ndarray
    nodes: np.ndarray
    values: np.ndarray
    gradients: np.ndarray
    implicit: np.ndarray


class RKEvaluator:
    """Batched RK evaluation for one node cloud embedded in a domain."""

    def __init__(self, cloud, domain):
        self.cloud = cloud
        self.domain = domain
        self._trees = {}

    def _tree(self, tag):
        if tag not in self._trees:
            idx = self.cloud.nodes_of(tag)
            if len(idx) == 0:
                raise CoverageError(f"subdomain {tag} has no nodes")
            self._trees[tag] = (idx, cKDTree(self.cloud.x[idx]), self.cloud.a[idx].max())
        return self._trees[tag]

    def pairs(self, points, tag):
        """Visible (point, node) pairs with node support covering the point."""
        idx, tree, amax = self._tree(tag)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dm = cKDTree(pts).sparse_distance_matrix(tree, amax, output_type="ndarray")
        i, j, r = dm["i"], idx[dm["j"]], dm["v"]
        a = self.cloud.a[j]
        keep = r < a
        i, j, r, a = i[keep], j[keep], r[keep], a[keep]
        order = np.lexsort((j, i))
        i, j, r, a = i[order], j[order], r[order], a[order]
        if len(self.domain.inclusions):
            lifted = lift_points(self.domain, tag, pts)
            vis = segment_visibility(self.domain, tag, lifted[i], self.cloud.x[j], lifted=True)
            i, j, r, a = i[vis], j[vis], r[vis], a[vis]
        return i, j, r, a

    def evaluate(self, points, tag, grad=False, implicit=False):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        npts = len(pts)
        n = self.cloud.n
        # bound the pair count per block by a rough density estimate
        idx, _, amax = self._tree(tag)
        per_point = min(len(idx), 4.0 * (np.pi if pts.shape[1] == 2 else 1.0) * self.cloud.c ** pts.shape[1] + 16)
        block = max(1, int(_PAIR_CHUNK // per_point))
        parts = [self._evaluate_block(pts[s:s + block], tag, grad, implicit, s) for s in range(0, npts, block)]
        d = pts.shape[1]

        def stack(k):
            rows = np.concatenate([p[0] for p in parts])
            cols = np.concatenate([p[1] for p in parts])
            vals = np.concatenate([p[2][k] for p in parts])
            return sp.csr_matrix((vals, (rows, cols)), shape=(npts, n))

        psi = stack(0)
        g = tuple(stack(1 + k) for k in range(d)) if grad else ()
        off = 1 + (d if grad else 0)
        ig = tuple(stack(off + k) for k in range(d)) if implicit else ()
        return ShapeEval(pts, psi, g, ig)

    def _evaluate_block(self, pts, tag, grad, implicit, offset):
        i, j, r, a = self.pairs(pts, tag)
        npts, d = pts.shape
        m = d + 1
        phi, dphi = kernel_eval(r / a)
        count = np.bincount(i, weights=(phi > 0), minlength=npts)
        s = np.zeros(npts)
        np.maximum.at(s, i, a)
        bad = np.flatnonzero(count < m)
        if len(bad):
            raise CoverageError(f"point {pts[bad[0]]} is covered by {int(count[bad[0]])} visible nodes",
                                point=pts[bad[0]])
        diff = pts[i] - self.cloud.x[j]
        H = np.concatenate([np.ones((len(i), 1)), diff / s[i, None]], axis=1)
        M = _reduce_outer(i, H, H, phi, npts)
        cond = np.linalg.cond(M)
        bad = np.flatnonzero(~(cond < COND_LIMIT))
        if len(bad):
            raise CoverageError(f"moment matrix at point {pts[bad[0]]} is ill-conditioned "
                                f"(condition {cond[bad[0]]:.3g})", point=pts[bad[0]])
        Minv = np.linalg.inv(M)
        b = Minv[:, :, 0]
        Hb = np.einsum("pk,pk->p", H, b[i])
        out = [phi * Hb]
        if grad:
            with np.errstate(divide="ignore", invalid="ignore"):
                dz = np.where(r > 0, dphi / (a * r), 0.0)[:, None] * diff
            for k in range(d):
                Hk = np.zeros_like(H)
                Hk[:, k + 1] = 1.0 / s[i]
                Mk = (_reduce_outer(i, Hk, H, phi, npts) + _reduce_outer(i, H, Hk, phi, npts)
                      + _reduce_outer(i, H, H, dz[:, k], npts))
                bk = -np.einsum("pab,pbc,pc->pa", Minv, Mk, b)
                gk = (np.einsum("pk,pk->p", H, bk[i]) * phi + b[i, k + 1] / s[i] * phi
                      + Hb * dz[:, k])
                out.append(gk)
        if implicit:
            for k in range(d):
                out.append(-np.einsum("pk,pk->p", H, Minv[i, k + 1, :]) / s[i] * phi)
        return i + offset, j, out


def _reduce_outer(i, A, B, w, npts):
    m = A.shape[1]
    M = np.empty((npts, m, m))
    for p in range(m):
        for q in range(m):
            M[:, p, q] = np.bincount(i, weights=w * A[:, p] * B[:, q], minlength=npts)
    return M


def shape_functions(x, cloud, tag, domain):
    """Values, direct and implicit gradients at one point."""
    ev = RKEvaluator(cloud, domain).evaluate(np.atleast_1d(x)[None, :], tag, grad=True, implicit=True)
    row = ev.psi.getrow(0)
    nodes = row.indices
    grads = np.array([g[0, nodes].toarray().ravel() for g in ev.grad])
    imp = np.array([g[0, nodes].toarray().ravel() for g in ev.igrad])
    return PointShape(ev.points[0], nodes, row.data.copy(), grads, imp)


def implicit_gradient(x, cloud, tag, direction, domain):
    """Implicit-gradient values of every contributing node in one direction."""
    ps = shape_functions(x, cloud, tag, domain)
    return ps.nodes, ps.implicit[direction]
