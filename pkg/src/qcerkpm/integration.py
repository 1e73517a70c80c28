"""Smoothed nodal integration with variationally consistent correction.

For each subdomain this builds, cell by cell, the boundary-smoothed shape
function gradients, the linear VC correction that restores the discrete
divergence identity on the subdomain, and the smoothed derivatives of the
implicit gradients used by the Taylor-expansion stabilization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CoverageError, IsolatedNode
from .geometry import MATRIX
from .rk import RKEvaluator


@dataclass
class SubdomainTables:
    """Cell-wise integration data of one subdomain.

    Row ``k`` of every cell matrix refers to cell ``cells[k]``; columns are
    global node ids.  ``grad[i]`` holds smoothed gradients, ``grad_bar[i]``
    the VC-corrected test gradients and ``hess[i][j]`` the smoothed
    i-derivative of the implicit j-gradient.
    """

    tag: int
    cells: np.ndarray
    owners: np.ndarray
    volume: np.ndarray
    moments: np.ndarray
    grad: tuple
    grad_bar: tuple
    hess: tuple
    psi_owner: sp.csr_matrix
    theta: sp.csr_matrix
    boundary: np.ndarray
    residual: np.ndarray
    mass: np.ndarray
    zeta: np.ndarray
    corrected: bool

    @property
    def dim(self):
        return len(self.grad)

    def constraint_residual(self, corrected=True):
        """``boundary - sum_L grad V_L`` per node and direction."""
        G = self.grad_bar if corrected else self.grad
        return self.boundary - np.column_stack([g.T @ self.volume for g in G])


def _cell_operator(cells, sel, normals_col, n_nodes_q):
    """Sparse ``(n_cells, n_q)`` matrix of ``n_i w / V`` for the selected cells."""
    q = np.flatnonzero(np.isin(cells.bq_cell, sel))
    row = np.searchsorted(sel, cells.bq_cell[q])
    vals = cells.bq_normals[q, normals_col] * cells.bq_weights[q] / cells.volume[cells.bq_cell[q]]
    return sp.csr_matrix((vals, (row, np.arange(len(q)))), shape=(len(sel), len(q))), q


def subdomain_boundary(d, tag):
    """Quadrature on the full boundary of a subdomain with outward normals."""
    iq = d.interface_quad
    if tag == MATRIX:
        oq = d.outer_quad
        return (np.concatenate([oq.points, iq.points]),
                np.concatenate([oq.normals, -iq.normals]),
                np.concatenate([oq.weights, iq.weights]))
    m = iq.tag == tag
    return iq.points[m], iq.normals[m], iq.weights[m]


def smooth_gradients(d, tag, evaluator=None, implicit=True):
    """Smoothed gradients (and implicit-gradient derivatives) for every cell of ``tag``.

    Returns ``(sel, grad, hess, psi_boundary_pattern)`` with one row per
    selected cell.
    """
    ev = evaluator or RKEvaluator(d.cloud, d.domain)
    cells = d.cells
    sel = np.flatnonzero(cells.subdomain == tag)
    dim = d.dim
    ops = []
    q = None
    for i in range(dim):
        S, q = _cell_operator(cells, sel, i, None)
        ops.append(S)
    try:
        shp = ev.evaluate(cells.bq_points[q], tag, implicit=implicit)
    except CoverageError as exc:
        raise CoverageError(f"{exc} (cell boundary of subdomain {tag})", point=exc.point) from exc
    grad = tuple((S @ shp.psi).tocsr() for S in ops)
    hess = tuple(tuple((S @ g).tocsr() for g in shp.igrad) for S in ops) if implicit else ()
    # any boundary point of a cell where a node contributes
    A = abs(ops[0])
    for S in ops[1:]:
        A = A + abs(S)
    A.data[:] = 1.0
    pattern = (A @ abs(shp.psi)).tocsr()
    return sel, grad, hess, pattern


def build_tables(d, tag, evaluator=None, correct=True):
    """Smoothed gradients, VC correction and stabilization data of one subdomain."""
    ev = evaluator or RKEvaluator(d.cloud, d.domain)
    cells = d.cells
    sel, grad, hess, pattern = smooth_gradients(d, tag, ev)
    owners = cells.owner[sel]
    volume = cells.volume[sel]
    try:
        psi_owner = ev.evaluate(d.cloud.x[owners], tag).psi
    except CoverageError as exc:
        raise CoverageError(f"{exc} (cell owner of subdomain {tag})", point=exc.point) from exc
    theta = (pattern + abs(psi_owner)).tocsr()
    theta.data[:] = 1.0
    theta.eliminate_zeros()

    bp, bn, bw = subdomain_boundary(d, tag)
    bpsi = ev.evaluate(bp, tag).psi
    boundary = np.column_stack([bpsi.T @ (bn[:, j] * bw) for j in range(d.dim)])
    residual = boundary - np.column_stack([g.T @ volume for g in grad])
    mass = theta.T @ volume
    scale = max(d.boundary_length(tag), 1.0)
    lonely = (mass <= 0) & (np.abs(residual).max(axis=1) > 1e-13 * scale)
    if np.any(lonely):
        raise IsolatedNode(f"node {int(np.argmax(lonely))} has a boundary contribution "
                           "but influences no integrated cell")
    zeta = np.zeros_like(residual)
    active = mass > 0
    zeta[active] = residual[active] / mass[active, None]
    if correct:
        grad_bar = tuple((g + theta @ sp.diags(zeta[:, j])).tocsr() for j, g in enumerate(grad))
    else:
        grad_bar = grad
    return SubdomainTables(tag, sel, owners, volume, cells.moments[sel], grad, grad_bar, hess,
                           psi_owner.tocsr(), theta, boundary, residual, mass, zeta, correct)


def vc_correct(residual, mass):
    """Correction coefficients ``r / M`` per node and direction."""
    residual = np.asarray(residual, dtype=float)
    mass = np.asarray(mass, dtype=float)
    if np.any(mass <= 0):
        raise IsolatedNode("every corrected node needs a positive influence volume")
    return residual / mass[:, None] if residual.ndim == 2 else residual / mass


def probe_residual(d, tag, fn):
    """Integration-constraint residual with a single smooth probe ``fn`` in place of a shape function.

    For an affine probe the boundary term is the exact subdomain measure
    times its gradient and the domain term is the total cell volume times
    the gradient, so ``r_j = (V - V_hat) * grad_j fn``.
    """
    cells = d.cells
    sel = np.flatnonzero(cells.subdomain == tag)
    q = np.isin(cells.bq_cell, sel)
    f = fn(cells.bq_points[q])
    domain_term = np.array([(f * cells.bq_normals[q, j] * cells.bq_weights[q]).sum()
                            for j in range(d.dim)])
    bp, bn, bw = subdomain_boundary(d, tag)
    fb = fn(bp)
    boundary_term = np.array([(fb * bn[:, j] * bw).sum() for j in range(d.dim)])
    return boundary_term - domain_term


def all_tables(d, correct=True, evaluator=None):
    """Tables for the matrix followed by each inclusion."""
    ev = evaluator or RKEvaluator(d.cloud, d.domain)
    tags = [MATRIX] + list(range(len(d.domain.inclusions)))
    return {t: build_tables(d, t, ev, correct) for t in tags}


def vc_assemble_residual(d, tag, evaluator=None):
    """Per-node integration-constraint residual ``r`` and influence volume ``M`` before correction."""
    tb = build_tables(d, tag, evaluator, correct=False)
    return tb.residual, tb.mass


def nsni_tables(d, tag, evaluator=None):
    """Smoothed implicit-gradient derivatives and second moments of each cell of ``tag``."""
    sel, _, hess, _ = smooth_gradients(d, tag, evaluator, implicit=True)
    return sel, hess, d.cells.moments[sel]
