"""Petrov-Galerkin assembly of the embedded interface problem, sparse LU
solve and post-processing of nodal strains and stresses.

Degrees of freedom are component-major: displacement component ``a`` of
node ``I`` is unknown ``a * n_nodes + I``.  Interface nodes are shared, so
the matrix and inclusion equations are summed into the same rows.
"""
from __future__ import annotations

import glob
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .errors import InvalidArgument, SingularSystem
from .geometry import INTERFACE, MATRIX, classify_points
from .integration import all_tables
from .rk import RKEvaluator

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class Material:
    """Isotropic linear elastic material; 2D is plane stress."""

    E: float
    nu: float = 0.3

    def __post_init__(self):
        if not self.E > 0:
            raise InvalidArgument("Young's modulus must be positive")
        if not -1.0 < self.nu < 0.5:
            raise InvalidArgument("Poisson's ratio must lie in (-1, 0.5)")

    def C(self, dim):
        if dim == 1:
            return np.array([[self.E]])
        f = self.E / (1.0 - self.nu ** 2)
        return f * np.array([[1.0, self.nu, 0.0], [self.nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - self.nu)]])


@dataclass
class HeterogeneousProblem:
    """Boundary value problem on a domain with inclusions.

    ``dirichlet`` lists outer side indices with prescribed displacement
    ``g(points)``; every other side is a traction side with
    ``traction(points, normals)`` (zero when ``None``).  Body forces are
    ``b(points) -> (n, dim)`` per region.  ``alpha`` blends the interface
    traction between the inclusion (1) and the matrix (0) side.
    """

    domain: object
    matrix: Material
    inclusions: tuple
    dirichlet: tuple = ()
    g: Optional[Callable] = None
    traction: Optional[Callable] = None
    body_matrix: Optional[Callable] = None
    body_inclusion: Optional[Callable] = None
    alpha: float = 1.0
    beta: Optional[float] = None
    beta_factor: float = 100.0

    def __post_init__(self):
        if isinstance(self.inclusions, Material):
            self.inclusions = (self.inclusions,) * len(self.domain.inclusions)
        self.inclusions = tuple(self.inclusions)
        if len(self.inclusions) != len(self.domain.inclusions):
            raise InvalidArgument("one material per inclusion is required")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgument("interface blend must lie in [0, 1]")
        if self.beta is not None and not self.beta > 0:
            raise InvalidArgument("Nitsche penalty must be positive")
        self.dirichlet = tuple(int(s) for s in self.dirichlet)

    @property
    def dim(self):
        return self.domain.dim

    def material(self, tag):
        return self.matrix if tag == MATRIX else self.inclusions[tag]

    def penalty(self, h_background):
        return self.beta if self.beta is not None else self.beta_factor * self.matrix.E / h_background


@dataclass
class AssembledSystem:
    K: sp.csr_matrix
    f: np.ndarray
    n_nodes: int
    dim: int
    parts: dict = field(default_factory=dict)

    def dof(self, node, comp=0):
        return comp * self.n_nodes + np.asarray(node)


@dataclass
class Solution:
    d: np.ndarray
    residual: float
    condition: float
    system: AssembledSystem

    @property
    def displacement(self):
        """Generalized nodal coefficients as ``(n_nodes, dim)``."""
        return self.d.reshape(self.system.dim, self.system.n_nodes).T


# -- operators ---------------------------------------------------------------

def strain_operator(G):
    """Engineering strain rows from per-direction gradient matrices."""
    if len(G) == 1:
        return G[0].tocsr()
    gx, gy = G
    return sp.bmat([[gx, None], [None, gy], [gy, gx]], format="csr")


def stabilization_operators(hess):
    """Strain-gradient operators of the Taylor stabilization, one per direction."""
    if len(hess) == 1:
        return [hess[0][0].tocsr()]
    out = []
    for i in range(2):
        hx, hy = hess[i]
        out.append(sp.bmat([[hx, None], [None, hy], [hy, hx]], format="csr"))
    return out


def _block_diag(C, w):
    return sp.kron(sp.csr_matrix(C), sp.diags(w), format="csr")


def _normal_operator(nrm):
    """``eta`` mapping Voigt stress to traction at each point."""
    if nrm.shape[1] == 1:
        return sp.diags(nrm[:, 0])
    nx, ny = sp.diags(nrm[:, 0]), sp.diags(nrm[:, 1])
    return sp.bmat([[nx, None, ny], [None, ny, nx]], format="csr")


def _vector_shape(psi, dim):
    return sp.kron(sp.identity(dim), psi, format="csr")


def stiffness(tables, C):
    """Corrected-test / smoothed-trial stiffness with second-moment stabilization."""
    Bbar = strain_operator(tables.grad_bar)
    Bt = strain_operator(tables.grad)
    K = Bbar.T @ _block_diag(C, tables.volume) @ Bt
    for k, S in enumerate(stabilization_operators(tables.hess)):
        K = K + S.T @ _block_diag(C, tables.moments[:, k]) @ S
    return K.tocsr()


class ContourTraction:
    """Traction ``eta C B`` at contour points from the nearest cell-owning node's smoothed B."""

    def __init__(self, d, tables):
        self.tables = tables
        self.tree = cKDTree(d.cloud.x[tables.owners])

    def rows(self, points):
        _, k = self.tree.query(points)
        return tuple(g[k] for g in self.tables.grad)

    def operator(self, points, normals, C):
        B = strain_operator(self.rows(points))
        return (_normal_operator(normals) @ _block_diag(C, np.ones(len(points))) @ B).tocsr()


def _weights(w, dim):
    return sp.diags(np.tile(w, dim))


def _interface_coupling(d, problem, tabs, traction, evaluator):
    """Interface terms; they depend on the blend ``alpha`` only."""
    dim = d.dim
    iq = d.interface_quad
    alpha = problem.alpha
    K = sp.csr_matrix((dim * d.cloud.n, dim * d.cloud.n))
    parts = {}
    for i in range(len(d.domain.inclusions)):
        m = iq.tag == i
        if not m.any():
            continue
        P, nrm, w = iq.points[m], iq.normals[m], iq.weights[m]
        W = _weights(w, dim)
        Tp = traction[i].operator(P, nrm, problem.inclusions[i].C(dim))
        Nm = _vector_shape(evaluator.evaluate(P, MATRIX).psi, dim)
        Np = _vector_shape(evaluator.evaluate(P, i).psi, dim)
        blend = alpha * Tp
        if alpha < 1.0:
            Tm = traction[MATRIX].operator(P, nrm, problem.matrix.C(dim))
            blend = blend + (1.0 - alpha) * Tm
        K_mp = (Nm.T @ W @ blend).tocsr()
        K_pp = (Np.T @ W @ blend).tocsr()
        parts[("gamma_matrix", i)] = K_mp
        parts[("gamma_inclusion", i)] = K_pp
        K = K + K_mp - K_pp
    return K.tocsr(), parts


def assemble(problem, d, tables=None, evaluator=None):
    """Assemble the non-symmetric stiffness matrix and load vector."""
    dim = d.dim
    N = d.cloud.n
    ev = evaluator or RKEvaluator(d.cloud, d.domain)
    tabs = tables if tables is not None else all_tables(d, evaluator=ev)
    parts = {}
    K = sp.csr_matrix((dim * N, dim * N))
    f = np.zeros(dim * N)
    traction = {}
    for tag, tb in tabs.items():
        mat = problem.material(tag)
        Kd = stiffness(tb, mat.C(dim))
        parts[("domain", tag)] = Kd
        K = K + Kd
        traction[tag] = ContourTraction(d, tb)
        body = problem.body_matrix if tag == MATRIX else problem.body_inclusion
        if body is not None:
            xL = d.cloud.x[tb.owners]
            bL = np.atleast_2d(body(xL)).reshape(len(xL), dim)
            fb = np.concatenate([tb.psi_owner.T @ (bL[:, a] * tb.volume) for a in range(dim)])
            parts[("body", tag)] = fb
            f += fb

    Kg, gparts = _interface_coupling(d, problem, tabs, traction, ev)
    parts.update(gparts)
    K = K + Kg

    oq = d.outer_quad
    dmask = np.isin(oq.tag, problem.dirichlet)
    if not dmask.any():
        warnings.warn("no Dirichlet boundary: the system is singular up to rigid motions",
                      RuntimeWarning, stacklevel=2)
    else:
        P, nrm, w = oq.points[dmask], oq.normals[dmask], oq.weights[dmask]
        W = _weights(w, dim)
        Nd = _vector_shape(ev.evaluate(P, MATRIX).psi, dim)
        Td = traction[MATRIX].operator(P, nrm, problem.matrix.C(dim))
        beta = problem.penalty(d.h_background)
        Kc = (Nd.T @ W @ Td).tocsr()
        Kb = (beta * (Nd.T @ W @ Nd)).tocsr()
        parts["nitsche_consistency"] = Kc
        parts["nitsche_penalty"] = Kb
        K = K - Kc - Kc.T + Kb
        g = np.zeros((len(P), dim)) if problem.g is None else np.atleast_2d(problem.g(P)).reshape(len(P), dim)
        gv = g.T.ravel()
        f += -(Td.T @ (W @ gv)) + beta * (Nd.T @ (W @ gv))
    nmask = ~dmask
    if nmask.any() and problem.traction is not None:
        P, nrm, w = oq.points[nmask], oq.normals[nmask], oq.weights[nmask]
        t = np.atleast_2d(problem.traction(P, nrm)).reshape(len(P), dim)
        Nn = _vector_shape(ev.evaluate(P, MATRIX).psi, dim)
        f += Nn.T @ (_weights(w, dim) @ t.T.ravel())
    return AssembledSystem(K.tocsr(), f, N, dim, parts)


def _null_report(K, n_max=4000):
    if K.shape[0] > n_max:
        return None
    _, s, vt = np.linalg.svd(K.toarray())
    tiny = s < s[0] * 1e-13
    if not tiny.any():
        tiny[-1] = True
    return [np.argsort(-np.abs(v))[:5] for v in vt[tiny]]


def _load_pardiso():
    """The MKL PARDISO wrapper, or ``None`` when it (or MKL) is unavailable."""
    if "PYPARDISO_MKL_RT" not in os.environ:
        for root in (os.path.join(sys.prefix, "lib"), "/usr/local/lib", "/usr/lib"):
            hits = sorted(glob.glob(os.path.join(root, "libmkl_rt.so*")))
            if hits:
                os.environ["PYPARDISO_MKL_RT"] = hits[0]
                break
    try:
        import pypardiso
    except Exception:  # missing package or missing MKL runtime
        return None
    return pypardiso


class _SuperLU:
    name = "superlu"

    def __init__(self, K):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                # the sparsity pattern is structurally symmetric
                self.lu = spla.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1,
                                    options=dict(SymmetricMode=True))
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise SingularSystem(f"factorization failed: {exc}", null_dofs=_null_report(K)) from exc

    def solve(self, b):
        return self.lu.solve(b)

    def free(self):
        self.lu = None


class _Pardiso:
    name = "pardiso"

    def __init__(self, K, module):
        self.K = K.tocsr()
        self.K.sort_indices()
        self.solver = module.PyPardisoSolver()
        self.solver.factorize(self.K)

    def solve(self, b):
        return self.solver.solve(self.K, b)

    def free(self):
        self.solver.free_memory(everything=True)


def factorize(K, backend="auto"):
    """Sparse LU factorization: MKL PARDISO when available, else SuperLU."""
    if backend not in ("auto", "pardiso", "superlu"):
        raise InvalidArgument(f"unknown solver backend {backend!r}")
    if backend != "superlu":
        mod = _load_pardiso()
        if mod is not None:
            return _Pardiso(K, mod)
        if backend == "pardiso":
            raise InvalidArgument("PARDISO backend requested but not available")
    return _SuperLU(K)


def condition_estimate(K, n_max=12000):
    """1-norm condition estimate (NaN for systems larger than ``n_max``)."""
    if K.shape[0] > n_max:
        return float("nan")
    lu = _SuperLU(K).lu
    inv = spla.LinearOperator(K.shape, matvec=lu.solve, rmatvec=lambda x: lu.solve(x, trans="T"),
                              dtype=float)
    # the estimator draws from the global generator; seed it so reruns agree
    state = np.random.get_state()
    try:
        np.random.seed(0)
        inv_norm = spla.onenormest(inv)
    finally:
        np.random.set_state(state)
    return float(abs(K).sum(axis=0).max() * inv_norm)


def backward_error(K, d, f, knorm=None):
    """Normwise backward error ``|K d - f| / (|K| |d| + |f|)`` in the infinity norm."""
    if not np.all(np.isfinite(d)):
        return np.inf
    knorm = spla.norm(K, np.inf) if knorm is None else knorm
    den = knorm * np.abs(d).max(initial=0.0) + np.abs(f).max(initial=0.0)
    return float(np.abs(K @ d - f).max(initial=0.0) / den) if den > 0 else 0.0


def solve(system, refine=3, estimate_condition=True, backend="auto"):
    """Direct sparse LU solve with iterative refinement.

    ``Solution.residual`` is the normwise backward error of the result.
    """
    K = system.K
    f = system.f
    knorm = spla.norm(K, np.inf)
    fac = factorize(K, backend)
    d = fac.solve(f)
    res = backward_error(K, d, f, knorm)
    for _ in range(refine):
        if not (np.isfinite(res) and res > 1e-16):
            break
        d_new = d + fac.solve(f - K @ d)
        res_new = backward_error(K, d_new, f, knorm)
        if not res_new < res:
            break
        d, res = d_new, res_new
    fac.free()
    if not res < 1e-6:
        raise SingularSystem(f"solve failed (backward error {res:.3e})", null_dofs=_null_report(K))
    if res > RESIDUAL_TOL:
        log.warning("backward error %.3e exceeds %.1e", res, RESIDUAL_TOL)
    cond = condition_estimate(K) if estimate_condition else float("nan")
    return Solution(d, res, cond, system)


# -- post-processing -------------------------------------------------------------

class FieldEvaluator:
    """Displacement, strain and stress at arbitrary points.

    Nodal strains come from the smoothed strain operator of each node's cell
    (direct gradients at nodes without a cell in that subdomain) and are
    interpolated with the RK functions of the subdomain holding the point.
    """

    def __init__(self, problem, d, solution, tables, evaluator=None):
        self.problem = problem
        self.d = d
        self.ev = evaluator or RKEvaluator(d.cloud, d.domain)
        self.u = solution.displacement
        dim = d.dim
        self.n_strain = 1 if dim == 1 else 3
        self.nodal_strain = {}
        for tag, tb in tables.items():
            eps = np.full((d.cloud.n, self.n_strain), np.nan)
            nodes = d.cloud.nodes_of(tag)
            B = strain_operator(tb.grad)
            cell_eps = (B @ solution.d).reshape(self.n_strain, -1).T
            owned = np.zeros(d.cloud.n, dtype=bool)
            eps[tb.owners] = cell_eps
            owned[tb.owners] = True
            rest = nodes[~owned[nodes]]
            if len(rest):
                sh = self.ev.evaluate(d.cloud.x[rest], tag, grad=True)
                eps[rest] = _strain_from_grad(sh.grad, self.u)
            self.nodal_strain[tag] = eps

    def region(self, points):
        tags = classify_points(self.d.domain, points)
        if np.any(tags == INTERFACE):
            # interface points take the inclusion side
            p = np.atleast_2d(points)
            for i, inc in enumerate(self.d.domain.inclusions):
                hit = (tags == INTERFACE) & (inc.distance(p) <= self.d.domain.tol)
                tags[hit] = i
        return tags

    def evaluate(self, points, tag=None):
        """``(u, strain, stress)`` at points, all in the given or owning subdomain."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if tag is None:
            tags = self.region(p)
            u = np.empty((len(p), self.d.dim))
            e = np.empty((len(p), self.n_strain))
            s = np.empty_like(e)
            for t in np.unique(tags):
                m = tags == t
                u[m], e[m], s[m] = self.evaluate(p[m], int(t))
            return u, e, s
        psi = self.ev.evaluate(p, tag).psi
        eps_n = self.nodal_strain[tag]
        nodes = self.d.cloud.nodes_of(tag)
        sub = psi[:, nodes]
        u = sub @ self.u[nodes]
        e = sub @ eps_n[nodes]
        s = e @ self.problem.material(tag).C(self.d.dim).T
        return u, e, s


def _strain_from_grad(grad, u):
    if len(grad) == 1:
        return (grad[0] @ u[:, 0])[:, None]
    gx, gy = grad
    return np.column_stack([gx @ u[:, 0], gy @ u[:, 1], gy @ u[:, 0] + gx @ u[:, 1]])


def recover_fields(problem, d, solution, tables, evaluator=None):
    """Nodal strains/stresses per subdomain and a point evaluator."""
    fe = FieldEvaluator(problem, d, solution, tables, evaluator)
    stress = {t: e @ problem.material(t).C(d.dim).T for t, e in fe.nodal_strain.items()}
    return fe.nodal_strain, stress, fe


@dataclass
class RunResult:
    problem: HeterogeneousProblem
    discretization: object
    tables: dict
    system: AssembledSystem
    solution: Solution
    fields: FieldEvaluator


def run(problem, d, correct=True, estimate_condition=True, backend="auto"):
    """Tables, assembly, solve and recovery in one call."""
    ev = RKEvaluator(d.cloud, d.domain)
    tabs = all_tables(d, correct=correct, evaluator=ev)
    system = assemble(problem, d, tabs, ev)
    sol = solve(system, estimate_condition=estimate_condition, backend=backend)
    fe = FieldEvaluator(problem, d, sol, tabs, ev)
    return RunResult(problem, d, tabs, system, sol, fe)
