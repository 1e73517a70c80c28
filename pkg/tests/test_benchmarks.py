import warnings
from functools import lru_cache

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from qcerkpm.assembly import run
from qcerkpm.benchmarks import (Bar1DSpec, ErrorReport, MicrostructureSpec, PlateInclusionSpec,
                                CircularInclusionSolution, bar_body_force, build_microstructure,
                                error_norms, exact_bar_solution, exact_circular_inclusion,
                                principal_stress, region_quadrature)
from qcerkpm.discretize import RECOVERY, circle_domain
from qcerkpm.errors import InvalidArgument, InvalidLayout
from qcerkpm.geometry import MATRIX


def test_bar_patch_solution():
    spec = Bar1DSpec()
    ex = exact_bar_solution(spec)
    x = np.linspace(0.0, spec.length, 200)
    s = ex.stress(x)
    assert np.ptp(s) == 0.0
    assert np.isclose(ex.u(np.array([spec.length]))[0, 0], spec.g, rtol=1e-14)
    mid = 0.5 * (spec.breakpoints[0] + spec.breakpoints[1])
    ratio = ex.strain(np.array([0.1]))[0, 0] / ex.strain(np.array([mid]))[0, 0]
    assert np.isclose(ratio, 100.0, rtol=1e-13)


def _shoot(spec):
    # integrate u' = sigma / E, sigma' = -b from x = 0; sigma(0) fixed by sigma(L) = 0
    b = bar_body_force(spec)
    E = spec.moduli()
    edges = np.concatenate([[0.0], spec.breakpoints])
    xs = np.linspace(0.0, spec.length, 100)

    def integrate(s0):
        y = np.array([0.0, s0])
        out = np.zeros((len(xs), 2))
        for k in range(3):
            a, c = edges[k], edges[k + 1]
            sel = (xs >= a) & ((xs < c) if k < 2 else (xs <= c))

            def rhs(x, y, k=k):
                return [y[1] / E[k], -b(np.array([x]))[0, 0]]

            sol = solve_ivp(rhs, (a, c), y, method="DOP853", rtol=1e-13, atol=1e-16,
                            t_eval=xs[sel], dense_output=False)
            out[sel] = sol.y.T
            y = solve_ivp(rhs, (a, c), y, method="DOP853", rtol=1e-13, atol=1e-16).y[:, -1]
        return out, y[1]

    _, r0 = integrate(0.0)
    _, r1 = integrate(1.0)
    s0 = -r0 / (r1 - r0)
    return xs, integrate(s0)[0]


def test_sine_bar_matches_shooting_oracle():
    spec = Bar1DSpec(load="sine")
    xs, ref = _shoot(spec)
    ex = exact_bar_solution(spec)
    u = ex.u(xs)[:, 0]
    s = ex.stress(xs)[:, 0]
    assert np.abs(u - ref[:, 0]).max() <= 1e-10 * np.abs(ref[:, 0]).max()
    assert np.abs(s - ref[:, 1]).max() <= 1e-10 * np.abs(ref[:, 1]).max()
    assert abs(ex.stress(np.array([spec.length]))[0, 0]) < 1e-12
    assert ex.u(np.array([0.0]))[0, 0] == 0.0


@pytest.fixture(scope="module")
def inclusion():
    return CircularInclusionSolution(PlateInclusionSpec())


def test_inclusion_interior_is_uniform(inclusion):
    rng = np.random.default_rng(3)
    r = 0.5 * inclusion.spec.diameter * np.sqrt(rng.uniform(0, 0.99, 50))
    t = rng.uniform(0, 2 * np.pi, 50)
    p = np.column_stack([r * np.cos(t), r * np.sin(t)])
    e = inclusion.strain(p, 0)
    assert np.ptp(e, axis=0).max() <= 1e-14 * np.abs(e).max()
    assert np.all(np.isfinite(inclusion.stress(np.zeros((1, 2)))))


def test_inclusion_far_field(inclusion):
    s = inclusion.stress(np.array([[0.0, 1e4], [1e4, 0.0]]), MATRIX)
    F = inclusion.spec.traction
    target = [0.0, F, 0.0] if inclusion.spec.direction == "y" else [F, 0.0, 0.0]
    assert np.allclose(s, target, atol=1e-5 * F)


def test_inclusion_interface_continuity(inclusion):
    t = np.linspace(0.0, 2 * np.pi, 360, endpoint=False)
    n = np.column_stack([np.cos(t), np.sin(t)])
    p = inclusion.a * n
    scale_u = np.abs(inclusion.displacement(p, MATRIX)).max()
    assert np.abs(inclusion.displacement(p, MATRIX) - inclusion.displacement(p, 0)).max() <= 1e-10 * scale_u

    def traction(s):
        return np.column_stack([s[:, 0] * n[:, 0] + s[:, 2] * n[:, 1], s[:, 2] * n[:, 0] + s[:, 1] * n[:, 1]])

    tm, ti = traction(inclusion.stress(p, MATRIX)), traction(inclusion.stress(p, 0))
    assert np.abs(tm - ti).max() <= 1e-10 * inclusion.spec.traction


def test_inclusion_equilibrium_by_differences(inclusion):
    rng = np.random.default_rng(11)
    pts = rng.uniform(-2.0, 2.0, size=(40, 2))
    r = np.hypot(*pts.T)
    pts = pts[np.abs(r - inclusion.a) > 0.05]
    h = 1e-4
    for p in pts:
        tag = MATRIX if np.hypot(*p) > inclusion.a else 0
        ds = [(inclusion.stress(p + h * e, tag) - inclusion.stress(p - h * e, tag))[0] / (2 * h)
              for e in np.eye(2)]
        div = np.array([ds[0][0] + ds[1][2], ds[0][2] + ds[1][1]])
        assert np.abs(div).max() <= 1e-6 * inclusion.spec.traction


def test_inclusion_strain_matches_displacement_gradient(inclusion):
    p = np.array([[0.9, 0.4], [-1.3, 0.7], [0.1, -0.2]])
    h = 1e-6
    for q in p:
        tag = MATRIX if np.hypot(*q) > inclusion.a else 0
        du = [(inclusion.displacement(q + h * e, tag) - inclusion.displacement(q - h * e, tag))[0] / (2 * h)
              for e in np.eye(2)]
        fd = np.array([du[0][0], du[1][1], du[1][0] + du[0][1]])
        assert np.allclose(inclusion.strain(q, tag)[0], fd, rtol=1e-6, atol=1e-9)


@lru_cache(maxsize=None)
def plate_domain(hf=0.05):
    return circle_domain([-2.0, -2.0], [2.0, 2.0], [((0.0, 0.0), 1.0)], hf)


def test_exact_fields_have_zero_error():
    ex = exact_circular_inclusion()
    l2, h1 = error_norms(lambda p, tag=None: (ex.u(p, tag), ex.strain(p, tag), None), ex, plate_domain(), 0.2)
    assert l2 <= 1e-12 and h1 <= 1e-12


def test_error_norms_invariant_to_quadrature_refinement():
    # a smooth perturbation of the exact field, so the rule integrates it to round-off
    ex = exact_circular_inclusion()

    def perturbed(p, tag=None):
        u = ex.u(p, tag) + 1e-3 * np.column_stack([np.sin(p[:, 0]) * p[:, 1] ** 2, np.cos(p[:, 1] + 0.3 * p[:, 0])])
        e = ex.strain(p, tag) + 1e-2 * np.column_stack([np.exp(0.2 * p[:, 0]), p[:, 0] * p[:, 1], np.sin(p[:, 1])])
        return u, e, None

    base = np.array(error_norms(perturbed, ex, plate_domain(), 0.2))
    for h in (0.1, 0.05):
        assert np.allclose(error_norms(perturbed, ex, plate_domain(), h), base, rtol=1e-8, atol=0)


def test_region_quadrature_areas():
    dom = plate_domain()
    q = region_quadrature(dom, 0.2)
    inc = dom.inclusions[0]
    assert np.isclose(q[0][1].sum(), inc.area, rtol=1e-12)
    assert np.isclose(q[MATRIX][1].sum(), dom.box_measure - inc.area, rtol=1e-12)
    # first moment of the inclusion region against the polygon centroid
    p, w = q[0]
    assert np.allclose(w @ p, 0.0, atol=1e-13)


def test_error_report_rates():
    h = [0.2, 0.1, 0.05, 0.025]
    rep = ErrorReport(h=h, l2=[3.0 * x ** 2 for x in h], h1=[x ** 1.5 for x in h], nodes=[1, 2, 3, 4])
    l2, h1 = rep.rates()
    assert np.isclose(l2, 2.0) and np.isclose(h1, 1.5)
    assert [r[0] for r in rep.rows()] == [0, 1, 2, 3]
    rep.failed = [1, 2]
    with pytest.raises(InvalidArgument):
        rep.rates()


def test_microstructure_layout_is_disjoint():
    spec = MicrostructureSpec()
    circles = spec.layout()
    assert len(circles) == spec.count
    assert circles == MicrostructureSpec().layout()
    for i, (c1, r1) in enumerate(circles):
        for c2, r2 in circles[i + 1:]:
            assert np.hypot(c1[0] - c2[0], c1[1] - c2[1]) > r1 + r2
        assert min(c1[0] - r1, c1[1] - r1, spec.side - c1[0] - r1, spec.side - c1[1] - r1) > 0


def test_overlapping_layout_rejected():
    spec = MicrostructureSpec(circles=(((1.5, 1.5), 0.5), ((2.2, 1.5), 0.5)))
    with pytest.raises(InvalidLayout):
        build_microstructure(spec)


THREE = MicrostructureSpec(circles=(((1.0, 1.0), 0.4), ((3.0, 1.2), 0.45), ((2.0, 3.0), 0.5)))


@lru_cache(maxsize=None)
def three_inclusions():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_microstructure(THREE)


def test_three_inclusions_each_processed():
    _, d = three_inclusions()
    assert len(d.domain.inclusions) == 3
    rec_owner = d.cells.owner[d.cells.origin == RECOVERY]
    for i, inc in enumerate(d.domain.inclusions):
        nodes = np.asarray(d.interface_nodes[i])
        assert len(nodes) == inc.n_vertices
        # shared: interface nodes belong to the matrix and to their inclusion
        assert np.all(d.cloud.member[nodes, 0]) and np.all(d.cloud.member[nodes, i + 1])
        assert np.isin(rec_owner, nodes).any()


def test_microstructure_peak_stress_near_interface():
    problem, d = three_inclusions()
    res = run(problem, d, estimate_condition=False)
    # the corners of the clamped edge carry the singular stress of the mixed
    # boundary conditions, so the search stays two cells away from the box
    side, m = THREE.side, 2.0 * d.h_background
    g = np.linspace(m, side - m, 80)
    X, Y = np.meshgrid(g, g)
    p = np.column_stack([X.ravel(), Y.ravel()])
    u, e, s = res.fields.evaluate(p)
    assert np.all(np.isfinite(u)) and np.all(np.isfinite(e)) and np.all(np.isfinite(s))
    peak = p[np.argmax(principal_stress(s))]
    dist = min(abs(np.hypot(peak[0] - c[0], peak[1] - c[1]) - r) for c, r in THREE.layout())
    assert dist <= 2.0 * d.h_background
