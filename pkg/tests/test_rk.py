from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcerkpm.discretize import build_discretization, circle_domain
from qcerkpm.errors import CoverageError, InvalidArgument
from qcerkpm.geometry import MATRIX, Domain, classify_points, line_of_sight
from qcerkpm.rk import (NodeCloud, RKEvaluator, implicit_gradient, kernel_eval, kernel_second,
                        shape_functions)


@lru_cache(maxsize=None)
def embedded():
    dom = circle_domain([-1.0, -1.0], [1.0, 1.0], [((0.05, 0.03), 0.45)], 0.1)
    d = build_discretization(dom, 0.2, 0.1)
    return d, RKEvaluator(d.cloud, d.domain)


def test_kernel_values():
    phi, dphi = kernel_eval(np.array([0.0, 0.5, 1.0, 1.5]))
    assert np.allclose(phi, [2 / 3, 1 / 6, 0.0, 0.0])
    assert np.allclose(dphi, [0.0, -1.0, 0.0, 0.0])
    with pytest.raises(InvalidArgument):
        kernel_eval(np.array([-0.1]))


@pytest.mark.parametrize("z0", [0.5, 1.0])
def test_kernel_c2_at_knots(z0):
    eps = 1e-9
    lo, hi = np.array([z0 - eps]), np.array([z0 + eps])
    for a, b in zip(kernel_eval(lo), kernel_eval(hi)):
        assert abs(a[0] - b[0]) < 1e-7
    assert abs(kernel_second(lo)[0] - kernel_second(hi)[0]) < 1e-6


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1.2))
def test_kernel_derivatives_match_differences(z):
    h = 1e-6
    p1, _ = kernel_eval(np.array([z + h]))
    p0, _ = kernel_eval(np.array([max(z - h, 0.0)]))
    _, d = kernel_eval(np.array([z]))
    assert np.isclose((p1 - p0)[0] / (z + h - max(z - h, 0.0)), d[0], atol=1e-5)
    _, d1 = kernel_eval(np.array([z + h]))
    _, d0 = kernel_eval(np.array([max(z - h, 0.0)]))
    assert np.isclose((d1 - d0)[0] / (z + h - max(z - h, 0.0)), kernel_second(np.array([z]))[0], atol=1e-4)


def _sample_points(d, rng, tag, n=40):
    pts = rng.uniform(-0.99, 0.99, size=(4 * n, 2))
    t = classify_points(d.domain, pts)
    return pts[t == tag][:n]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_reproduction_properties(seed):
    d, ev = embedded()
    rng = np.random.default_rng(seed)
    x = d.cloud.x
    for tag in (MATRIX, 0):
        pts = _sample_points(d, rng, tag)
        sh = ev.evaluate(pts, tag, grad=True, implicit=True)
        psi = sh.psi
        assert np.allclose(psi.sum(axis=1).A.ravel(), 1.0, atol=1e-12)
        assert np.allclose(psi @ x, pts, atol=1e-12)
        for k in range(2):
            e = np.eye(2)[k]
            # direct and implicit gradients reproduce constants and linears
            for g in (sh.grad[k], sh.igrad[k]):
                assert np.allclose(g.sum(axis=1).A.ravel(), 0.0, atol=1e-9)
                assert np.allclose(g @ x, np.tile(e, (len(pts), 1)), atol=1e-9)


def test_gradient_matches_finite_differences():
    d, ev = embedded()
    p = np.array([[0.71, -0.42], [-0.2, 0.1]])
    for row, tag in ((0, MATRIX), (1, 0)):
        sh = ev.evaluate(p[row:row + 1], tag, grad=True)
        for k in range(2):
            h = 1e-6 * np.eye(2)[k]
            fd = (ev.evaluate(p[row:row + 1] + h, tag).psi - ev.evaluate(p[row:row + 1] - h, tag).psi) / 2e-6
            assert np.abs((fd - sh.grad[k]).toarray()).max() < 1e-6


def test_matrix_functions_respect_visibility():
    d, ev = embedded()
    p = np.array([[-0.55, 0.03]])
    nodes = ev.evaluate(p, MATRIX).psi.indices
    for j in nodes:
        assert line_of_sight(p[0], d.cloud.x[j], d.domain, MATRIX)
    behind = np.flatnonzero((d.cloud.x[:, 0] > 0.6) & d.cloud.member[:, 0])
    assert not set(behind) & set(nodes)


def test_point_wrappers():
    d, _ = embedded()
    ps = shape_functions(np.array([0.8, 0.8]), d.cloud, MATRIX, d.domain)
    assert np.isclose(ps.values.sum(), 1.0)
    nodes, vals = implicit_gradient(np.array([0.8, 0.8]), d.cloud, MATRIX, 1, d.domain)
    assert np.allclose(vals @ d.cloud.x[nodes], [0.0, 1.0])


def test_coverage_error_on_sparse_cloud():
    dom = Domain([0.0, 0.0], [1.0, 1.0], [])
    cloud = NodeCloud(np.array([[0.1, 0.1], [0.9, 0.9]]), np.full(2, 0.3), np.ones((2, 1), bool),
                      np.zeros(2, bool))
    with pytest.raises(CoverageError):
        RKEvaluator(cloud, dom).evaluate(np.array([[0.5, 0.5]]), MATRIX)
