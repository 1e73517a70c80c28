import warnings
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcerkpm.assembly import assemble
from qcerkpm.benchmarks import Bar1DSpec, build_bar_1d
from qcerkpm.discretize import (GRID, RECOVERY, REFINED, SubdivisionParams, background_cells,
                                build_discretization, circle_domain, generate_background,
                                generate_foreground, subdivision_level)
from qcerkpm.errors import GridMismatch, UnderResolvedInclusion
from qcerkpm.geometry import MATRIX, Domain, Inclusion, polygon_properties
from qcerkpm.io import dumps_discretization


@lru_cache(maxsize=None)
def plate(recovery=True, hb=0.2):
    dom = circle_domain([-2.0, -2.0], [2.0, 2.0], [((0.0, 0.0), 1.0)], 0.5 * hb)
    return build_discretization(dom, hb, 0.5 * hb, recovery=recovery)


@pytest.mark.parametrize("hb, hf, expected", [(0.2, 0.1, 1), (0.1, 0.1, 0), (0.05, 0.1, 0),
                                              (0.35, 0.1, 2), (0.34, 0.1, 1), (0.8, 0.1, 3)])
def test_subdivision_level(hb, hf, expected):
    assert subdivision_level(hb, hf, 0.5) == expected


def test_foreground_tiles_inclusion():
    inc = Inclusion.circle([0.0, 0.0], 1.0, spacing=0.1)
    fg = generate_foreground(inc, 0.1)
    assert inc.n_vertices == 63
    assert np.isclose(fg.cells.volume.sum(), inc.area, rtol=1e-10)
    assert np.allclose(np.hypot(*fg.nodes[fg.interface].T), 1.0)
    # each node lies in its own cell
    for L, poly in enumerate(fg.cells.polygons):
        owner = fg.nodes[fg.cells.owner[L]]
        clipped = poly - owner
        cross = clipped[:, 0] * np.roll(clipped[:, 1], -1) - clipped[:, 1] * np.roll(clipped[:, 0], -1)
        assert np.all(cross >= -1e-12)


def test_foreground_too_coarse():
    inc = Inclusion.interval(0.0, 0.1)
    with pytest.raises(UnderResolvedInclusion):
        generate_foreground(inc, 0.1)


def test_background_grid():
    bg = generate_background([-2, -2], [2, 2], 0.2)
    cells = background_cells(bg)
    assert cells.n == 400
    assert np.isclose(cells.volume.sum(), 16.0)
    assert np.allclose(cells.moments, 0.2**4 / 12)
    with pytest.raises(GridMismatch):
        generate_background([0, 0], [1, 1], 0.3)


def test_embedding_invariants():
    d = plate()
    dom = d.domain
    inc = dom.inclusions[0]
    bg_nodes = d.cloud.member[:, 0] & ~d.cloud.interface
    assert not np.any(inc.contains(d.cloud.x[bg_nodes], strict=True))
    grid = np.isin(d.cells.origin, [GRID, REFINED])
    q = grid[d.cells.bq_cell]
    assert not np.any(inc.contains(d.cells.bq_points[q], tol=-dom.tol))
    assert np.all(d.cloud.member[d.cloud.interface, 0])
    assert np.all(d.cloud.member[d.cloud.interface, 1])
    assert d.n_levels == (1,)
    assert np.any(d.cells.origin == REFINED)


def test_refined_cells_are_balanced():
    dom = circle_domain([-2.0, -2.0], [2.0, 2.0], [((0.0, 0.0), 1.0)], 0.05)
    d = build_discretization(dom, 0.4, 0.05)
    assert d.n_levels == (3,)
    grid = np.flatnonzero(np.isin(d.cells.origin, [GRID, REFINED]))
    lo = np.array([p.min(axis=0) for p in (d.cells.polygons[k] for k in grid)])
    hi = np.array([p.max(axis=0) for p in (d.cells.polygons[k] for k in grid)])
    level = d.cells.level[grid]
    tol = 1e-9
    for a in range(len(grid)):
        # face neighbours: touching boxes that overlap with positive length along one axis
        touch = np.all((lo <= hi[a] + tol) & (hi >= lo[a] - tol), axis=1)
        overlap = np.minimum(hi, hi[a]) - np.maximum(lo, lo[a])
        touch &= np.any(overlap > tol, axis=1)
        touch[a] = False
        assert np.all(np.abs(level[touch] - level[a]) <= 1)


def test_recovery_volume_conservation():
    for d in (plate(True), plate(True, 0.1)):
        assert np.isclose(d.cell_volume(MATRIX), d.domain.matrix_measure, rtol=1e-10, atol=0)
        rec = d.cells.origin == RECOVERY
        assert rec.sum() == d.domain.inclusions[0].n_vertices
        assert np.allclose(d.cells.volume[rec], d.missing_volume / rec.sum())
    d = plate(False)
    assert not np.any(d.cells.origin == RECOVERY)
    assert np.isclose(d.cell_volume(MATRIX) + d.missing_volume, d.domain.matrix_measure)


def test_cell_geometry_consistent():
    d = plate()
    for L in range(0, d.cells.n, 7):
        if d.cells.origin[L] == RECOVERY:
            continue
        cell = d.cells.cell(L)
        props = polygon_properties(cell.polygon, ref=d.cloud.x[cell.owner])
        assert np.isclose(cell.volume, props.area, rtol=1e-12)
        assert np.isclose(cell.weights.sum(), np.linalg.norm(np.diff(np.vstack([cell.polygon, cell.polygon[:1]]),
                                                                        axis=0), axis=1).sum())
        assert np.allclose(cell.moments, [props.mx, props.my], rtol=1e-10, atol=1e-16)


def test_bar_embedding():
    _, d = build_bar_1d()
    assert d.cloud.n - 30 < 31
    assert np.isclose(d.cells.volume.sum(), 3.0, rtol=1e-12)
    assert np.any(d.cells.origin == REFINED)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, d0 = build_bar_1d(recovery=False)
    assert not np.any(d0.cells.origin == RECOVERY)


def test_sharing_does_not_duplicate_nodes():
    a = plate()
    dom = a.domain
    b = build_discretization(dom, 0.2, 0.1, share=False)
    assert a.cloud.n == b.cloud.n
    assert not np.any(b.cloud.member[b.cloud.interface, 0])


def test_unshared_interface_loses_rank():
    # conforming bar: without shared nodes the interface coupling is rank deficient
    conds = {}
    for share in (True, False):
        problem, d = build_bar_1d(Bar1DSpec(lengths=(1.0, 1.0, 1.0)), share=share, recovery=False)
        s = np.linalg.svd(assemble(problem, d).K.toarray(), compute_uv=False)
        conds[share] = s[0] / s[-1]
        if not share:
            assert (s < 1e-12 * s[0]).sum() >= 2
    assert conds[True] < 1e6
    assert conds[False] > 1e12 * conds[True] / 1e6


def test_deterministic_output():
    dom = circle_domain([-2.0, -2.0], [2.0, 2.0], [((0.0, 0.0), 1.0)], 0.1)
    one = dumps_discretization(build_discretization(dom, 0.2, 0.1))
    two = dumps_discretization(build_discretization(dom, 0.2, 0.1))
    assert one == two


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(0.45, 0.8), st.sampled_from([0.2, 0.25]))
def test_volume_conservation_property(cx, cy, r, hb):
    dom = circle_domain([-1.5, -1.5], [1.5, 1.5], [((cx, cy), r)], 0.5 * hb)
    d = build_discretization(dom, hb, 0.5 * hb, params=SubdivisionParams())
    total = d.cells.volume.sum()
    assert abs(total - dom.box_measure) / dom.box_measure <= 1e-10


def test_one_dimensional_domain():
    dom = Domain([0.0], [2.0], [Inclusion.interval(0.62, 1.31)])
    d = build_discretization(dom, 0.1, 0.05)
    assert np.isclose(d.cells.volume.sum(), 2.0, rtol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(0.45, 0.8))
def test_cell_contours_close(cx, cy, r):
    # every smoothing cell's boundary rule integrates the normal to zero
    dom = circle_domain([-1.5, -1.5], [1.5, 1.5], [((cx, cy), r)], 0.1)
    d = build_discretization(dom, 0.2, 0.1)
    c = d.cells
    for k in range(2):
        s = np.bincount(c.bq_cell, c.bq_normals[:, k] * c.bq_weights, minlength=c.n)
        assert np.abs(s).max() <= 1e-12
