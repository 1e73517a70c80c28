import warnings
from functools import lru_cache

import numpy as np
import pytest

from qcerkpm.benchmarks import build_bar_1d
from qcerkpm.discretize import build_discretization, circle_domain
from qcerkpm.errors import IsolatedNode
from qcerkpm.geometry import MATRIX
from qcerkpm.integration import (all_tables, build_tables, nsni_tables, probe_residual,
                                 vc_assemble_residual, vc_correct)


@lru_cache(maxsize=None)
def disc(hb=0.2, recovery=True, hf=None, half=2.0):
    hf = 0.5 * hb if hf is None else hf
    dom = circle_domain([-half, -half], [half, half], [((0.0, 0.0), 1.0)], hf)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_discretization(dom, hb, hf, recovery=recovery)


@lru_cache(maxsize=None)
def tables(*key):
    return all_tables(disc(*key))


# three quadtree levels need a wider margin to the outer edge
CONFIGS = [(0.2, True), (0.2, False), (0.4, True, 0.05, 2.8), (0.4, False, 0.05, 2.8)]


@pytest.mark.parametrize("key", CONFIGS)
def test_corrected_constraint_residual(key):
    d = disc(*key)
    assert d.n_levels == ((1,) if key[0] == 0.2 else (3,))
    for tag, tb in tables(*key).items():
        r = tb.constraint_residual(corrected=True)
        assert np.abs(r).max() <= 1e-12 * d.boundary_length(tag)


def test_bar_constraint_residual():
    for rec in (True, False):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, d = build_bar_1d(recovery=rec)
        for tag, tb in all_tables(d).items():
            assert np.abs(tb.constraint_residual()).max() <= 1e-12 * d.boundary_length(tag)


def test_conforming_inclusion_needs_no_correction():
    tb = tables(0.2, True)[0]
    assert np.abs(tb.residual).max() <= 1e-10
    assert np.abs(tb.zeta).max() <= 1e-10


def test_matrix_residual_nonzero_before_correction():
    tb = tables(0.2, False)[MATRIX]
    assert np.abs(tb.residual).max() > 1e-6


def test_linear_probe_matches_missing_volume():
    d = disc(0.2, False)
    grad = np.array([0.7, -1.3])
    r = probe_residual(d, MATRIX, lambda p: p @ grad + 0.25)
    missing = d.subdomain_measure(MATRIX) - d.cell_volume(MATRIX)
    assert missing > 1e-3
    assert np.allclose(r, missing * grad, atol=1e-10)
    d = disc(0.2, True)
    r = probe_residual(d, MATRIX, lambda p: p @ grad + 0.25)
    assert np.allclose(r, 0.0, atol=1e-10)


def test_stabilization_annihilates_linear_fields():
    d = disc(0.2, True)
    for tag in (MATRIX, 0):
        sel, hess, moments = nsni_tables(d, tag)
        assert len(sel) == len(moments)
        for i in range(2):
            for j in range(2):
                for u in (d.cloud.x[:, 0], d.cloud.x[:, 1], np.ones(d.cloud.n)):
                    assert np.abs(hess[i][j] @ u).max() < 1e-8


def test_smoothed_gradients_reproduce_linears():
    d = disc(0.2, True)
    for tb in tables(0.2, True).values():
        for k, g in enumerate(tb.grad):
            assert np.allclose(g @ d.cloud.x, np.eye(2)[k], atol=1e-10)
            assert np.allclose(g @ np.ones(d.cloud.n), 0.0, atol=1e-10)


def test_residual_helper_matches_tables():
    d = disc(0.2, False)
    r, m = vc_assemble_residual(d, MATRIX)
    tb = build_tables(d, MATRIX, correct=False)
    assert np.array_equal(r, tb.residual)
    assert np.array_equal(m, tb.mass)


def test_recovery_keeps_corrections_small():
    h = 0.2
    with_rec = np.abs(tables(0.2, True)[MATRIX].zeta).max() * h
    without = np.abs(tables(0.2, False)[MATRIX].zeta).max() * h
    assert with_rec <= without


def test_vc_correct():
    z = vc_correct(np.array([[1.0, -2.0], [0.5, 0.0]]), np.array([2.0, 0.25]))
    assert np.allclose(z, [[0.5, -1.0], [2.0, 0.0]])
    with pytest.raises(IsolatedNode):
        vc_correct(np.array([1.0]), np.array([0.0]))
