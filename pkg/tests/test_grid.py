import math

import numpy as np
import pytest

from nelson_fk.grid import (FieldVector, GridMismatchError, GridSpec, apply_heat, apply_phase, coarse_grid,
                            coupling_vector, cutoff_mask, inner, make_grid)
from nelson_fk.model import INF, ModelParams, beta_radial


@pytest.fixture
def grid():
    return GridSpec((0.0, 0.5, 1.0, 2.0, 4.0), radial=6, angular=16)


@pytest.fixture
def field(grid):
    rng = np.random.default_rng(4)
    return FieldVector(grid, rng.normal(size=grid.size) + 1j * rng.normal(size=grid.size))


def test_grid_invariants(grid):
    assert np.all(grid.weights > 0)
    assert len(np.unique(np.round(grid.nodes, 14), axis=0)) == grid.size
    # total weight is the disc area
    assert grid.weights.sum() == pytest.approx(math.pi * 16.0, rel=1e-13)
    with pytest.raises(ValueError):
        GridSpec((0.0, 1.0), angular=7)


def test_inner_properties(grid, field):
    g = FieldVector(grid, np.exp(1j * grid.kabs))
    assert inner(field, field).real > 0 and abs(inner(field, field).imag) < 1e-12
    assert inner(field, g) == pytest.approx(np.conj(inner(g, field)), rel=1e-14)
    ones = FieldVector(grid, np.ones(grid.size))
    assert inner(ones, ones).real == pytest.approx(grid.weights.sum(), rel=1e-14)
    assert inner(FieldVector.zeros(grid), FieldVector.zeros(grid)) == 0
    other = coarse_grid(1.0)
    with pytest.raises(GridMismatchError):
        inner(field, FieldVector.zeros(other))


def test_phase(field):
    x, y = np.array([0.3, -1.2]), np.array([2.0, 0.5])
    np.testing.assert_array_equal(apply_phase((0.0, 0.0), field).values, field.values)
    assert apply_phase(x, field).norm() == pytest.approx(field.norm(), rel=1e-14)
    np.testing.assert_allclose(apply_phase(x, apply_phase(y, field)).values, apply_phase(x + y, field).values,
                               atol=1e-13)


def test_heat(field):
    p = ModelParams(m_b=1.0)
    np.testing.assert_array_equal(apply_heat(0.0, field, p).values, field.values)
    np.testing.assert_allclose(apply_heat(0.3, apply_heat(0.5, field, p), p).values,
                               apply_heat(0.8, field, p).values, rtol=1e-14)
    assert apply_heat(1.0, field, p).norm() <= math.exp(-1.0) * field.norm()
    with pytest.raises(ValueError):
        apply_heat(-0.1, field, p)


def test_heat_at_origin():
    # single nonzero node at the smallest radius: the factor is exp(-omega(k)), near exp(-1)
    g = GridSpec((0.0, 1e-6), radial=1, angular=2)
    f = FieldVector(g, np.array([1.0, 0.0]))
    out = apply_heat(1.0, f, ModelParams(m_b=1.0))
    assert out.values[0] == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_cutoff_mask(grid, field):
    np.testing.assert_array_equal(cutoff_mask(INF, field).values, field.values)
    assert not np.any(cutoff_mask(0.0, field).values)
    once = cutoff_mask(2.0, field)
    np.testing.assert_array_equal(cutoff_mask(2.0, once).values, once.values)
    assert np.all(once.values[grid.kabs >= 2.0] == 0)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 4.0])
def test_coupling_norm(lam):
    p = ModelParams(1.0, 1.0, 0.8)
    grid = make_grid(p, [lam])
    v = coupling_vector(grid, p, lam)
    exact = 2 * math.pi * 0.64 * (math.sqrt(lam**2 + 1) - 1)
    assert v.norm() ** 2 == pytest.approx(exact, rel=grid.tol)
    # the log form is the integral of g^2/omega^2 over the ball
    w = FieldVector.from_radial(grid, lambda r: 0.8 / np.sqrt(r**2 + 1))
    assert cutoff_mask(lam, w).norm() ** 2 == pytest.approx(2 * math.pi * 0.64 * math.log(math.sqrt(lam**2 + 1)),
                                                            rel=grid.tol)


def test_unit_coupling_norm():
    p = ModelParams(1.0, 1.0, 1.0)
    v = coupling_vector(make_grid(p, [1.0]), p, 1.0)
    assert v.norm() ** 2 == pytest.approx(2 * math.pi * (math.sqrt(2) - 1), rel=1e-8)


def test_refinement_changes_v_beta_little():
    p = ModelParams(1.0, 1.0, 0.5)
    for lam in (1.0, 8.0):
        a = make_grid(p, [lam])
        b = a.refined()
        vals = []
        for gr in (a, b):
            v = coupling_vector(gr, p, lam)
            bt = cutoff_mask(lam, FieldVector.from_radial(gr, lambda r: beta_radial(r, p)))
            vals.append(inner(v, bt).real)
        assert abs(vals[0] - vals[1]) <= a.tol * abs(vals[1])


def test_removed_cutoff_grid_reaches_tail():
    p = ModelParams(1.0, 1.0, 0.3)
    g = make_grid(p, [INF])
    assert 2 * math.pi * p.g**2 / math.sqrt(g.r_max**2 + 1) < 1e-3
