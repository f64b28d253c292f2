import math

import numpy as np
import pytest

from nelson_fk.fock import CoherentLabel
from nelson_fk.grid import coarse_grid, make_grid
from nelson_fk.mc import (GaussianProfile, PlaneQuadrature, analytic_fiber, fiber_semigroup, fiber_vs_full,
                          free_pairing_fourier, fsum_mean, full_pairing, lambda_sweep, moment_diagnostics,
                          run_paths, semigroup_check, PathJob, Request)
from nelson_fk.model import INF, ModelParams


@pytest.fixture(scope="module")
def coupled():
    return ModelParams(1.0, 1.0, 0.5, 2.0)


@pytest.fixture(scope="module")
def labels(coupled):
    grid = make_grid(coupled, [2.0], radial=6, angular=16)
    f = CoherentLabel.from_function(grid, lambda k: 0.4 * np.exp(-np.sum(k**2, axis=-1)))
    g = CoherentLabel.from_function(grid, lambda k: 0.3j * k[..., 0] * np.exp(-np.sum(k**2, axis=-1)))
    return grid, f, g


def test_fsum_mean():
    m, se = fsum_mean(np.array([1.0, 2.0, 3.0, 4.0]))
    assert m == 2.5 and se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)


def test_zero_time_is_exact(coupled, labels):
    grid, f, g = labels
    e = fiber_semigroup((0.3, 0.0), 0.0, coupled, f, g, grid=grid)
    assert e.std_err == 0.0
    assert e.mean == pytest.approx(np.exp(np.dot(grid.weights * np.conj(g.values), f.values)), rel=1e-14)


def test_free_characteristic_function():
    p = ModelParams(1.0, 1.0, 0.0, 1.0, free_field=True)
    e = fiber_semigroup((1.0, 0.0), 1.0, p, n_paths=4000, seed=2, eps=1e-3)
    target = math.exp(-(math.sqrt(2) - 1))
    assert target == pytest.approx(0.6609, abs=5e-5)
    assert abs(e.mean - target) <= 3 * e.std_err


def test_hermiticity_on_common_paths(coupled, labels):
    grid, f, g = labels
    a = fiber_semigroup((0.4, -0.2), 1.0, coupled, f, g, n_paths=300, seed=4, grid=grid)
    b = fiber_semigroup((0.4, -0.2), 1.0, coupled, g, f, n_paths=300, seed=4, grid=grid)
    assert abs(a.mean - np.conj(b.mean)) <= 3 * (a.std_err + b.std_err)
    # the residual is statistical: per path the two integrands are not conjugate
    assert abs(a.mean - np.conj(b.mean)) > 1e-12


def test_vacuum_diagonal_real_positive(coupled):
    e = fiber_semigroup((0.0, 0.0), 1.0, coupled, n_paths=500, seed=1)
    assert e.mean.real > 0 and abs(e.mean.imag) < 1e-12


def test_modulus_is_xi_independent(coupled):
    grid = make_grid(coupled, [2.0])
    job = PathJob(coupled, grid, (2.0,), 0.01, "truncated", 1.0, 3,
                  requests=tuple(Request(0, xi) for xi in [(0.0, 0.0), (1.0, 0.5), (-3.0, 2.0)]))
    el = run_paths(job, 100, workers=1)["elements"]
    np.testing.assert_allclose(np.abs(el[:, 1]), np.abs(el[:, 0]), rtol=1e-13)
    np.testing.assert_allclose(np.abs(el[:, 2]), np.abs(el[:, 0]), rtol=1e-13)
    norm_bound = np.mean(np.abs(el[:, 0]))
    for c in range(3):
        assert abs(np.mean(el[:, c])) <= norm_bound * (1 + 1e-12)


def test_analytic_fiber():
    p = ModelParams(1.0, 1.0, 0.0, 1.0, free_field=True)
    target = math.exp(1 - math.sqrt(3) / 2)
    assert target == pytest.approx(1.1434, abs=5e-5)
    e = analytic_fiber((0.5j, 0.0), 1.0, p, n_paths=4000, seed=6, eps=1e-3)
    assert abs(e.mean - target) <= 3 * e.std_err
    assert math.isfinite(e.notes["weight_mean"])
    with pytest.raises(ValueError):
        analytic_fiber((1.5j, 0.0), 1.0, p)
    # real zeta reproduces the fiber element on the same paths
    q = ModelParams(1.0, 1.0, 0.5, 2.0)
    a = analytic_fiber((0.7, 0.1), 1.0, q, n_paths=200, seed=8)
    b = fiber_semigroup((0.7, 0.1), 1.0, q, n_paths=200, seed=8)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_sweep_free_case_is_flat():
    p = ModelParams(1.0, 1.0, 0.0, free_field=True)
    s = lambda_sweep((0.5, 0.0), 1.0, p, [2.0, 8.0, INF], n_paths=200, seed=1)
    means = [e.mean for e in s.estimates]
    assert means[0] == means[1] == means[2]
    assert all(d[0] == 0 for d in s.diff_to_top)


def test_sweep_cauchy(coupled):
    s = lambda_sweep((0.0, 0.0), 1.0, coupled, [4.0, 16.0, INF], n_paths=300, seed=2, eps=0.02)
    assert [str(c) for c in s.cutoffs] == ["4.0", "16.0", "inf"]
    assert abs(s.diff_to_top[1][0]) < abs(s.diff_to_top[0][0])
    assert s.sup_path_diff_median[0] > s.sup_path_diff_median[1] > 0 == s.sup_path_diff_median[2]


def test_moment_diagnostics_shape(coupled):
    d = moment_diagnostics(1.0, coupled, [4.0, INF], powers=(1, 2), n_paths=100, refine=8)
    assert set(d["moments"]) == {1, 2}
    for p in (1, 2):
        rows = d["moments"][p]["rows"]
        assert len(rows) == 2 and all(r["mean"] >= 1.0 for r in rows)  # sup includes s = 0


def test_workers_do_not_change_results(coupled, labels):
    grid, f, g = labels
    a = fiber_semigroup((0.2, 0.1), 1.0, coupled, f, g, n_paths=600, seed=5, grid=grid, workers=1)
    b = fiber_semigroup((0.2, 0.1), 1.0, coupled, f, g, n_paths=600, seed=5, grid=grid, workers=2)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.mean == b.mean and a.std_err == b.std_err


def test_semigroup_check(coupled):
    r = semigroup_check((0.3, 0.0), 1.0, 0.4, coupled, n_paths=20)
    assert r["flow_max"] < 1e-8
    assert r["oracle_residual"] < 1e-8
    with pytest.raises(ValueError):
        semigroup_check((0, 0), 1.0, 1.0, coupled)


def test_full_pairing_free_vs_fourier():
    p = ModelParams(1.0, 1.0, 0.0, 1.0, free_field=True)
    rho = GaussianProfile((0.0, 0.0), 1.0, (0.5, 0.0))
    e = full_pairing(rho, rho, None, None, 1.0, p, n_paths=3000, seed=3, eps=1e-3)
    ref = free_pairing_fourier(rho, rho, 1.0, p)
    assert abs(e.mean - ref) <= 3 * e.std_err + 1e-3 * abs(ref)


def test_full_pairing_zero_time(labels, coupled):
    grid, f, g = labels
    rho_a = GaussianProfile((0.0, 0.0), 1.0)
    rho_b = GaussianProfile((0.5, 0.0), 1.0)
    e = full_pairing(rho_a, rho_b, f, g, 0.0, coupled, grid=grid)
    overlap = math.pi * math.exp(-0.25 / 4)
    assert e.std_err == 0
    free = np.exp(np.dot(grid.weights * np.conj(g.values), f.values))
    assert e.mean == pytest.approx(overlap * free, rel=1e-10)


def test_full_pairing_coherent_matches_vacuum_path(coupled, labels):
    grid, _, _ = labels
    rho = GaussianProfile((0.0, 0.0), 1.0)
    zero = np.zeros(grid.size)
    a = full_pairing(rho, rho, None, None, 0.5, coupled, n_paths=50, seed=1, grid=grid)
    b = full_pairing(rho, rho, zero, zero, 0.5, coupled, n_paths=50, seed=1, grid=grid)
    np.testing.assert_allclose(b.samples, a.samples, rtol=1e-10)


def test_fiber_vs_full():
    rho_a = GaussianProfile((0.0, 0.0), 1.0, (0.3, 0.0))
    rho_b = GaussianProfile((0.4, -0.2), 1.2)
    p = ModelParams(1.0, 1.0, 0.4, 2.0)
    assert fiber_vs_full(rho_a, rho_b, 0.0, p)["residual"] < 1e-8
    r = fiber_vs_full(rho_a, rho_b, 1.0, p, n_paths=200, seed=2, grid=coarse_grid(2.0))
    assert r["residual"] < 1e-4
    free = fiber_vs_full(rho_a, rho_b, 1.0, p.with_(g=0.0), n_paths=200, seed=2, grid=coarse_grid(2.0))
    assert free["residual"] < 1e-4


def test_plane_quadrature_gaussian_norm():
    q = PlaneQuadrature.uniform(10.0, 0.25)
    rho = GaussianProfile((0.0, 0.0), 1.0, (1.0, 2.0))
    assert np.dot(q.weights, np.abs(rho(q.nodes)) ** 2) == pytest.approx(math.pi, rel=1e-12)
    # unitary Fourier transform keeps the norm
    qx = PlaneQuadrature.uniform(9.0, 0.2, (1.0, 2.0))
    assert np.dot(qx.weights, np.abs(rho.fourier(qx.nodes)) ** 2) == pytest.approx(math.pi, rel=1e-10)
