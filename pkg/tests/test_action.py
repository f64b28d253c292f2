import math

import numpy as np
import pytest
from scipy import integrate

from nelson_fk.action import (action_defining, action_ito, action_kernel, action_renormalized, action_trajectory,
                              identity_battery, path_functionals, scan_paths, tail_bound, tail_norm_sq, u_pm)
from nelson_fk.grid import coupling_vector, make_grid
from nelson_fk.levy import path_rng, sample_path, sample_paths
from nelson_fk.model import INF, ModelParams, e_ren


def _still_oracle(t, lam, g=1.0):
    """Independent quadrature of the jump-free defining action with the exact compensator."""
    def f(r):
        om = math.sqrt(r * r + 1)
        return 2 * math.pi * r * g * g / om * (t / om - (1 - math.exp(-t * om)) / om**2)
    return integrate.quad(f, 0, lam, epsabs=1e-14, epsrel=1e-13)[0] - t * e_ren(lam, ModelParams(1, 1, g))


def test_still_path_golden(unit_params, still_path):
    grid = make_grid(unit_params, [1.0])
    ref = _still_oracle(1.0, 1.0)
    assert ref == pytest.approx(-0.99095712985095, abs=1e-12)
    d = action_defining(still_path, 1.0, unit_params, grid, compensator="exact", eren="continuum")
    i = action_ito(still_path, 1.0, unit_params, grid, compensator="exact")
    assert d == pytest.approx(ref, abs=1e-9)
    assert i.real == pytest.approx(ref, abs=1e-9)
    assert abs(i.imag) < 1e-12


def test_still_path_fields(unit_params, still_path):
    grid = make_grid(unit_params, [1.0])
    up, um = u_pm(still_path, 1.0, unit_params, grid)
    v = coupling_vector(grid, unit_params, 1.0)
    om = np.sqrt(grid.kabs**2 + 1)
    g1 = (1 - np.exp(-om)) / om
    np.testing.assert_allclose(up.values, g1 * v.values, atol=1e-14)
    np.testing.assert_allclose(um.values, g1 * v.values, atol=1e-14)


def test_zero_time_and_zero_coupling(unit_params, still_path):
    grid = make_grid(unit_params, [1.0])
    pf = path_functionals(still_path, 0.0, unit_params, grid)
    assert pf.raw == 0 and pf.U_plus.norm() == 0
    path = sample_path(1.0, 0.01, unit_params, path_rng(2, 0))
    free = unit_params.with_(g=0.0)
    assert action_renormalized(path, 1.0, free, grid) == 0.0
    assert action_defining(path, 1.0, free, grid) == 0.0


def test_g_squared_scaling(unit_params):
    grid = make_grid(unit_params, [1.0])
    path = sample_path(1.0, 0.01, unit_params, path_rng(3, 1))
    a = action_renormalized(path, 1.0, unit_params, grid)
    b = action_renormalized(path, 1.0, unit_params.with_(g=2.0), grid)
    assert b == pytest.approx(4 * a, rel=1e-12)


def test_forms_need_finite_cutoff(still_path):
    p = ModelParams(1, 1, 0.5, INF)
    grid = make_grid(p, [INF])
    with pytest.raises(ValueError):
        action_defining(still_path, 1.0, p, grid)
    assert math.isfinite(action_renormalized(still_path, 1.0, p, grid))


def test_ito_equals_defining_on_random_paths():
    p = ModelParams(1.0, 1.0, 1.0)
    grid = make_grid(p, [1.0, 4.0])
    kern = action_kernel(grid, p, [1.0, 4.0], 1e-3)
    b = scan_paths(sample_paths(64, 1.0, 1e-3, p, 7), 1.0, kern)
    assert np.max(np.abs(b.u_def.real - b.u_ito.real)) < 1e-10
    assert np.max(np.abs(b.u_ito.imag)) < 1e-10


def test_identity_battery_rows():
    rows = identity_battery(ModelParams(1.0, 1.0, 1.0), (1.0, 2.0), n_paths=100)
    assert [r["lambda"] for r in rows] == [1.0, 2.0]
    for r in rows:
        assert r["median_diff"] <= 1e-4 and r["p99_imag"] <= 1e-3


def test_single_path_matches_batch():
    p = ModelParams(0.5, 1.0, 0.7, 2.0)
    grid = make_grid(p, [2.0])
    path = sample_paths(1, 1.0, 0.01, p, 5)[0]
    kern = action_kernel(grid, p, [2.0], 0.01)
    b = scan_paths([path], 1.0, kern)
    assert action_ito(path, 1.0, p, grid) == pytest.approx(b.u_ito[0, 0], abs=1e-14)
    times, u = action_trajectory(path, 1.0, kern, refine=16)
    assert times[-1] == pytest.approx(1.0) and u[0, 0] == 0
    assert u[-1, 0] == pytest.approx(b.u_ito[0, 0], abs=1e-12)


def test_cutoff_convergence_on_fixed_paths():
    p = ModelParams(1.0, 1.0, 0.5)
    cut = [4.0, 8.0, 16.0, 32.0, INF]
    grid = make_grid(p, cut)
    kern = action_kernel(grid, p, cut, 0.02)
    b = scan_paths(sample_paths(32, 1.0, 0.02, p, 1), 1.0, kern)
    d = np.abs(b.u_ito.real[:, :-1] - b.u_ito.real[:, -1:])
    med = np.median(d, axis=0)
    assert np.all(np.diff(med) < 0)


def test_tail_bound_at_removed_cutoff():
    p = ModelParams(1.0, 1.0, 0.8, INF)
    grid = make_grid(p, [INF])
    for i in range(4):
        path = sample_path(1.0, 0.02, p, path_rng(9, i))
        for U in u_pm(path, 1.0, p, grid):
            for sigma in (1.0, 4.0, 16.0):
                assert tail_norm_sq(U, sigma, 0.5, p) <= tail_bound(sigma, p) * (1 + grid.tol)
