import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dftgamma.radial import (
    RadialDensity,
    RadialGrid,
    cumulative_charge,
    fit_tail,
    log_slope,
    mass,
    pushforward_scale,
    radial_derivative,
    resample,
)


def ball_volume(a, b):
    return 4.0 * math.pi / 3.0 * (b**3 - a**3)


def test_weights_integrate_constants(grid):
    exact = ball_volume(grid.r_min, grid.r_max)
    assert abs(grid.weights.sum() - exact) / exact <= 1e-12


def test_weights_integrate_linear_profiles(grid):
    exact = math.pi * (grid.r_max**4 - grid.r_min**4)
    assert abs(grid.weights @ grid.nodes - exact) / exact <= 1e-12


def test_cell_volumes_sum_to_ball(grid):
    exact = ball_volume(grid.r_min, grid.r_max)
    assert abs(grid.cell_volumes.sum() - exact) / exact <= 1e-12


def test_nodes_are_log_uniform(grid):
    r = grid.nodes
    assert r[0] == grid.r_min and r[-1] == grid.r_max
    assert np.allclose(np.diff(np.log(r)), grid.h, rtol=1e-9, atol=0)


@pytest.mark.parametrize("kw", [dict(r_min=0.0), dict(r_min=2.0, r_max=1.0), dict(n=10), dict(r_max=math.inf)])
def test_grid_rejects_bad_parameters(kw):
    with pytest.raises(ValueError):
        RadialGrid(**kw)


def test_density_rejects_negative_and_nonfinite(grid):
    with pytest.raises(ValueError):
        RadialDensity(grid, -np.ones(grid.n))
    with pytest.raises(ValueError):
        RadialDensity(grid, np.full(grid.n, np.nan))
    with pytest.raises(ValueError):
        RadialDensity(grid, np.ones(grid.n - 1))


def test_gaussian_mass(grid):
    rho = RadialDensity.from_function(grid, lambda r: np.exp(-(r**2)))
    assert abs(mass(rho) - math.pi**1.5) / math.pi**1.5 <= 1e-4


def test_quadrature_is_second_order():
    errs = []
    for n in (1024, 2048, 4096):
        rho = RadialDensity.from_function(RadialGrid(1e-8, 50.0, n), lambda r: np.exp(-(r**2)))
        errs.append(abs(mass(rho) / math.pi**1.5 - 1.0))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(np.abs(rates - 2.0) <= 0.1)


def test_cumulative_charge_ends_at_mass(grid):
    rho = RadialDensity.from_function(grid, lambda r: np.exp(-r))
    eta = cumulative_charge(rho)
    assert eta[0] == 0.0
    assert np.all(np.diff(eta) >= 0)
    assert abs(eta[-1] - 8.0 * math.pi) / (8.0 * math.pi) <= 1e-4
    assert eta[-1] == pytest.approx(mass(rho), rel=1e-12)


def test_radial_derivative_and_log_slope_of_power_law():
    g = RadialGrid(1e-3, 10.0, 2048)
    rho = RadialDensity.from_function(g, lambda r: r**-3)
    assert np.allclose(log_slope(rho)[1:-1], -3.0, atol=1e-9)
    exact = -3.0 * g.nodes**-4
    assert np.allclose(radial_derivative(rho)[1:-1], exact[1:-1], rtol=1e-4)


def test_fit_tail_recovers_exact_power_law(grid):
    rho = RadialDensity.from_function(grid, lambda r: 0.87 * r**-6)
    p, A = fit_tail(rho, (10.0, 30.0))
    assert abs(p + 6.0) <= 1e-10 and abs(A - 0.87) <= 1e-10


def test_fit_tail_ignores_values_below_floor(grid):
    rho = RadialDensity.from_function(grid, lambda r: np.where(r < 20, r**-4, 1e-40))
    p, _ = fit_tail(rho, (10.0, 30.0), floor=1e-30)
    assert abs(p + 4.0) <= 1e-10
    assert all(math.isnan(v) for v in fit_tail(rho, (25.0, 30.0), floor=1e-30))


def test_resample_is_accurate_for_smooth_profiles(grid):
    rho = RadialDensity.from_function(grid, lambda r: np.exp(-r))
    other = RadialGrid(1e-6, 40.0, 3000)
    out = resample(rho, other)
    assert np.allclose(out.values, np.exp(-other.nodes), rtol=1e-4, atol=1e-12)
    assert resample(rho, grid) is rho


@given(s=st.floats(0.05, 20.0))
def test_pushforward_preserves_mass_and_shape(s):
    g = RadialGrid(1e-8, 50.0, 512)
    rho = RadialDensity.from_function(g, lambda r: np.exp(-r) * (1 + r))
    out = pushforward_scale(rho, s)
    assert abs(mass(out) - mass(rho)) <= 1e-12 * mass(rho)
    assert np.allclose(out.grid.nodes, g.nodes / s)
    assert np.allclose(out.values, s**3 * rho.values)


def test_pushforward_rejects_bad_scale(grid):
    rho = RadialDensity.zeros(grid)
    for s in (0.0, -1.0, math.inf):
        with pytest.raises(ValueError):
            pushforward_scale(rho, s)


@given(
    a=st.floats(0.1, 5.0),
    b=st.floats(0.1, 5.0),
)
def test_mass_is_linear(a, b):
    g = RadialGrid(1e-8, 50.0, 256)
    f1 = RadialDensity.from_function(g, lambda r: np.exp(-r))
    f2 = RadialDensity.from_function(g, lambda r: 1.0 / (1 + r**4))
    combo = a * f1 + b * f2
    assert math.isclose(mass(combo), a * mass(f1) + b * mass(f2), rel_tol=1e-12)


def test_fingerprint_is_plain_data(grid):
    assert grid.fingerprint() == {"r_min": 1e-8, "r_max": 50.0, "n": 4096}
