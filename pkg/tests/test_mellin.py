import numpy as np
import pytest
from scipy import integrate

from edgecalc.errors import WindowTruncationError
from edgecalc.grid import ScalarField, make_model_grid
from edgecalc.mellin import (
    WeightData,
    cauchy_riemann_residual,
    inverse_s_gamma_map,
    mellin_transform,
    s_gamma_map,
    weight_line_transform,
)
from edgecalc.sobolev import cone_norm_local, cylinder_norm


def gaussian(grid, center=0.0, width=1.0):
    return np.exp(-0.5 * ((grid.t - center) / width) ** 2)


def test_mellin_transform_of_exponential():
    grid = make_model_grid(T=30.0, N_t=1024, N_sigma=8, N_u=8)
    value = mellin_transform(grid, np.exp(-grid.r), 1.0)
    assert value == pytest.approx(1.0, rel=1e-10)


def test_mellin_transform_is_linear(grid):
    profile = gaussian(grid, 1.0)
    z = 0.5 + 2.0j
    assert mellin_transform(grid, 2 * profile, z) / mellin_transform(grid, profile, z) == pytest.approx(2.0, rel=1e-14)


def test_mellin_transform_of_cutoff_matches_adaptive_quadrature():
    grid = make_model_grid(T=16.0, N_t=2048, N_sigma=8, N_u=8)
    # omega is 1 below eps1, so only [eps1, eps2] needs quadrature
    tail, _ = integrate.quad(lambda r: r * float(grid.cutoff(r)), grid.eps1, grid.eps2,
                             epsabs=0.0, epsrel=1e-13, limit=200)
    expected = grid.eps1 ** 2 / 2 + tail
    value = mellin_transform(grid, grid.omega, 2.0)
    assert value.real == pytest.approx(expected, rel=1e-8)
    assert abs(value.imag) < 1e-14


def test_mellin_transform_rejects_truncated_profiles(grid):
    with pytest.raises(WindowTruncationError, match="window truncation unsound"):
        mellin_transform(grid, np.ones(grid.N_t), 1.0)
    with pytest.raises(ValueError):
        mellin_transform(grid, np.ones(grid.N_t - 1), 1.0)


@pytest.mark.parametrize("z", [0.5 + 0.0j, 2.0 + 1.0j, -1.0 - 3.0j])
def test_mellin_transform_is_holomorphic(grid, z):
    assert cauchy_riemann_residual(grid, gaussian(grid, 0.5), z) <= 1e-6


def test_weight_line_transform_samples_the_mellin_transform(grid):
    w = WeightData(0.0, 2.0)
    profile = gaussian(grid)
    f = ScalarField.from_function(grid, lambda t, s, u: np.exp(-0.5 * t ** 2) + 0 * s + 0 * u)
    samples = weight_line_transform(f, w)
    assert np.all(samples.line.samples.real == w.beta(grid.m))
    expected = np.array([mellin_transform(grid, profile, z) for z in samples.line.samples])
    # sigma modes carry d sigma, the constant mode picks up 2 pi
    column = samples.values[:, 0, 0] / (2 * np.pi)
    np.testing.assert_allclose(column, expected, atol=1e-9 * np.abs(expected).max())
    np.testing.assert_allclose(samples.values[:, 1:, :], 0.0, atol=1e-12)


def test_weight_line_transform_of_zero(grid):
    samples = weight_line_transform(ScalarField.zeros(grid), WeightData(1.0, 0.5))
    assert not np.any(samples.values)


def test_s_gamma_map_round_trip(grid, make_field):
    f = make_field(grid)
    w = WeightData(1.0, 1.3)
    back = inverse_s_gamma_map(s_gamma_map(f, w), w)
    np.testing.assert_allclose(back.values, f.values, atol=1e-12 * f.max_abs)


def test_s_gamma_map_is_the_substitution_at_the_middle_weight(grid, make_field):
    f = make_field(grid)
    np.testing.assert_array_equal(s_gamma_map(f, WeightData(0.0, (grid.m + 1) / 2)).values, f.values)


def test_weighted_norm_equals_cylinder_norm_of_the_substituted_field(grid, make_field):
    f = make_field(grid, u_dependent=False)
    w = WeightData(2.0, 1.7)
    expected = cylinder_norm(s_gamma_map(f, w), w.s)
    assert cone_norm_local(f, w) == pytest.approx(expected, rel=1e-10)


def test_weight_line_mass_matches_direct_quadrature(grid, make_field):
    f = make_field(grid, u_dependent=False)
    w = WeightData(0.0, 2.0)
    weighted = np.exp(-w.beta(grid.m) * grid.t)[:, None] * f.cone_profile()
    direct = np.sqrt(grid.dt * np.sum(np.abs(weighted) ** 2) * 2 * np.pi / grid.N_sigma)
    assert cone_norm_local(f, w) == pytest.approx(direct, rel=1e-8)


def test_weight_data_must_be_finite():
    with pytest.raises(ValueError):
        WeightData(np.inf, 1.0)
    assert WeightData(1.0, 2.0).beta(1) == -1.0
