import math

import numpy as np
import pytest

from edgecalc.errors import PreconditionError, ScaleOutOfWindowError
from edgecalc.grid import ScalarField, random_field
from edgecalc.mellin import WeightData
from edgecalc.sobolev import (
    bracket,
    cone_norm_local,
    default_group_ensemble,
    edge_norm,
    estimate_group_constants,
    group_action,
    k_norm,
    measure_decay_envelope,
)

LAMBDAS = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0]


@pytest.fixture
def near_field(wide_grid, make_field):
    """A field living where omega = 1, far from both window ends."""
    def factory(**kwargs):
        kwargs.setdefault("t_center", 10.0)
        kwargs.setdefault("t_width", 0.6)
        return make_field(wide_grid, **kwargs)
    return factory


def test_norms_of_zero_field(wide_grid):
    zero = ScalarField.zeros(wide_grid)
    w = WeightData(2.0, 1.5)
    assert cone_norm_local(zero, w) == 0.0
    assert k_norm(zero, w) == 0.0
    assert edge_norm(zero, w) == 0.0
    assert edge_norm(zero, w, global_form=True) == 0.0


def test_cone_norm_at_order_zero_is_the_weighted_l2_norm(wide_grid, near_field):
    f = near_field(u_dependent=False)
    w = WeightData(0.0, 1.0)
    profile = f.cone_profile()
    expected = math.sqrt(wide_grid.dt * np.sum(np.abs(profile) ** 2) * 2 * np.pi / wide_grid.N_sigma)
    assert cone_norm_local(f, w) == pytest.approx(expected, rel=1e-10)


def test_k_norm_equals_cone_norm_where_cutoff_is_one(near_field):
    f = near_field(u_dependent=False)
    w = WeightData(2.0, 1.5)
    assert k_norm(f, w) == pytest.approx(cone_norm_local(f, w), rel=1e-12)


def test_k_norm_adds_the_two_sides_of_the_cutoff(wide_grid, rng):
    near = random_field(wide_grid, rng, t_center=10.0, t_width=0.6, u_dependent=False)
    far = random_field(wide_grid, rng, t_center=-5.0, t_width=0.6, u_dependent=False)
    w = WeightData(1.0, 1.5)
    assert k_norm(near + far, w) == pytest.approx(k_norm(near, w) + k_norm(far, w), rel=1e-10)


def test_single_edge_mode_reduces_to_a_rescaled_k_norm(wide_grid, near_field):
    g = near_field(u_dependent=False)
    eta = 2
    _, _, u = wide_grid.mesh()
    f = ScalarField(wide_grid, g.values * np.exp(1j * eta * u))
    w = WeightData(2.0, 1.5)
    b = float(bracket(eta))
    expected = b ** w.s * k_norm(group_action(g, 1 / b), w)
    assert edge_norm(f, w) == pytest.approx(expected, rel=1e-9)


def test_edge_norm_agrees_across_resolutions(wide_grid):
    coarse_grid = wide_grid.with_counts(N_t=wide_grid.N_t // 2, N_sigma=wide_grid.N_sigma // 2)
    fine = random_field(wide_grid, np.random.default_rng(11), t_center=10.0, t_width=0.6)
    coarse = random_field(coarse_grid, np.random.default_rng(11), t_center=10.0, t_width=0.6)
    w = WeightData(2.0, 1.5)
    assert edge_norm(coarse, w) == pytest.approx(edge_norm(fine, w), rel=1e-4)


@pytest.mark.parametrize("global_form", [False, True])
def test_edge_norm_is_monotone_in_order_and_weight(near_field, global_form):
    f = near_field()
    by_order = [edge_norm(f, WeightData(s, 1.5), global_form) for s in (0.0, 1.0, 2.0, 3.0)]
    by_weight = [edge_norm(f, WeightData(2.0, gamma), global_form) for gamma in (0.5, 1.0, 1.5, 2.0)]
    assert np.all(np.diff(by_order) >= 0)
    assert np.all(np.diff(by_weight) >= 0)


def test_group_action_is_a_group(near_field):
    f = near_field()
    np.testing.assert_array_equal(group_action(f, 1.0).values, f.values)
    back = group_action(group_action(f, 0.5), 2.0)
    np.testing.assert_allclose(back.values, f.values, atol=1e-10 * f.max_abs)


def test_group_action_keeps_support_inside_the_window(near_field):
    with pytest.raises(ScaleOutOfWindowError, match="scale out of window"):
        group_action(near_field(), math.exp(15.0))
    with pytest.raises(ValueError):
        group_action(near_field(), 0.0)


def test_group_action_scales_k_norm_by_a_power_of_lambda(near_field):
    f = near_field(u_dependent=False)
    w = WeightData(2.0, 1.5)
    lambdas = np.array([2.0, 4.0, 8.0, 16.0, 32.0])
    ratios = [k_norm(group_action(f, lam), w) / k_norm(f, w) for lam in lambdas]
    slope = np.polyfit(np.log(lambdas), np.log(ratios), 1)[0]
    assert slope == pytest.approx(w.gamma, abs=0.02)


def test_group_constants_track_the_weight(wide_grid):
    w = WeightData(1.0, 1.5)
    bounds = estimate_group_constants(wide_grid, w, LAMBDAS, ensemble=default_group_ensemble(wide_grid, 3, size=8))
    assert bounds.c_gamma == pytest.approx(w.gamma, abs=0.05)
    assert bounds.holds()


def test_group_constants_reject_degenerate_input(wide_grid):
    w = WeightData(1.0, 1.5)
    constant = [ScalarField(wide_grid, np.ones(wide_grid.shape))]
    with pytest.raises(PreconditionError, match="degenerate"):
        estimate_group_constants(wide_grid, w, LAMBDAS, ensemble=constant)
    with pytest.raises(PreconditionError, match="span"):
        estimate_group_constants(wide_grid, w, [1.0])


def test_sup_envelope_decays_like_the_weight(wide_grid, rng):
    g = random_field(wide_grid, rng, t_center=8.0, t_width=0.6, u_dependent=False)
    w = WeightData(2.0, 2.5)
    result = measure_decay_envelope(g, w, [1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    assert result["exponent"] == pytest.approx(w.gamma - (wide_grid.m + 1) / 2, abs=0.05)
    assert np.all(np.diff(result["radii"]) < 0)
