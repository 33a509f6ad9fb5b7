import numpy as np
import pytest

from edgecalc.deformation import (
    Embedding,
    NormalField,
    calibration_phase,
    deformation_operator,
    deformed_embedding,
    is_special_lagrangian,
    linearization_fd,
    lipschitz_estimate,
    make_edge_embedding,
    neighborhood_threshold,
    pullback_im_omega,
    pullback_kahler,
    quadratic_remainder,
    rotate_phase,
    second_difference,
    sl_desk_embedding,
    tilted_embedding,
)
from edgecalc.errors import DegreeError, EmbeddingError, NeighborhoodError, PreconditionError
from edgecalc.forms import FormField, random_form
from edgecalc.grid import ScalarField, make_model_grid
from edgecalc.mellin import WeightData
from edgecalc.sobolev import form_edge_norm


@pytest.fixture(scope="module")
def desk():
    return sl_desk_embedding()


def edge_translation(grid, C):
    return FormField(grid, 1, {(0, 0, 1): ScalarField(grid, np.full(grid.shape, C))})


def test_circle_link_and_line_edge(desk, small_grid):
    assert desk.n == 3
    assert desk.phase == pytest.approx(np.pi / 2, abs=1e-14)
    position = desk.position(small_grid)
    assert position.shape == (3,) + small_grid.shape
    np.testing.assert_allclose(np.hypot(position[0].real, position[1].real),
                               np.broadcast_to(small_grid.r[:, None, None], small_grid.shape), rtol=1e-14)
    np.testing.assert_allclose(position[2].imag, np.broadcast_to(small_grid.u[None, None, :], small_grid.shape))


def test_embedding_validation():
    with pytest.raises(EmbeddingError, match="link not unit"):
        make_edge_embedding([2.0, 0.0, 0.0], [0.0, 0.0, 1.0])
    with pytest.raises(EmbeddingError, match="dimension mismatch"):
        make_edge_embedding("circle", [0.0, 0.0, 1.0], n=4)
    with pytest.raises(EmbeddingError, match="dimension mismatch"):
        make_edge_embedding("circle", [0.0, 1.0])
    with pytest.raises(EmbeddingError, match="dimension mismatch"):
        NormalField((ScalarField.zeros(make_model_grid()),), ())


def test_sampled_link_matches_the_circle(desk, small_grid):
    sampled = make_edge_embedding(lambda s: np.stack([np.cos(s), np.sin(s), 0 * s]), [0.0, 0.0, 1.0], desk.phase)
    assert sampled.theta_kind == "samples"
    np.testing.assert_allclose(sampled.position(small_grid), desk.position(small_grid), atol=1e-12)
    assert is_special_lagrangian(sampled, grid=small_grid).passed


@pytest.mark.parametrize("emb", [sl_desk_embedding(), make_edge_embedding(
    lambda s: np.stack([np.cos(s), np.sin(s), 0 * s]), {"slope": [0.0, 0.0, 1.0], "offset": [0.0, 0.0, 0.5]}, 0.3)],
    ids=["circle", "samples"])
def test_embedding_json_round_trip(emb, small_grid):
    again = Embedding.from_json(emb.to_json())
    assert again.to_dict() == emb.to_dict()
    np.testing.assert_allclose(again.position(small_grid), emb.position(small_grid), atol=1e-14)


def test_special_lagrangian_desk(desk, small_grid):
    report = is_special_lagrangian(desk, grid=small_grid)
    assert report.passed
    assert report.omega_residual <= 1e-12
    assert report.im_residual <= 1e-12


def test_wrong_phase_is_not_special_lagrangian(desk, small_grid):
    report = is_special_lagrangian(sl_desk_embedding(desk.phase + np.pi / 2), grid=small_grid)
    assert report.omega_residual <= 1e-12
    assert report.im_residual == pytest.approx(1.0, abs=1e-12)
    assert not report.passed


def test_tilted_edge_is_not_lagrangian(small_grid):
    report = is_special_lagrangian(tilted_embedding(0.3), grid=small_grid)
    assert report.omega_residual == pytest.approx(0.3, abs=1e-12)
    assert not report.passed


def test_rotate_phase_calibrates_at_zero(desk, small_grid):
    rotated = rotate_phase(desk)
    assert rotated.phase == 0.0
    assert calibration_phase(rotated) == pytest.approx(0.0, abs=1e-12)
    assert is_special_lagrangian(rotated, grid=small_grid).passed


def test_zero_form_leaves_the_embedding_in_place(desk, small_grid):
    zero = FormField.zeros(small_grid, 1)
    np.testing.assert_array_equal(deformed_embedding(desk, zero), desk.position(small_grid))
    assert pullback_kahler(desk, zero).max_abs <= 1e-12
    assert pullback_im_omega(desk, zero).max_abs <= 1e-12
    P = deformation_operator(desk, zero)
    assert set(P.labels) == {(1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1)}
    assert P.max_abs <= 1e-12


def test_edge_form_translates_the_embedding(desk, small_grid):
    moved = deformed_embedding(desk, edge_translation(small_grid, 0.5), check_neighborhood=False)
    shift = moved - desk.position(small_grid)
    np.testing.assert_allclose(shift[2], -0.5, atol=1e-15)
    assert not np.any(shift[:2])


def test_large_displacement_leaves_the_tube(desk, small_grid):
    with pytest.raises(NeighborhoodError, match="leaves tubular neighborhood"):
        deformed_embedding(desk, edge_translation(small_grid, 0.5))


def test_deformations_need_real_one_forms(desk, small_grid, rng):
    with pytest.raises(DegreeError):
        deformed_embedding(desk, random_form(small_grid, rng, 2))
    with pytest.raises(ValueError, match="real"):
        deformed_embedding(desk, random_form(small_grid, rng, 1, amplitude=1e-3))


def test_linearization_is_hodge_derham(desk, small_grid, make_real_one_form):
    xi = make_real_one_form(small_grid)
    study = linearization_fd(desk, xi, [1.0, 0.5, 0.25, 0.125])
    assert study.reference_norm > 0.0
    ratios = study.table["ratio"].to_list()[1:]
    assert ratios == pytest.approx([2.0] * 3, abs=0.05)
    assert study.slope == pytest.approx(1.0, abs=0.05)
    assert study.to_dict()["rows"][0]["t"] == 1.0


def test_linearization_needs_a_special_lagrangian_base(small_grid, make_real_one_form):
    xi = make_real_one_form(small_grid)
    with pytest.raises(EmbeddingError):
        linearization_fd(tilted_embedding(0.3), xi, [1.0, 0.5])
    with pytest.raises(ValueError):
        linearization_fd(sl_desk_embedding(), xi, [1.0, 0.0])


def test_remainder_is_quadratic(desk, small_grid, make_real_one_form):
    ensemble = [make_real_one_form(small_grid) for _ in range(2)]
    study = quadratic_remainder(desk, ensemble, levels=4)
    assert study.scales.size == 8
    assert study.slope == pytest.approx(2.0, abs=0.1)


def test_second_difference_does_not_depend_on_the_base(desk, small_grid, make_real_one_form):
    h1, h2, base = (make_real_one_form(small_grid) for _ in range(3))
    at_zero = second_difference(desk, FormField.zeros(small_grid, 1), h1, h2)
    at_base = second_difference(desk, base, h1, h2)
    scale = at_zero.max_abs
    assert scale > 0.0
    for label in at_zero.labels:
        np.testing.assert_allclose(at_base.components[label].values, at_zero.components[label].values,
                                   atol=1e-8 * scale)


def test_lipschitz_estimate(desk, small_grid, make_real_one_form):
    xi1, xi2 = make_real_one_form(small_grid), make_real_one_form(small_grid)
    report = lipschitz_estimate(desk, [(xi1, xi1), (xi1, xi2)], WeightData(1.0, 1.0))
    assert report.ratios[0] == 0.0
    assert 0.0 < report.constant < np.inf
    assert report.w_out == WeightData(0.0, 0.0)


def test_neighborhood_threshold_keeps_small_forms_in_the_tube(desk, small_grid, make_real_one_form):
    w = WeightData(0.0, 2.5)
    xi = make_real_one_form(small_grid)
    bound = neighborhood_threshold(small_grid, w, ensemble=[xi])
    assert 0.0 < bound.threshold < np.inf
    inside = xi * (0.9 * bound.threshold / form_edge_norm(xi, w))
    deformed_embedding(desk, inside)

    with pytest.raises(PreconditionError):
        neighborhood_threshold(small_grid, WeightData(0.0, 1.5))
