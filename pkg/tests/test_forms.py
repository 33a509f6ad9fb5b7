import numpy as np
import pytest

from edgecalc.deformation import sl_desk_embedding
from edgecalc.errors import DegreeError
from edgecalc.forms import (
    FormField,
    decompose_form,
    flat,
    labels_of_degree,
    normal_field,
    random_form,
    sharp,
    wedge,
)
from edgecalc.grid import ScalarField

AXES = ("r", "sigma", "u")


def one(grid):
    return ScalarField(grid, np.ones(grid.shape))


def basis_form(grid, label):
    return FormField(grid, sum(label), {label: one(grid)})


def brute_force_wedge(alpha, beta):
    """Wedge by sorting the concatenated basis indices and counting inversions."""
    out = {}
    for l1, c1 in alpha.components.items():
        for l2, c2 in beta.components.items():
            indices = [k for k in range(3) if l1[k]] + [k for k in range(3) if l2[k]]
            if len(set(indices)) < len(indices):
                continue
            inversions = sum(1 for i in range(len(indices)) for j in range(i + 1, len(indices)) if indices[i] > indices[j])
            label = tuple(int(k in indices) for k in range(3))
            out[label] = out.get(label, 0) + (-1) ** inversions * c1.values * c2.values
    return out


@pytest.mark.parametrize(
    "degree, labels",
    [
        (0, [(0, 0, 0)]),
        (1, [(1, 0, 0), (0, 1, 0), (0, 0, 1)]),
        (3, [(1, 1, 1)]),
    ],
)
def test_decompose_form_orders_components(small_grid, degree, labels):
    raw = {f"({a},{p},{e})": np.ones(small_grid.shape) for a, p, e in reversed(labels)}
    form = decompose_form(raw, degree, small_grid)
    assert list(form.labels) == labels
    assert list(labels_of_degree(degree)) == labels
    again = decompose_form(form, degree)
    assert again.labels == form.labels
    for label in labels:
        np.testing.assert_array_equal(again.components[label].values, form.components[label].values)


def test_decompose_form_rejects_mixed_degrees(small_grid):
    with pytest.raises(DegreeError, match="inconsistent label degrees"):
        decompose_form({(1, 0, 0): np.ones(small_grid.shape), (1, 1, 0): np.ones(small_grid.shape)}, 1, small_grid)
    with pytest.raises(DegreeError):
        FormField(small_grid, 2, {(1, 0, 0): one(small_grid)})


@pytest.mark.parametrize(
    "label, axis, power",
    [((1, 0, 0), "r", 0), ((0, 1, 0), "sigma", -1), ((0, 0, 1), "u", 0)],
)
def test_sharp_raises_with_the_edge_metric(small_grid, label, axis, power):
    v = sharp(basis_form(small_grid, label))
    expected = small_grid.along(small_grid.r ** power, 0) * np.ones(small_grid.shape)
    for name in AXES:
        values = getattr(v, name).values
        if name == axis:
            np.testing.assert_allclose(values, expected, rtol=1e-15)
        else:
            assert not np.any(values)


def test_flat_undoes_sharp(small_grid, rng):
    xi = random_form(small_grid, rng, 1, t_center=0.0, t_width=1.0)
    back = flat(sharp(xi))
    for label in xi.labels:
        np.testing.assert_allclose(back.components[label].values, xi.components[label].values, atol=1e-12 * xi.max_abs)
    with pytest.raises(DegreeError):
        sharp(random_form(small_grid, rng, 2))


def test_wedge_of_basis_forms(small_grid):
    dr = basis_form(small_grid, (1, 0, 0))
    r_dsigma = basis_form(small_grid, (0, 1, 0))
    du = basis_form(small_grid, (0, 0, 1))

    assert wedge(dr, dr).max_abs == 0.0
    left = wedge(r_dsigma, du)
    right = wedge(du, r_dsigma)
    np.testing.assert_array_equal(left.components[(0, 1, 1)].values, -right.components[(0, 1, 1)].values)
    volume = wedge(wedge(dr, r_dsigma), du)
    np.testing.assert_array_equal(volume.components[(1, 1, 1)].values, 1.0)


@pytest.mark.parametrize("degrees", [(1, 1), (1, 2), (2, 1), (0, 3)])
def test_wedge_matches_brute_force_expansion(small_grid, rng, degrees):
    alpha = random_form(small_grid, rng, degrees[0])
    beta = random_form(small_grid, rng, degrees[1])
    product = wedge(alpha, beta)
    expected = brute_force_wedge(alpha, beta)
    assert product.degree == sum(degrees)
    for label in labels_of_degree(sum(degrees)):
        np.testing.assert_allclose(product.component(label).values, expected.get(label, 0.0), atol=1e-12)


def test_wedge_rejects_degree_overflow(small_grid, rng):
    with pytest.raises(DegreeError, match="degree overflow"):
        wedge(random_form(small_grid, rng, 2), random_form(small_grid, rng, 2))


def test_normal_field_of_zero_form(small_grid):
    V = normal_field(FormField.zeros(small_grid, 1), sl_desk_embedding())
    assert not np.any(V.complex_values)


def test_normal_field_of_radial_form_points_along_the_link(small_grid):
    emb = sl_desk_embedding()
    A = one(small_grid) * 0.25
    V = normal_field(FormField(small_grid, 1, {(1, 0, 0): A}), emb)
    theta = emb.theta(small_grid.sigma)
    for i in range(3):
        assert not np.any(V.x[i].values)
        np.testing.assert_allclose(V.y[i].values, 0.25 * np.broadcast_to(theta[i][None, :, None], small_grid.shape),
                                   atol=1e-15)


def test_normal_field_of_edge_form_translates_in_x(small_grid):
    C = one(small_grid) * 0.5
    V = normal_field(FormField(small_grid, 1, {(0, 0, 1): C}), sl_desk_embedding())
    np.testing.assert_allclose(V.x[2].values, -0.5)
    for i in range(3):
        assert not np.any(V.y[i].values)
    assert not np.any(V.x[0].values) and not np.any(V.x[1].values)


def test_normal_field_needs_a_one_form(small_grid, rng):
    with pytest.raises(DegreeError):
        normal_field(random_form(small_grid, rng, 2), sl_desk_embedding())
