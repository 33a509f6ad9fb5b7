import numpy as np
import pytest

from edgecalc.errors import DegenerateSymbolError
from edgecalc.forms import FormField
from edgecalc.grid import ScalarField, make_model_grid, random_field
from edgecalc.operators import (
    EdgeOperator,
    Term,
    apply,
    assemble_hodge_derham,
    assemble_hodge_laplace,
    exterior_derivative,
    fuchs_model,
    identity,
    named_operator,
)
from edgecalc.sobolev import group_action
from edgecalc.symbols import (
    Covector,
    Window,
    admissible_weights,
    boundary_symbol,
    check_boundary_ellipticity,
    conormal_coefficients,
    edge_symbol_apply,
    indicial_roots,
    indicial_roots_extended,
    mellin_conormal_symbol,
    report_to_frame,
    unit_covectors,
)

FUNCTION = (0, 0, 0)


@pytest.fixture(scope="module")
def hodge_derham():
    return assemble_hodge_derham(None)


@pytest.fixture
def covectors(rng):
    return unit_covectors(rng, 100)


@pytest.mark.parametrize("r", [0.0, 0.4])
def test_laplace_symbol_is_the_fiber_norm(r):
    c = Covector(r, 1.0, 2.0, 0.3, -1.2, 0.7)
    symbol = boundary_symbol(assemble_hodge_laplace(1), c)
    np.testing.assert_allclose(symbol.values, c.fiber_norm ** 2 * np.eye(3), atol=1e-14)


def test_symbol_of_the_square_is_the_square_of_the_symbol(hodge_derham, covectors):
    laplace = assemble_hodge_laplace(None)
    for c in covectors:
        left = boundary_symbol(hodge_derham, c) @ boundary_symbol(hodge_derham, c)
        right = boundary_symbol(laplace, c)
        assert np.linalg.norm(left.values - right.values) <= 1e-10 * np.linalg.norm(right.values)


def test_boundary_symbol_needs_a_nonzero_fiber(hodge_derham):
    with pytest.raises(ValueError):
        boundary_symbol(hodge_derham, Covector(0.0, 0.0, 0.0, 0.0, 0.0, 0.0))


@pytest.mark.parametrize(
    "P, passed",
    [
        (assemble_hodge_laplace(1), True),
        (assemble_hodge_derham(None), True),
        (named_operator("hodge-derham", 1), True),
        (exterior_derivative(), False),
        (assemble_hodge_derham(1), False),
    ],
    ids=["laplace", "hodge-derham", "parity", "d", "non-square"],
)
def test_boundary_ellipticity(P, passed, covectors):
    report = check_boundary_ellipticity(P, covectors)
    assert report.passed is passed
    if passed:
        # sigma_b squares to |fiber|^2 on the unit sphere
        assert report.min_singular_value == pytest.approx(1.0, rel=1e-10)


def test_conormal_symbol_of_simple_operators():
    for z in (0.0, 1.5 - 2.0j):
        np.testing.assert_array_equal(mellin_conormal_symbol(identity(), z), np.eye(8))
        assert mellin_conormal_symbol(fuchs_model([0.0, 1.0]), z)[0, 0] == z
        assert mellin_conormal_symbol(fuchs_model([0.0, 0.0, 1.0], 1.0), z, 3)[0, 0] == pytest.approx(z ** 2 - 9)


@pytest.mark.parametrize("P", [assemble_hodge_derham(None), assemble_hodge_laplace(1), fuchs_model([2.0, -1.0, 1.0], 1.0)])
def test_conormal_and_boundary_symbols_agree_at_the_edge(P):
    rho = 0.8
    top = conormal_coefficients(P, 0)[-1] * (-1j * rho) ** P.order
    symbol = boundary_symbol(P, Covector(0.0, 0.0, 0.0, rho, 0.0, 0.0))
    np.testing.assert_allclose(symbol.values, top, atol=1e-14)


def test_indicial_roots_of_model_operators():
    report = indicial_roots(fuchs_model([0.0, 1.0]), Window(-5.0, 5.0), band_limit=0)
    assert [(root.z, root.multiplicity, root.mode) for root in report.roots] == [(0.0, 1, 0)]

    report = indicial_roots(fuchs_model([0.0, 0.0, 1.0], 1.0), Window(-5.0, 5.0), modes=[3])
    assert [root.z.real for root in report.roots] == pytest.approx([-3.0, 3.0], abs=1e-12)
    assert report.D == pytest.approx([-3.0, 3.0], abs=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_hodge_derham_roots_per_mode(hodge_derham, k):
    report = indicial_roots(hodge_derham, Window(-5.0, 5.0), modes=[k])
    found = sorted((root.z.real, root.multiplicity) for root in report.roots)
    expected = sorted((z, 2) for z in {1.0 + k, 1.0 - k, float(k), float(-k)} if -5 <= z <= 5)
    assert [m for _, m in found] == [m for _, m in expected]
    np.testing.assert_allclose([z for z, _ in found], [z for z, _ in expected], atol=1e-8)
    assert all(abs(root.z.imag) < 1e-8 for root in report.roots)


@pytest.mark.parametrize("k", [1, 2])
def test_hodge_derham_roots_match_extended_precision(hodge_derham, k):
    report = indicial_roots(hodge_derham, Window(-5.0, 5.0), modes=[k])
    precise = [z for z in indicial_roots_extended(hodge_derham, k) if -5 <= z.real <= 5]
    for z in precise:
        assert min(abs(z - root.z) for root in report.roots) <= 1e-8


def test_roots_of_real_operators_come_in_conjugate_pairs():
    report = indicial_roots(fuchs_model([2.0, 0.0, 1.0]), Window(-5.0, 5.0), band_limit=0)
    values = sorted((root.z for root in report.roots), key=lambda z: z.imag)
    assert len(values) == 2
    assert values[0] == pytest.approx(np.conj(values[1]), abs=1e-12)
    assert abs(values[1].imag) == pytest.approx(np.sqrt(2.0), rel=1e-12)


def test_vanishing_conormal_symbol_is_degenerate():
    P = EdgeOperator(1, (FUNCTION,), (FUNCTION,), {(FUNCTION, FUNCTION): (Term(1.0, 1, 1),)})
    with pytest.raises(DegenerateSymbolError, match="degenerate symbol"):
        indicial_roots(P, Window(-5.0, 5.0), band_limit=0)


def test_admissible_weights_split_at_excluded_values():
    report = admissible_weights(fuchs_model([0.0, 1.0]), (0.0, 2.0), band_limit=0)
    assert report.admissible == [(0.0, 1.0), (1.0, 2.0)]

    report = admissible_weights(fuchs_model([1.0, 1.0]), (-1.0, 1.5), band_limit=0)
    assert report.roots == []
    assert report.admissible == [(-1.0, 1.5)]


def test_hodge_derham_excluded_weights_follow_the_roots(hodge_derham):
    report = admissible_weights(hodge_derham, (-1.0, 4.0), band_limit=2)
    excluded = sorted({round(1.0 - root.z.real, 8) for root in report.roots})
    np.testing.assert_allclose(report.excluded_weights, excluded, atol=1e-8)
    for a, b in report.admissible:
        assert not any(a < g < b for g in report.excluded_weights)
    frame = report_to_frame(report)
    assert frame.columns == ["mode_k", "re_z", "im_z", "multiplicity"]
    assert frame.height == len(report.roots)


@pytest.fixture(scope="module")
def cone_grid():
    return make_model_grid(T=8.0, N_t=128, N_sigma=16, N_u=8)


def scalar_form(values):
    return FormField(values.grid, 0, {FUNCTION: values})


def test_edge_symbol_without_edge_terms_is_the_cone_operator(cone_grid, rng):
    P = fuchs_model([1.0, 0.5, 1.0], 1.0)
    F = scalar_form(random_field(cone_grid, rng, t_center=-1.0, t_width=0.7, u_dependent=False))
    frozen = edge_symbol_apply(P, 0.3, 3.0, F)
    expected = apply(P, F).components[FUNCTION].values
    np.testing.assert_allclose(frozen.components[FUNCTION].values, expected, atol=1e-13 * np.abs(expected).max())
    assert edge_symbol_apply(P, 0.3, 3.0, FormField.zeros(cone_grid, 0)).max_abs == 0.0
    with pytest.raises(ValueError):
        edge_symbol_apply(P, 0.3, 0.0, F)


def test_edge_symbol_is_twisted_homogeneous(cone_grid, rng):
    P = assemble_hodge_laplace(0)
    f = random_field(cone_grid, rng, t_center=-1.0, t_width=0.7, u_dependent=False)
    lam, eta = 2.0, 1.5

    left = edge_symbol_apply(P, 0.0, lam * eta, scalar_form(group_action(f, lam))).components[FUNCTION]
    inner = edge_symbol_apply(P, 0.0, eta, scalar_form(f)).components[FUNCTION]
    right = group_action(ScalarField(cone_grid, inner.values), lam) * lam ** P.order
    error = np.linalg.norm(left.values - right.values) / np.linalg.norm(right.values)
    assert error <= 1e-8
