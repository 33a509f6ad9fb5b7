import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from edgecalc.errors import DegreeError
from edgecalc.grid import ModelGrid, ScalarField, random_field

logger = logging.getLogger(__name__)

Label = Tuple[int, int, int]  # (a, p, e): dr^a ^ (r dsigma)^p ^ du^e

# Canonical ordering of the degenerate basis at m = q = 1, degree by degree.
LABELS: Tuple[Label, ...] = (
    (0, 0, 0),
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (1, 1, 0), (1, 0, 1), (0, 1, 1),
    (1, 1, 1),
)
TOP_DEGREE = 3


def degree_of(label: Label) -> int:
    return sum(label)


def labels_of_degree(k: Optional[int]) -> Tuple[Label, ...]:
    if k is None:
        return LABELS
    return tuple(label for label in LABELS if degree_of(label) == k)


def label_name(label: Label) -> str:
    a, p, e = label
    return f"({a},{p},{e})"


def parse_label(text: str | Label) -> Label:
    if isinstance(text, tuple):
        label = tuple(int(x) for x in text)
    else:
        match = re.fullmatch(r"\s*\(?\s*(\d)\s*,\s*(\d)\s*,\s*(\d)\s*\)?\s*", text)
        if match is None:
            raise DegreeError(f"Cannot parse component label {text!r}")
        label = tuple(int(x) for x in match.groups())
    if label not in LABELS:
        raise DegreeError(f"Label {label} is outside the degenerate basis for m = q = 1")
    return label


def _require_desk_grid(grid: ModelGrid) -> None:
    if grid.m != 1 or grid.q != 1:
        raise DegreeError(f"Form fields are implemented for m = q = 1, got m={grid.m}, q={grid.q}")


@dataclass
class FormField:
    """
    Edge-degenerate form stored by coefficients on dr ^ (r dsigma)^p ^ du^e.

    degree None marks a mixed-degree field (a section of the full exterior algebra).
    """
    grid: ModelGrid
    degree: Optional[int]
    components: Dict[Label, ScalarField] = field(default_factory=dict)

    def __post_init__(self):
        _require_desk_grid(self.grid)
        if self.degree is not None and not 0 <= self.degree <= TOP_DEGREE:
            raise DegreeError(f"Degree {self.degree} outside 0..{TOP_DEGREE}")
        for label, component in self.components.items():
            if label not in LABELS:
                raise DegreeError(f"Label {label} is outside the degenerate basis")
            if self.degree is not None and degree_of(label) != self.degree:
                raise DegreeError(f"Label {label} has degree {degree_of(label)}, field has degree {self.degree}")
            if component.grid != self.grid:
                raise DegreeError(f"Component {label} lives on a different grid")
        self.components = {label: self.components[label] for label in LABELS if label in self.components}

    @classmethod
    def zeros(cls, grid: ModelGrid, degree: Optional[int]) -> "FormField":
        return cls(grid, degree, {label: ScalarField.zeros(grid) for label in labels_of_degree(degree)})

    @property
    def labels(self) -> Tuple[Label, ...]:
        return tuple(self.components)

    def component(self, label: Label) -> ScalarField:
        return self.components.get(label, ScalarField.zeros(self.grid))

    def restrict(self, degree: int) -> "FormField":
        return FormField(self.grid, degree, {l: c for l, c in self.components.items() if degree_of(l) == degree})

    def as_mixed(self) -> "FormField":
        return FormField(self.grid, None, dict(self.components))

    @property
    def flags(self) -> Tuple[str, ...]:
        return tuple(sorted({flag for c in self.components.values() for flag in c.flags}))

    @property
    def max_abs(self) -> float:
        return max((c.max_abs for c in self.components.values()), default=0.0)

    def _combine(self, other: "FormField", sign: float) -> "FormField":
        if other.grid != self.grid:
            raise DegreeError("Form fields live on different grids")
        degree = self.degree if self.degree == other.degree else None
        components = dict(self.components)
        for label, c in other.components.items():
            components[label] = components[label] + sign * c if label in components else sign * c
        return FormField(self.grid, degree, components)

    def __add__(self, other: "FormField") -> "FormField":
        return self._combine(other, 1.0)

    def __sub__(self, other: "FormField") -> "FormField":
        return self._combine(other, -1.0)

    def __mul__(self, scalar) -> "FormField":
        return FormField(self.grid, self.degree, {l: c * scalar for l, c in self.components.items()})

    __rmul__ = __mul__

    def __neg__(self) -> "FormField":
        return self * -1.0

    def __repr__(self) -> str:
        labels = ", ".join(label_name(l) for l in self.labels)
        return f"FormField(degree={self.degree}, components=[{labels}], grid={self.grid!r})"


@dataclass(frozen=True)
class EdgeMetric:
    """Model metric g_M = r^2 g_X + dr^2 + g_E with flat unit g_X, g_E."""
    grid: ModelGrid

    def dual_coefficients(self) -> Dict[str, np.ndarray]:
        # g*_M = (1/r^2) g*_X + d_r (x) d_r + g*_E
        r = self.grid.r
        return {"r": np.ones_like(r), "sigma": 1.0 / r ** 2, "u": np.ones_like(r)}

    def pointwise_norm_sq(self, F: FormField) -> np.ndarray:
        # the degenerate basis is orthonormal for g_M
        return sum(np.abs(c.values) ** 2 for c in F.components.values())


@dataclass
class VectorField:
    """Coordinate components on d_r, d_sigma, d_u."""
    r: ScalarField
    sigma: ScalarField
    u: ScalarField


def decompose_form(raw, k: int, grid: Optional[ModelGrid] = None) -> FormField:
    """
    Canonical component table for degree-k coefficient data.

    raw may be a FormField or a mapping from labels (tuples or "(a,p,e)" strings) to
    ScalarFields or arrays. Missing labels are zero and are not stored.

    Raises:
        DegreeError: a label does not have degree k.
    """
    if isinstance(raw, FormField):
        if raw.degree != k and any(degree_of(l) != k for l in raw.labels):
            raise DegreeError(f"Form of degree {raw.degree} cannot be read as degree {k}")
        return FormField(raw.grid, k, dict(raw.components))
    if not 0 <= k <= TOP_DEGREE:
        raise DegreeError(f"Degree {k} outside 0..{TOP_DEGREE}")
    components = {}
    for key, value in raw.items():
        label = parse_label(key)
        if degree_of(label) != k:
            raise DegreeError(f"inconsistent label degrees: {label_name(label)} has degree {degree_of(label)}, expected {k}")
        if not isinstance(value, ScalarField):
            if grid is None:
                raise ValueError("A grid is required to wrap raw arrays")
            value = ScalarField(grid, value)
        components[label] = value
    if grid is None:
        if not components:
            raise ValueError("A grid is required for an empty form")
        grid = next(iter(components.values())).grid
    return FormField(grid, k, components)


def sharp(xi: FormField) -> VectorField:
    """Raise a degree-1 form with the dual edge metric."""
    if xi.degree != 1:
        raise DegreeError(f"sharp needs a degree-1 form, got degree {xi.degree}")
    grid = xi.grid
    inv_r = grid.along(1.0 / grid.r, 0)
    return VectorField(
        r=xi.component((1, 0, 0)),
        sigma=xi.component((0, 1, 0)) * inv_r,
        u=xi.component((0, 0, 1)),
    )


def flat(v: VectorField) -> FormField:
    grid = v.r.grid
    r = grid.along(grid.r, 0)
    return FormField(grid, 1, {(1, 0, 0): v.r, (0, 1, 0): v.sigma * r, (0, 0, 1): v.u})


def _basis_wedge(left: Label, right: Label) -> Tuple[int, Optional[Label]]:
    if any(x and y for x, y in zip(left, right)):
        return 0, None
    a1, p1, e1 = left
    a2, p2, e2 = right
    inversions = a2 * (p1 + e1) + p2 * e1
    return (-1) ** inversions, tuple(x + y for x, y in zip(left, right))


def wedge(alpha: FormField, beta: FormField) -> FormField:
    """Exterior product in the degenerate basis; the r factors travel with r dsigma."""
    if alpha.grid != beta.grid:
        raise DegreeError("Form fields live on different grids")
    if alpha.degree is not None and beta.degree is not None and alpha.degree + beta.degree > TOP_DEGREE:
        raise DegreeError(f"degree overflow: {alpha.degree} + {beta.degree} > {TOP_DEGREE}")
    degree = None if alpha.degree is None or beta.degree is None else alpha.degree + beta.degree
    out: Dict[Label, ScalarField] = {}
    for l1, c1 in alpha.components.items():
        for l2, c2 in beta.components.items():
            sign, label = _basis_wedge(l1, l2)
            if label is None:
                continue
            term = c1 * c2 * float(sign)
            out[label] = out[label] + term if label in out else term
    if degree is not None:
        for label in labels_of_degree(degree):
            out.setdefault(label, ScalarField.zeros(alpha.grid))
    return FormField(alpha.grid, degree, out)


def inner_product(F: FormField, G: FormField) -> complex:
    """L^2 pairing in the volume r^m dr dsigma du, i.e. r^(m+1) dt dsigma du."""
    grid = F.grid
    weight = grid.along(np.exp(-(grid.m + 1) * grid.t), 0)
    cell = grid.dt * (2 * np.pi / grid.N_sigma) * (2 * np.pi / grid.N_u)
    total = 0.0 + 0.0j
    for label in set(F.labels) & set(G.labels):
        total += np.sum(F.components[label].values * np.conj(G.components[label].values) * weight)
    return complex(cell * total)


def random_form(grid: ModelGrid, rng: np.random.Generator, degree: Optional[int],
                labels: Optional[Iterable[Label]] = None, **kwargs) -> FormField:
    """Seeded band-limited form; kwargs go to grid.random_field."""
    labels = tuple(labels) if labels is not None else labels_of_degree(degree)
    return FormField(grid, degree, {label: random_field(grid, rng, **kwargs) for label in labels})


def real_part(F: FormField) -> FormField:
    return FormField(F.grid, F.degree, {l: ScalarField(F.grid, c.values.real) for l, c in F.components.items()})


def normal_field(xi: FormField, emb):
    """
    V_Xi = J Phi_*(g*_M Xi): with the frame (d_r Phi, (1/r) d_sigma Phi, d_u Phi) the push-forward
    of Xi^sharp is A e_r + B e_sigma + C e_u, and J (x, y) = (-y, x).
    """
    from edgecalc.deformation import NormalField

    if xi.degree != 1:
        raise DegreeError(f"normal_field needs a degree-1 form, got degree {xi.degree}")
    frame = emb.frame(xi.grid)
    coefficients = [xi.component((1, 0, 0)).values, xi.component((0, 1, 0)).values, xi.component((0, 0, 1)).values]
    push_x = sum(c[np.newaxis] * e.real for c, e in zip(coefficients, frame))
    push_y = sum(c[np.newaxis] * e.imag for c, e in zip(coefficients, frame))
    grid = xi.grid
    x = tuple(ScalarField(grid, -push_y[i]) for i in range(emb.n))
    y = tuple(ScalarField(grid, push_x[i]) for i in range(emb.n))
    return NormalField(x, y)
