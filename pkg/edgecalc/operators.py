"""
Edge-degenerate operators in normal form.

An EdgeOperator of order l holds, for every (output label, input label) block, a list of
Terms. A Term (c, w, i, alpha, x_tag, e_tag) stands for

    c r^(w - l) (-r d_r)^i (r D_u)^alpha X E,      D_u = -i d_u,

where X and E are the cross-section factors named by the tags. Internally every operator
is also kept as normal-ordered monomials r^p theta^i d_sigma^a d_u^b (theta = -r d_r = d_t),
the representation in which composition and formal adjoints are exact.
"""
import json
import logging
from dataclasses import dataclass, field
from math import comb
from typing import Dict, FrozenSet, Iterable, Optional, Tuple

import numpy as np

from edgecalc.errors import DegreeError
from edgecalc.forms import LABELS, FormField, Label, degree_of, label_name, labels_of_degree, parse_label
from edgecalc.grid import TAIL_ENERGY_THRESHOLD, ScalarField, tail_energy_fraction

logger = logging.getLogger(__name__)

# tag -> (order, sign, axis) ; the tag acts on a scalar coefficient as sign * d^order
X_TAGS = {
    "id": (0, 1, "sigma"),
    "d_X": (1, 1, "sigma"),
    "d*_X": (1, -1, "sigma"),
    "∂_σ": (1, 1, "sigma"),
    "Δ_X": (2, -1, "sigma"),
}
E_TAGS = {
    "id": (0, 1, "u"),
    "d_E": (1, 1, "u"),
    "d*_E": (1, -1, "u"),
    "∂_u": (1, 1, "u"),
    "Δ_E": (2, -1, "u"),
}
PRUNE = 1e-13

Monomial = Tuple[int, int, int, int]  # (p, i, a, b): r^p theta^i d_sigma^a d_u^b
Poly = Dict[Monomial, complex]
Block = Tuple[Label, Label]           # (out, in)


@dataclass(frozen=True)
class Term:
    c: complex
    w: int = 0
    i: int = 0
    alpha: int = 0
    x_tag: str = "id"
    e_tag: str = "id"

    def __post_init__(self):
        if self.x_tag not in X_TAGS:
            raise ValueError(f"Unknown X-factor tag {self.x_tag!r}")
        if self.e_tag not in E_TAGS:
            raise ValueError(f"Unknown E-factor tag {self.e_tag!r}")
        if self.i < 0 or self.alpha < 0:
            raise ValueError(f"Negative Fuchs or edge power in {self}")

    @property
    def x_order(self) -> int:
        return X_TAGS[self.x_tag][0]

    @property
    def e_order(self) -> int:
        return E_TAGS[self.e_tag][0]

    @property
    def total_order(self) -> int:
        return self.i + self.alpha + self.x_order + self.e_order

    def to_dict(self) -> dict:
        c = complex(self.c)
        return {"c": [c.real, c.imag], "w": self.w, "i": self.i, "alpha": self.alpha,
                "x": self.x_tag, "e": self.e_tag}

    @classmethod
    def from_dict(cls, data: dict) -> "Term":
        c = data["c"]
        c = complex(c[0], c[1]) if isinstance(c, (list, tuple)) else complex(c)
        return cls(c, int(data.get("w", 0)), int(data.get("i", 0)), int(data.get("alpha", 0)),
                   data.get("x", "id"), data.get("e", "id"))


def _add_to(poly: Poly, key: Monomial, value: complex) -> None:
    poly[key] = poly.get(key, 0.0) + value


def _pruned(poly: Poly) -> Poly:
    return {k: v for k, v in sorted(poly.items()) if abs(v) > PRUNE}


def term_to_monomials(term: Term, order: int) -> Poly:
    # c r^{w-l} theta^i (r D_u)^alpha X E = c (-i)^alpha sX sE r^{w-l+alpha} (theta - alpha)^i d_sigma^a d_u^{alpha+b}
    ax, sx, _ = X_TAGS[term.x_tag]
    be, se, _ = E_TAGS[term.e_tag]
    scale = complex(term.c) * (-1j) ** term.alpha * sx * se
    p = term.w - order + term.alpha
    poly: Poly = {}
    for j in range(term.i + 1):
        _add_to(poly, (p, j, ax, term.alpha + be), scale * comb(term.i, j) * (-term.alpha) ** (term.i - j))
    return poly


def monomials_to_terms(poly: Poly, order: int) -> Tuple[Term, ...]:
    # r^p theta^j d_u^b = sum_k C(j,k) b^{j-k} i^b r^{p-b} theta^k (r D_u)^b
    collected: Dict[Tuple[int, int, int, str], complex] = {}
    for (p, j, a, b), c in poly.items():
        if a == 0:
            tag, sign = "id", 1
        elif a == 1:
            tag, sign = "∂_σ", 1
        elif a == 2:
            tag, sign = "Δ_X", -1
        else:
            raise ValueError(f"X-derivative order {a} has no cross-section tag")
        for k in range(j + 1):
            value = c * comb(j, k) * b ** (j - k) * (1j) ** b * sign
            key = (p - b + order, k, b, tag)
            collected[key] = collected.get(key, 0.0) + value
    terms = [Term(complex(v), w, i, alpha, tag) for (w, i, alpha, tag), v in sorted(collected.items()) if abs(v) > PRUNE]
    return tuple(terms)


def _poly_product(left: Poly, right: Poly) -> Poly:
    # (r^p theta^i A)(r^p' theta^i' A') = r^{p+p'} (theta - p')^i theta^i' A A'
    out: Poly = {}
    for (p, i, a, b), c in left.items():
        for (p2, i2, a2, b2), c2 in right.items():
            for k in range(i + 1):
                coefficient = c * c2 * comb(i, k) * (-p2) ** (i - k)
                _add_to(out, (p + p2, k + i2, a + a2, b + b2), coefficient)
    return out


def _poly_adjoint(poly: Poly, m: int) -> Poly:
    # adjoint in r^m dr: theta^dagger = (m + 1) - theta, so (r^p theta^i)^dagger = r^p (m + 1 + p - theta)^i
    out: Poly = {}
    for (p, i, a, b), c in poly.items():
        base = np.conj(c) * (-1) ** (a + b)
        for k in range(i + 1):
            _add_to(out, (p, k, a, b), base * comb(i, k) * (m + 1 + p) ** (i - k) * (-1) ** k)
    return out


@dataclass
class EdgeOperator:
    order: int
    inputs: Tuple[Label, ...]
    outputs: Tuple[Label, ...]
    blocks: Dict[Block, Tuple[Term, ...]] = field(default_factory=dict)
    source: str = "user"
    derived_blocks: FrozenSet[Block] = frozenset()

    def __post_init__(self):
        self.inputs = tuple(l for l in LABELS if l in set(self.inputs))
        self.outputs = tuple(l for l in LABELS if l in set(self.outputs))
        for (out, inp), terms in self.blocks.items():
            if out not in self.outputs or inp not in self.inputs:
                raise DegreeError(f"Block {label_name(out)} <- {label_name(inp)} is outside the operator's labels")
            for term in terms:
                if term.total_order > self.order:
                    raise ValueError(f"Term {term} exceeds the operator order {self.order}")
                if term.w < term.e_order:
                    raise ValueError(f"Term {term} is not smooth up to r = 0 (w below the E-factor order)")

    # -- representations -------------------------------------------------
    def monomials(self) -> Dict[Block, Poly]:
        out: Dict[Block, Poly] = {}
        for block, terms in self.blocks.items():
            poly: Poly = {}
            for term in terms:
                for key, value in term_to_monomials(term, self.order).items():
                    _add_to(poly, key, value)
            poly = _pruned(poly)
            if poly:
                out[block] = poly
        return out

    @classmethod
    def from_monomials(cls, order: int, inputs: Iterable[Label], outputs: Iterable[Label],
                       blocks: Dict[Block, Poly], source: str = "user",
                       derived: bool = False) -> "EdgeOperator":
        term_blocks = {}
        for block, poly in blocks.items():
            terms = monomials_to_terms(_pruned(poly), order)
            if terms:
                term_blocks[block] = terms
        derived_blocks = frozenset(term_blocks) if derived else frozenset()
        return cls(order, tuple(inputs), tuple(outputs), term_blocks, source, derived_blocks)

    def canonical(self) -> "EdgeOperator":
        return EdgeOperator.from_monomials(self.order, self.inputs, self.outputs, self.monomials(),
                                           self.source, bool(self.derived_blocks))

    # -- algebra ----------------------------------------------------------
    def compose(self, other: "EdgeOperator") -> "EdgeOperator":
        """self after other."""
        left = self.monomials()
        right = other.monomials()
        out: Dict[Block, Poly] = {}
        for (o, mid), lpoly in left.items():
            for (mid2, i), rpoly in right.items():
                if mid != mid2:
                    continue
                block = out.setdefault((o, i), {})
                for key, value in _poly_product(lpoly, rpoly).items():
                    _add_to(block, key, value)
        return EdgeOperator.from_monomials(self.order + other.order, other.inputs, self.outputs, out,
                                           source="composition", derived=True)

    def __add__(self, other: "EdgeOperator") -> "EdgeOperator":
        blocks: Dict[Block, Poly] = {}
        for op in (self, other):
            for block, poly in op.monomials().items():
                target = blocks.setdefault(block, {})
                for key, value in poly.items():
                    _add_to(target, key, value)
        return EdgeOperator.from_monomials(
            max(self.order, other.order),
            set(self.inputs) | set(other.inputs),
            set(self.outputs) | set(other.outputs),
            blocks, source="sum",
        )

    def __mul__(self, scalar: complex) -> "EdgeOperator":
        blocks = {b: tuple(Term(t.c * scalar, t.w, t.i, t.alpha, t.x_tag, t.e_tag) for t in terms)
                  for b, terms in self.blocks.items()}
        return EdgeOperator(self.order, self.inputs, self.outputs, blocks, self.source, self.derived_blocks)

    __rmul__ = __mul__

    def __neg__(self) -> "EdgeOperator":
        return self * -1.0

    def formal_adjoint(self, m: int = 1) -> "EdgeOperator":
        """Formal adjoint with respect to r^m dr dsigma du and the orthonormal degenerate basis."""
        blocks = {(inp, out): _poly_adjoint(poly, m) for (out, inp), poly in self.monomials().items()}
        return EdgeOperator.from_monomials(self.order, self.outputs, self.inputs, blocks, source="adjoint")

    def restrict(self, degree: Optional[int] = None, inputs: Optional[Iterable[Label]] = None) -> "EdgeOperator":
        """Keep the columns of the given input degree (or label set) and the rows they reach."""
        keep = set(labels_of_degree(degree)) if inputs is None else set(inputs)
        blocks = {b: t for b, t in self.blocks.items() if b[1] in keep}
        outputs = {b[0] for b in blocks} or set(self.outputs)
        derived = frozenset(b for b in self.derived_blocks if b in blocks)
        return EdgeOperator(self.order, tuple(keep & set(self.inputs)), tuple(outputs), blocks, self.source, derived)

    def is_close(self, other: "EdgeOperator", tol: float = 1e-12) -> bool:
        a, b = self.monomials(), other.monomials()
        for block in set(a) | set(b):
            pa, pb = a.get(block, {}), b.get(block, {})
            for key in set(pa) | set(pb):
                if abs(pa.get(key, 0.0) - pb.get(key, 0.0)) > tol:
                    return False
        return True

    @property
    def is_square(self) -> bool:
        return len(self.inputs) == len(self.outputs)

    # -- persistence -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "source": self.source,
            "inputs": [label_name(l) for l in self.inputs],
            "outputs": [label_name(l) for l in self.outputs],
            "blocks": [
                {"out": label_name(o), "in": label_name(i), "derived": (o, i) in self.derived_blocks,
                 "terms": [t.to_dict() for t in terms]}
                for (o, i), terms in sorted(self.blocks.items(), key=lambda kv: (LABELS.index(kv[0][0]), LABELS.index(kv[0][1])))
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict) -> "EdgeOperator":
        blocks, derived = {}, set()
        for entry in data["blocks"]:
            block = (parse_label(entry["out"]), parse_label(entry["in"]))
            blocks[block] = tuple(Term.from_dict(t) for t in entry["terms"])
            if entry.get("derived"):
                derived.add(block)
        inputs = tuple(parse_label(l) for l in data.get("inputs", [])) or tuple({b[1] for b in blocks})
        outputs = tuple(parse_label(l) for l in data.get("outputs", [])) or tuple({b[0] for b in blocks})
        return cls(int(data["order"]), inputs, outputs, blocks, data.get("source", "user"), frozenset(derived))

    @classmethod
    def from_json(cls, text: str) -> "EdgeOperator":
        return cls.from_dict(json.loads(text))

    def __repr__(self) -> str:
        lines = [f"EdgeOperator(order={self.order}, source={self.source}, {len(self.inputs)}->{len(self.outputs)} labels)"]
        for (o, i), terms in self.blocks.items():
            mark = "*" if (o, i) in self.derived_blocks else " "
            rendered = " + ".join(
                f"({complex(t.c).real:+g}{complex(t.c).imag:+g}j) r^{t.w - self.order} θ^{t.i} (rD_u)^{t.alpha} {t.x_tag} {t.e_tag}"
                for t in terms
            )
            lines.append(f" {mark}{label_name(o)} <- {label_name(i)}: {rendered}")
        return "\n".join(lines)


def identity(labels: Iterable[Label] = LABELS) -> EdgeOperator:
    labels = tuple(labels)
    return EdgeOperator(0, labels, labels, {(l, l): (Term(1.0),) for l in labels}, source="identity")


def scalar_operator(order: int, terms: Iterable[Term]) -> EdgeOperator:
    """Operator acting on functions (label (0,0,0)), e.g. model Fuchs operators."""
    label = (0, 0, 0)
    return EdgeOperator(order, (label,), (label,), {(label, label): tuple(terms)}, source="user")


def fuchs_model(coeffs: Iterable[complex], laplace_shift: complex = 0.0) -> EdgeOperator:
    """
    Scalar Fuchs operator r^(-l) (sum_i coeffs[i] (-r d_r)^i - laplace_shift * Delta_X), l = len(coeffs) - 1.

    fuchs_model([0, 1]) is r^-1 (-r d_r); fuchs_model([0, 0, 1], 1) is r^-2 ((-r d_r)^2 - Delta_X),
    whose conormal symbol at X-mode k is z^2 - k^2.
    """
    coeffs = [complex(c) for c in coeffs]
    order = len(coeffs) - 1
    if order < 0:
        raise ValueError("A Fuchs operator needs at least one coefficient")
    if laplace_shift and order < 2:
        raise ValueError(f"Delta_X needs order >= 2, got order {order}")
    terms = [Term(c, 0, i) for i, c in enumerate(coeffs) if c != 0]
    if laplace_shift:
        terms.append(Term(-complex(laplace_shift), 0, 0, 0, "Δ_X"))
    op = scalar_operator(order, terms)
    op.source = "fuchs_model"
    return op


def exterior_derivative() -> EdgeOperator:
    """d on the full exterior algebra at m = q = 1 in the degenerate basis."""
    blocks: Dict[Block, Poly] = {}
    for label in LABELS:
        a, p, e = label
        if a == 0:
            # dr ^ : d_r = -r^{-1} theta
            _add_to(blocks.setdefault(((1, p, e), label), {}), (-1, 1, 0, 0), -1.0)
        if p == 0:
            # (r dsigma) ^ : r^{-1} d_sigma, sign from moving past dr
            _add_to(blocks.setdefault(((a, 1, e), label), {}), (-1, 0, 1, 0), float((-1) ** a))
        if e == 0:
            _add_to(blocks.setdefault(((a, p, 1), label), {}), (0, 0, 0, 1), float((-1) ** (a + p)))
        if a == 0 and p == 1:
            # d(r dsigma) = r^{-1} dr ^ (r dsigma)
            _add_to(blocks.setdefault(((1, 1, e), label), {}), (-1, 0, 0, 0), 1.0)
    return EdgeOperator.from_monomials(1, LABELS, LABELS, blocks, source="d")


def codifferential(m: int = 1) -> EdgeOperator:
    op = exterior_derivative().formal_adjoint(m)
    op.source = "d*"
    return op


def assemble_hodge_derham(k: Optional[int] = None) -> EdgeOperator:
    """
    d + d* on degree-k input, mapping into degrees k - 1 and k + 1; k None gives the
    operator on the whole exterior algebra.

    Raises:
        DegreeError: k outside 0..3.
    """
    if k is not None and not 0 <= k <= 3:
        raise DegreeError(f"Degree {k} outside 0..3")
    full = exterior_derivative() + codifferential()
    full.source = "hodge_derham"
    if k is None:
        return full
    op = full.restrict(k)
    op.source = "hodge_derham"
    return op


def assemble_hodge_derham_parity(parity: int) -> EdgeOperator:
    """d + d* from even (parity 0) or odd (parity 1) forms to the other parity; square."""
    op = assemble_hodge_derham(None).restrict(inputs=[l for l in LABELS if degree_of(l) % 2 == parity % 2])
    op.outputs = tuple(l for l in LABELS if degree_of(l) % 2 != parity % 2)
    op.source = "hodge_derham"
    return op


def assemble_hodge_laplace(k: Optional[int] = None) -> EdgeOperator:
    """
    Hodge-Laplace operator as the exact composition (d + d*)^2, restricted to degree k.

    Every entry is fixed by the composition and is listed in derived_blocks.
    """
    if k is not None and not 0 <= k <= 3:
        raise DegreeError(f"Degree {k} outside 0..3")
    full = assemble_hodge_derham(None)
    square = full.compose(full)
    square.source = "hodge_laplace"
    if k is None:
        return square
    op = square.restrict(k)
    op.outputs = labels_of_degree(k)
    op.blocks = {b: t for b, t in op.blocks.items() if b[0] in op.outputs}
    op.derived_blocks = frozenset(op.blocks)
    return op


def named_operator(name: str, degree: Optional[int] = None) -> EdgeOperator:
    if name == "hodge-derham":
        return assemble_hodge_derham(None) if degree is None else assemble_hodge_derham_parity(degree % 2)
    if name == "hodge-laplace":
        return assemble_hodge_laplace(degree)
    if name == "d":
        return exterior_derivative()
    raise ValueError(f"Unknown operator {name!r}; expected hodge-derham, hodge-laplace or d")


@dataclass
class FuchsRow:
    out: Label
    inp: Label
    i: int
    alpha: int
    x_derivatives: int  # order of d_sigma in the cross-section factor
    coefficients: Dict[int, complex]  # w -> c, a_{i,alpha}(r) = sum_w c r^w

    def evaluate(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return sum(c * r ** w for w, c in self.coefficients.items())


def fuchs_normal_form(P: EdgeOperator) -> list[FuchsRow]:
    """
    Coefficient table a_{i,alpha}(r) of P = r^{-l} sum a_{i,alpha}(r) (-r d_r)^i (r D_u)^alpha,
    with the X factor resolved to d_sigma powers (coefficients include the tag sign).
    """
    rows: Dict[Tuple, FuchsRow] = {}
    for (out, inp), terms in P.canonical().blocks.items():
        for term in terms:
            order, sign, _ = X_TAGS[term.x_tag]
            key = (out, inp, term.i, term.alpha, order)
            row = rows.setdefault(key, FuchsRow(out, inp, term.i, term.alpha, order, {}))
            row.coefficients[term.w] = row.coefficients.get(term.w, 0.0) + sign * complex(term.c)
    return sorted(rows.values(), key=lambda r: (LABELS.index(r.out), LABELS.index(r.inp), r.i, r.alpha, r.x_derivatives))


def operator_from_fuchs(order: int, rows: Iterable[FuchsRow], inputs, outputs) -> EdgeOperator:
    blocks: Dict[Block, list] = {}
    for row in rows:
        tag = {0: "id", 1: "∂_σ", 2: "Δ_X"}[row.x_derivatives]
        sign = -1 if tag == "Δ_X" else 1
        for w, c in row.coefficients.items():
            blocks.setdefault((row.out, row.inp), []).append(Term(sign * c, w, row.i, row.alpha, tag))
    return EdgeOperator(order, tuple(inputs), tuple(outputs), {b: tuple(t) for b, t in blocks.items()})


def _derivative_multiplier(grid, i: int, a: int, b: int) -> np.ndarray:
    factors = []
    for axis, order in ((0, i), (1, a), (2, b)):
        k = grid.wavenumbers(axis)
        if order == 0:
            factors.append(grid.along(np.ones_like(k), axis))
            continue
        factor = (1j * k) ** order
        if order % 2 == 1:
            factor[grid.shape[axis] // 2] = 0.0
        factors.append(grid.along(factor, axis))
    return factors[0] * factors[1] * factors[2]


def apply_monomials(monomials: Dict[Block, Poly], outputs: Iterable[Label], F: FormField) -> FormField:
    grid = F.grid
    t = grid.t
    spectra: Dict[Label, np.ndarray] = {}
    derivatives: Dict[Tuple[Label, int, int, int], np.ndarray] = {}
    out: Dict[Label, np.ndarray] = {}
    flags = set(F.flags)
    for (o, inp), poly in monomials.items():
        if inp not in F.components:
            continue
        if inp not in spectra:
            values = F.components[inp].values
            spectra[inp] = np.fft.fftn(values)
            for axis in range(3):
                if tail_energy_fraction(values, axis) > TAIL_ENERGY_THRESHOLD:
                    flags.add(f"band-limit:{grid.axis_names[axis]}")
        for (p, i, a, b), c in poly.items():
            key = (inp, i, a, b)
            if key not in derivatives:
                if i == a == b == 0:
                    derivatives[key] = F.components[inp].values
                else:
                    derivatives[key] = np.fft.ifftn(spectra[inp] * _derivative_multiplier(grid, i, a, b))
            contribution = c * grid.along(np.exp(-p * t), 0) * derivatives[key]
            out[o] = out[o] + contribution if o in out else contribution
    if flags - set(F.flags):
        logger.warning(f"Applying an operator to an under-resolved field: {sorted(flags)}")
    flags_tuple = tuple(sorted(flags))
    outputs = tuple(outputs)
    components = {label: ScalarField(grid, out.get(label, np.zeros(grid.shape, dtype=np.complex128)), flags_tuple)
                  for label in outputs}
    degrees = {degree_of(l) for l in outputs}
    return FormField(grid, degrees.pop() if len(degrees) == 1 else None, components)


def apply(P: EdgeOperator, F: FormField) -> FormField:
    """
    Evaluate P on a form field spectrally, term by term.

    Raises:
        DegreeError: F has components outside P's domain.
    """
    extra = [l for l in F.labels if l not in P.inputs and F.components[l].max_abs > 0]
    if extra:
        raise DegreeError(f"Field components {[label_name(l) for l in extra]} are outside the operator's domain")
    return apply_monomials(P.monomials(), P.outputs, F)
