"""
Symbols of edge-degenerate operators.

boundary_symbol    principal symbol on the rescaled cotangent bundle, smooth up to r = 0
mellin_conormal_symbol / indicial_roots / admissible_weights
                   the conormal family h(0, z) per Fourier mode of the cross-section
edge_symbol_apply  the frozen-edge family acting on fields on the infinite cone
"""
import logging
import math
from dataclasses import dataclass, field
from math import comb
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import mpmath
import numpy as np
import polars as pl
from scipy import linalg

from edgecalc.config import parallel_map
from edgecalc.errors import DegenerateSymbolError, DegreeError
from edgecalc.forms import FormField, Label, label_name
from edgecalc.operators import X_TAGS, EdgeOperator, Term, apply_monomials

logger = logging.getLogger(__name__)

ELLIPTICITY_TOLERANCE = 1e-8
CLUSTER_RADIUS = 1e-7
INFINITE_ROOT = 1e8
REAL_ROOT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Covector:
    """Base point (r, sigma, u) and fiber (rho, xi, eta) of the rescaled cotangent bundle."""
    r: float
    sigma: float
    u: float
    rho: float
    xi: float
    eta: float

    def __post_init__(self):
        if self.r < 0:
            raise ValueError(f"Base point needs r >= 0, got {self.r}")

    @property
    def fiber_norm(self) -> float:
        return math.sqrt(self.rho ** 2 + self.xi ** 2 + self.eta ** 2)

    def to_dict(self) -> dict:
        return {"r": self.r, "sigma": self.sigma, "u": self.u, "rho": self.rho, "xi": self.xi, "eta": self.eta}


def unit_covectors(rng: np.random.Generator, count: int, edge_fraction: float = 0.25) -> list[Covector]:
    """
    Random covectors on the unit fiber sphere.

    The first round(edge_fraction * count) base points sit at r = 0, and the three
    coordinate directions at r = 0 are always included.
    """
    out = [Covector(0.0, 0.0, 0.0, *axis) for axis in ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))]
    n_edge = int(round(edge_fraction * count))
    for j in range(max(count - len(out), 0)):
        fiber = rng.standard_normal(3)
        fiber /= np.linalg.norm(fiber)
        r = 0.0 if j < n_edge else float(rng.uniform(0.0, 1.0))
        sigma, u = rng.uniform(0.0, 2 * np.pi, size=2)
        out.append(Covector(r, float(sigma), float(u), *map(float, fiber)))
    return out[:max(count, 3)]


@dataclass
class SymbolMatrix:
    rows: Tuple[Label, ...]
    cols: Tuple[Label, ...]
    values: np.ndarray

    def entry(self, out: Label, inp: Label) -> complex:
        return complex(self.values[self.rows.index(out), self.cols.index(inp)])

    @property
    def is_square(self) -> bool:
        return self.values.shape[0] == self.values.shape[1]

    def __matmul__(self, other: "SymbolMatrix") -> "SymbolMatrix":
        if self.cols != other.rows:
            raise DegreeError(f"Cannot compose symbols: {len(self.cols)} columns against {len(other.rows)} rows")
        return SymbolMatrix(self.rows, other.cols, self.values @ other.values)

    def to_dict(self) -> dict:
        return {
            "rows": [label_name(l) for l in self.rows],
            "cols": [label_name(l) for l in self.cols],
            "values": [[[v.real, v.imag] for v in row] for row in self.values.tolist()],
        }


def _x_symbol(term: Term, frequency: complex) -> complex:
    # X-factor tag -> sign * (i freq)^order; d*_X picks up -i xi, Delta_X gives xi^2
    order, sign, _ = X_TAGS[term.x_tag]
    return sign * (1j * frequency) ** order


def _coefficient_at(term: Term, r: float) -> complex:
    if term.w < 0:
        if r == 0.0:
            raise ValueError(f"Coefficient r^{term.w} of {term} is singular at r = 0")
        return complex(term.c) * r ** term.w
    return complex(term.c) * r ** term.w


def boundary_symbol(P: EdgeOperator, c: Covector) -> SymbolMatrix:
    """
    Principal boundary symbol sigma_b(P) at a covector.

    Top-order terms of the normal form are kept; (-r d_r) becomes -i rho, (r D_u) becomes eta
    and the cross-section factors their principal symbols in xi. Coefficients are evaluated at
    the base point, r = 0 included.

    Raises:
        ValueError: the fiber is zero.
    """
    if c.fiber_norm == 0.0:
        raise ValueError("Boundary symbol needs a nonzero fiber (rho, xi, eta)")
    values = np.zeros((len(P.outputs), len(P.inputs)), dtype=np.complex128)
    for (out, inp), terms in P.canonical().blocks.items():
        entry = 0.0 + 0.0j
        for term in terms:
            if term.i + term.alpha + term.x_order != P.order:
                continue
            entry += _coefficient_at(term, c.r) * (-1j * c.rho) ** term.i * c.eta ** term.alpha * _x_symbol(term, c.xi)
        values[P.outputs.index(out), P.inputs.index(inp)] = entry
    return SymbolMatrix(P.outputs, P.inputs, values)


@dataclass
class EllipticityReport:
    passed: bool
    min_singular_value: float
    samples: int
    worst: Optional[Covector] = None
    tolerance: float = ELLIPTICITY_TOLERANCE

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "min_singular_value": self.min_singular_value,
            "samples": self.samples,
            "tolerance": self.tolerance,
            "worst": self.worst.to_dict() if self.worst is not None else None,
        }


def check_boundary_ellipticity(P: EdgeOperator, covectors: Iterable[Covector],
                               tol: float = ELLIPTICITY_TOLERANCE) -> EllipticityReport:
    """Pass iff sigma_b(P) is square and its smallest singular value stays above tol on every sample."""
    covectors = list(covectors)
    if not P.is_square:
        logger.info(f"Symbol of {P.source} is {len(P.outputs)}x{len(P.inputs)}, not square")
        return EllipticityReport(False, 0.0, len(covectors), covectors[0] if covectors else None, tol)

    def smallest(c: Covector) -> float:
        return float(linalg.svdvals(boundary_symbol(P, c).values).min())

    minima = parallel_map(smallest, covectors)
    if not minima:
        return EllipticityReport(False, 0.0, 0, None, tol)
    worst = int(np.argmin(minima))
    report = EllipticityReport(bool(minima[worst] > tol), float(minima[worst]), len(covectors), covectors[worst], tol)
    logger.info(f"Ellipticity of {P.source}: min singular value {report.min_singular_value:.3e} over {len(covectors)} covectors")
    return report


# -- conormal symbol ---------------------------------------------------------

def conormal_coefficients(P: EdgeOperator, k: int) -> list[np.ndarray]:
    """
    Matrix coefficients H_0, ..., H_d of h(0, z) = sum_i H_i z^i at X-mode k.

    Terms carrying edge covariables (r D_u)^alpha with alpha >= 1 are frozen out, and only
    coefficients that survive at r = 0 contribute.
    """
    canonical = P.canonical().blocks
    degree = max((t.i for terms in canonical.values() for t in terms if t.alpha == 0 and t.w == 0), default=0)
    H = [np.zeros((len(P.outputs), len(P.inputs)), dtype=np.complex128) for _ in range(degree + 1)]
    for (out, inp), terms in canonical.items():
        for term in terms:
            if term.alpha != 0:
                continue
            if term.w < 0:
                raise ValueError(f"Term {term} of {label_name(out)} <- {label_name(inp)} is singular at r = 0")
            if term.w > 0:
                continue
            H[term.i][P.outputs.index(out), P.inputs.index(inp)] += complex(term.c) * _x_symbol(term, k)
    return H


def mellin_conormal_symbol(P: EdgeOperator, z: complex, k: int = 0) -> np.ndarray:
    """h(0, z) restricted to the k-th Fourier mode of the cross-section."""
    H = conormal_coefficients(P, k)
    # Horner
    out = np.zeros_like(H[0])
    for coefficient in reversed(H):
        out = out * z + coefficient
    return out


@dataclass(frozen=True)
class Window:
    re_min: float
    re_max: float
    im_min: float = -math.inf
    im_max: float = math.inf

    def __post_init__(self):
        if not (self.re_min <= self.re_max and self.im_min <= self.im_max):
            raise ValueError(f"Empty window {self}")

    def contains(self, z: complex) -> bool:
        return self.re_min <= z.real <= self.re_max and self.im_min <= z.imag <= self.im_max

    @classmethod
    def parse(cls, text: str) -> "Window":
        """'a:b' bounds Re z; 'a:b,c:d' also bounds Im z."""
        parts = text.split(",")
        re_min, re_max = (float(x) for x in parts[0].split(":"))
        if len(parts) == 1:
            return cls(re_min, re_max)
        im_min, im_max = (float(x) for x in parts[1].split(":"))
        return cls(re_min, re_max, im_min, im_max)

    def to_dict(self) -> dict:
        return {"re": [self.re_min, self.re_max], "im": [self.im_min, self.im_max]}


@dataclass(frozen=True)
class IndicialRoot:
    z: complex
    multiplicity: int
    mode: int


@dataclass
class IndicialReport:
    roots: List[IndicialRoot]
    band_limit: int
    window: Window
    m: int = 1
    admissible: List[Tuple[float, float]] = field(default_factory=list)
    gamma_interval: Optional[Tuple[float, float]] = None

    @property
    def D(self) -> list[float]:
        """Real roots, distinct within the clustering radius."""
        values = sorted(r.z.real for r in self.roots if abs(r.z.imag) <= REAL_ROOT_TOLERANCE)
        return _distinct(values)

    @property
    def excluded_weights(self) -> list[float]:
        return _distinct(sorted((self.m + 1) / 2 - r.z.real for r in self.roots))

    def to_dict(self) -> dict:
        return {
            "band_limit": self.band_limit,
            "window": self.window.to_dict(),
            "m": self.m,
            "roots": [{"mode_k": r.mode, "re_z": r.z.real, "im_z": r.z.imag, "multiplicity": r.multiplicity}
                      for r in self.roots],
            "D": self.D,
            "gamma_interval": list(self.gamma_interval) if self.gamma_interval else None,
            "excluded_weights": self.excluded_weights,
            "admissible": [list(interval) for interval in self.admissible],
        }


def _distinct(values: Sequence[float], radius: float = CLUSTER_RADIUS) -> list[float]:
    out: list[float] = []
    for v in values:
        if not out or abs(v - out[-1]) > radius:
            out.append(v)
    return out


def _cluster(eigenvalues: Sequence[complex], radius: float = CLUSTER_RADIUS) -> list[Tuple[complex, int]]:
    clusters: list[list[complex]] = []
    for z in sorted(eigenvalues, key=lambda v: (v.real, v.imag)):
        for cluster in clusters:
            if abs(z - np.mean(cluster)) < radius:
                cluster.append(z)
                break
        else:
            clusters.append([z])
    return [(complex(np.mean(c)), len(c)) for c in clusters]


def _check_nondegenerate(H: list[np.ndarray], k: int) -> None:
    if H[0].shape[0] != H[0].shape[1]:
        raise DegreeError(f"Conormal symbol is {H[0].shape[0]}x{H[0].shape[1]}; indicial roots need a square operator")
    scale = max(float(np.abs(h).max(initial=0.0)) for h in H)
    if scale == 0.0:
        raise DegenerateSymbolError(f"degenerate symbol: h(0, z) vanishes identically at mode {k}")
    # det is a polynomial of degree <= n d; nonzero at one of n d + 1 generic points unless identically zero
    n, d = H[0].shape[0], len(H) - 1
    probes = 0.37 + 0.61j + 0.5 * np.exp(2j * np.pi * np.arange(n * d + 1) / (n * d + 1))
    for z in probes:
        h = sum(Hi * z ** i for i, Hi in enumerate(H))
        if abs(np.linalg.det(h / scale)) > 1e-12:
            return
    raise DegenerateSymbolError(f"degenerate symbol: det h(0, z) vanishes identically at mode {k}")


def _companion_pencil(H: list[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    n = H[0].shape[0]
    d = len(H) - 1
    C = np.block([
        [np.zeros((n * (d - 1), n)), np.eye(n * (d - 1))],
        [-np.column_stack(H[:-1])],
    ])
    D = np.block([
        [np.eye(n * (d - 1)), np.zeros((n * (d - 1), n))],
        [np.zeros((n, n * (d - 1))), H[-1]],
    ])
    return C.astype(np.complex128), D.astype(np.complex128)


def _mode_roots(P: EdgeOperator, k: int) -> list[complex]:
    H = conormal_coefficients(P, k)
    _check_nondegenerate(H, k)
    if len(H) == 1:
        # constant nonsingular symbol
        return []
    C, D = _companion_pencil(H)
    eigenvalues = linalg.eig(C, D, right=False)
    finite = [complex(z) for z in eigenvalues if np.isfinite(z) and abs(z) < INFINITE_ROOT]
    logger.debug(f"Mode {k}: {len(finite)} finite roots of {len(eigenvalues)} pencil eigenvalues")
    return finite


def indicial_roots(P: EdgeOperator, window: Window, band_limit: int = 8,
                   modes: Optional[Iterable[int]] = None, m: int = 1) -> IndicialReport:
    """
    Points z in the window where h(0, z) is singular, per cross-section mode.

    Modes run over -band_limit..band_limit unless given. Each mode is solved as a companion
    pencil; eigenvalues within CLUSTER_RADIUS are merged into one root with multiplicity.

    Raises:
        DegenerateSymbolError: det h(0, z) vanishes identically for some mode.
    """
    modes = list(range(-band_limit, band_limit + 1)) if modes is None else list(modes)
    per_mode = parallel_map(lambda k: _mode_roots(P, k), modes)
    roots = []
    for k, eigenvalues in zip(modes, per_mode):
        for z, multiplicity in _cluster(eigenvalues):
            if window.contains(z):
                roots.append(IndicialRoot(z, multiplicity, k))
    roots.sort(key=lambda root: (round(root.z.real, 9), round(root.z.imag, 9), root.mode))
    logger.info(f"{len(roots)} indicial roots of {P.source} in {window} over {len(modes)} modes")
    return IndicialReport(roots, band_limit, window, m)


def indicial_roots_extended(P: EdgeOperator, k: int, dps: int = 32) -> list[complex]:
    """
    Re-solve mode k in extended precision with mpmath.

    Uses the monic companion matrix when the leading coefficient is invertible, and otherwise
    interpolates det h(0, z) on a circle and calls polyroots.
    """
    H = conormal_coefficients(P, k)
    _check_nondegenerate(H, k)
    if len(H) == 1:
        return []
    n, d = H[0].shape[0], len(H) - 1
    with mpmath.workdps(dps):
        mats = [mpmath.matrix([[mpmath.mpc(complex(v)) for v in row] for row in h.tolist()]) for h in H]
        lead = mats[-1]
        if abs(np.linalg.det(H[-1])) > 1e-12 * max(1.0, float(np.abs(H[-1]).max()) ** n):
            lead_inv = mpmath.inverse(lead)
            companion = mpmath.zeros(n * d, n * d)
            for i in range(n * (d - 1)):
                companion[i, i + n] = 1
            for j in range(d):
                block = -(lead_inv * mats[j])
                for a in range(n):
                    for b in range(n):
                        companion[n * (d - 1) + a, n * j + b] = block[a, b]
            eigenvalues = mpmath.eig(companion, left=False, right=False)
            return [complex(z) for z in eigenvalues]
        count = n * d + 1
        radius = mpmath.mpf(2)
        points = [radius * mpmath.expjpi(mpmath.mpf(2 * j) / count) for j in range(count)]
        dets = []
        for z in points:
            h = mats[0].copy()
            for i in range(1, d + 1):
                h += mats[i] * z ** i
            dets.append(mpmath.det(h))
        coefficients = [sum(dets[j] * points[j] ** (-p) for j in range(count)) / count for p in range(count)]
        scale = max(abs(c) for c in coefficients)
        while coefficients and abs(coefficients[-1]) <= mpmath.mpf(10) ** (-dps // 2) * scale:
            coefficients.pop()
        if len(coefficients) <= 1:
            return []
        roots = mpmath.polyroots(list(reversed(coefficients)), maxsteps=200, extraprec=dps)
        return [complex(z) for z in roots]


def admissible_weights(P: EdgeOperator, interval: Tuple[float, float], band_limit: int = 8,
                       m: int = 1, modes: Optional[Iterable[int]] = None) -> IndicialReport:
    """
    Open gamma-subintervals of `interval` whose weight line Re z = (m+1)/2 - gamma misses every
    indicial root up to the band limit. The excluded values are (m+1)/2 - Re z_j.
    """
    lo, hi = sorted(float(x) for x in interval)
    window = Window((m + 1) / 2 - hi, (m + 1) / 2 - lo)
    report = indicial_roots(P, window, band_limit, modes, m)
    cuts = [g for g in report.excluded_weights if lo < g < hi]
    edges = [lo] + cuts + [hi]
    report.admissible = [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    report.gamma_interval = (lo, hi)
    logger.info(f"Admissible weights in ({lo}, {hi}): {len(report.admissible)} intervals, excluded {cuts}")
    return report


def report_to_frame(report: IndicialReport) -> pl.DataFrame:
    return pl.DataFrame(
        {
            "mode_k": [r.mode for r in report.roots],
            "re_z": [r.z.real for r in report.roots],
            "im_z": [r.z.imag for r in report.roots],
            "multiplicity": [r.multiplicity for r in report.roots],
        },
        schema={"mode_k": pl.Int64, "re_z": pl.Float64, "im_z": pl.Float64, "multiplicity": pl.Int64},
    )


# -- edge symbol ---------------------------------------------------------------

def edge_symbol_monomials(P: EdgeOperator, eta: float) -> Dict:
    """
    sigma_wedge(P)(u, eta) = r^-l sum a(0) (-r d_r)^i (r eta)^alpha X as normal-ordered monomials,
    using r^-l theta^i r^alpha = r^(alpha - l) (theta - alpha)^i.
    """
    blocks: Dict = {}
    for block, terms in P.canonical().blocks.items():
        poly = blocks.setdefault(block, {})
        for term in terms:
            if term.w != 0:
                continue
            a, sign, _ = X_TAGS[term.x_tag]
            scale = complex(term.c) * eta ** term.alpha * sign
            for j in range(term.i + 1):
                key = (term.alpha - P.order, j, a, 0)
                poly[key] = poly.get(key, 0.0) + scale * comb(term.i, j) * (-term.alpha) ** (term.i - j)
    return {b: p for b, p in blocks.items() if p}


def edge_symbol_apply(P: EdgeOperator, u: float, eta: float, F: FormField) -> FormField:
    """
    Apply the frozen-edge operator sigma_wedge(P)(u, eta) to a field on the infinite cone.

    Coefficients are frozen at r = 0, so the family does not depend on u for the operators
    assembled here.

    Raises:
        ValueError: eta = 0.
    """
    if eta == 0:
        raise ValueError("Edge symbol needs eta != 0")
    return apply_monomials(edge_symbol_monomials(P, eta), P.outputs, F)
