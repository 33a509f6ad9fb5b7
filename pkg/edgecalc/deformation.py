"""
Edge embeddings into C^n and the special-Lagrangian deformation operator.

An embedding splits on the collar as Phi(r, sigma, u) = e^{i alpha} (r theta(sigma) + i tau(u))
in C^n = R^n_x + i R^n_y. A degree-1 form Xi = A dr + B r dsigma + C du moves it along the
normal field V = J Phi_*(Xi^sharp) = i (A e_r + B e_sigma + C e_u), where (e_r, e_sigma, e_u) is
the orthonormal frame (d_r Phi, r^-1 d_sigma Phi, d_u Phi). The ambient space is flat, so the
exponential map is translation.
"""
import json
import logging
import math
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import polars as pl

from edgecalc.errors import DegreeError, EmbeddingError, NeighborhoodError, PreconditionError
from edgecalc.forms import FormField, _require_desk_grid, labels_of_degree, normal_field, random_form, real_part
from edgecalc.grid import ModelGrid, ScalarField, fourier_multiplier, make_model_grid
from edgecalc.mellin import WeightData
from edgecalc.operators import apply, assemble_hodge_derham
from edgecalc.sobolev import form_edge_norm

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-10
SL_TOLERANCE = 1e-12
TUBE_FACTOR = 0.5  # |V| <= TUBE_FACTOR * r on r < eps keeps the image in the collar tube
SAMPLE_COUNT = 64
L2_WEIGHT = WeightData(0.0, 1.0)

KAHLER_LABELS = ((1, 1, 0), (1, 0, 1), (0, 1, 1))  # (r, sigma), (r, u), (sigma, u) frame pairs
VOLUME_LABEL = (1, 1, 1)


@dataclass
class NormalField:
    """Normal vector field in R^n_x + R^n_y, one ScalarField per real coordinate."""
    x: Tuple[ScalarField, ...]
    y: Tuple[ScalarField, ...]

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise EmbeddingError(f"dimension mismatch: {len(self.x)} x-components, {len(self.y)} y-components")

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def complex_values(self) -> np.ndarray:
        """(n, *grid.shape) array of x + i y."""
        return np.stack([a.values.real + 1j * b.values.real for a, b in zip(self.x, self.y)])


def _trig_evaluate(samples: np.ndarray, nodes: np.ndarray, derivative: int = 0) -> np.ndarray:
    """Trigonometric interpolant of periodic samples (last axis) and its derivatives at arbitrary nodes."""
    count = samples.shape[-1]
    coefficients = np.fft.fft(samples, axis=-1) / count
    k = np.fft.fftfreq(count, d=1.0 / count)
    factor = (1j * k) ** derivative
    if derivative % 2 == 1:
        factor[count // 2] = 0.0
    basis = np.exp(1j * np.outer(k, nodes))
    values = (coefficients * factor) @ basis
    return values.real if np.isrealobj(samples) else values


@dataclass
class Embedding:
    """
    Split edge embedding Phi = e^{i rotation} (r theta(sigma) + i tau(u)) with calibration phase.

    theta_kind "circle" is the unit circle in the (x1, x2)-plane; "samples" holds periodic samples
    of shape (n, N). tau_kind "linear" is tau(u) = slope u + offset; "samples" holds periodic samples.
    """
    n: int
    theta_kind: str
    tau_kind: str
    theta_samples: Optional[np.ndarray] = field(default=None, repr=False)
    tau_slope: Optional[np.ndarray] = None
    tau_offset: Optional[np.ndarray] = None
    tau_samples: Optional[np.ndarray] = field(default=None, repr=False)
    phase: float = 0.0
    rotation: float = 0.0
    m: int = 1
    q: int = 1

    # -- link and edge maps ----------------------------------------------------
    def theta(self, sigma: np.ndarray, derivative: int = 0) -> np.ndarray:
        sigma = np.asarray(sigma, dtype=float)
        if self.theta_kind == "circle":
            shift = derivative * np.pi / 2
            out = np.zeros((self.n, sigma.size))
            out[0] = np.cos(sigma + shift)
            out[1] = np.sin(sigma + shift)
            return out
        return _trig_evaluate(self.theta_samples, sigma, derivative)

    def tau(self, u: np.ndarray, derivative: int = 0) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.tau_kind == "linear":
            if derivative == 0:
                return self.tau_slope[:, None] * u[None, :] + self.tau_offset[:, None]
            if derivative == 1:
                return np.repeat(self.tau_slope[:, None], u.size, axis=1)
            return np.zeros((self.n, u.size))
        return _trig_evaluate(self.tau_samples, u, derivative)

    # -- sampled geometry -----------------------------------------------------
    def frame(self, grid: ModelGrid) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(e_r, e_sigma, e_u) as complex arrays of shape (n, 1, N_sigma, 1) / (n, 1, 1, N_u)."""
        self._check_grid(grid)
        rotation = np.exp(1j * self.rotation)
        e_r = rotation * self.theta(grid.sigma)[:, None, :, None]
        e_sigma = rotation * self.theta(grid.sigma, 1)[:, None, :, None]
        e_u = rotation * 1j * self.tau(grid.u, 1)[:, None, None, :]
        return e_r, e_sigma, e_u

    def position(self, grid: ModelGrid) -> np.ndarray:
        """Phi sampled on the grid, complex array of shape (n, *grid.shape)."""
        self._check_grid(grid)
        r = grid.r[None, :, None, None]
        x = r * self.theta(grid.sigma)[:, None, :, None]
        y = self.tau(grid.u)[:, None, None, :]
        return np.exp(1j * self.rotation) * np.broadcast_to(x + 1j * y, (self.n,) + grid.shape)

    def _check_grid(self, grid: ModelGrid) -> None:
        _require_desk_grid(grid)
        if grid.m != self.m or grid.q != self.q:
            raise EmbeddingError(f"dimension mismatch: embedding has m={self.m}, q={self.q}, grid has m={grid.m}, q={grid.q}")

    # -- persistence ------------------------------------------------------------
    def to_dict(self) -> dict:
        theta = {"kind": self.theta_kind}
        if self.theta_kind == "samples":
            theta["samples"] = np.asarray(self.theta_samples, dtype=float).tolist()
        tau = {"kind": self.tau_kind}
        if self.tau_kind == "linear":
            tau["slope"] = np.asarray(self.tau_slope, dtype=float).tolist()
            tau["offset"] = np.asarray(self.tau_offset, dtype=float).tolist()
        else:
            tau["samples"] = np.asarray(self.tau_samples, dtype=float).tolist()
        return {"n": self.n, "m": self.m, "q": self.q, "theta": theta, "tau": tau,
                "phase": self.phase, "rotation": self.rotation}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Embedding":
        theta = data["theta"]
        tau = data["tau"]
        theta_arg = "circle" if theta["kind"] == "circle" else np.asarray(theta["samples"], dtype=float)
        if tau["kind"] == "linear":
            tau_arg = {"slope": tau["slope"], "offset": tau.get("offset")}
        else:
            tau_arg = np.asarray(tau["samples"], dtype=float)
        return make_edge_embedding(theta_arg, tau_arg, float(data.get("phase", 0.0)), n=int(data["n"]),
                                   m=int(data.get("m", 1)), q=int(data.get("q", 1)),
                                   rotation=float(data.get("rotation", 0.0)))

    @classmethod
    def from_json(cls, text: str) -> "Embedding":
        return cls.from_dict(json.loads(text))


def make_edge_embedding(theta, tau, phase: float = 0.0, n: Optional[int] = None, m: int = 1, q: int = 1,
                        rotation: float = 0.0) -> Embedding:
    """
    Validate and build a split edge embedding.

    Args:
        theta: "circle", a constant n-vector, a callable sigma -> (n, len(sigma)) array, or
            periodic samples of shape (n, N).
        tau: an n-vector slope (tau(u) = slope u), a dict with "slope" and "offset", a callable
            u -> (n, len(u)) array, or periodic samples of shape (n, N).
        phase: calibration phase theta_0 in radians.

    Raises:
        EmbeddingError: "link not unit" when |theta| != 1, or a dimension mismatch.
    """
    if n is None:
        n = m + 1 + q
    if n != m + 1 + q:
        raise EmbeddingError(f"dimension mismatch: n = {n} but m + 1 + q = {m + 1 + q}")
    if m != 1 or q != 1:
        raise EmbeddingError(f"dimension mismatch: embeddings are implemented for m = q = 1, got m={m}, q={q}")

    grid_nodes = 2 * np.pi * np.arange(SAMPLE_COUNT) / SAMPLE_COUNT
    if isinstance(theta, str):
        if theta != "circle":
            raise EmbeddingError(f"Unknown link {theta!r}")
        theta_kind, theta_samples = "circle", None
        link = np.stack([np.cos(grid_nodes), np.sin(grid_nodes)] + [np.zeros(SAMPLE_COUNT)] * (n - 2))
    else:
        if callable(theta):
            values = np.asarray(theta(grid_nodes), dtype=float)
        else:
            values = np.asarray(theta, dtype=float)
        if values.ndim == 1:
            values = np.repeat(values[:, None], SAMPLE_COUNT, axis=1)
        theta_kind, theta_samples, link = "samples", values, values
    if link.shape[0] != n:
        raise EmbeddingError(f"dimension mismatch: link has {link.shape[0]} components, n = {n}")
    norms = np.linalg.norm(link, axis=0)
    if np.max(np.abs(norms - 1.0)) > UNIT_TOLERANCE:
        raise EmbeddingError(f"link not unit: |theta| ranges over [{norms.min():.6g}, {norms.max():.6g}]")

    tau_slope = tau_offset = tau_samples = None
    if isinstance(tau, dict) or (not callable(tau) and np.ndim(tau) == 1):
        spec = tau if isinstance(tau, dict) else {"slope": tau}
        tau_kind = "linear"
        tau_slope = np.asarray(spec["slope"], dtype=float)
        tau_offset = np.zeros(n) if spec.get("offset") is None else np.asarray(spec["offset"], dtype=float)
        size = tau_slope.size
    else:
        tau_kind = "samples"
        tau_samples = np.asarray(tau(grid_nodes) if callable(tau) else tau, dtype=float)
        size = tau_samples.shape[0]
    if size != n or (tau_offset is not None and tau_offset.size != n):
        raise EmbeddingError(f"dimension mismatch: tau has {size} components, n = {n}")

    return Embedding(n, theta_kind, tau_kind, theta_samples, tau_slope, tau_offset, tau_samples,
                     float(phase), float(rotation), m, q)


def sl_desk_embedding(phase: Optional[float] = None) -> Embedding:
    """Circle cone times a line: theta = (cos, sin, 0), tau(u) = (0, 0, u); calibrated at phase pi/2."""
    emb = make_edge_embedding("circle", [0.0, 0.0, 1.0], 0.0)
    emb.phase = calibration_phase(emb) if phase is None else float(phase)
    return emb


def tilted_embedding(tilt: float) -> Embedding:
    """tau(u) = (tilt u, 0, u); tau' leaves the orthogonal complement of span{theta, theta'}."""
    emb = make_edge_embedding("circle", [tilt, 0.0, 1.0], 0.0)
    emb.phase = calibration_phase(emb)
    return emb


# -- pointwise multilinear algebra -----------------------------------------------

def kahler_pairing(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """omega(a, b) = sum dx ^ dy (a, b) = Im sum conj(a_j) b_j over the leading axis."""
    return np.imag(np.sum(np.conj(a) * b, axis=0))


def holomorphic_volume(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Omega(a, b, c) = det[a, b, c] for complex 3-vectors stacked on the leading axis."""
    stacked = np.stack(np.broadcast_arrays(a, b, c), axis=-1)  # (3, ..., 3)
    return np.linalg.det(np.moveaxis(stacked, 0, -2))


def calibration_phase(emb: Embedding, grid: Optional[ModelGrid] = None) -> float:
    """Phase of Omega on the tangent frame, averaged over the nodes."""
    grid = grid or make_model_grid(N_t=8, N_sigma=8, N_u=8)
    values = holomorphic_volume(*emb.frame(grid))
    return float(np.angle(np.mean(values)))


def rotate_phase(emb: Embedding, angle: Optional[float] = None) -> Embedding:
    """
    Replace Phi by e^{-i angle / n} Phi. Omega scales by e^{-i angle}, so the calibration
    phase drops by angle; the default angle is the embedding's own phase, which ends at 0.
    """
    angle = emb.phase if angle is None else float(angle)
    return replace(emb, rotation=emb.rotation - angle / emb.n, phase=emb.phase - angle)


@dataclass
class SLReport:
    omega_residual: float
    im_residual: float
    phase: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def is_special_lagrangian(emb: Embedding, tol: float = SL_TOLERANCE, grid: Optional[ModelGrid] = None) -> SLReport:
    """Evaluate omega and Im(e^{-i phase} Omega) on the tangent frame at every node."""
    grid = grid or make_model_grid()
    e_r, e_sigma, e_u = emb.frame(grid)
    omega = max(float(np.max(np.abs(kahler_pairing(a, b)))) for a, b in ((e_r, e_sigma), (e_r, e_u), (e_sigma, e_u)))
    im = float(np.max(np.abs(np.imag(np.exp(-1j * emb.phase) * holomorphic_volume(e_r, e_sigma, e_u)))))
    report = SLReport(omega, im, emb.phase, tol, omega <= tol and im <= tol)
    logger.info(f"SL check: omega residual {omega:.3e}, Im residual {im:.3e}, passed={report.passed}")
    return report


# -- deformations ------------------------------------------------------------------

def _require_real_one_form(xi: FormField) -> None:
    if xi.degree != 1:
        raise DegreeError(f"Deformations take a degree-1 form, got degree {xi.degree}")
    imaginary = max((float(np.max(np.abs(c.values.imag))) for c in xi.components.values()), default=0.0)
    if imaginary > 1e-12 * max(xi.max_abs, 1.0):
        raise ValueError(f"Xi must be real, imaginary part up to {imaginary:.3e}")


def _check_neighborhood(grid: ModelGrid, displacement: np.ndarray, factor: float = TUBE_FACTOR) -> None:
    size = np.sqrt(np.sum(np.abs(displacement) ** 2, axis=0))
    near = grid.r < grid.eps
    if not np.any(near):
        return
    allowed = factor * grid.r[near]
    excess = np.max(size[near], axis=tuple(range(1, size.ndim))) / allowed
    if np.max(excess) > 1.0:
        j = int(np.argmax(excess))
        raise NeighborhoodError(
            f"leaves tubular neighborhood: |V| = {excess[j] * allowed[j]:.3e} > {factor} r at r = {grid.r[near][j]:.3e}"
        )


def displacement(emb: Embedding, xi: FormField, check_neighborhood: bool = True) -> np.ndarray:
    """V_Xi as a complex (n, *grid.shape) array, x + i y."""
    _require_real_one_form(xi)
    V = normal_field(real_part(xi), emb).complex_values
    if check_neighborhood:
        _check_neighborhood(xi.grid, V)
    return V


def deformed_embedding(emb: Embedding, xi: FormField, check_neighborhood: bool = True) -> np.ndarray:
    """
    exp(V_Xi) o Phi sampled on Xi's grid, complex (n, *grid.shape) array.

    Raises:
        NeighborhoodError: |V_Xi| exceeds TUBE_FACTOR * r somewhere on r < eps.
    """
    return emb.position(xi.grid) + displacement(emb, xi, check_neighborhood)


def _ambient_derivative(V: np.ndarray, grid: ModelGrid, axis: int) -> np.ndarray:
    # V carries the ambient index first; differentiate each coordinate along a grid axis
    return np.stack([fourier_multiplier(v, grid, {axis: 1}) for v in V])


def frame_perturbation(grid: ModelGrid, V: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(d_r V, r^-1 d_sigma V, d_u V) spectrally; V must decay at the radial window ends."""
    et = np.exp(grid.t)[None, :, None, None]
    return (
        -et * _ambient_derivative(V, grid, 0),
        et * _ambient_derivative(V, grid, 1),
        _ambient_derivative(V, grid, 2),
    )


def frame_from_displacement(emb: Embedding, grid: ModelGrid, V: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tangent frame (d_r, r^-1 d_sigma, d_u) of Phi + V."""
    return tuple(e + d for e, d in zip(emb.frame(grid), frame_perturbation(grid, V)))


def deformed_frame(emb: Embedding, xi: FormField, check_neighborhood: bool = True):
    return frame_from_displacement(emb, xi.grid, displacement(emb, xi, check_neighborhood))


def _triple(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.sum(a * np.cross(b, c, axis=0), axis=0)


def _volume_increment(frame, perturbation) -> np.ndarray:
    """det(e + d) - det(e), expanded multilinearly so every term carries a factor of d."""
    total = 0.0
    for choice in product((0, 1), repeat=3):
        if not any(choice):
            continue
        columns = [perturbation[k] if pick else frame[k] for k, pick in enumerate(choice)]
        total = total + _triple(*columns)
    return total


def pullback_kahler(emb: Embedding, xi: FormField, check_neighborhood: bool = True) -> FormField:
    """P_omega(Xi) in the basis dr ^ r dsigma, dr ^ du, r dsigma ^ du."""
    grid = xi.grid
    frame = emb.frame(grid)
    delta = frame_perturbation(grid, displacement(emb, xi, check_neighborhood))
    components = {}
    for label, (a, b) in zip(KAHLER_LABELS, ((0, 1), (0, 2), (1, 2))):
        base = kahler_pairing(frame[a], frame[b])
        increment = kahler_pairing(frame[a], delta[b]) + kahler_pairing(delta[a], frame[b]) + kahler_pairing(delta[a], delta[b])
        components[label] = ScalarField(grid, np.broadcast_to(base + increment, grid.shape))
    return FormField(grid, 2, components)


def pullback_im_omega(emb: Embedding, xi: FormField, check_neighborhood: bool = True) -> ScalarField:
    """Coefficient f of Im(e^{-i phase} Omega) pulled back, relative to the volume r dr dsigma du."""
    grid = xi.grid
    frame = emb.frame(grid)
    delta = frame_perturbation(grid, displacement(emb, xi, check_neighborhood))
    rotation = np.exp(-1j * emb.phase)
    base = np.imag(rotation * holomorphic_volume(*frame))
    increment = np.imag(rotation * _volume_increment(frame, delta))
    return ScalarField(grid, np.broadcast_to(base + increment, grid.shape))


def deformation_operator(emb: Embedding, xi: FormField, check_neighborhood: bool = True) -> FormField:
    """P(Xi) = P_omega(Xi) + P_ImOmega(Xi) as a mixed form: the 2-form plus f on dr ^ r dsigma ^ du."""
    kahler = pullback_kahler(emb, xi, check_neighborhood)
    components = dict(kahler.components)
    components[VOLUME_LABEL] = pullback_im_omega(emb, xi, check_neighborhood)
    return FormField(xi.grid, None, components)


def deformation_as_form(P: FormField) -> FormField:
    """
    Read P(Xi) in the target of d + d* on 1-forms: the volume coefficient moves to degree 0
    by the Hodge star and the whole field changes sign, so that the first variation is d + d*.
    """
    components = {label: -P.component(label) for label in labels_of_degree(2)}
    components[(0, 0, 0)] = -P.component(VOLUME_LABEL)
    return FormField(P.grid, None, components)


def _linear_part(xi: FormField) -> FormField:
    return apply(assemble_hodge_derham(1), xi.as_mixed()).as_mixed()


@dataclass
class LinearizationStudy:
    table: pl.DataFrame
    reference_norm: float
    slope: float

    def to_dict(self) -> dict:
        return {"rows": self.table.to_dicts(), "reference_norm": self.reference_norm, "slope": self.slope}


def _ratios(values: Sequence[float]) -> list[Optional[float]]:
    out: list[Optional[float]] = [None]
    for previous, current in zip(values[:-1], values[1:]):
        out.append(previous / current if current > 0 else float("nan"))
    return out


def _loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def linearization_fd(emb: Embedding, xi: FormField, ts: Iterable[float], w: WeightData = L2_WEIGHT) -> LinearizationStudy:
    """
    Residuals ||P(t Xi)/t - (d + d*) Xi|| in the edge norm for each t.

    The residual is first order in t, so halving t halves it.

    Raises:
        EmbeddingError: the base embedding is not special Lagrangian.
    """
    report = is_special_lagrangian(emb, tol=1e-10, grid=xi.grid)
    if not report.passed:
        raise EmbeddingError(
            f"Linearization needs a special Lagrangian base (omega {report.omega_residual:.3e}, Im {report.im_residual:.3e})"
        )
    _require_real_one_form(xi)
    ts = [float(t) for t in ts]
    if any(t <= 0 for t in ts):
        raise ValueError(f"t values must be positive, got {ts}")
    linear = _linear_part(xi)
    reference = form_edge_norm(linear, w)
    residuals = []
    for t in ts:
        image = deformation_as_form(deformation_operator(emb, xi * t))
        residuals.append(form_edge_norm(image * (1.0 / t) - linear, w))
        logger.info(f"t = {t:.3e}: linearization residual {residuals[-1]:.6e}")
    table = pl.DataFrame({"t": ts, "residual": residuals, "ratio": _ratios(residuals)},
                         schema={"t": pl.Float64, "residual": pl.Float64, "ratio": pl.Float64})
    return LinearizationStudy(table, reference, _loglog_slope(ts, residuals))


@dataclass
class RemainderStudy:
    scales: np.ndarray
    norms: np.ndarray
    remainders: np.ndarray
    slope: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def quadratic_remainder(emb: Embedding, ensemble: Sequence[FormField], levels: int = 5,
                        w: WeightData = L2_WEIGHT) -> RemainderStudy:
    """
    Log-log slope of ||P(Xi) - DP[0] Xi|| against ||Xi|| over the scales 2^-j, j < levels,
    pooled over the ensemble. P is smooth with P(0) = 0, so the slope is 2.
    """
    scales, norms, remainders = [], [], []
    for xi in ensemble:
        for j in range(levels):
            scale = 2.0 ** (-j)
            scaled = xi * scale
            image = deformation_as_form(deformation_operator(emb, scaled))
            scales.append(scale)
            norms.append(form_edge_norm(scaled, w))
            remainders.append(form_edge_norm(image - _linear_part(scaled), w))
    study = RemainderStudy(np.asarray(scales), np.asarray(norms), np.asarray(remainders),
                           _loglog_slope(norms, remainders))
    logger.info(f"Quadratic remainder slope {study.slope:.4f} over {len(ensemble)} fields x {levels} scales")
    return study


def second_difference(emb: Embedding, base: FormField, h1: FormField, h2: FormField, eps: float = 1e-2) -> FormField:
    """Mixed second difference of P_omega at base in directions h1, h2; equals D^2 P_omega exactly."""
    def p(xi: FormField) -> FormField:
        return pullback_kahler(emb, xi, check_neighborhood=False)

    value = p(base + (h1 + h2) * eps) - p(base + h1 * eps) - p(base + h2 * eps) + p(base)
    return value * (1.0 / eps ** 2)


@dataclass
class LipschitzReport:
    constant: float
    ratios: np.ndarray
    w_in: WeightData
    w_out: WeightData


def lipschitz_estimate(emb: Embedding, pairs: Sequence[Tuple[FormField, FormField]],
                       w_in: WeightData = L2_WEIGHT, w_out: Optional[WeightData] = None) -> LipschitzReport:
    """max ||P(Xi1) - P(Xi2)||_{s-1, gamma-1} / ||Xi1 - Xi2||_{s, gamma} over the pairs."""
    w_out = w_out or w_in.shifted(-1.0, -1.0)
    ratios = []
    for xi1, xi2 in pairs:
        distance = form_edge_norm(xi1 - xi2, w_in)
        if distance == 0.0:
            ratios.append(0.0)
            continue
        difference = deformation_operator(emb, xi1) - deformation_operator(emb, xi2)
        ratios.append(form_edge_norm(difference, w_out) / distance)
    ratios = np.asarray(ratios)
    return LipschitzReport(float(ratios.max(initial=0.0)), ratios, w_in, w_out)


@dataclass
class NeighborhoodBound:
    threshold: float
    pointwise_constant: float
    tube_factor: float
    w: WeightData


def pointwise_form_ratio(xi: FormField, w: WeightData) -> float:
    """max over r < 1 of |Xi| r^((m+1)/2 - gamma) / ||Xi||."""
    grid = xi.grid
    norm = form_edge_norm(xi, w)
    if norm == 0.0:
        return 0.0
    size = np.sqrt(sum(np.abs(c.values.real) ** 2 for c in xi.components.values()))
    inside = grid.r < 1.0
    weight = grid.r[inside] ** ((grid.m + 1) / 2 - w.gamma)
    envelope = np.max(size[inside], axis=tuple(range(1, size.ndim)))
    return float(np.max(envelope * weight) / norm)


def neighborhood_threshold(grid: ModelGrid, w: WeightData, ensemble: Optional[Sequence[FormField]] = None,
                           seed: int = 0, size: int = 8, tube_factor: float = TUBE_FACTOR) -> NeighborhoodBound:
    """
    theta = tube_factor / C' with C' the measured constant in |Xi| <= C' ||Xi|| r^(gamma - (m+1)/2).

    For gamma >= (m+3)/2 and ||Xi|| < theta this gives |V_Xi| = |Xi| <= tube_factor r on r < 1.

    Raises:
        PreconditionError: gamma < (m+3)/2.
    """
    if w.gamma < (grid.m + 3) / 2:
        raise PreconditionError(f"Neighborhood bound needs gamma >= {(grid.m + 3) / 2}, got {w.gamma}")
    if ensemble is None:
        rng = np.random.default_rng(seed)
        ensemble = [real_part(random_form(grid, rng, 1, t_center=0.0, t_width=1.0)) for _ in range(size)]
    constant = max(pointwise_form_ratio(xi, w) for xi in ensemble)
    threshold = tube_factor / constant if constant > 0 else math.inf
    logger.info(f"Neighborhood threshold {threshold:.4e} from pointwise constant {constant:.4e}")
    return NeighborhoodBound(threshold, constant, tube_factor, w)
