import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from edgecalc.config import parallel_map
from edgecalc.errors import PreconditionError, ScaleOutOfWindowError
from edgecalc.grid import DECAY_THRESHOLD, ModelGrid, ScalarField, check_radial_decay, random_field, radial_envelope
from edgecalc.mellin import WeightData, transform_values, weighted_values

logger = logging.getLogger(__name__)

ENSEMBLE_SIZE = 64
NEGLIGIBLE_MODE = 1e-14  # modes below this fraction of the field peak are dropped


def bracket(eta) -> np.ndarray:
    """Smoothed norm [eta] = (1 + |eta|^2)^(1/2)."""
    return np.sqrt(1.0 + np.asarray(eta, dtype=float) ** 2)


@dataclass
class GroupBounds:
    K: float
    c_gamma: float
    lambdas: np.ndarray = field(repr=False)
    norms: np.ndarray = field(repr=False)

    def bound(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        return self.K * np.maximum(lam, 1.0 / lam) ** self.c_gamma

    def holds(self) -> bool:
        return bool(np.all(self.norms <= self.bound(self.lambdas) * (1 + 1e-12)))


def _frequency_weight(grid: ModelGrid, ndim: int, s: float, rho: Optional[np.ndarray] = None) -> np.ndarray:
    """(1 + rho^2 + |xi|^2 + |eta|^2)^s on the FFT lattice of an array with leading t axis."""
    rho = grid.wavenumbers(0) if rho is None else rho
    total = np.reshape(1.0 + rho ** 2, (-1,) + (1,) * (ndim - 1))
    for axis in range(1, ndim):
        k = grid.wavenumbers(axis)
        shape = [1] * ndim
        shape[axis] = -1
        total = total + np.reshape(k ** 2, shape)
    return total ** s


def _cylinder_norm_sq(grid: ModelGrid, values: np.ndarray, s: float) -> float:
    # measure dt d(sigma) du/2pi; at s = 0 this is exactly the trapezoid L^2 sum
    spectrum = np.fft.fftn(values)
    weight = _frequency_weight(grid, values.ndim, s)
    scale = grid.dt / values.size
    for axis in range(1, values.ndim):
        if axis not in grid.u_axes:
            scale *= 2.0 * np.pi / values.shape[axis]
        else:
            scale /= values.shape[axis]
    return float(scale * np.sum(weight * np.abs(spectrum) ** 2))


def cylinder_norm(f: ScalarField | np.ndarray, s: float, grid: Optional[ModelGrid] = None) -> float:
    """Classical H^s norm on the cylinder R_t x X (x E) of the unweighted samples."""
    if isinstance(f, ScalarField):
        grid, values = f.grid, f.values
    else:
        values = np.asarray(f, dtype=np.complex128)
    return math.sqrt(_cylinder_norm_sq(grid, values, s))


def _cone_norm_sq(grid: ModelGrid, profile: np.ndarray, w: WeightData, check: bool = True) -> float:
    if check:
        check_radial_decay(weighted_values(grid, profile, w), "weighted field")
    samples = transform_values(grid, profile, w, check=False)
    weight = _frequency_weight(grid, profile.ndim, w.s, samples.line.rho)
    # (1/2 pi i) dz = d rho / 2 pi; each sigma axis contributes 1/2 pi by Parseval
    measure = samples.drho / (2.0 * np.pi) * (2.0 * np.pi) ** (-grid.m)
    return float(measure * np.sum(weight * np.abs(samples.values) ** 2))


def _profile(f: ScalarField | np.ndarray) -> np.ndarray:
    if isinstance(f, ScalarField):
        return f.cone_profile()
    return np.asarray(f, dtype=np.complex128)


def cone_norm_local(f: ScalarField, w: WeightData) -> float:
    """
    H^{s,gamma}(X^wedge) norm of a field that does not depend on the edge variables.

    Computed on the weight line Re z = (m+1)/2 - gamma with weight (1 + (Im z)^2 + |xi|^2)^s.
    """
    return math.sqrt(_cone_norm_sq(f.grid, _profile(f), w))


def _k_norm(grid: ModelGrid, profile: np.ndarray, w: WeightData, check: bool = True) -> float:
    omega = np.reshape(grid.omega, (-1,) + (1,) * (profile.ndim - 1))
    near = omega * profile
    far = (1.0 - omega) * profile
    if check:
        check_radial_decay(far, "(1 - omega) part")
    near_norm = math.sqrt(_cone_norm_sq(grid, near, w, check)) if np.any(near) else 0.0
    far_norm = math.sqrt(_cylinder_norm_sq(grid, far, w.s)) if np.any(far) else 0.0
    return near_norm + far_norm


def k_norm(f: ScalarField, w: WeightData) -> float:
    """K^{s,gamma} norm: ||omega f||_{H^{s,gamma}} + ||(1 - omega) f||_{H^s(cylinder)}."""
    return _k_norm(f.grid, _profile(f), w)


def _shift_t(grid: ModelGrid, values: np.ndarray, shift: float) -> np.ndarray:
    """Samples of t -> f(t - shift), by the Fourier shift theorem."""
    if shift == 0.0:
        return np.array(values, dtype=np.complex128)
    k = grid.wavenumbers(0)
    multiplier = np.exp(-1j * k * shift)
    multiplier[grid.N_t // 2] = 0.0
    spectrum = np.fft.fft(values, axis=0) * np.reshape(multiplier, (-1,) + (1,) * (values.ndim - 1))
    return np.fft.ifft(spectrum, axis=0)


def _check_support(grid: ModelGrid, values: np.ndarray, shift: float, reference: Optional[float] = None) -> None:
    envelope = radial_envelope(values)
    peak = reference if reference is not None else float(envelope.max(initial=0.0))
    if peak == 0.0:
        return
    support = np.nonzero(envelope > DECAY_THRESHOLD * peak)[0]
    if support.size == 0:
        return
    lo = grid.t[support[0]] + shift
    hi = grid.t[support[-1]] + shift
    if lo < -grid.T or hi > grid.T - grid.dt:
        raise ScaleOutOfWindowError(
            f"scale out of window: support [{lo:.3f}, {hi:.3f}] leaves t in [{-grid.T}, {grid.T}]"
        )


def _kappa(grid: ModelGrid, values: np.ndarray, lam: float, reference: Optional[float] = None) -> np.ndarray:
    shift = math.log(lam)
    _check_support(grid, values, shift, reference)
    return lam ** ((grid.m + 1) / 2) * _shift_t(grid, values, shift)


def group_action(f: ScalarField, lam: float) -> ScalarField:
    """
    (kappa_lambda f)(r, ...) = lambda^((m+1)/2) f(lambda r, ...), a shift by log(lambda) in t.

    Raises:
        ScaleOutOfWindowError: the rescaled support leaves the radial window.
    """
    if not lam > 0:
        raise ValueError(f"Scale must be positive, got {lam}")
    if lam == 1.0:
        return ScalarField(f.grid, f.values.copy(), f.flags)
    return ScalarField(f.grid, _kappa(f.grid, f.values, lam), f.flags)


def _edge_modes(f: ScalarField) -> np.ndarray:
    coeffs = f.values
    for axis in f.grid.u_axes:
        coeffs = np.fft.fft(coeffs, axis=axis) / coeffs.shape[axis]
    return coeffs


def _local_edge_norm_sq(f: ScalarField, w: WeightData) -> float:
    grid = f.grid
    coeffs = _edge_modes(f)
    reference = float(np.max(np.abs(coeffs), initial=0.0))
    if reference == 0.0:
        return 0.0
    eta_axes = [grid.wavenumbers(axis) for axis in grid.u_axes]
    mode_indices = list(np.ndindex(*(len(k) for k in eta_axes)))

    def mode_contribution(index) -> float:
        profile = coeffs[(slice(None),) * (1 + grid.m) + tuple(index)]
        if np.max(np.abs(profile)) <= NEGLIGIBLE_MODE * reference:
            return 0.0
        eta_sq = sum(eta_axes[k][i] ** 2 for k, i in enumerate(index))
        b = math.sqrt(1.0 + eta_sq)
        rescaled = _kappa(grid, profile, 1.0 / b, reference) if b != 1.0 else profile
        return b ** (2 * w.s) * _k_norm(grid, rescaled, w, check=False) ** 2

    # fixed summation order keeps the result independent of the schedule
    return float(sum(parallel_map(mode_contribution, mode_indices)))


def edge_norm(f: ScalarField, w: WeightData, global_form: bool = False, check: bool = True) -> float:
    """
    Edge Sobolev norm over the discrete eta modes:
    (sum_eta [eta]^{2s} ||kappa^{-1}_{[eta]} (F_{u->eta} f)(eta)||^2_{K^{s,gamma}})^(1/2).

    With global_form the field is split by the cut-off first: the omega part gets the edge
    norm and the (1 - omega) part the cylinder H^s norm over (t, sigma, u).

    check=False skips the window decay test; the value is then a truncated norm.
    """
    if check:
        check_radial_decay(f.values, "field")
    if not global_form:
        return math.sqrt(_local_edge_norm_sq(f, w))
    grid = f.grid
    omega = grid.along(grid.omega, 0)
    near = ScalarField(grid, omega * f.values, f.flags)
    far = (1.0 - omega) * f.values
    return math.sqrt(_local_edge_norm_sq(near, w) + _cylinder_norm_sq(grid, far, w.s))


def form_edge_norm(F, w: WeightData, global_form: bool = False) -> float:
    """Edge norm of a FormField: root sum of squares over its components."""
    return math.sqrt(sum(edge_norm(c, w, global_form) ** 2 for c in F.components.values()))


def measure_decay_envelope(g: ScalarField, w: WeightData, lambdas: Sequence[float]) -> dict:
    """
    Normalized sup envelope of the dilates kappa_lambda g.

    Returns the peak radii r_lambda = r_peak / lambda, the ratios sup|kappa_lambda g| / ||kappa_lambda g||_K
    and the fitted log-log exponent, which should be gamma - (m+1)/2.
    """
    envelope = g.radial_envelope()
    r_peak = float(g.grid.r[int(np.argmax(envelope))])
    radii, ratios = [], []
    for lam in lambdas:
        h = group_action(g, lam)
        radii.append(r_peak / lam)
        ratios.append(h.max_abs / k_norm(h, w))
    radii = np.asarray(radii)
    ratios = np.asarray(ratios)
    slope = float(np.polyfit(np.log(radii), np.log(ratios), 1)[0])
    return {"radii": radii, "ratios": ratios, "exponent": slope}


def default_group_ensemble(grid: ModelGrid, seed: int = 0, size: int = ENSEMBLE_SIZE,
                           t_center: Optional[float] = None, t_width: float = 0.6) -> list[ScalarField]:
    rng = np.random.default_rng(seed)
    center = grid.T / 2 if t_center is None else t_center
    return [random_field(grid, rng, t_center=center, t_width=t_width, u_dependent=False) for _ in range(size)]


def estimate_group_constants(grid: ModelGrid, w: WeightData, lambdas: Sequence[float],
                             ensemble: Optional[Sequence[ScalarField]] = None, seed: int = 0) -> GroupBounds:
    """
    Fit ||kappa_lambda|| <= K max(lambda, 1/lambda)^c on K^{s,gamma}.

    Operator norms are estimated as the ensemble max of ||kappa_lambda f|| / ||f||.

    Raises:
        PreconditionError: lambda samples do not span a decade on each side of 1 ("span"),
            or the ensemble has no usable member.
    """
    lambdas = np.asarray(sorted(lambdas), dtype=float)
    if lambdas.size == 0 or lambdas.min() > 0.1 or lambdas.max() < 10.0:
        raise PreconditionError(f"span: lambda samples must reach 0.1 and 10, got {lambdas.tolist()}")
    if ensemble is None:
        ensemble = default_group_ensemble(grid, seed)

    usable = []
    for f in ensemble:
        profile = _profile(f)
        if np.all(np.ptp(np.abs(profile), axis=0) == 0):
            continue
        base = k_norm(f, w)
        if base > 0:
            usable.append((f, base))
    if not usable:
        raise PreconditionError("degenerate ensemble: every member has zero norm or no radial structure")

    norms = np.array([max(k_norm(group_action(f, lam), w) / base for f, base in usable) for lam in lambdas])
    logger.info(f"Estimated ||kappa_lambda|| at {len(lambdas)} scales over {len(usable)} fields")

    up = lambdas > 1
    down = lambdas < 1
    c_up = np.polyfit(np.log(lambdas[up]), np.log(norms[up]), 1)[0] if up.sum() >= 2 else 0.0
    c_down = np.polyfit(-np.log(lambdas[down]), np.log(norms[down]), 1)[0] if down.sum() >= 2 else 0.0
    c_gamma = float(max(c_up, c_down, 0.0))
    K = float(np.max(norms / np.maximum(lambdas, 1.0 / lambdas) ** c_gamma))
    return GroupBounds(K, c_gamma, lambdas, norms)
