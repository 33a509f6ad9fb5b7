import logging
import math
from dataclasses import dataclass

import numpy as np

from edgecalc.grid import ModelGrid, ScalarField, check_radial_decay

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightData:
    s: float
    gamma: float

    def __post_init__(self):
        if not (math.isfinite(self.s) and math.isfinite(self.gamma)):
            raise ValueError(f"Weight data must be finite, got s={self.s}, gamma={self.gamma}")

    def beta(self, m: int) -> float:
        """Real part of the weight line, (m+1)/2 - gamma."""
        return (m + 1) / 2 - self.gamma

    def shifted(self, ds: float = 0.0, dgamma: float = 0.0) -> "WeightData":
        return WeightData(self.s + ds, self.gamma + dgamma)


@dataclass(frozen=True)
class WeightLine:
    beta: float
    samples: np.ndarray  # z = beta + i rho, rho in FFT order

    @property
    def rho(self) -> np.ndarray:
        return self.samples.imag

    @classmethod
    def for_grid(cls, grid: ModelGrid, beta: float) -> "WeightLine":
        rho = grid.wavenumbers(0)
        return cls(beta, beta + 1j * rho)


@dataclass(frozen=True)
class WeightLineSamples:
    """Joint transform: Mellin on the weight line along axis 0, Fourier in the angular axes."""
    grid: ModelGrid
    line: WeightLine
    values: np.ndarray

    @property
    def drho(self) -> float:
        return 2.0 * np.pi / (self.grid.N_t * self.grid.dt)

    def mode_numbers(self, axis: int) -> np.ndarray:
        return self.grid.wavenumbers(axis)


def mellin_transform(grid: ModelGrid, profile: np.ndarray, z: complex) -> complex:
    """
    Mellin transform of a radial profile, int_0^inf r^(z-1) f(r) dr.

    With r = e^(-t) the integral becomes int e^(-z t) f(e^(-t)) dt, evaluated by the
    trapezoid rule on the t nodes.

    Raises:
        WindowTruncationError: the integrand has not decayed at the window ends.
    """
    profile = np.asarray(profile, dtype=np.complex128)
    if profile.shape != (grid.N_t,):
        raise ValueError(f"Radial profile must have {grid.N_t} samples, got shape {profile.shape}")
    integrand = np.exp(-z * grid.t) * profile
    check_radial_decay(integrand, "Mellin integrand")
    return complex(grid.dt * np.sum(integrand))


def cauchy_riemann_residual(grid: ModelGrid, profile: np.ndarray, z: complex, h: float = 1e-4) -> float:
    """Relative Cauchy-Riemann defect of mellin_transform on the 3x3 stencil around z."""
    f_x = (mellin_transform(grid, profile, z + h) - mellin_transform(grid, profile, z - h)) / (2 * h)
    f_y = (mellin_transform(grid, profile, z + 1j * h) - mellin_transform(grid, profile, z - 1j * h)) / (2 * h)
    scale = max(abs(f_x), abs(f_y), np.finfo(float).tiny)
    return abs(f_y - 1j * f_x) / scale


def s_gamma_map(f: ScalarField, w: WeightData) -> ScalarField:
    """(S f)(t, x) = e^(-((m+1)/2 - gamma) t) f(e^(-t), x)."""
    grid = f.grid
    weight = np.exp(-w.beta(grid.m) * grid.t)
    return ScalarField(grid, f.values * grid.along(weight, 0), f.flags)


def inverse_s_gamma_map(g: ScalarField, w: WeightData) -> ScalarField:
    grid = g.grid
    weight = np.exp(w.beta(grid.m) * grid.t)
    return ScalarField(grid, g.values * grid.along(weight, 0), g.flags)


def weighted_values(grid: ModelGrid, values: np.ndarray, w: WeightData) -> np.ndarray:
    weight = np.exp(-w.beta(grid.m) * grid.t)
    return values * np.reshape(weight, (-1,) + (1,) * (values.ndim - 1))


def transform_values(grid: ModelGrid, values: np.ndarray, w: WeightData, check: bool = True) -> WeightLineSamples:
    """weight_line_transform on a raw array whose leading axis is t and the rest angular."""
    weighted = weighted_values(grid, values, w)
    if check:
        check_radial_decay(weighted, "weighted field")
    line = WeightLine.for_grid(grid, w.beta(grid.m))
    # int e^{-i rho t} g dt on nodes t_j = -T + j dt
    phase = np.exp(1j * line.rho * grid.T)
    spectrum = grid.dt * np.fft.fft(weighted, axis=0) * np.reshape(phase, (-1,) + (1,) * (values.ndim - 1))
    for axis in range(1, values.ndim):
        n = values.shape[axis]
        if axis in grid.u_axes:
            spectrum = np.fft.fft(spectrum, axis=axis) / n
        else:
            spectrum = np.fft.fft(spectrum, axis=axis) * (2.0 * np.pi / n)
    return WeightLineSamples(grid, line, spectrum)


def weight_line_transform(f: ScalarField, w: WeightData) -> WeightLineSamples:
    """
    Mellin transform restricted to Re z = (m+1)/2 - gamma, jointly with the Fourier
    transform in (sigma, u).

    sigma modes carry the measure d sigma; u modes are mean coefficients (measure du/2pi).
    """
    samples = transform_values(f.grid, f.values, w)
    if f.flags:
        logger.warning(f"Transforming a flagged field: {f.flags}")
    return samples
