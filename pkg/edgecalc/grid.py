import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np

from edgecalc.errors import AliasingError, GridError, WindowTruncationError

logger = logging.getLogger(__name__)

DECAY_THRESHOLD = 1e-10     # radial window ends, relative to the peak
TAIL_ENERGY_THRESHOLD = 1e-20  # spectral energy beyond a third of the band, relative
ALIASING_THRESHOLD = 1e-24  # energy dropped by a dealiased product, relative
MIN_SAMPLES = 8


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def smooth_step(x: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class ModelGrid:
    m: int
    q: int
    T: float
    N_t: int
    N_sigma: int
    N_u: int
    eps: float
    eps1: float
    eps2: float

    @property
    def dt(self) -> float:
        return 2.0 * self.T / self.N_t

    @property
    def t(self) -> np.ndarray:
        return -self.T + self.dt * np.arange(self.N_t)

    @property
    def r(self) -> np.ndarray:
        return np.exp(-self.t)

    @property
    def sigma(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.N_sigma) / self.N_sigma

    @property
    def u(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.N_u) / self.N_u

    @property
    def axis_names(self) -> Tuple[str, ...]:
        return ("t",) + tuple(f"sigma{k}" for k in range(self.m)) + tuple(f"u{k}" for k in range(self.q))

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.N_t,) + (self.N_sigma,) * self.m + (self.N_u,) * self.q

    @property
    def sigma_axes(self) -> Tuple[int, ...]:
        return tuple(range(1, 1 + self.m))

    @property
    def u_axes(self) -> Tuple[int, ...]:
        return tuple(range(1 + self.m, 1 + self.m + self.q))

    def axis_index(self, axis: str | int) -> int:
        if isinstance(axis, int):
            return axis
        aliases = {"sigma": "sigma0", "σ": "sigma0", "u": "u0"}
        name = aliases.get(axis, axis)
        if name not in self.axis_names:
            raise GridError(f"Unknown axis {axis!r}; grid axes are {self.axis_names}")
        return self.axis_names.index(name)

    def nodes(self, axis: str | int) -> np.ndarray:
        index = self.axis_index(axis)
        if index == 0:
            return self.t
        return self.sigma if index in self.sigma_axes else self.u

    def wavenumbers(self, axis: str | int) -> np.ndarray:
        index = self.axis_index(axis)
        n = self.shape[index]
        if index == 0:
            return 2.0 * np.pi * np.fft.fftfreq(n, d=self.dt)
        return np.fft.fftfreq(n, d=1.0 / n)

    def along(self, values: np.ndarray, axis: str | int) -> np.ndarray:
        """Reshape a 1-d array so it broadcasts along the given axis."""
        index = self.axis_index(axis)
        shape = [1] * len(self.shape)
        shape[index] = -1
        return np.reshape(values, shape)

    def mesh(self) -> Tuple[np.ndarray, ...]:
        return tuple(self.along(self.nodes(k), k) for k in range(len(self.shape)))

    def cutoff(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        x = (np.log(self.eps2) - np.log(r)) / (np.log(self.eps2) - np.log(self.eps1))
        return smooth_step(x)

    @property
    def omega(self) -> np.ndarray:
        return self.cutoff(self.r)

    def with_counts(self, N_t: Optional[int] = None, N_sigma: Optional[int] = None,
                    N_u: Optional[int] = None, T: Optional[float] = None) -> "ModelGrid":
        return make_model_grid(
            self.m, self.q, T if T is not None else self.T,
            N_t or self.N_t, N_sigma or self.N_sigma, N_u or self.N_u,
            self.eps, self.eps1, self.eps2,
        )

    def to_dict(self) -> dict:
        return {
            "m": self.m, "q": self.q, "T": self.T, "N_t": self.N_t, "N_sigma": self.N_sigma,
            "N_u": self.N_u, "eps": self.eps, "eps1": self.eps1, "eps2": self.eps2,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelGrid":
        return make_model_grid(**data)

    def __repr__(self) -> str:
        return (
            f"ModelGrid(m={self.m}, q={self.q}, T={self.T}, "
            f"N=({self.N_t}, {self.N_sigma}, {self.N_u}), "
            f"eps={self.eps}, cutoff=({self.eps1}, {self.eps2}))"
        )


def make_model_grid(m: int = 1, q: int = 1, T: float = 12.0, N_t: int = 128, N_sigma: int = 16,
                    N_u: int = 16, eps: float = 0.5, eps1: float = 0.1, eps2: float = 0.3) -> ModelGrid:
    """
    Build the discretization of the stretched local model [0, eps) x X x E.

    Raises:
        GridError: counts below 8 or not powers of two, non-positive window,
            or eps1 < eps2 <= eps < 1 violated ("cutoff ordering").
    """
    if m < 1 or q < 1:
        raise GridError(f"Dimensions must be at least 1, got m={m}, q={q}")
    for name, n in (("N_t", N_t), ("N_sigma", N_sigma), ("N_u", N_u)):
        if n < MIN_SAMPLES or not is_power_of_two(n):
            raise GridError(f"{name} must be a power of two >= {MIN_SAMPLES}, got {n}")
    if not T > 0:
        raise GridError(f"Window half-width T must be positive, got {T}")
    if not 0 < eps1 < eps2 <= eps < 1:
        raise GridError(f"cutoff ordering violated: need 0 < eps1 < eps2 <= eps < 1, got {eps1}, {eps2}, {eps}")
    return ModelGrid(int(m), int(q), float(T), int(N_t), int(N_sigma), int(N_u),
                     float(eps), float(eps1), float(eps2))


@dataclass
class ScalarField:
    grid: ModelGrid
    values: np.ndarray
    flags: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.grid.shape:
            raise GridError(f"Field shape {self.values.shape} does not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise GridError("Field contains non-finite samples")

    @classmethod
    def zeros(cls, grid: ModelGrid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128))

    @classmethod
    def from_function(cls, grid: ModelGrid, func: Callable[..., np.ndarray]) -> "ScalarField":
        """func receives the broadcastable node arrays (t, sigma..., u...)."""
        values = np.broadcast_to(func(*grid.mesh()), grid.shape)
        return cls(grid, np.array(values, dtype=np.complex128))

    def _combine(self, other, op) -> "ScalarField":
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise GridError("Fields live on different grids")
            return ScalarField(self.grid, op(self.values, other.values), tuple(sorted(set(self.flags) | set(other.flags))))
        return ScalarField(self.grid, op(self.values, other), self.flags)

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__
    __radd__ = __add__

    def __neg__(self):
        return ScalarField(self.grid, -self.values, self.flags)

    def with_flag(self, flag: str) -> "ScalarField":
        if flag in self.flags:
            return self
        return ScalarField(self.grid, self.values, self.flags + (flag,))

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def radial_envelope(self) -> np.ndarray:
        return radial_envelope(self.values)

    def cone_profile(self) -> np.ndarray:
        """The (t, sigma...) profile of a field that does not depend on the edge variables."""
        grid = self.grid
        ref = self.values[(slice(None),) * (1 + grid.m) + (0,) * grid.q]
        ref_full = np.expand_dims(ref, axis=grid.u_axes)
        scale = max(self.max_abs, 1.0)
        if np.max(np.abs(self.values - ref_full)) > 1e-12 * scale:
            raise GridError("Field depends on the edge variables; use the edge norm instead")
        return ref

    @classmethod
    def from_cone_profile(cls, grid: ModelGrid, profile: np.ndarray) -> "ScalarField":
        profile = np.asarray(profile, dtype=np.complex128)
        expanded = np.expand_dims(profile, axis=grid.u_axes)
        return cls(grid, np.broadcast_to(expanded, grid.shape).copy())


def radial_envelope(values: np.ndarray) -> np.ndarray:
    if values.ndim == 1:
        return np.abs(values)
    return np.max(np.abs(values), axis=tuple(range(1, values.ndim)))


def check_radial_decay(values: np.ndarray, label: str = "field") -> None:
    """
    Raises:
        WindowTruncationError: the samples at either radial window end exceed
            DECAY_THRESHOLD times the peak.
    """
    envelope = radial_envelope(values)
    peak = float(envelope.max()) if envelope.size else 0.0
    if peak == 0.0:
        return
    end = max(float(envelope[0]), float(envelope[-1]))
    if end > DECAY_THRESHOLD * peak:
        raise WindowTruncationError(
            f"window truncation unsound: {label} is {end / peak:.3e} of its peak at the radial window ends"
        )


def tail_energy_fraction(values: np.ndarray, axis: int) -> float:
    n = values.shape[axis]
    spectrum = np.abs(np.fft.fft(values, axis=axis)) ** 2
    index = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    total = float(spectrum.sum())
    if total == 0.0:
        return 0.0
    mask = np.reshape(index > n / 3, [-1 if k == axis else 1 for k in range(values.ndim)])
    return float(np.sum(spectrum * mask)) / total


def fourier_multiplier(values: np.ndarray, grid: ModelGrid, orders: dict[int, int]) -> np.ndarray:
    """Apply prod_k (i k)^order along the given axes. Odd orders drop the Nyquist mode."""
    out = np.asarray(values, dtype=np.complex128)
    for axis, order in orders.items():
        if order == 0:
            continue
        k = grid.wavenumbers(axis)
        multiplier = (1j * k) ** order
        n = grid.shape[axis]
        if order % 2 == 1:
            multiplier[n // 2] = 0.0
        out = np.fft.ifft(np.fft.fft(out, axis=axis) * grid.along(multiplier, axis), axis=axis)
    return out


def fourier_polynomial(values: np.ndarray, grid: ModelGrid, axis: int, coeffs) -> np.ndarray:
    """Apply sum_i coeffs[i] * d^i along one axis in a single transform."""
    k = grid.wavenumbers(axis)
    n = grid.shape[axis]
    multiplier = np.zeros(n, dtype=np.complex128)
    for i, c in enumerate(coeffs):
        if c == 0:
            continue
        term = (1j * k) ** i
        if i % 2 == 1:
            term[n // 2] = 0.0
        multiplier += c * term
    return np.fft.ifft(np.fft.fft(values, axis=axis) * grid.along(multiplier, axis), axis=axis)


def _flag_band_limit(f: ScalarField, result: ScalarField, axis: int) -> ScalarField:
    fraction = tail_energy_fraction(f.values, axis)
    if fraction > TAIL_ENERGY_THRESHOLD:
        name = f.grid.axis_names[axis]
        logger.warning(f"Spectral tail energy {fraction:.2e} along {name}; derivative may be unresolved")
        return result.with_flag(f"band-limit:{name}")
    return result


def spectral_derivative(f: ScalarField, axis: str | int, order: int = 1) -> ScalarField:
    """
    Fourier spectral derivative along one axis.

    axis "t" differentiates in t = -log r; use axis "r" (or radial_derivative) for d/dr,
    which is -e^t d/dt by the chain rule.
    """
    if axis == "r":
        return radial_derivative(f, order)
    index = f.grid.axis_index(axis)
    values = fourier_multiplier(f.values, f.grid, {index: order})
    return _flag_band_limit(f, ScalarField(f.grid, values, f.flags), index)


def radial_derivative(f: ScalarField, order: int = 1) -> ScalarField:
    # d_r^k = (-1)^k r^{-k} theta (theta + 1) ... (theta + k - 1), theta = -r d_r = d_t
    coeffs = np.array([1.0])
    for j in range(order):
        coeffs = np.polynomial.polynomial.polymul(coeffs, [float(j), 1.0])
    values = fourier_polynomial(f.values, f.grid, 0, coeffs)
    factor = (-1) ** order * np.exp(order * f.grid.t)
    return _flag_band_limit(f, ScalarField(f.grid, values * f.grid.along(factor, 0), f.flags), 0)


def _resize_spectrum(spectrum: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    out = spectrum
    for axis, new in enumerate(shape):
        old = out.shape[axis]
        if new == old:
            continue
        shifted = np.fft.fftshift(out, axes=axis)
        if new > old:
            before = (new - old) // 2
            pad = [(0, 0)] * out.ndim
            pad[axis] = (before, new - old - before)
            resized = np.pad(shifted, pad)
        else:
            before = (old - new) // 2
            resized = np.take(shifted, np.arange(before, before + new), axis=axis)
        out = np.fft.ifftshift(resized, axes=axis)
    return out


def resample_field(f: ScalarField, grid: ModelGrid) -> ScalarField:
    """Spectral interpolation of f onto a grid with the same window and cut-offs but other node counts."""
    if replace(grid, N_t=f.grid.N_t, N_sigma=f.grid.N_sigma, N_u=f.grid.N_u) != f.grid:
        raise GridError(f"Resampling only changes node counts; {grid} and {f.grid} differ otherwise")
    scale = float(np.prod(grid.shape)) / float(np.prod(f.grid.shape))
    values = np.fft.ifftn(_resize_spectrum(np.fft.fftn(f.values), grid.shape)) * scale
    return ScalarField(grid, values, f.flags)


def dealiased_product(f: ScalarField, g: ScalarField) -> ScalarField:
    """
    Pointwise product computed on a 3/2 zero-padded grid and truncated back.

    Raises:
        AliasingError: the product carries non-negligible energy outside the grid band.
    """
    if f.grid != g.grid:
        raise GridError("Fields live on different grids")
    shape = f.values.shape
    fine = tuple(3 * n // 2 for n in shape)
    scale = float(np.prod(fine)) / float(np.prod(shape))
    fine_f = np.fft.ifftn(_resize_spectrum(np.fft.fftn(f.values), fine)) * scale
    fine_g = np.fft.ifftn(_resize_spectrum(np.fft.fftn(g.values), fine)) * scale
    product_spectrum = np.fft.fftn(fine_f * fine_g) / scale
    kept = _resize_spectrum(product_spectrum, shape)
    total = float(np.sum(np.abs(product_spectrum) ** 2))
    dropped = float(np.sum(np.abs(product_spectrum - _resize_spectrum(kept, fine)) ** 2))
    if total > 0 and dropped > ALIASING_THRESHOLD * total:
        raise AliasingError(f"aliasing detected: product loses {dropped / total:.3e} of its energy to the band limit")
    return ScalarField(f.grid, np.fft.ifftn(kept), tuple(sorted(set(f.flags) | set(g.flags))))


def random_field(grid: ModelGrid, rng: np.random.Generator, t_center: float = 0.0,
                 t_width: float = 1.0, max_mode: int = 2, u_dependent: bool = True,
                 amplitude: float = 1.0) -> ScalarField:
    """Seeded band-limited field: Gaussian-type t-profiles times a random low-mode angular part."""
    angular_shape = grid.shape[1:]
    values = np.zeros(grid.shape, dtype=np.complex128)
    t = grid.t
    x = (t - t_center) / t_width
    profiles = [np.exp(-0.5 * x ** 2), x * np.exp(-0.5 * x ** 2)]
    for profile in profiles:
        spectrum = np.zeros(angular_shape, dtype=np.complex128)
        index = []
        for k, n in enumerate(angular_shape):
            axis = k + 1
            limit = max_mode if (u_dependent or axis in grid.sigma_axes) else 0
            index.append(np.r_[0:limit + 1, n - limit:n] if limit > 0 else np.array([0]))
        block = np.ix_(*index)
        spectrum[block] = rng.standard_normal(spectrum[block].shape) + 1j * rng.standard_normal(spectrum[block].shape)
        angular = np.fft.ifftn(spectrum) * np.prod(angular_shape) / spectrum[block].size
        values += grid.along(profile, 0) * angular[np.newaxis]
    return ScalarField(grid, amplitude * values)


def save_field(path: str | Path, fld) -> Path:
    """
    Write a ScalarField or FormField as a JSON header plus a sibling .bin file of
    little-endian (re, im) float64 pairs, components in header order.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data_path = path.with_suffix(".bin")
    if isinstance(fld, ScalarField):
        header = {"grid": fld.grid.to_dict(), "kind": "scalar", "degree": 0, "components": ["scalar"]}
        arrays = [fld.values]
    else:
        labels = sorted(fld.components)
        header = {
            "grid": fld.grid.to_dict(), "kind": "form", "degree": fld.degree,
            "components": [f"({a},{p},{e})" for a, p, e in labels],
        }
        arrays = [fld.components[label].values for label in labels]
    header["data"] = data_path.name
    with open(path, "w") as f:
        json.dump(header, f, indent=2, sort_keys=True)
    with open(data_path, "wb") as f:
        for array in arrays:
            f.write(np.ascontiguousarray(array, dtype="<c16").tobytes())
    logger.info(f"Saved {header['kind']} field with {len(arrays)} component(s) to {path}")
    return path


def load_field(path: str | Path):
    path = Path(path)
    with open(path, "r") as f:
        header = json.load(f)
    grid = ModelGrid.from_dict(header["grid"])
    raw = np.fromfile(path.parent / header.get("data", path.with_suffix(".bin").name), dtype="<c16")
    size = int(np.prod(grid.shape))
    names = header["components"]
    if raw.size != size * len(names):
        raise GridError(f"Field data holds {raw.size} samples, header declares {size * len(names)}")
    arrays = [raw[i * size:(i + 1) * size].reshape(grid.shape) for i in range(len(names))]
    if header["kind"] == "scalar":
        return ScalarField(grid, arrays[0])
    if header["kind"] != "form":
        raise GridError(f"Unknown field kind {header['kind']!r}")
    from edgecalc.forms import FormField, parse_label
    components = {parse_label(name): ScalarField(grid, array) for name, array in zip(names, arrays)}
    return FormField(grid, header["degree"], components)
