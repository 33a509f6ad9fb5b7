import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from edgecalc.config import parallel_map
from edgecalc.errors import PreconditionError
from edgecalc.grid import ModelGrid, ScalarField, dealiased_product, radial_derivative, random_field, resample_field, \
    spectral_derivative
from edgecalc.mellin import WeightData
from edgecalc.sobolev import edge_norm, estimate_group_constants, k_norm

logger = logging.getLogger(__name__)

STABILITY_BAND = (0.9, 1.1)
ENSEMBLE_SIZE = 32
GROUP_SCALES = (0.05, 0.1, 0.2, 0.5, 2.0, 5.0, 10.0, 20.0)


@dataclass
class Report:
    """Outcome of one estimate check; constants[i] is the fitted constant at resolution i."""
    check: str
    params: dict
    constant: float
    stable: bool
    witnesses: list = field(default_factory=list)
    constants: Tuple[float, ...] = ()

    @property
    def passed(self) -> bool:
        return self.stable and math.isfinite(self.constant)

    def to_dict(self) -> dict:
        params = dict(self.params)
        params["constants"] = list(self.constants)
        return {"check": self.check, "params": params, "constant": self.constant, "stable": self.stable,
                "witnesses": self.witnesses}


def refined(grid: ModelGrid, edge: bool = False) -> ModelGrid:
    """Second resolution for stability studies: doubled radial and angular counts."""
    return grid.with_counts(N_t=2 * grid.N_t, N_sigma=2 * grid.N_sigma, N_u=2 * grid.N_u if edge else None)


def is_stable(constants: Sequence[float]) -> bool:
    a, b = constants[0], constants[-1]
    if a == 0.0 and b == 0.0:
        return True
    if a == 0.0 or not (math.isfinite(a) and math.isfinite(b)):
        return False
    lo, hi = STABILITY_BAND
    return lo <= b / a <= hi


def algebra_weight(w: WeightData, m: int) -> float:
    """Weight 2 gamma - (m+1)/2 carried by products of two weight-gamma functions."""
    return 2 * w.gamma - (m + 1) / 2


def product_weight_gain(w: WeightData, m: int) -> float:
    """beta = gamma - (m+1)/2, the extra weight a product gains over its factors."""
    return w.gamma - (m + 1) / 2


def _space_norm(f: ScalarField, w: WeightData, space: str) -> float:
    if space == "cone":
        return k_norm(f, w)
    if space == "edge":
        return edge_norm(f, w, global_form=True)
    raise ValueError(f"Unknown space {space!r}; expected 'cone' or 'edge'")


def _ensemble(grid: ModelGrid, seed: int, size: int, u_dependent: bool) -> list[ScalarField]:
    rng = np.random.default_rng(seed)
    return [random_field(grid, rng, t_center=0.0, t_width=1.0, u_dependent=u_dependent) for _ in range(size)]


# -- pointwise bounds ----------------------------------------------------------------

def pointwise_ratio(f: ScalarField, w: WeightData, space: str = "cone") -> Tuple[float, dict]:
    """
    max over r < 1, alpha in {1, d_r, d_sigma} of |d^alpha f| r^(|alpha_r| - gamma + (m+1)/2) / ||f||.

    Returns the ratio and the node where it is attained; a zero field gives 0.
    """
    grid = f.grid
    norm = _space_norm(f, w, space) if np.any(f.values) else 0.0
    if norm == 0.0:
        return 0.0, {}
    inside = grid.r < 1.0
    best, where = 0.0, {}
    derivatives = (("f", f, 0), ("d_r f", radial_derivative(f), 1), ("d_sigma f", spectral_derivative(f, "sigma"), 0))
    for name, values, radial_order in derivatives:
        exponent = radial_order - w.gamma + (grid.m + 1) / 2
        scaled = np.abs(values.values) * grid.along(grid.r ** exponent, 0)
        scaled = scaled[inside]
        index = np.unravel_index(int(np.argmax(scaled)), scaled.shape)
        if scaled[index] / norm > best:
            best = float(scaled[index] / norm)
            t_index = int(np.nonzero(inside)[0][index[0]])
            where = {"derivative": name, "t": float(grid.t[t_index]), "node": [t_index, *map(int, index[1:])]}
    return best, where


def _embedding_threshold(grid: ModelGrid, w: WeightData, space: str, c_gamma: Optional[float]) -> Tuple[float, float]:
    if space == "cone":
        return (grid.m + 1) / 2, 0.0
    if c_gamma is None:
        c_gamma = estimate_group_constants(grid, w, GROUP_SCALES).c_gamma
    return (grid.m + 1 + grid.q) / 2 + c_gamma, c_gamma


def check_pointwise_bound(grid: ModelGrid, w: WeightData, seed: int = 0, size: int = ENSEMBLE_SIZE,
                          space: str = "cone", c_gamma: Optional[float] = None) -> Report:
    """
    Weighted pointwise bound |d^alpha f| <= C ||f|| r^(gamma - (m+1)/2 - |alpha_r|) over a seeded ensemble,
    fitted at the grid and at refined(grid).

    For the edge space the Sobolev threshold includes the group exponent c_gamma, measured with
    estimate_group_constants unless given.

    Raises:
        PreconditionError: s at or below the embedding threshold.
    """
    threshold, c_gamma = _embedding_threshold(grid, w, space, c_gamma)
    if not w.s > threshold:
        raise PreconditionError(f"below embedding threshold: s = {w.s} must exceed {threshold:.4f} for the {space} space")
    edge = space == "edge"
    constants, witnesses = [], []
    for resolution in (grid, refined(grid, edge)):
        ensemble = _ensemble(resolution, seed, size, u_dependent=edge)
        results = parallel_map(lambda f: pointwise_ratio(f, w, space), ensemble)
        worst = int(np.argmax([ratio for ratio, _ in results]))
        constants.append(results[worst][0])
        witnesses.append({"member": worst, "N_t": resolution.N_t, **results[worst][1]})
        logger.info(f"Pointwise constant at N_t = {resolution.N_t}: {constants[-1]:.6e}")
    params = {"s": w.s, "gamma": w.gamma, "space": space, "seed": seed, "size": size, "threshold": threshold,
              "c_gamma": c_gamma, "grid": grid.to_dict()}
    return Report("pointwise", params, constants[0], is_stable(constants), witnesses, tuple(constants))


# -- products ------------------------------------------------------------------------

def _require_product_regime(grid: ModelGrid, w: WeightData) -> None:
    threshold = (grid.q + grid.m + 3) / 2
    if not w.s > threshold:
        raise PreconditionError(f"below embedding threshold: s = {w.s} must exceed (q+m+3)/2 = {threshold}")


def product_ratio(f: ScalarField, g: ScalarField, w: WeightData, target: WeightData) -> float:
    """||fg||_target / (||f||_w ||g||_w) with a dealiased product; 0 when either factor vanishes."""
    if not (np.any(f.values) and np.any(g.values)):
        return 0.0
    denominator = edge_norm(f, w, global_form=True) * edge_norm(g, w, global_form=True)
    if denominator == 0.0:
        return 0.0
    return edge_norm(dealiased_product(f, g), target, global_form=True) / denominator


def check_banach_algebra(grid: ModelGrid, w: WeightData, seed: int = 0, size: int = ENSEMBLE_SIZE,
                         algebra: bool = False) -> Report:
    """
    ||fg||_{s, 2 gamma - (m+1)/2} <= C ||f||_{s,gamma} ||g||_{s,gamma} over seeded pairs at two resolutions.

    With algebra=True the weight must satisfy gamma >= (m+1)/2, where the estimate makes the
    space closed under multiplication.

    Raises:
        PreconditionError: s is not an integer above (q+m+3)/2, or the algebra regime is violated.
        AliasingError: a product loses energy to the band limit.
    """
    if float(w.s) != int(w.s):
        raise PreconditionError(f"Sobolev order must be an integer, got s = {w.s}")
    _require_product_regime(grid, w)
    if algebra and w.gamma < (grid.m + 1) / 2:
        raise PreconditionError(f"below embedding threshold: algebra needs gamma >= {(grid.m + 1) / 2}, got {w.gamma}")
    target = WeightData(w.s, algebra_weight(w, grid.m))
    constants, witnesses = [], []
    for resolution in (grid, refined(grid)):
        ensemble = _ensemble(resolution, seed, 2 * size, u_dependent=True)
        pairs = list(zip(ensemble[0::2], ensemble[1::2]))
        ratios = parallel_map(lambda pair: product_ratio(pair[0], pair[1], w, target), pairs)
        worst = int(np.argmax(ratios))
        constants.append(float(ratios[worst]))
        witnesses.append({"pair": worst, "N_t": resolution.N_t, "ratio": constants[-1]})
        logger.info(f"Algebra constant at N_t = {resolution.N_t}: {constants[-1]:.6e}")
    params = {"s": w.s, "gamma": w.gamma, "target_gamma": target.gamma, "seed": seed, "size": size,
              "algebra": algebra, "grid": grid.to_dict()}
    return Report("algebra", params, constants[0], is_stable(constants), witnesses, tuple(constants))


def check_product_weight_gain(f: ScalarField, g: ScalarField, w: WeightData) -> Report:
    """
    ||fg||_{s, gamma + beta} with beta = gamma - (m+1)/2, finite and stable when f and g are
    resampled onto refined(grid). At gamma = (m+1)/2 this is the plain algebra estimate.

    Raises:
        PreconditionError: s <= (q+m+3)/2 or gamma < (m+1)/2.
    """
    grid = f.grid
    _require_product_regime(grid, w)
    beta = product_weight_gain(w, grid.m)
    if beta < 0:
        raise PreconditionError(f"below embedding threshold: gamma = {w.gamma} < (m+1)/2 gives no weight gain")
    target = w.shifted(dgamma=beta)
    fine = refined(grid)
    constants = [product_ratio(f, g, w, target),
                 product_ratio(resample_field(f, fine), resample_field(g, fine), w, target)]
    params = {"s": w.s, "gamma": w.gamma, "beta": beta, "target_gamma": target.gamma, "grid": grid.to_dict()}
    stable = is_stable(constants)
    if not stable:
        logger.warning(f"Product weight gain unstable across resolutions: {constants}")
    return Report("product-weight-gain", params, constants[0], stable, [{"ratios": constants}], tuple(constants))
