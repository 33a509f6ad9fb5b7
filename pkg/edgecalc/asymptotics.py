import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from edgecalc.deformation import Embedding, frame_perturbation
from edgecalc.errors import FitConditioningError
from edgecalc.grid import ModelGrid, ScalarField, check_radial_decay, fourier_multiplier, radial_derivative
from edgecalc.mellin import WeightData, weighted_values
from edgecalc.sobolev import cylinder_norm, edge_norm

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e10
NEGLIGIBLE = 1e-12      # absolute size below which a difference counts as zero
RATE_SLACK = 0.05
ROUNDING_ULPS = 16      # rounding of f - fitted, in units of eps * (|f| + |fitted|)
RESOLVED_FACTOR = 1e4   # a remainder is resolved once it stands this far above its rounding bound
ENVELOPE_PERCENTILE = 95


@dataclass(frozen=True)
class AsymptoticType:
    """
    Finite asymptotic type {(p_j, m_j)} for the weight gamma: terms r^(-p_j) log^k r, k <= m_j.

    Requires Re p_j < (m+1)/2 - gamma and Re p_j nonincreasing in j.
    """
    pairs: Tuple[Tuple[complex, int], ...]
    gamma: float
    m: int = 1

    def __post_init__(self):
        pairs = tuple((complex(p), int(mj)) for p, mj in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        line = (self.m + 1) / 2 - self.gamma
        for j, (p, mj) in enumerate(pairs):
            if mj < 0:
                raise ValueError(f"Log order must be >= 0, got {mj} for p = {p}")
            if not p.real < line:
                raise ValueError(f"Exponent p = {p} violates Re p < (m+1)/2 - gamma = {line}")
            if j and p.real > pairs[j - 1][0].real:
                raise ValueError(f"Exponents must have nonincreasing real parts, got {[q for q, _ in pairs]}")

    @classmethod
    def for_weight(cls, gamma: float, m: int = 1, count: int = 1, gap: float = 0.5, spacing: float = 1.0,
                   log_order: int = 0) -> "AsymptoticType":
        """count real exponents starting gap below the weight line, spaced by spacing."""
        line = (m + 1) / 2 - gamma
        return cls(tuple((line - gap - j * spacing, log_order) for j in range(count)), gamma, m)

    @property
    def terms(self) -> list[Tuple[complex, int]]:
        return [(p, k) for p, mj in self.pairs for k in range(mj + 1)]

    def to_dict(self) -> dict:
        return {"pairs": [[p, mj] for p, mj in self.pairs], "gamma": self.gamma, "m": self.m}


@dataclass
class FitTerm:
    p: complex
    k: int
    coefficients: np.ndarray = field(repr=False)  # (angular sigma nodes, edge nodes)
    c_samples: np.ndarray = field(repr=False)
    v_samples: np.ndarray = field(repr=False)
    separability: float = 0.0  # second singular value relative to the first

    def to_dict(self) -> dict:
        return {"p": self.p, "k": self.k, "c_samples": self.c_samples, "v_samples": self.v_samples,
                "separability": self.separability}


@dataclass
class ConormalFit:
    asymptotic_type: AsymptoticType
    terms: list[FitTerm]
    remainder: ScalarField = field(repr=False)
    condition_number: float
    remainder_norm: float
    rounding: ScalarField = field(repr=False)

    def term(self, p: complex, k: int = 0) -> FitTerm:
        for t in self.terms:
            if abs(t.p - p) < 1e-12 and t.k == k:
                return t
        raise KeyError(f"No fitted term with p = {p}, k = {k}")

    def resolved(self, w: WeightData) -> bool:
        """Whether the remainder weighted by w stands above the weighted rounding bound of the fit."""
        grid = self.remainder.grid
        size = np.linalg.norm(weighted_values(grid, self.remainder.values, w))
        noise = np.linalg.norm(weighted_values(grid, self.rounding.values, w))
        return bool(size > RESOLVED_FACTOR * noise)

    def to_dict(self) -> dict:
        return {"terms": [t.to_dict() for t in self.terms], "remainder_norm": self.remainder_norm,
                "condition_number": self.condition_number, "type": self.asymptotic_type.to_dict()}


def _design(grid: ModelGrid, terms: Sequence[Tuple[complex, int]]) -> np.ndarray:
    # r^(-p) log^k r = e^(p t) (-t)^k
    t = grid.t
    return np.stack([grid.omega * np.exp(p * t) * (-t) ** k for p, k in terms], axis=1)


def _separate(block: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    U, s, Vh = np.linalg.svd(block, full_matrices=False)
    if s[0] == 0.0:
        return np.zeros(block.shape[0], dtype=complex), np.zeros(block.shape[1], dtype=complex), 0.0
    ratio = float(s[1] / s[0]) if s.size > 1 else 0.0
    return U[:, 0] * s[0], Vh[0], ratio


def _rounding_bound(f: ScalarField, fitted) -> ScalarField:
    bound = ROUNDING_ULPS * np.finfo(float).eps * (np.abs(f.values) + np.abs(fitted))
    return ScalarField(f.grid, bound)


def fit_conormal_expansion(f: ScalarField, O: AsymptoticType) -> ConormalFit:
    """
    Least-squares fit of f ~ omega sum_{j,k} c_jk(sigma) v_jk(u) r^(-p_j) log^k r on the nodes where
    omega > 0, independently for every angular node.

    Each coefficient block is split into c(sigma) v(u) by its leading singular pair;
    the remainder is f - omega sum (fitted terms) as computed, and rounding bounds its
    floating-point error pointwise.

    Raises:
        WindowTruncationError: f has not decayed at the window ends.
        FitConditioningError: the column-equilibrated design matrix has condition number above 1e10.
    """
    grid = f.grid
    check_radial_decay(f.values, "field")
    terms = O.terms
    if not terms:
        return ConormalFit(O, [], f, 1.0, cylinder_norm(f, 0.0), _rounding_bound(f, 0.0))
    design = _design(grid, terms)
    rows = grid.omega > 0
    A = design[rows]
    scale = np.linalg.norm(A, axis=0)
    A = A / scale
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    condition = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
    if condition > MAX_CONDITION:
        raise FitConditioningError(
            f"Design matrix is ill-conditioned (condition number {condition:.3e}); exponents too close?", condition
        )
    n_sigma = int(np.prod([grid.shape[a] for a in grid.sigma_axes]))
    n_u = int(np.prod([grid.shape[a] for a in grid.u_axes]))
    data = f.values.reshape(grid.N_t, n_sigma * n_u)[rows]
    solution = (Vh.conj().T / s) @ (U.conj().T @ data)
    solution = solution / scale[:, None]

    fitted = (design @ solution).reshape(grid.shape)
    remainder = f.values - fitted
    out = []
    for index, (p, k) in enumerate(terms):
        block = solution[index].reshape(n_sigma, n_u)
        c, v, ratio = _separate(block)
        out.append(FitTerm(p, k, block, c, v, ratio))
    remainder_field = ScalarField(grid, remainder, f.flags)
    logger.info(f"Fitted {len(terms)} conormal terms, condition number {condition:.3e}")
    return ConormalFit(O, out, remainder_field, condition, cylinder_norm(remainder_field, 0.0),
                       _rounding_bound(f, fitted))


def estimate_leading_exponent(f: ScalarField) -> complex:
    """
    Leading exponent p with f ~ r^(-p) near r = 0, from the log-slope of the dominant angular mode
    on the region where omega = 1.
    """
    grid = f.grid
    coeffs = np.fft.fftn(f.values, axes=tuple(range(1, f.values.ndim)))
    flat = coeffs.reshape(grid.N_t, -1)
    inside = grid.omega >= 1.0
    mode = int(np.argmax(np.max(np.abs(flat[inside]), axis=0)))
    profile = flat[:, mode]
    keep = inside & (np.abs(profile) > 1e-10 * np.abs(profile).max(initial=0.0))
    if keep.sum() < 2:
        raise ValueError("Too few resolved samples near r = 0 to estimate an exponent")
    t = grid.t[keep]
    re = np.polyfit(t, np.log(np.abs(profile[keep])), 1)[0]
    im = np.polyfit(t, np.unwrap(np.angle(profile[keep])), 1)[0]
    return complex(re, im)


def fitted_type(f: ScalarField, gamma: float, log_order: int = 0) -> AsymptoticType:
    """Single-exponent type built from estimate_leading_exponent."""
    return AsymptoticType(((estimate_leading_exponent(f), log_order),), gamma, f.grid.m)


def residual_weight_gain(f: ScalarField, O: AsymptoticType, l: int, s: float = 0.0,
                         fit: Optional[ConormalFit] = None, strict: bool = True) -> float:
    """
    Edge norm of the fitted remainder at weight gamma + l.

    A remainder at the rounding level of the fit is not resolved: a growing weight amplifies the
    rounding of f itself, so the decay test only applies once ConormalFit.resolved holds.
    strict=False never tests decay, for refinement studies of remainders outside the weight.
    """
    fit = fit or fit_conormal_expansion(f, O)
    w = WeightData(s, O.gamma + l)
    if not np.any(fit.remainder.values):
        return 0.0
    if strict and fit.resolved(w):
        check_radial_decay(weighted_values(f.grid, fit.remainder.values, w), "weighted remainder")
    return edge_norm(fit.remainder, w, check=False)


@dataclass
class WeightGainStudy:
    windows: np.ndarray
    norms: np.ndarray
    growth: np.ndarray
    resolved: np.ndarray
    l: int

    @property
    def diverges(self) -> bool:
        return bool(self.growth.size and np.all(self.growth >= 2.0) and np.all(self.resolved))

    def to_dict(self) -> dict:
        return {"windows": self.windows, "norms": self.norms, "growth": self.growth, "resolved": self.resolved,
                "l": self.l, "diverges": self.diverges}


def weight_gain_study(factory: Callable[[float], ScalarField], O: AsymptoticType, l: int,
                      windows: Sequence[float] = (12.0, 16.0, 20.0), s: float = 0.0) -> WeightGainStudy:
    """
    Remainder norms at gamma + l as the radial window grows. A remainder inside the weight
    stays bounded; a term outside it makes the truncated norm grow by >= 2 per refinement.
    Growth of a remainder that never leaves the rounding level of the fit does not count.
    """
    w = WeightData(s, O.gamma + l)
    norms, resolved = [], []
    for T in windows:
        f = factory(T)
        fit = fit_conormal_expansion(f, O)
        norms.append(residual_weight_gain(f, O, l, s, fit=fit, strict=False))
        resolved.append(fit.resolved(w))
        logger.info(f"T = {T}: remainder norm at gamma + {l} = {norms[-1]:.6e} (resolved: {resolved[-1]})")
    norms = np.asarray(norms)
    with np.errstate(divide="ignore", invalid="ignore"):
        growth = norms[1:] / norms[:-1]
    return WeightGainStudy(np.asarray(windows, dtype=float), norms, growth, np.asarray(resolved), l)


# -- conormal asymptotic embeddings ------------------------------------------------

@dataclass
class EmbeddingReport:
    gamma: float
    rates: Dict[str, float]
    condition_i: bool
    beta_rate: float
    beta_max: float
    condition_ii: bool

    @property
    def passed(self) -> bool:
        return self.condition_i and self.condition_ii

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "rates": self.rates, "condition_i": self.condition_i,
                "beta_rate": self.beta_rate, "beta_max": self.beta_max, "condition_ii": self.condition_ii,
                "passed": self.passed}


def _fit_shells(grid: ModelGrid) -> np.ndarray:
    # omega = 1 region, away from the far window end where r-derivatives amplify FFT wrap-around
    return (grid.r <= grid.eps1) & (grid.t <= grid.T / 2)


def _envelope_rate(grid: ModelGrid, magnitude: np.ndarray) -> float:
    """Log-log slope in r of the per-shell percentile envelope; inf when the envelope is negligible."""
    shells = _fit_shells(grid)
    envelope = np.percentile(magnitude.reshape(grid.N_t, -1), ENVELOPE_PERCENTILE, axis=1)
    if envelope[shells].max(initial=0.0) <= NEGLIGIBLE:
        return math.inf
    keep = shells & (envelope > NEGLIGIBLE * 1e-3)
    if keep.sum() < 2:
        return math.inf
    return float(np.polyfit(np.log(grid.r[keep]), np.log(envelope[keep]), 1)[0])


def _derivative(grid: ModelGrid, D: np.ndarray, index: Tuple[int, int, int]) -> np.ndarray:
    a, b, c = index
    out = []
    for component in D:
        values = fourier_multiplier(component, grid, {1: b, 2: c})
        if a:
            values = radial_derivative(ScalarField(grid, values), a).values
        out.append(values)
    return np.stack(out)


def check_conormal_embedding(upsilon: np.ndarray, emb: Embedding, grid: ModelGrid, gamma: float,
                             alpha_max: int = 1) -> EmbeddingReport:
    """
    Conormal-asymptotic check of a sampled map against Phi with rate gamma:
    (i) |d^alpha (Upsilon - Phi)| = O(r^(gamma - |alpha|)) for |alpha| <= alpha_max, by fitting the
        95th-percentile envelope per radial shell;
    (ii) Upsilon^* g - g_M = beta with |beta| = O(r^(gamma - 1)).
    Rates are reported with |alpha| added back, so passing means rate >= gamma - 0.05.
    """
    D = np.asarray(upsilon) - emb.position(grid)
    rates = {}
    for a in range(alpha_max + 1):
        for b in range(alpha_max + 1 - a):
            for c in range(alpha_max + 1 - a - b):
                magnitude = np.sqrt(np.sum(np.abs(_derivative(grid, D, (a, b, c))) ** 2, axis=0))
                rates[f"r{a}s{b}u{c}"] = _envelope_rate(grid, magnitude) + a + b + c
    condition_i = all(rate >= gamma - RATE_SLACK for rate in rates.values())

    frame = emb.frame(grid)
    delta = frame_perturbation(grid, D)
    beta = []
    for i in range(3):
        for j in range(i, 3):
            base = np.real(np.sum(np.conj(frame[i]) * frame[j], axis=0)) - (1.0 if i == j else 0.0)
            increment = np.real(np.sum(np.conj(frame[i]) * delta[j] + np.conj(delta[i]) * frame[j]
                                       + np.conj(delta[i]) * delta[j], axis=0))
            beta.append(np.broadcast_to(base + increment, grid.shape))
    beta_size = np.max(np.abs(np.stack(beta)), axis=0)
    beta_max = float(beta_size[_fit_shells(grid)].max(initial=0.0))
    beta_rate = _envelope_rate(grid, beta_size)
    condition_ii = beta_max <= NEGLIGIBLE or beta_rate >= gamma - 1 - RATE_SLACK
    report = EmbeddingReport(gamma, rates, condition_i, beta_rate, beta_max, condition_ii)
    logger.info(f"Conormal embedding check at gamma = {gamma}: rates {rates}, beta rate {beta_rate:.4f}")
    return report
