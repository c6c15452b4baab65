"""Per-equation model spaces and dynamic model selection.

Each equation carries a pool of candidate models: a parental-set bitmask
over the available factors crossed with discount grids.  Probabilities are
forgotten between periods (raised to the power alpha and renormalized) and
Bayes-updated with each model's one-step predictive density.  All members of
a pool keep filtering every period so their probabilities stay comparable.
All probability arithmetic is in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import dlm
from .errors import NumericError, ParameterError, ShapeError

NORMALIZATION_TOL = 1e-10


@dataclass(frozen=True)
class ModelSpec:
    """One candidate model: parent bitmask plus a (delta, kappa) discount pair."""

    parents: int
    delta: float
    kappa: float

    def includes(self, factor: int) -> bool:
        return bool((self.parents >> factor) & 1)

    def parent_indices(self) -> tuple[int, ...]:
        out, mask, i = [], self.parents, 0
        while mask:
            if mask & 1:
                out.append(i)
            mask >>= 1
            i += 1
        return tuple(out)

    @property
    def dim(self) -> int:
        return 1 + bin(self.parents).count("1")


@dataclass
class EquationPool:
    """Candidate models of one equation with their states and log probabilities."""

    specs: list[ModelSpec]
    states: list[dlm.NGState]
    log_probs: np.ndarray
    alpha: float
    n_factors: int = 0

    def __post_init__(self):
        self.log_probs = np.asarray(self.log_probs, float)
        if not (len(self.specs) == len(self.states) == self.log_probs.size >= 1):
            raise ShapeError("specs, states and log_probs must have equal nonzero length")
        if not 0 < self.alpha <= 1:
            raise ParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.n_factors == 0:
            self.n_factors = max(sp.parents for sp in self.specs).bit_length()

    def validate(self) -> None:
        if abs(logsumexp(self.log_probs)) > NORMALIZATION_TOL:
            raise NumericError("pool probabilities are not normalized")


def build_pool(n_factors: int, delta_grid, kappa_grid, alpha: float, *,
               is_factor_equation: bool = False, preceding: int = 0,
               s0: float = 1.0) -> EquationPool:
    """Construct the model space of one equation with uniform probabilities.

    Asset equations enumerate every nonempty parent subset of the n_factors
    factors crossed with both discount grids.  Factor equations keep the
    single full mask over their ``preceding`` factors (subset selection among
    factor parents is not performed) crossed with the grids.
    """
    delta_grid = list(delta_grid)
    kappa_grid = list(kappa_grid)
    if not delta_grid or not kappa_grid:
        raise ParameterError("discount grids must be non-empty")
    if is_factor_equation:
        masks = [(1 << preceding) - 1]
    else:
        if n_factors < 1:
            raise ParameterError("asset equations need at least one factor")
        masks = list(range(1, 1 << n_factors))
    specs = [ModelSpec(m, d, k) for m in masks for d in delta_grid for k in kappa_grid]
    states = [dlm.init_state(sp.dim, s0) for sp in specs]
    log_probs = np.full(len(specs), -np.log(len(specs)))
    n = preceding if is_factor_equation else n_factors
    return EquationPool(specs, states, log_probs, alpha, n_factors=n)


def predict_probs(pool: EquationPool) -> np.ndarray:
    """Forgetting step: raise probabilities to the power alpha, renormalize."""
    lp = pool.alpha * pool.log_probs
    return lp - logsumexp(lp)


def update_probs(predicted: np.ndarray, log_densities: np.ndarray) -> np.ndarray:
    """Bayes step: posterior proportional to predicted times predictive density."""
    predicted = np.asarray(predicted, float)
    log_densities = np.asarray(log_densities, float)
    if predicted.shape != log_densities.shape:
        raise ShapeError("predicted probabilities and densities must align")
    if np.isnan(log_densities).any():
        bad = int(np.flatnonzero(np.isnan(log_densities))[0])
        raise NumericError(f"NaN predictive density for model {bad}")
    lp = predicted + log_densities
    return lp - logsumexp(lp)


def select_best(pool: EquationPool) -> int:
    """Index of the highest-probability model; ties break to the lowest index."""
    return int(np.argmax(pool.log_probs))


def inclusion_probability(pool: EquationPool, factor: int) -> float:
    """Total probability of all models whose parental set contains the factor."""
    if not 0 <= factor < pool.n_factors:
        raise ParameterError(f"factor index {factor} outside range [0, {pool.n_factors})")
    hit = np.array([sp.includes(factor) for sp in pool.specs])
    if not hit.any():
        return 0.0
    return float(np.exp(logsumexp(pool.log_probs[hit])))
