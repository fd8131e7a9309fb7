"""Weight perturbations: filter-wise Gaussian noise and SAM's ascent step."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from rwp_toolbox.errors import ConfigurationError, DegenerateGradientError
from rwp_toolbox.model import DTYPE, FilterPartition, filter_norms

log = logging.getLogger(__name__)

DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class RwpNoiseSpec:
    """Filter-wise noise magnitude ``gamma`` and the seed of its stream."""

    gamma: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.gamma) or self.gamma < 0:
            raise ConfigurationError(f"must be >= 0, got {self.gamma}", field="rule.gamma")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class SamSpec:
    """Radius ``rho`` of the norm ball SAM ascends within."""

    rho: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.rho) or self.rho <= 0:
            raise ConfigurationError(f"must be > 0, got {self.rho}", field="rule.rho")


def sample_rwp_noise(
    params: np.ndarray,
    partition: FilterPartition,
    spec: RwpNoiseSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw eps_r with entries of filter k ~ N(0, (gamma * ||w_k||)^2).

    Bias entries stay exactly zero.  One standard normal is drawn per
    filter weight regardless of gamma, so the stream advances identically
    for every gamma.
    """
    norms = filter_norms(params, partition)
    z = rng.standard_normal(partition.entry_index.size)
    noise = np.zeros_like(params, dtype=DTYPE)
    if spec.gamma > 0:
        noise[partition.entry_index] = z * (spec.gamma * norms)[partition.segment_ids]
    return noise


def sam_perturbation(grad: np.ndarray, spec: SamSpec, tol: float = DEGENERATE_TOL) -> np.ndarray:
    """First-order worst-case perturbation ``rho * g / ||g||``.

    The direction is normalised in extended precision and rounded to float64
    once, so ``sam_perturbation(c * g)`` matches ``sam_perturbation(g)`` to
    within one ulp per entry whenever ``c * g`` is exact, and bitwise for
    powers of two.
    """
    wide = np.asarray(grad, dtype=np.longdouble)
    norm = np.sqrt(np.sum(wide * wide))
    if not norm > tol:
        raise DegenerateGradientError(float(norm), tol)
    return ((wide / norm) * np.longdouble(spec.rho)).astype(DTYPE)


def measured_radius(
    params: np.ndarray,
    partition: FilterPartition,
    spec: RwpNoiseSpec,
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """Mean ||eps_r|| over *n_samples* independent draws."""
    if n_samples < 1:
        raise ConfigurationError(f"must be >= 1, got {n_samples}", field="n_samples")
    total = 0.0
    for _ in range(n_samples):
        total += float(np.linalg.norm(sample_rwp_noise(params, partition, spec, rng)))
    return total / n_samples
