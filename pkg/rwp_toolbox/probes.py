"""Diagnostics: filter-normalised loss slices, filter-norm statistics and
perturbation-radius sweeps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from rwp_toolbox.errors import ConfigurationError, NumericError
from rwp_toolbox.model import DTYPE, Batch, FilterPartition, filter_norms
from rwp_toolbox.perturb import RwpNoiseSpec, measured_radius

log = logging.getLogger(__name__)

HISTOGRAM_BINS = 30
FLAT_THRESHOLD = 1.0
RADIUS_GAMMAS = (0.005, 0.01, 0.02, 0.03)
SAM_RHOS = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5)


class Evaluable(Protocol):
    """Anything with a filter partition that can score parameters on a batch."""

    @property
    def partition(self) -> FilterPartition: ...

    def evaluate(self, params: np.ndarray, batch: Batch) -> tuple[float, float]: ...


@dataclass(frozen=True)
class SlicePlan:
    t_min: float = -1.0
    t_max: float = 1.0
    n_points: int = 41
    direction_seed: int = 0

    def __post_init__(self) -> None:
        if not self.t_min < self.t_max:
            raise ConfigurationError(
                f"t_min {self.t_min} must be below t_max {self.t_max}", field="probe.slice_t_min"
            )
        if self.n_points < 2:
            raise ConfigurationError(f"must be >= 2, got {self.n_points}", field="probe.slice_points")

    def abscissae(self) -> np.ndarray:
        ts = np.linspace(self.t_min, self.t_max, self.n_points)
        # Snap the grid point nearest the origin onto it exactly.
        nearest = int(np.argmin(np.abs(ts)))
        if abs(ts[nearest]) < 1e-9 * (self.t_max - self.t_min):
            ts[nearest] = 0.0
        return ts


@dataclass(frozen=True, eq=False)
class SliceResult:
    ts: np.ndarray
    losses: np.ndarray
    accuracies: np.ndarray

    def flat_width(self, threshold: float = FLAT_THRESHOLD) -> float:
        return flat_width(self.ts, self.losses, threshold)


def flat_width(ts: np.ndarray, losses: np.ndarray, threshold: float = FLAT_THRESHOLD) -> float:
    """Width of the contiguous run around the point nearest t = 0 whose loss
    stays within *threshold* of the loss there."""
    centre = int(np.argmin(np.abs(ts)))
    limit = losses[centre] + threshold
    left = right = centre
    while left > 0 and losses[left - 1] <= limit:
        left -= 1
    while right < len(ts) - 1 and losses[right + 1] <= limit:
        right += 1
    return float(ts[right] - ts[left])


def filter_normalized_direction(
    params: np.ndarray, partition: FilterPartition, seed: int
) -> np.ndarray:
    """Gaussian direction rescaled so that ||d_k|| = ||w_k|| for every filter."""
    partition.check(params)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(partition.entry_index.size)
    z_norms = np.sqrt(np.bincount(partition.segment_ids, weights=z**2, minlength=partition.filter_count))
    w_norms = filter_norms(params, partition)
    scale = np.divide(w_norms, z_norms, out=np.zeros_like(w_norms), where=z_norms > 0)
    direction = np.zeros_like(params, dtype=DTYPE)
    direction[partition.entry_index] = z * scale[partition.segment_ids]
    return direction


def landscape_slice(
    model: Evaluable,
    params: np.ndarray,
    batch: Batch,
    plan: SlicePlan,
    direction: np.ndarray | None = None,
) -> SliceResult:
    """Loss and accuracy of ``params + t * d`` on an evenly spaced t grid.

    *d* defaults to the filter-normalised direction drawn from
    ``plan.direction_seed``.  Points whose evaluation overflows are
    recorded with infinite loss and zero accuracy.
    """
    if direction is None:
        direction = filter_normalized_direction(params, model.partition, plan.direction_seed)
    ts = plan.abscissae()
    losses = np.empty(len(ts))
    accuracies = np.empty(len(ts))
    for i, t in enumerate(ts):
        try:
            losses[i], accuracies[i] = model.evaluate(params + t * direction, batch)
        except NumericError as exc:
            log.debug("Slice point t=%g overflowed: %s", t, exc)
            losses[i], accuracies[i] = math.inf, 0.0
    return SliceResult(ts, losses, accuracies)


@dataclass(frozen=True, eq=False)
class FilterNormStats:
    mean: float
    std: float
    coefficient_of_variation: float
    mean_square: float
    bin_edges: np.ndarray
    counts: np.ndarray


def filter_norm_stats(params: np.ndarray, partition: FilterPartition) -> FilterNormStats:
    """Mean, population std, CV and a 30-bin histogram over [0, 1.01 * max]."""
    norms = filter_norms(params, partition)
    mean = float(norms.mean())
    std = float(norms.std())
    cv = std / mean if mean > 0 else 0.0
    upper = float(norms.max()) * 1.01
    counts, edges = np.histogram(norms, bins=HISTOGRAM_BINS, range=(0.0, upper if upper > 0 else 1.0))
    return FilterNormStats(mean, std, cv, float(np.mean(norms**2)), edges, counts)


@dataclass(frozen=True)
class RadiusSweep:
    rows: tuple[tuple[float, float], ...]
    weight_norm: float


def radius_sweep(
    params: np.ndarray,
    partition: FilterPartition,
    gammas: Sequence[float],
    n_samples: int,
    seed: int,
) -> RadiusSweep:
    """measured_radius for every gamma.

    Each gamma reuses the same noise draws (a fresh generator from *seed*),
    so the radii of different gammas are exactly proportional.
    """
    if n_samples < 100:
        raise ConfigurationError(f"must be >= 100, got {n_samples}", field="probe.radius_samples")
    rows: list[tuple[float, float]] = []
    for gamma in gammas:
        spec = RwpNoiseSpec(gamma, seed)
        radius = measured_radius(params, partition, spec, n_samples, spec.rng())
        rows.append((float(gamma), radius))
        log.info("gamma=%g radius=%.6f", gamma, radius)
    return RadiusSweep(tuple(rows), float(np.linalg.norm(params)))
