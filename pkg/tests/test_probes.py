from __future__ import annotations

import math

import numpy as np
import pytest

from rwp_toolbox.model import Batch, FilterPartition, build_linear, build_mlp, filter_norms, init_uniform
from rwp_toolbox.errors import ConfigurationError
from rwp_toolbox.probes import (
    HISTOGRAM_BINS,
    RADIUS_GAMMAS,
    SlicePlan,
    filter_norm_stats,
    filter_normalized_direction,
    flat_width,
    landscape_slice,
    radius_sweep,
)

from conftest import random_batch


class Parabola:
    """One parameter, loss (w - 2)^2, accuracy 1 inside |w - 2| < 1."""

    partition = FilterPartition(((0, 1),), ((1,),), (), 1)

    def evaluate(self, params, batch):
        w = float(params[0])
        return (w - 2.0) ** 2, float(abs(w - 2.0) < 1.0)


DUMMY_BATCH = Batch(np.zeros((1, 1)), np.zeros(1, dtype=int))


class TestDirection:
    def test_filter_norms_match(self, mlp, mlp_params):
        d = filter_normalized_direction(mlp_params, mlp.partition, seed=0)
        assert np.allclose(
            filter_norms(d, mlp.partition), filter_norms(mlp_params, mlp.partition), rtol=1e-12, atol=0
        )

    def test_biases_zero(self, mlp, mlp_params):
        d = filter_normalized_direction(mlp_params, mlp.partition, seed=0)
        for start, stop in mlp.partition.non_filter_ranges:
            assert not d[start:stop].any()

    def test_zero_params_give_zero_direction(self, mlp):
        assert not filter_normalized_direction(np.zeros(mlp.param_count), mlp.partition, 1).any()

    def test_seeded(self, mlp, mlp_params):
        a = filter_normalized_direction(mlp_params, mlp.partition, 5)
        b = filter_normalized_direction(mlp_params, mlp.partition, 5)
        assert np.array_equal(a, b)


class TestSlicePlan:
    def test_grid_contains_zero(self):
        ts = SlicePlan(-1.0, 1.0, 41).abscissae()
        assert len(ts) == 41
        assert 0.0 in ts

    def test_bounds_checked(self):
        with pytest.raises(ConfigurationError):
            SlicePlan(1.0, -1.0, 11)
        with pytest.raises(ConfigurationError):
            SlicePlan(-1.0, 1.0, 1)


class TestLandscapeSlice:
    def test_parabola(self):
        result = landscape_slice(Parabola(), np.array([2.0]), DUMMY_BATCH, SlicePlan(-2.0, 2.0, 9), np.ones(1))
        assert np.array_equal(result.losses, result.ts**2)
        assert result.accuracies.tolist() == [0, 0, 0, 1, 1, 1, 0, 0, 0]

    def test_centre_is_plain_evaluation(self, mlp, mlp_params):
        batch = random_batch(mlp, 20, 0)
        result = landscape_slice(mlp, mlp_params, batch, SlicePlan(-1.0, 1.0, 21))
        centre = int(np.argmin(np.abs(result.ts)))
        assert result.ts[centre] == 0.0
        assert (result.losses[centre], result.accuracies[centre]) == mlp.evaluate(mlp_params, batch)

    def test_params_not_mutated(self, mlp, mlp_params):
        before = mlp_params.copy()
        landscape_slice(mlp, mlp_params, random_batch(mlp, 5, 0), SlicePlan())
        assert np.array_equal(before, mlp_params)

    def test_init_loss_near_log_classes(self):
        model = build_mlp([16], 4, 5)
        params = init_uniform(model, 0)
        result = landscape_slice(model, params, random_batch(model, 200, 1), SlicePlan(-0.5, 0.5, 11))
        centre = int(np.argmin(np.abs(result.ts)))
        assert result.losses[centre] == pytest.approx(math.log(5), rel=0.05)

    def test_overflow_recorded_as_inf(self):
        model = build_linear(2, 2)
        params = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        direction = np.array([1e308, 0.0, 0.0, 0.0, 0.0, 0.0])
        batch = Batch(np.ones((1, 2)), np.array([0]))
        result = landscape_slice(model, params, batch, SlicePlan(-10.0, 10.0, 3), direction)
        assert math.isinf(result.losses[0]) and math.isinf(result.losses[2])
        assert result.accuracies[0] == 0.0
        assert math.isfinite(result.losses[1])


class TestFlatWidth:
    def test_parabola_width(self):
        result = landscape_slice(Parabola(), np.array([2.0]), DUMMY_BATCH, SlicePlan(-2.0, 2.0, 41), np.ones(1))
        # loss t^2 <= 1.01 on the grid points of [-1, 1]
        assert result.flat_width(1.01) == pytest.approx(2.0)

    def test_matches_dense_grid(self):
        def loss(t):
            return 3.0 * t**2 + np.sin(5 * t)

        coarse = np.linspace(-1.0, 1.0, 41)
        dense = np.linspace(-1.0, 1.0, 401)
        step = coarse[1] - coarse[0]
        assert abs(flat_width(coarse, loss(coarse)) - flat_width(dense, loss(dense))) <= step + 1e-12

    def test_stops_at_first_rise(self):
        ts = np.linspace(-2, 2, 5)
        losses = np.array([0.0, 5.0, 0.0, 0.5, 0.1])
        assert flat_width(ts, losses, 1.0) == pytest.approx(2.0)


class TestFilterNormStats:
    def test_equal_norms(self):
        part = FilterPartition(((0, 2), (2, 4)), ((2,), (2,)), (), 4)
        stats = filter_norm_stats(np.array([3.0, 4.0, 0.0, 5.0]), part)
        assert stats.coefficient_of_variation == 0.0

    def test_known_values(self):
        part = FilterPartition(((0, 1), (1, 2), (2, 3)), ((1,), (1,), (1,)), (), 3)
        stats = filter_norm_stats(np.array([3.0, 4.0, 5.0]), part)
        assert stats.mean == pytest.approx(4.0)
        assert stats.std == pytest.approx(math.sqrt(2.0 / 3.0))
        assert stats.bin_edges[-1] == pytest.approx(5.0 * 1.01)

    def test_histogram(self, mlp, mlp_params):
        stats = filter_norm_stats(mlp_params, mlp.partition)
        assert len(stats.counts) == HISTOGRAM_BINS
        assert stats.counts.sum() == mlp.partition.filter_count
        assert stats.bin_edges[0] == 0.0

    def test_init_mean_square(self):
        model = build_mlp([2000], 10, 2)
        stats = filter_norm_stats(init_uniform(model, 3), model.partition)
        assert stats.mean_square == pytest.approx(1.0 / 3.0, abs=0.02)


class TestRadiusSweep:
    def test_increasing_in_gamma(self, mlp, mlp_params):
        sweep = radius_sweep(mlp_params, mlp.partition, RADIUS_GAMMAS, 200, seed=0)
        radii = [r for _, r in sweep.rows]
        assert [g for g, _ in sweep.rows] == list(RADIUS_GAMMAS)
        assert all(a < b for a, b in zip(radii, radii[1:]))
        assert sweep.weight_norm == pytest.approx(np.linalg.norm(mlp_params))

    def test_needs_hundred_samples(self, mlp, mlp_params):
        with pytest.raises(ConfigurationError, match="radius_samples"):
            radius_sweep(mlp_params, mlp.partition, [0.01], 99, seed=0)
