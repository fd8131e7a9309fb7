from __future__ import annotations

import math

import numpy as np
import pytest

from rwp_toolbox.errors import ConfigurationError, IngestionError, NumericError
from rwp_toolbox.model import (
    CHECKPOINT_MAGIC,
    Batch,
    FilterPartition,
    MaxPool2d,
    ReLU,
    build_cnn,
    build_linear,
    build_mlp,
    evaluate,
    filter_norms,
    forward,
    init_uniform,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
)

from conftest import random_batch


def _kink_pattern(model, params, inputs):
    """ReLU masks and pool argmaxes; FD is only valid where these don't change."""
    _, caches = forward(model, params, inputs)
    pattern = []
    for layer, cache in zip(model.layers, caches):
        if isinstance(layer, ReLU):
            pattern.append(cache)
        elif isinstance(layer, MaxPool2d):
            pattern.append(cache[1])
    return pattern


def _same_pattern(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def _random_model(seed: int):
    rng = np.random.default_rng(seed)
    classes = int(rng.integers(2, 5))
    if seed % 3 == 0:
        side = int(rng.integers(6, 9))
        channels = int(rng.integers(1, 3))
        model = build_cnn([int(rng.integers(1, 4))], 3, (channels, side, side), classes)
    else:
        hidden = [int(h) for h in rng.integers(2, 12, size=int(rng.integers(1, 3)))]
        model = build_mlp(hidden, int(rng.integers(1, 8)), classes)
    assert model.param_count <= 1000
    return model


class TestBuild:
    def test_mlp_layout(self, mlp):
        # 4->6, 6->5, 5->3 with biases
        assert mlp.param_count == (4 * 6 + 6) + (6 * 5 + 5) + (5 * 3 + 3)
        assert mlp.partition.filter_count == 6 + 5 + 3
        assert mlp.partition.size == mlp.param_count

    def test_filters_are_weight_rows_and_biases_are_excluded(self):
        model = build_linear(3, 2)
        part = model.partition
        assert part.ranges == ((0, 3), (3, 6))
        assert part.non_filter_ranges == ((6, 8),)
        assert part.filter_shapes == ((3,), (3,))

    def test_cnn_filter_shape(self, cnn):
        conv = cnn.param_layers[0][1]
        assert conv.filter_shape == (2, 3, 3)
        assert cnn.partition.filter_shapes[0] == (2, 3, 3)

    def test_mlp_needs_hidden_layer(self):
        with pytest.raises(ConfigurationError, match="layer_sizes"):
            build_mlp([], 4, 2)

    def test_cnn_underflow(self):
        with pytest.raises(ConfigurationError, match="conv_channels"):
            build_cnn([4, 4, 4], 3, (1, 8, 8), 2)

    def test_negative_width_rejected(self):
        with pytest.raises(ConfigurationError):
            build_mlp([4, -1], 2, 2)

    def test_overlapping_partition_rejected(self):
        with pytest.raises(ConfigurationError, match="partition"):
            FilterPartition(((0, 3), (2, 5)), ((3,), (3,)), (), 5)


class TestInit:
    def test_biases_are_zero(self, mlp):
        params = init_uniform(mlp, seed=3)
        for start, stop in mlp.partition.non_filter_ranges:
            assert np.all(params[start:stop] == 0.0)

    def test_same_seed_same_params(self, mlp):
        assert np.array_equal(init_uniform(mlp, 7), init_uniform(mlp, 7))

    def test_weights_within_bound(self, mlp):
        params = init_uniform(mlp, seed=1)
        for _, layer in mlp.param_layers:
            weights = params[layer.offset : layer.offset + layer.weight_size]
            assert np.abs(weights).max() <= math.sqrt(1.0 / layer.fan_in)

    def test_mean_square_filter_norm_is_one_third(self):
        fan_in, filters = 8, 10_000
        model = build_mlp([filters], fan_in, 2)
        norms = filter_norms(init_uniform(model, seed=11), model.partition)[:filters]
        # Var(||w_k||^2) = 4 / (45 * fan_in) for U(-sqrt(t), sqrt(t)), t = 1 / fan_in.
        half_width = 2.576 * math.sqrt(4.0 / (45.0 * fan_in) / filters)
        assert abs(np.mean(norms**2) - 1.0 / 3.0) < half_width


class TestLossAndGrad:
    @pytest.mark.parametrize("seed", range(100))
    def test_matches_central_differences(self, seed):
        model = _random_model(seed)
        params = init_uniform(model, seed)
        batch = random_batch(model, 4, seed + 1000)
        _, grad = loss_and_grad(model, params, batch)

        rng = np.random.default_rng(seed)
        coords = rng.choice(model.param_count, size=min(40, model.param_count), replace=False)
        h = 1e-6
        base = _kink_pattern(model, params, batch.inputs)
        worst = 0.0
        checked = 0
        for i in coords:
            plus, minus = params.copy(), params.copy()
            plus[i] += h
            minus[i] -= h
            if not (
                _same_pattern(base, _kink_pattern(model, plus, batch.inputs))
                and _same_pattern(base, _kink_pattern(model, minus, batch.inputs))
            ):
                continue
            fd = (loss_and_grad(model, plus, batch)[0] - loss_and_grad(model, minus, batch)[0]) / (2 * h)
            worst = max(worst, abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-3))
            checked += 1
        assert checked > 0
        assert worst < 1e-4

    def test_loss_at_zero_params_is_log_classes(self, mlp):
        batch = random_batch(mlp, 10, 0)
        loss, _ = loss_and_grad(mlp, np.zeros(mlp.param_count), batch)
        assert loss == pytest.approx(math.log(3), rel=1e-12)

    def test_params_not_mutated(self, mlp, mlp_params):
        before = mlp_params.copy()
        loss_and_grad(mlp, mlp_params, random_batch(mlp, 5, 0))
        assert np.array_equal(before, mlp_params)

    def test_grad_of_biases_nonzero(self, mlp, mlp_params):
        _, grad = loss_and_grad(mlp, mlp_params, random_batch(mlp, 5, 0))
        start, stop = mlp.partition.non_filter_ranges[-1]
        assert np.any(grad[start:stop] != 0.0)

    def test_overflow_names_layer(self):
        model = build_linear(2, 2)
        params = np.full(model.param_count, 1e308)
        batch = Batch(np.ones((1, 2)), np.array([0]))
        with pytest.raises(NumericError) as info:
            loss_and_grad(model, params, batch)
        assert info.value.layer_index == 0

    def test_wrong_input_shape(self, mlp, mlp_params):
        with pytest.raises(ConfigurationError, match="batch"):
            loss_and_grad(mlp, mlp_params, Batch(np.zeros((2, 5)), np.zeros(2, dtype=int)))

    def test_label_out_of_range(self, mlp, mlp_params):
        with pytest.raises(ConfigurationError, match="labels"):
            loss_and_grad(mlp, mlp_params, Batch(np.zeros((2, 4)), np.array([0, 3])))

    def test_cnn_grad_shape(self, cnn):
        params = init_uniform(cnn, 0)
        _, grad = loss_and_grad(cnn, params, random_batch(cnn, 3, 0))
        assert grad.shape == params.shape

    def test_repeated_calls_are_bitwise_identical(self, cnn):
        params = init_uniform(cnn, 3)
        batch = random_batch(cnn, 6, 1)
        loss_a, grad_a = loss_and_grad(cnn, params, batch)
        loss_b, grad_b = loss_and_grad(cnn, params, batch)
        assert loss_a == loss_b
        assert np.array_equal(grad_a, grad_b)

    def test_scaling_up_a_correct_classifier_lowers_loss(self):
        model = build_linear(5, 4)
        params = init_uniform(model, 2)
        inputs = np.random.default_rng(0).standard_normal((50, 5))
        logits, _ = forward(model, params, inputs)
        batch = Batch(inputs, logits.argmax(axis=1))
        loss, _ = loss_and_grad(model, params, batch)
        doubled, _ = loss_and_grad(model, 2.0 * params, batch)
        assert doubled < loss


class TestEvaluate:
    def test_matches_loss_and_grad(self, mlp, mlp_params):
        batch = random_batch(mlp, 30, 2)
        loss, accuracy = evaluate(mlp, mlp_params, batch)
        assert loss == pytest.approx(loss_and_grad(mlp, mlp_params, batch)[0], rel=1e-12)
        assert 0.0 <= accuracy <= 1.0

    def test_chunking_is_transparent(self, mlp, mlp_params):
        batch = random_batch(mlp, 1100, 3)
        loss, _ = evaluate(mlp, mlp_params, batch)
        assert loss == pytest.approx(loss_and_grad(mlp, mlp_params, batch)[0], rel=1e-10)


class TestFilterNorms:
    def test_known_values(self):
        model = build_linear(2, 2)
        params = np.array([3.0, 4.0, 0.0, 5.0, 9.0, 9.0])
        assert np.allclose(filter_norms(params, model.partition), [5.0, 5.0])

    def test_wrong_length(self, mlp):
        with pytest.raises(ConfigurationError):
            filter_norms(np.zeros(3), mlp.partition)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, mlp_params):
        path = save_checkpoint(tmp_path / "w.ckpt", mlp_params)
        assert path.read_bytes()[:4] == CHECKPOINT_MAGIC
        assert np.array_equal(load_checkpoint(path, mlp_params.size), mlp_params)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "w.ckpt"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(IngestionError, match="magic"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path, mlp_params):
        path = save_checkpoint(tmp_path / "w.ckpt", mlp_params)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(IngestionError, match="truncated"):
            load_checkpoint(path)

    def test_count_mismatch(self, tmp_path, mlp_params):
        path = save_checkpoint(tmp_path / "w.ckpt", mlp_params)
        with pytest.raises(IngestionError, match="parameters"):
            load_checkpoint(path, expected_count=mlp_params.size + 1)
