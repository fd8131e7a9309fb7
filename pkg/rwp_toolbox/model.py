"""Dense numpy models with exact reverse-mode gradients.

A :class:`Model` is an immutable description of a layer pipeline.  All
trainable scalars live in one flat float64 vector (the *param vector*);
each parameterised layer owns a contiguous block laid out as
``weight`` (row-major, one row per output neuron / channel) followed by
``bias``.  Because every filter's weights are one contiguous row, the
:class:`FilterPartition` is a list of ``(start, stop)`` intervals.

Every function here is pure: nothing mutates its inputs and there is no
module-level state, so models and parameter vectors can be shared across
threads.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rwp_toolbox.errors import ConfigurationError, IngestionError, NumericError

log = logging.getLogger(__name__)

DTYPE = np.float64
CHECKPOINT_MAGIC = b"RWP1"

# Evaluation over large datasets runs in chunks of this many examples.
EVAL_CHUNK = 512


# ---------------------------------------------------------------------------
# Batches and filter partitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Batch:
    """A group of examples fed through the model together."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if len(self.inputs) < 1:
            raise ConfigurationError("a batch needs at least one example", field="batch")
        if len(self.inputs) != len(self.labels):
            raise ConfigurationError(
                f"{len(self.inputs)} inputs but {len(self.labels)} labels", field="batch"
            )

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class FilterPartition:
    """Index intervals of the param vector, one per filter.

    ``non_filter_ranges`` lists the bias intervals; they are never
    perturbed and never counted in filter norms.
    """

    ranges: tuple[tuple[int, int], ...]
    filter_shapes: tuple[tuple[int, ...], ...]
    non_filter_ranges: tuple[tuple[int, int], ...]
    size: int

    def __post_init__(self) -> None:
        if len(self.ranges) != len(self.filter_shapes):
            raise ConfigurationError("one filter shape per range is required", field="partition")
        spans = sorted(list(self.ranges) + list(self.non_filter_ranges))
        cursor = 0
        for start, stop in spans:
            if start < cursor or stop < start or stop > self.size:
                raise ConfigurationError(
                    f"interval ({start}, {stop}) overlaps or leaves [0, {self.size})",
                    field="partition",
                )
            cursor = stop
        for (start, stop), shape in zip(self.ranges, self.filter_shapes):
            if stop - start != math.prod(shape):
                raise ConfigurationError(
                    f"interval ({start}, {stop}) does not match filter shape {shape}",
                    field="partition",
                )

    @property
    def filter_count(self) -> int:
        return len(self.ranges)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([stop - start for start, stop in self.ranges], dtype=np.int64)

    @cached_property
    def entry_index(self) -> np.ndarray:
        """Param-vector index of every filter weight, in partition order."""
        if not self.ranges:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.arange(start, stop) for start, stop in self.ranges])

    @cached_property
    def segment_ids(self) -> np.ndarray:
        """Filter id of each entry of :attr:`entry_index`."""
        return np.repeat(np.arange(self.filter_count), self.lengths)

    def check(self, params: np.ndarray) -> None:
        if params.shape != (self.size,):
            raise ConfigurationError(
                f"param vector has shape {params.shape}, partition expects ({self.size},)",
                field="params",
            )


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    offset: int = 0

    @property
    def weight_size(self) -> int:
        return self.in_features * self.out_features

    @property
    def param_count(self) -> int:
        return self.weight_size + self.out_features

    @property
    def fan_in(self) -> int:
        return self.in_features

    @property
    def filter_shape(self) -> tuple[int, ...]:
        return (self.in_features,)

    @property
    def filter_count(self) -> int:
        return self.out_features

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        if input_shape != (self.in_features,):
            raise ConfigurationError(
                f"dense layer expects ({self.in_features},), got {input_shape}", field="layers"
            )
        return (self.out_features,)

    def split(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w_end = self.offset + self.weight_size
        weight = params[self.offset : w_end].reshape(self.out_features, self.in_features)
        return weight, params[w_end : self.offset + self.param_count]

    def forward(self, params: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, Any]:
        weight, bias = self.split(params)
        return x @ weight.T + bias, x

    def backward(
        self, params: np.ndarray, x: np.ndarray, delta: np.ndarray, grad: np.ndarray
    ) -> np.ndarray:
        weight, _ = self.split(params)
        w_end = self.offset + self.weight_size
        grad[self.offset : w_end] = (delta.T @ x).ravel()
        grad[w_end : self.offset + self.param_count] = delta.sum(axis=0)
        return delta @ weight


@dataclass(frozen=True)
class Conv2d:
    """Valid-padding, stride-1 convolution computed through im2col."""

    in_channels: int
    out_channels: int
    kernel: int
    offset: int = 0

    @property
    def weight_size(self) -> int:
        return self.out_channels * self.in_channels * self.kernel * self.kernel

    @property
    def param_count(self) -> int:
        return self.weight_size + self.out_channels

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel * self.kernel

    @property
    def filter_shape(self) -> tuple[int, ...]:
        return (self.in_channels, self.kernel, self.kernel)

    @property
    def filter_count(self) -> int:
        return self.out_channels

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        if len(input_shape) != 3 or input_shape[0] != self.in_channels:
            raise ConfigurationError(
                f"conv layer expects ({self.in_channels}, H, W), got {input_shape}",
                field="layers",
            )
        _, h, w = input_shape
        out_h, out_w = h - self.kernel + 1, w - self.kernel + 1
        if out_h < 1 or out_w < 1:
            raise ConfigurationError(
                f"kernel {self.kernel} does not fit a {h}x{w} feature map", field="layers"
            )
        return (self.out_channels, out_h, out_w)

    def split(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w_end = self.offset + self.weight_size
        weight = params[self.offset : w_end].reshape(self.out_channels, self.fan_in)
        return weight, params[w_end : self.offset + self.param_count]

    def _columns(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        k = self.kernel
        windows = sliding_window_view(x, (k, k), axis=(2, 3))  # n, c, oh, ow, k, k
        out_h, out_w = h - k + 1, w - k + 1
        return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * k * k)

    def forward(self, params: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, Any]:
        weight, bias = self.split(params)
        n, _, h, w = x.shape
        out_h, out_w = h - self.kernel + 1, w - self.kernel + 1
        cols = self._columns(x)
        out = cols @ weight.T + bias
        out = out.reshape(n, out_h, out_w, self.out_channels).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), (x.shape, cols)

    def backward(
        self, params: np.ndarray, cache: Any, delta: np.ndarray, grad: np.ndarray
    ) -> np.ndarray:
        weight, _ = self.split(params)
        x_shape, cols = cache
        n, c, h, w = x_shape
        k = self.kernel
        out_h, out_w = h - k + 1, w - k + 1
        flat = delta.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        w_end = self.offset + self.weight_size
        grad[self.offset : w_end] = (flat.T @ cols).ravel()
        grad[w_end : self.offset + self.param_count] = flat.sum(axis=0)

        dcols = (flat @ weight).reshape(n, out_h, out_w, c, k, k)
        dx = np.zeros(x_shape, dtype=DTYPE)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + out_h, j : j + out_w] += dcols[:, :, :, :, i, j].transpose(
                    0, 3, 1, 2
                )
        return dx


@dataclass(frozen=True)
class ReLU:
    param_count = 0

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def forward(self, params: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, Any]:
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, params: np.ndarray, mask: Any, delta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return np.where(mask, delta, 0.0)


@dataclass(frozen=True)
class MaxPool2d:
    """2x2 max-pool with stride 2; odd trailing rows/columns are dropped."""

    param_count = 0

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        c, h, w = input_shape
        if h < 2 or w < 2:
            raise ConfigurationError(f"cannot pool a {h}x{w} feature map", field="layers")
        return (c, h // 2, w // 2)

    def forward(self, params: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, Any]:
        n, c, h, w = x.shape
        ph, pw = h // 2, w // 2
        windows = (
            x[:, :, : 2 * ph, : 2 * pw]
            .reshape(n, c, ph, 2, pw, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, ph, pw, 4)
        )
        argmax = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
        return out, (x.shape, argmax)

    def backward(self, params: np.ndarray, cache: Any, delta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        x_shape, argmax = cache
        n, c, h, w = x_shape
        ph, pw = h // 2, w // 2
        windows = np.zeros((n, c, ph, pw, 4), dtype=DTYPE)
        np.put_along_axis(windows, argmax[..., None], delta[..., None], axis=-1)
        dx = np.zeros(x_shape, dtype=DTYPE)
        dx[:, :, : 2 * ph, : 2 * pw] = (
            windows.reshape(n, c, ph, pw, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ph, 2 * pw)
        )
        return dx


@dataclass(frozen=True)
class Flatten:
    param_count = 0

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return (math.prod(input_shape),)

    def forward(self, params: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, Any]:
        return x.reshape(len(x), -1), x.shape

    def backward(self, params: np.ndarray, shape: Any, delta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return delta.reshape(shape)


@dataclass(frozen=True)
class SoftmaxCrossEntropy:
    """Loss head: mean softmax cross-entropy of the incoming logits."""

    class_count: int
    param_count = 0

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        if input_shape != (self.class_count,):
            raise ConfigurationError(
                f"head expects {self.class_count} logits, got {input_shape}", field="layers"
            )
        return input_shape

    @staticmethod
    def per_example(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(losses, probabilities)`` for each row of *logits*."""
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        total = exp.sum(axis=1, keepdims=True)
        log_probs = shifted - np.log(total)
        losses = -log_probs[np.arange(len(labels)), labels]
        return losses, exp / total


Layer = Union[Dense, Conv2d, ReLU, MaxPool2d, Flatten, SoftmaxCrossEntropy]
ParamLayer = Union[Dense, Conv2d]


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Model:
    """An ordered, shape-checked layer pipeline ending in a loss head."""

    layers: tuple[Layer, ...]
    input_shape: tuple[int, ...]
    class_count: int
    shapes: tuple[tuple[int, ...], ...] = field(default=(), compare=False)

    @property
    def param_layers(self) -> list[tuple[int, ParamLayer]]:
        return [(i, layer) for i, layer in enumerate(self.layers) if isinstance(layer, (Dense, Conv2d))]

    @cached_property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)

    @cached_property
    def partition(self) -> FilterPartition:
        ranges: list[tuple[int, int]] = []
        shapes: list[tuple[int, ...]] = []
        biases: list[tuple[int, int]] = []
        for _, layer in self.param_layers:
            fan_in = layer.fan_in
            for f in range(layer.filter_count):
                start = layer.offset + f * fan_in
                ranges.append((start, start + fan_in))
                shapes.append(layer.filter_shape)
            bias_start = layer.offset + layer.weight_size
            biases.append((bias_start, bias_start + layer.filter_count))
        return FilterPartition(tuple(ranges), tuple(shapes), tuple(biases), self.param_count)

    def describe(self) -> str:
        names = [type(layer).__name__ for layer in self.layers]
        return f"{' -> '.join(names)} ({self.param_count} params, {self.partition.filter_count} filters)"

    def evaluate(self, params: np.ndarray, batch: Batch) -> tuple[float, float]:
        return evaluate(self, params, batch)


def assemble(layers: Sequence[Layer], input_shape: tuple[int, ...], class_count: int) -> Model:
    """Assign param offsets and check that shapes chain to the head."""
    if class_count < 1:
        raise ConfigurationError("must be positive", field="class_count")
    if not input_shape or any(d < 1 for d in input_shape):
        raise ConfigurationError(f"invalid input shape {input_shape}", field="input_shape")
    placed: list[Layer] = []
    shapes: list[tuple[int, ...]] = [tuple(input_shape)]
    offset = 0
    for layer in layers:
        if isinstance(layer, (Dense, Conv2d)):
            layer = replace(layer, offset=offset)
            offset += layer.param_count
        shapes.append(layer.output_shape(shapes[-1]))
        placed.append(layer)
    if not placed or not isinstance(placed[-1], SoftmaxCrossEntropy):
        raise ConfigurationError("the last layer must be the loss head", field="layers")
    if placed[-1].class_count != class_count:
        raise ConfigurationError("head width differs from class count", field="layers")
    return Model(tuple(placed), tuple(input_shape), class_count, tuple(shapes))


def _positive(values: Sequence[int], name: str) -> None:
    for v in values:
        if int(v) != v or v < 1:
            raise ConfigurationError(f"expected positive integers, got {list(values)}", field=name)


def build_linear(input_dim: int, class_count: int) -> Model:
    """Softmax regression: a single dense layer feeding the loss head."""
    _positive([input_dim], "input_dim")
    _positive([class_count], "class_count")
    return assemble(
        [Dense(input_dim, class_count), SoftmaxCrossEntropy(class_count)], (input_dim,), class_count
    )


def build_mlp(layer_sizes: Sequence[int], input_dim: int, class_count: int) -> Model:
    """Dense+ReLU hidden layers followed by a linear head of *class_count* units."""
    if not layer_sizes:
        raise ConfigurationError("at least one hidden layer is required", field="layer_sizes")
    _positive(layer_sizes, "layer_sizes")
    _positive([input_dim], "input_dim")
    _positive([class_count], "class_count")
    layers: list[Layer] = []
    width = input_dim
    for size in layer_sizes:
        layers += [Dense(width, size), ReLU()]
        width = size
    layers += [Dense(width, class_count), SoftmaxCrossEntropy(class_count)]
    return assemble(layers, (input_dim,), class_count)


def build_cnn(
    conv_channels: Sequence[int],
    kernel: int,
    input_shape: tuple[int, int, int],
    class_count: int,
) -> Model:
    """Blocks of conv -> relu -> 2x2 max-pool, then a dense head."""
    if not conv_channels:
        raise ConfigurationError("at least one conv block is required", field="conv_channels")
    _positive(conv_channels, "conv_channels")
    _positive([kernel], "kernel")
    _positive([class_count], "class_count")
    if len(input_shape) != 3:
        raise ConfigurationError(f"expected (C, H, W), got {input_shape}", field="input_shape")
    _positive(input_shape, "input_shape")
    c, h, w = input_shape
    layers: list[Layer] = []
    for channels in conv_channels:
        h, w = h - kernel + 1, w - kernel + 1
        if h < 2 or w < 2:
            raise ConfigurationError(
                "feature map underflows before pooling; use fewer blocks or a smaller kernel",
                field="conv_channels",
            )
        layers += [Conv2d(c, channels, kernel), ReLU(), MaxPool2d()]
        c, h, w = channels, h // 2, w // 2
    layers += [Flatten(), Dense(c * h * w, class_count), SoftmaxCrossEntropy(class_count)]
    return assemble(layers, tuple(input_shape), class_count)


def init_uniform(model: Model, seed: int) -> np.ndarray:
    """Draw filter weights from U(-sqrt(t), sqrt(t)), t = 1 / fan_in; zero biases.

    Every filter then has E[||w_k||^2] = 1/3 regardless of its size.
    """
    rng = np.random.default_rng(seed)
    params = np.zeros(model.param_count, dtype=DTYPE)
    for _, layer in model.param_layers:
        bound = math.sqrt(1.0 / layer.fan_in)
        params[layer.offset : layer.offset + layer.weight_size] = rng.uniform(
            -bound, bound, layer.weight_size
        )
    return params


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _check_inputs(model: Model, params: np.ndarray, inputs: np.ndarray) -> None:
    if params.shape != (model.param_count,):
        raise ConfigurationError(
            f"param vector has shape {params.shape}, model needs ({model.param_count},)",
            field="params",
        )
    if tuple(inputs.shape[1:]) != model.input_shape:
        raise ConfigurationError(
            f"inputs have example shape {tuple(inputs.shape[1:])}, model expects {model.input_shape}",
            field="batch",
        )


def forward(model: Model, params: np.ndarray, inputs: np.ndarray) -> tuple[np.ndarray, list[Any]]:
    """Run every layer except the head; return logits and per-layer caches."""
    _check_inputs(model, params, inputs)
    x = np.asarray(inputs, dtype=DTYPE)
    caches: list[Any] = []
    with np.errstate(over="ignore", invalid="ignore"):
        for index, layer in enumerate(model.layers[:-1]):
            x, cache = layer.forward(params, x)
            if not np.isfinite(x).all():
                raise NumericError("non-finite activation", layer_index=index)
            caches.append(cache)
    return x, caches


def _check_labels(model: Model, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= model.class_count):
        raise ConfigurationError(
            f"labels must lie in [0, {model.class_count})", field="batch.labels"
        )
    return labels


def loss_and_grad(model: Model, params: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over *batch* and its exact gradient."""
    labels = _check_labels(model, batch.labels)
    logits, caches = forward(model, params, batch.inputs)
    head_index = len(model.layers) - 1
    with np.errstate(over="ignore", invalid="ignore"):
        losses, probs = SoftmaxCrossEntropy.per_example(logits, labels)
        loss = float(losses.sum() / len(labels))
    if not math.isfinite(loss):
        raise NumericError("non-finite loss", layer_index=head_index)

    delta = probs
    delta[np.arange(len(labels)), labels] -= 1.0
    delta /= len(labels)

    grad = np.zeros(model.param_count, dtype=DTYPE)
    for layer, cache in zip(reversed(model.layers[:-1]), reversed(caches)):
        delta = layer.backward(params, cache, delta, grad)
    return loss, grad


def evaluate(model: Model, params: np.ndarray, batch: Batch) -> tuple[float, float]:
    """Mean loss and accuracy of *params* on *batch*, computed in chunks."""
    labels = _check_labels(model, batch.labels)
    losses: list[np.ndarray] = []
    correct = 0
    for start in range(0, len(labels), EVAL_CHUNK):
        stop = start + EVAL_CHUNK
        logits, _ = forward(model, params, batch.inputs[start:stop])
        with np.errstate(over="ignore", invalid="ignore"):
            chunk_losses, _ = SoftmaxCrossEntropy.per_example(logits, labels[start:stop])
        losses.append(chunk_losses)
        correct += int((logits.argmax(axis=1) == labels[start:stop]).sum())
    loss = float(np.concatenate(losses).sum() / len(labels))
    if not math.isfinite(loss):
        raise NumericError("non-finite loss", layer_index=len(model.layers) - 1)
    return loss, correct / len(labels)


def filter_norms(params: np.ndarray, partition: FilterPartition) -> np.ndarray:
    """Euclidean norm of every filter, in partition order."""
    partition.check(params)
    squares = np.bincount(
        partition.segment_ids,
        weights=params[partition.entry_index] ** 2,
        minlength=partition.filter_count,
    )
    return np.sqrt(squares)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, params: np.ndarray) -> Path:
    """Write ``RWP1`` + little-endian u64 count + raw little-endian float64 values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.ascontiguousarray(params, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", values.size))
        fh.write(values.tobytes())
    log.debug("Wrote %d parameters to %s", values.size, path)
    return path


def load_checkpoint(path: str | Path, expected_count: int | None = None) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise IngestionError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise IngestionError(f"{path}: truncated header")
    (count,) = struct.unpack("<Q", raw[4:12])
    if len(raw) != 12 + 8 * count:
        raise IngestionError(f"{path}: truncated body, expected {count} values")
    if expected_count is not None and count != expected_count:
        raise IngestionError(
            f"{path}: holds {count} parameters but the model has {expected_count}"
        )
    return np.frombuffer(raw, dtype="<f8", offset=12, count=count).astype(DTYPE)
