"""Datasets: synthetic generators, IDX ingestion, batching and corruptions."""

from __future__ import annotations

import enum
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rwp_toolbox.errors import ConfigurationError, IngestionError
from rwp_toolbox.model import DTYPE, Batch, evaluate

if TYPE_CHECKING:
    from rwp_toolbox.model import Model

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATASET_MAGIC = b"RWPD"

SeedLike = Union[int, Sequence[int]]


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable examples + labels; ``features[i]`` has the model's input shape."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    split: Split = Split.TRAIN

    def __post_init__(self) -> None:
        object.__setattr__(self, "split", Split(self.split))
        if len(self.features) == 0:
            raise ConfigurationError("dataset is empty", field="data")
        if len(self.features) != len(self.labels):
            raise ConfigurationError(
                f"{len(self.features)} examples but {len(self.labels)} labels", field="data"
            )
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ConfigurationError(f"labels must lie in [0, {self.class_count})", field="data")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def example_shape(self) -> tuple[int, ...]:
        return tuple(self.features.shape[1:])

    @property
    def is_image(self) -> bool:
        return self.features.ndim == 4

    def batch(self, indices: np.ndarray) -> Batch:
        return Batch(self.features[indices], self.labels[indices])

    def as_batch(self) -> Batch:
        return Batch(self.features, self.labels)

    def evaluate(self, model: "Model", params: np.ndarray) -> tuple[float, float]:
        """Mean loss and accuracy of *params* over the whole dataset."""
        return evaluate(model, params, self.as_batch())


def _dataset(features: np.ndarray, labels: np.ndarray, class_count: int, split: Split) -> Dataset:
    features = np.ascontiguousarray(features, dtype=DTYPE)
    features.setflags(write=False)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    labels.setflags(write=False)
    return Dataset(features, labels, class_count, split)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def simplex_vertices(class_count: int, dims: int) -> np.ndarray:
    """Vertices of a regular simplex with edge sqrt(2): e_1..e_n, plus a*1 when
    *class_count* is ``dims + 1``."""
    if class_count > dims + 1:
        raise ConfigurationError(
            f"{class_count} classes need at least {class_count - 1} dimensions", field="data.dims"
        )
    vertices = np.eye(dims)[: min(class_count, dims)]
    if class_count == dims + 1:
        a = (1.0 - math.sqrt(dims + 1)) / dims
        vertices = np.vstack([vertices, np.full(dims, a)])
    return vertices


def make_blobs(
    class_count: int,
    dims: int,
    n_per_class: int,
    spread: float,
    seed: SeedLike,
    split: Split = Split.TRAIN,
) -> Dataset:
    """Isotropic Gaussian blobs around simplex vertices scaled by 4."""
    for name, value in (("classes", class_count), ("dims", dims), ("n_per_class", n_per_class)):
        if value < 1:
            raise ConfigurationError(f"must be positive, got {value}", field=f"data.{name}")
    if spread < 0:
        raise ConfigurationError(f"must be >= 0, got {spread}", field="data.spread")
    rng = np.random.default_rng(seed)
    centres = 4.0 * simplex_vertices(class_count, dims)
    labels = np.repeat(np.arange(class_count), n_per_class)
    features = centres[labels] + spread * rng.standard_normal((len(labels), dims))
    return _dataset(features, labels, class_count, split)


def make_spirals(n_per_class: int, noise: float, seed: SeedLike, split: Split = Split.TRAIN) -> Dataset:
    """Two interleaved arms, each 1.5 turns, radius growing from 0.1 to 1.

    Positions along an arm are uniform draws sorted by radius; *noise* is the
    standard deviation of the angular jitter in radians.
    """
    if n_per_class < 2:
        raise ConfigurationError(f"must be >= 2, got {n_per_class}", field="data.n_per_class")
    if noise < 0:
        raise ConfigurationError(f"must be >= 0, got {noise}", field="data.noise")
    rng = np.random.default_rng(seed)
    features = []
    for arm in range(2):
        t = np.sort(rng.uniform(0.0, 1.0, n_per_class))
        radius = 0.1 + 0.9 * t
        theta = 3.0 * math.pi * t + arm * math.pi + noise * rng.standard_normal(n_per_class)
        features.append(np.column_stack([radius * np.cos(theta), radius * np.sin(theta)]))
    labels = np.repeat(np.arange(2), n_per_class)
    return _dataset(np.vstack(features), labels, 2, split)


def make_gratings(
    class_count: int,
    side: int,
    n_per_class: int,
    noise: float,
    seed: SeedLike,
    split: Split = Split.TRAIN,
) -> Dataset:
    """Single-channel images of oriented sinusoidal gratings.

    Class ``c`` has orientation ``pi * c / class_count``; each example gets a
    random phase and additive Gaussian pixel noise, clamped to [0, 1].
    """
    if class_count < 1 or n_per_class < 1:
        raise ConfigurationError("class and example counts must be positive", field="data")
    if side < 4:
        raise ConfigurationError(f"must be >= 4, got {side}", field="data.side")
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:side, 0:side] / side
    labels = np.repeat(np.arange(class_count), n_per_class)
    angles = math.pi * labels / class_count
    phases = rng.uniform(0.0, 2.0 * math.pi, len(labels))
    proj = np.cos(angles)[:, None, None] * xs + np.sin(angles)[:, None, None] * ys
    images = 0.5 + 0.4 * np.cos(2.0 * math.pi * 2.0 * proj + phases[:, None, None])
    images = images + noise * rng.standard_normal(images.shape)
    return _dataset(np.clip(images, 0.0, 1.0)[:, None], labels, class_count, split)


# ---------------------------------------------------------------------------
# IDX ingestion
# ---------------------------------------------------------------------------


def _read_bytes(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc.strerror}") from exc


def _read_idx(path: Path, magic: int, ndim: int) -> tuple[tuple[int, ...], bytes]:
    raw = _read_bytes(path)
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise IngestionError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IngestionError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise IngestionError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    body = raw[header:]
    if len(body) != math.prod(dims):
        raise IngestionError(
            f"{path}: truncated file, {len(body)} bytes of data for dims {dims}"
        )
    return dims, body


def load_idx(
    images_path: str | Path,
    labels_path: str | Path,
    class_count: int | None = None,
    split: Split = Split.TRAIN,
) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1].

    Images come back with shape ``(count, 1, rows, cols)``.
    """
    (count, rows, cols), pixels = _read_idx(Path(images_path), IDX_IMAGES_MAGIC, 3)
    (label_count,), label_bytes = _read_idx(Path(labels_path), IDX_LABELS_MAGIC, 1)
    if count != label_count:
        raise IngestionError(
            f"count mismatch: {count} images in {images_path}, {label_count} labels in {labels_path}"
        )
    if count == 0:
        raise IngestionError(f"{images_path}: no images in file")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(count, 1, rows, cols) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1
    log.info("Loaded %d %dx%d images from %s", count, rows, cols, images_path)
    return _dataset(images, labels, class_count, split)


# ---------------------------------------------------------------------------
# RWPD export
# ---------------------------------------------------------------------------


def save_dataset(path: str | Path, dataset: Dataset) -> Path:
    """``RWPD`` | u64 count | u64 ndim | u64 dims... | u64 classes | f8 features | i8 labels."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    shape = dataset.example_shape
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack(f"<QQ{len(shape)}QQ", len(dataset), len(shape), *shape, dataset.class_count))
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes())
    return path


def load_dataset(path: str | Path, split: Split = Split.TRAIN) -> Dataset:
    raw = _read_bytes(path)
    if raw[:4] != DATASET_MAGIC:
        raise IngestionError(f"{path}: bad magic {raw[:4]!r}")
    try:
        count, ndim = struct.unpack("<QQ", raw[4:20])
        end = 20 + 8 * ndim
        shape = struct.unpack(f"<{ndim}Q", raw[20:end])
        (class_count,) = struct.unpack("<Q", raw[end : end + 8])
    except struct.error as exc:
        raise IngestionError(f"{path}: truncated header") from exc
    if count == 0:
        raise IngestionError(f"{path}: no examples in file")
    start = end + 8
    n_values = count * math.prod(shape)
    if len(raw) != start + 8 * n_values + 8 * count:
        raise IngestionError(f"{path}: truncated file")
    features = np.frombuffer(raw, dtype="<f8", offset=start, count=n_values).reshape(count, *shape)
    labels = np.frombuffer(raw, dtype="<i8", offset=start + 8 * n_values, count=count)
    return _dataset(features, labels, class_count, split)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def batch_stream(dataset: Dataset, batch_size: int, seed: SeedLike) -> Iterator[Batch]:
    """Endless stream of batches; each epoch is a fresh shuffle.

    An epoch is ``ceil(n / batch_size)`` consecutive batches covering every
    example exactly once; the last one may be smaller.
    """
    if not 1 <= batch_size <= len(dataset):
        raise ConfigurationError(
            f"must lie in [1, {len(dataset)}], got {batch_size}", field="train.batch_size"
        )
    rng = np.random.default_rng(seed)
    while True:
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), batch_size):
            yield dataset.batch(order[start : start + batch_size])


# ---------------------------------------------------------------------------
# Corruptions
# ---------------------------------------------------------------------------


class CorruptionKind(str, enum.Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    IMPULSE_NOISE = "impulse_noise"
    BLUR3X3 = "blur3x3"
    CONTRAST = "contrast"


SEVERITY_TABLE = {
    CorruptionKind.GAUSSIAN_NOISE: (0.04, 0.08, 0.12, 0.16, 0.20),
    CorruptionKind.IMPULSE_NOISE: (0.01, 0.02, 0.04, 0.08, 0.16),
    CorruptionKind.BLUR3X3: (1, 2, 3, 4, 5),
    CorruptionKind.CONTRAST: (0.8, 0.65, 0.5, 0.35, 0.2),
}

IMAGE_ONLY = frozenset({CorruptionKind.BLUR3X3, CorruptionKind.CONTRAST})


@dataclass(frozen=True)
class CorruptionSpec:
    kind: CorruptionKind
    severity: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", CorruptionKind(self.kind))
        if self.severity not in (1, 2, 3, 4, 5):
            raise ConfigurationError(f"must lie in 1..5, got {self.severity}", field="severity")

    @property
    def level(self) -> float:
        return SEVERITY_TABLE[self.kind][self.severity - 1]


def box_blur(images: np.ndarray, passes: int) -> np.ndarray:
    """Normalised 3x3 box filter over the last two axes, edges replicated."""
    out = images
    for _ in range(passes):
        padded = np.pad(out, [(0, 0)] * (out.ndim - 2) + [(1, 1), (1, 1)], mode="edge")
        out = sliding_window_view(padded, (3, 3), axis=(-2, -1)).mean(axis=(-2, -1))
    return out


def corrupt(dataset: Dataset, spec: CorruptionSpec, seed: SeedLike) -> Dataset:
    """Return a corrupted copy of a test split; labels and shapes are kept."""
    if dataset.split is not Split.TEST:
        raise ConfigurationError("corruptions apply to test splits only", field="data.split")
    if spec.kind in IMAGE_ONLY and not dataset.is_image:
        raise ConfigurationError(
            f"{spec.kind.value} needs image-shaped data, got examples of shape {dataset.example_shape}",
            field="corruption.kind",
        )
    rng = np.random.default_rng(seed)
    x = np.array(dataset.features, dtype=DTYPE)
    if spec.kind is CorruptionKind.GAUSSIAN_NOISE:
        x = x + rng.normal(0.0, spec.level, x.shape)
    elif spec.kind is CorruptionKind.IMPULSE_NOISE:
        hit = rng.random(x.shape) < spec.level
        salt = rng.integers(0, 2, x.shape).astype(DTYPE)
        x = np.where(hit, salt, x)
    elif spec.kind is CorruptionKind.BLUR3X3:
        x = box_blur(x, int(spec.level))
    else:
        x = 0.5 + (x - 0.5) * spec.level
    return _dataset(np.clip(x, 0.0, 1.0), dataset.labels, dataset.class_count, dataset.split)
