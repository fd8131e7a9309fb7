"""Turn an :class:`ExperimentConfig` into datasets, a model and trained params."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from rwp_toolbox.config import ExperimentConfig, dump_config, load_config
from rwp_toolbox.data import Dataset, Split, load_dataset, load_idx, make_blobs, make_gratings, make_spirals
from rwp_toolbox.errors import ConfigurationError, IngestionError
from rwp_toolbox.executor import GradientExecutor
from rwp_toolbox.metrics import MetricsRecord
from rwp_toolbox.model import Model, build_cnn, build_linear, build_mlp, load_checkpoint
from rwp_toolbox.optim import train

log = logging.getLogger(__name__)

RESOLVED_CONFIG = "resolved.cfg"
FINAL_CHECKPOINT = "final.ckpt"
LAST_GOOD_CHECKPOINT = "last_good.ckpt"


def _shared_classes(train_set: Dataset, test_set: Dataset) -> tuple[Dataset, Dataset]:
    if train_set.example_shape != test_set.example_shape:
        raise IngestionError(
            f"train examples have shape {train_set.example_shape}, test examples {test_set.example_shape}"
        )
    classes = max(train_set.class_count, test_set.class_count)
    return replace(train_set, class_count=classes), replace(test_set, class_count=classes)


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Training and test split; generators draw the test split from seed + 1."""
    d = cfg.data
    if d.source == "idx":
        return _shared_classes(
            load_idx(d.train_images, d.train_labels, split=Split.TRAIN),
            load_idx(d.test_images, d.test_labels, split=Split.TEST),
        )
    if d.source == "rwpd":
        return _shared_classes(load_dataset(d.train_file, Split.TRAIN), load_dataset(d.test_file, Split.TEST))
    splits = []
    for split, n, seed in (
        (Split.TRAIN, d.n_per_class, d.seed),
        (Split.TEST, d.test_n_per_class, d.seed + 1),
    ):
        if d.source == "blobs":
            splits.append(make_blobs(d.classes, d.dims, n, d.spread, seed, split))
        elif d.source == "spirals":
            splits.append(make_spirals(n, d.noise, seed, split))
        else:
            splits.append(make_gratings(d.classes, d.side, n, d.noise, seed, split))
    return splits[0], splits[1]


def build_model(cfg: ExperimentConfig, dataset: Dataset) -> Model:
    if cfg.model.kind == "cnn":
        if not dataset.is_image:
            raise ConfigurationError(
                f"a cnn needs image data, got examples of shape {dataset.example_shape}", field="data.source"
            )
        return build_cnn(cfg.model.channels, cfg.model.kernel, dataset.example_shape, dataset.class_count)
    if len(dataset.example_shape) != 1:
        raise ConfigurationError(
            f"{cfg.model.kind} models need flat features, got examples of shape {dataset.example_shape}",
            field="model.kind",
        )
    (input_dim,) = dataset.example_shape
    if cfg.model.kind == "linear":
        return build_linear(input_dim, dataset.class_count)
    return build_mlp(cfg.model.hidden, input_dim, dataset.class_count)


@dataclass(frozen=True)
class Experiment:
    """A validated config together with the objects it describes."""

    config: ExperimentConfig
    model: Model
    train_set: Dataset
    test_set: Dataset

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "Experiment":
        train_set, test_set = load_datasets(cfg)
        if cfg.train.batch_size > len(train_set):
            raise ConfigurationError(
                f"must not exceed the {len(train_set)} training examples, got {cfg.train.batch_size}",
                field="train.batch_size",
            )
        model = build_model(cfg, train_set)
        log.info("Model %s; %d train / %d test examples", model.describe(), len(train_set), len(test_set))
        return cls(cfg, model, train_set, test_set)

    def load_params(self, checkpoint: str | Path) -> np.ndarray:
        return load_checkpoint(checkpoint, expected_count=self.model.param_count)

    def train(
        self, checkpoint_path: Path | None = None
    ) -> tuple[np.ndarray, list[MetricsRecord]]:
        cfg = self.config
        with GradientExecutor(cfg.plan) as executor:
            return train(
                self.model,
                cfg.rule,
                cfg.train,
                self.train_set,
                self.test_set,
                executor,
                checkpoint_path=checkpoint_path,
            )


def prepare(
    config_path: Path,
    *,
    out: Path | None = None,
    seed_override: int | None = None,
    epochs: int | None = None,
) -> tuple[ExperimentConfig, Path]:
    """Load *config_path*, apply command-line overrides and pick the output directory."""
    cfg = load_config(config_path)
    if seed_override is not None:
        cfg = cfg.with_seed(seed_override)
    if epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=epochs))
    out_dir = Path(out) if out is not None else Path(cfg.out_dir)
    cfg = replace(cfg, out_dir=str(out_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    return cfg, out_dir


def write_resolved(cfg: ExperimentConfig, out_dir: Path) -> Path:
    path = out_dir / RESOLVED_CONFIG
    path.write_text(dump_config(cfg), encoding="utf-8")
    log.info("Wrote %s", path)
    return path
