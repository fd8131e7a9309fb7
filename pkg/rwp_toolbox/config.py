"""Experiment config files: ``[section]`` headers with ``key = value`` lines.

Every accepted key is declared once in :data:`SECTIONS`; the same table
drives parsing, the defaults written to ``resolved.cfg`` and the schema
shown by ``rwp-toolbox schema``.  Unknown sections and keys are errors.
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from rwp_toolbox.errors import ConfigurationError
from rwp_toolbox.executor import ExecPlan
from rwp_toolbox.optim import BatchPolicy, TrainConfig, UpdateRule, Variant
from rwp_toolbox.probes import FLAT_THRESHOLD, RADIUS_GAMMAS, SAM_RHOS, SlicePlan

log = logging.getLogger(__name__)

_REQUIRED = object()


# ---------------------------------------------------------------------------
# Value codecs
# ---------------------------------------------------------------------------


def _int(raw: str) -> int:
    return int(raw.strip())


def _float(raw: str) -> float:
    return float(raw.strip())


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.split(",") if v.strip())


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.split(",") if v.strip())


def _str(raw: str) -> str:
    return raw.strip()


def _choice(*options: str) -> Callable[[str], str]:
    def parse(raw: str) -> str:
        value = raw.strip().lower()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return value

    parse.__name__ = "|".join(options)
    return parse


def encode(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(encode(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):  # enums
        return str(value.value)
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any = _REQUIRED
    help: str = ""

    @property
    def required(self) -> bool:
        return self.default is _REQUIRED

    @property
    def type_name(self) -> str:
        return getattr(self.parse, "__name__", "str").lstrip("_")


SECTIONS: dict[str, dict[str, Key]] = {
    "model": {
        "kind": Key(_choice("linear", "mlp", "cnn"), help="Architecture family."),
        "hidden": Key(_ints, (), "Hidden widths of an MLP, comma separated."),
        "channels": Key(_ints, (), "Output channels of each conv block of a CNN."),
        "kernel": Key(_int, 3, "Square conv kernel size."),
    },
    "data": {
        "source": Key(
            _choice("blobs", "spirals", "gratings", "idx", "rwpd"), help="Dataset generator, IDX files or RWPD files."
        ),
        "classes": Key(_int, 2, "Class count (blobs, gratings)."),
        "dims": Key(_int, 2, "Feature dimension (blobs)."),
        "side": Key(_int, 12, "Image side length (gratings)."),
        "n_per_class": Key(_int, 200, "Training examples per class (generators)."),
        "test_n_per_class": Key(_int, 200, "Test examples per class (generators)."),
        "spread": Key(_float, 0.5, "Blob standard deviation."),
        "noise": Key(_float, 0.2, "Spiral angular noise / grating pixel noise."),
        "seed": Key(_int, 0, "Generator seed; the test split uses seed + 1."),
        "train_images": Key(_str, "", "IDX training images."),
        "train_labels": Key(_str, "", "IDX training labels."),
        "test_images": Key(_str, "", "IDX test images."),
        "test_labels": Key(_str, "", "IDX test labels."),
        "train_file": Key(_str, "", "RWPD training split (see `run export-data`)."),
        "test_file": Key(_str, "", "RWPD test split."),
    },
    "rule": {
        "variant": Key(_choice(*(v.value for v in Variant)), help="Update rule."),
        "rho": Key(_float, None, "SAM radius; required for sam and sam_mix (suggested 0.05)."),
        "gamma": Key(_float, None, "RWP noise magnitude; required for rwp and rwp_pure (suggested 0.01)."),
        "alpha": Key(_float, 0.5, "Weight of the unperturbed gradient (rwp, sam_mix)."),
        "batch_policy": Key(_choice(*(p.value for p in BatchPolicy)), "same", "Batches for the two gradients."),
    },
    "train": {
        "epochs": Key(_int, help="Training epochs (no default)."),
        "batch_size": Key(_int, help="Examples per step (no default)."),
        "lr0": Key(_float, 0.1, "Initial learning rate of the cosine schedule."),
        "momentum": Key(_float, 0.9, "Heavy-ball momentum."),
        "weight_decay": Key(_float, 1e-3, "Coupled L2 weight decay."),
        "seed_init": Key(_int, 0, "Parameter initialisation seed."),
        "seed_batches": Key(_int, 1, "Batch shuffling seed."),
        "seed_noise": Key(_int, 2, "RWP noise seed."),
        "workers": Key(_int, 2, "Gradient workers; 2 or more evaluates RWP's gradients in parallel."),
    },
    "probe": {
        "slice_t_min": Key(_float, -1.0, "Left end of the landscape slice."),
        "slice_t_max": Key(_float, 1.0, "Right end of the landscape slice."),
        "slice_points": Key(_int, 41, "Points on the slice."),
        "direction_seed": Key(_int, 0, "Seed of the filter-normalised direction."),
        "flat_threshold": Key(_float, FLAT_THRESHOLD, "Loss rise that bounds the flat region."),
        "radius_gammas": Key(_floats, RADIUS_GAMMAS, "Gammas of the radius probe."),
        "radius_samples": Key(_int, 1000, "Noise draws per gamma."),
        "radius_seed": Key(_int, 0, "Seed of the radius probe."),
        "sam_rhos": Key(_floats, SAM_RHOS, "SAM radii reported next to the RWP radii."),
        "corruption_seeds": Key(_int, 5, "Corruption seeds averaged per (kind, severity)."),
    },
    "ablation": {
        "parameter": Key(_choice("alpha", "gamma", "rho"), "alpha", "Hyperparameter swept by `run ablate`."),
        "values": Key(_floats, (0.0, 0.2, 0.5, 0.8, 1.0), "Values of the swept hyperparameter."),
    },
    "output": {
        "dir": Key(_str, "out", "Directory receiving all artifacts."),
    },
}


def config_schema() -> dict[str, Any]:
    """Machine-readable description of the config file for ``schema``."""
    sections: dict[str, Any] = {}
    for section, keys in SECTIONS.items():
        props: dict[str, Any] = {}
        for name, key in keys.items():
            entry: dict[str, Any] = {"type": key.type_name, "required": key.required, "help": key.help}
            if not key.required and key.default is not None:
                entry["default"] = encode(key.default)
            props[name] = entry
        sections[section] = {"type": "section", "properties": props}
    return {
        "description": "INI-style experiment config passed via --config. Unknown keys are errors.",
        "properties": sections,
    }


# ---------------------------------------------------------------------------
# Parsed form
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    hidden: tuple[int, ...] = ()
    channels: tuple[int, ...] = ()
    kernel: int = 3


@dataclass(frozen=True)
class DataSpec:
    source: str
    classes: int = 2
    dims: int = 2
    side: int = 12
    n_per_class: int = 200
    test_n_per_class: int = 200
    spread: float = 0.5
    noise: float = 0.2
    seed: int = 0
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_file: str = ""
    test_file: str = ""


@dataclass(frozen=True)
class ProbeSpec:
    slice_t_min: float = -1.0
    slice_t_max: float = 1.0
    slice_points: int = 41
    direction_seed: int = 0
    flat_threshold: float = FLAT_THRESHOLD
    radius_gammas: tuple[float, ...] = RADIUS_GAMMAS
    radius_samples: int = 1000
    radius_seed: int = 0
    sam_rhos: tuple[float, ...] = SAM_RHOS
    corruption_seeds: int = 5

    @property
    def slice_plan(self) -> SlicePlan:
        return SlicePlan(self.slice_t_min, self.slice_t_max, self.slice_points, self.direction_seed)


@dataclass(frozen=True)
class AblationSpec:
    parameter: str = "alpha"
    values: tuple[float, ...] = (0.0, 0.2, 0.5, 0.8, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    data: DataSpec
    rule: UpdateRule
    train: TrainConfig
    workers: int = 2
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    ablation: AblationSpec = field(default_factory=AblationSpec)
    out_dir: str = "out"

    @property
    def plan(self) -> ExecPlan:
        return ExecPlan.from_workers(self.workers)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Replace the three training seeds with seed, seed+1, seed+2."""
        return replace(
            self, train=replace(self.train, seed_init=seed, seed_batches=seed + 1, seed_noise=seed + 2)
        )

    def with_rule(self, **changes: Any) -> "ExperimentConfig":
        current = {
            "variant": self.rule.variant,
            "rho": self.rule.rho,
            "gamma": self.rule.gamma,
            "alpha": self.rule.alpha,
            "batch_policy": self.rule.batch_policy,
        }
        current.update(changes)
        return replace(self, rule=UpdateRule(**current))


def _read_sections(text: str, source: str) -> dict[str, dict[str, Any]]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc

    values: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown section in {source}", field=section)
    for section, keys in SECTIONS.items():
        raw = parser[section] if parser.has_section(section) else {}
        for name in raw:
            if name not in keys:
                raise ConfigurationError(f"unknown key in {source}", field=f"{section}.{name}")
        resolved: dict[str, Any] = {}
        for name, key in keys.items():
            if name in raw and raw[name].strip() != "":
                try:
                    resolved[name] = key.parse(raw[name])
                except ValueError as exc:
                    raise ConfigurationError(f"{exc} (got {raw[name]!r})", field=f"{section}.{name}") from exc
            elif key.required:
                raise ConfigurationError("missing required key", field=f"{section}.{name}")
            else:
                resolved[name] = key.default
        values[section] = resolved
    return values


IMAGE_SOURCES = ("gratings", "idx", "rwpd")
FILE_SOURCES = {
    "idx": ("train_images", "train_labels", "test_images", "test_labels"),
    "rwpd": ("train_file", "test_file"),
}


def _training_examples(data: DataSpec) -> int | None:
    """Size of a generated training split; ``None`` for file sources."""
    if data.source == "spirals":
        return 2 * data.n_per_class
    if data.source in ("blobs", "gratings"):
        return data.classes * data.n_per_class
    return None


def _check_cnn_fits(model: ModelSpec, side: int) -> None:
    if model.kernel < 1:
        raise ConfigurationError(f"must be >= 1, got {model.kernel}", field="model.kernel")
    for block in range(len(model.channels)):
        side -= model.kernel - 1
        if side < 2:
            raise ConfigurationError(
                f"the feature map underflows in conv block {block + 1}; "
                "use fewer blocks, a smaller kernel or larger images",
                field="model.channels",
            )
        side //= 2


def _validate(cfg: ExperimentConfig) -> None:
    model, data = cfg.model, cfg.data
    if model.kind == "mlp" and not model.hidden:
        raise ConfigurationError("an mlp needs at least one hidden width", field="model.hidden")
    if model.kind == "cnn":
        if not model.channels:
            raise ConfigurationError("a cnn needs at least one conv block", field="model.channels")
        if data.source not in IMAGE_SOURCES:
            raise ConfigurationError("a cnn needs image data (gratings, idx or rwpd)", field="data.source")
        if data.source == "gratings":
            _check_cnn_fits(model, data.side)
    elif data.source in ("gratings", "idx"):
        raise ConfigurationError(f"{data.source} data is image-shaped; use kind = cnn", field="model.kind")
    if data.source in FILE_SOURCES:
        for name in FILE_SOURCES[data.source]:
            if not getattr(data, name):
                raise ConfigurationError(f"required for {data.source} data", field=f"data.{name}")
    else:
        if data.n_per_class < 1 or data.test_n_per_class < 1:
            raise ConfigurationError("example counts must be positive", field="data.n_per_class")
        if data.source in ("blobs", "gratings") and data.classes < 1:
            raise ConfigurationError(f"must be >= 1, got {data.classes}", field="data.classes")
        if data.source == "blobs" and data.classes > data.dims + 1:
            raise ConfigurationError(
                f"{data.classes} classes need at least {data.classes - 1} dimensions", field="data.dims"
            )
        if data.source == "gratings" and data.side < 4:
            raise ConfigurationError(f"must be >= 4, got {data.side}", field="data.side")
        n_train = _training_examples(data)
        if cfg.train.batch_size > n_train:
            raise ConfigurationError(
                f"must not exceed the {n_train} training examples, got {cfg.train.batch_size}",
                field="train.batch_size",
            )
    if cfg.workers < 1:
        raise ConfigurationError(f"must be >= 1, got {cfg.workers}", field="train.workers")
    if cfg.probe.radius_samples < 100:
        raise ConfigurationError("must be >= 100", field="probe.radius_samples")
    if cfg.probe.corruption_seeds < 1:
        raise ConfigurationError("must be >= 1", field="probe.corruption_seeds")
    cfg.probe.slice_plan  # noqa: B018 -- validates the slice bounds


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate a config; raises :class:`ConfigurationError`."""
    values = _read_sections(text, source)
    train = dict(values["train"])
    workers = train.pop("workers")
    cfg = ExperimentConfig(
        model=ModelSpec(**values["model"]),
        data=DataSpec(**values["data"]),
        rule=UpdateRule(**values["rule"]),
        train=TrainConfig(**train),
        workers=workers,
        probe=ProbeSpec(**values["probe"]),
        ablation=AblationSpec(**values["ablation"]),
        out_dir=values["output"]["dir"],
    )
    _validate(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror}", field="--config") from exc
    return parse_config(text, str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    """Render *cfg* with every default filled in; parses back to an equal config."""
    sources: dict[str, Any] = {
        "model": cfg.model,
        "data": cfg.data,
        "rule": cfg.rule,
        "train": cfg.train,
        "probe": cfg.probe,
        "ablation": cfg.ablation,
    }
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for name in keys:
            if section == "train" and name == "workers":
                value: Any | None = cfg.workers
            elif section == "output":
                value = cfg.out_dir
            else:
                value = getattr(sources[section], name)
            if value is None:
                continue
            lines.append(f"{name} = {encode(value)}")
        lines.append("")
    return "\n".join(lines)
