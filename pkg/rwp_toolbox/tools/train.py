"""Train one configured experiment and write its metrics and checkpoint.

Artifacts in the output directory:

- ``resolved.cfg``  the config with every default filled in
- ``metrics.csv``   one row per epoch (deterministic for a given config)
- ``timing.csv``    wall time per epoch
- ``final.ckpt``    the trained parameters (``RWP1`` format)

A numeric abort leaves ``last_good.ckpt`` instead of ``final.ckpt``.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from rwp_toolbox.config import config_schema
from rwp_toolbox.registry import ToolParam, tool

log = logging.getLogger(__name__)


@tool(
    name="train",
    description="Train a model with SGD, SAM or RWP and write metrics.csv and final.ckpt.",
    sub_schemas={"config": config_schema()},
)
def train(
    config: Path = ToolParam(help="Experiment config file.", placeholder="experiment.config"),
    out: Optional[Path] = ToolParam(None, help="Output directory (default: [output] dir)."),
    epochs: Optional[int] = ToolParam(None, help="Override [train] epochs."),
    seed_override: Optional[int] = ToolParam(
        None, help="Use N, N+1, N+2 as the init, batch and noise seeds."
    ),
) -> None:
    from rwp_toolbox.experiment import (
        FINAL_CHECKPOINT,
        LAST_GOOD_CHECKPOINT,
        Experiment,
        prepare,
        write_resolved,
    )
    from rwp_toolbox.metrics import write_metrics, write_timing
    from rwp_toolbox.model import save_checkpoint

    cfg, out_dir = prepare(config, out=out, seed_override=seed_override, epochs=epochs)
    experiment = Experiment.from_config(cfg)
    write_resolved(cfg, out_dir)

    params, records = experiment.train(checkpoint_path=out_dir / LAST_GOOD_CHECKPOINT)

    write_metrics(out_dir / "metrics.csv", records)
    write_timing(out_dir / "timing.csv", records)
    save_checkpoint(out_dir / FINAL_CHECKPOINT, params)
    if records:
        last = records[-1]
        log.info("Final train loss %.4f, test accuracy %.4f", last.train_loss, last.test_accuracy)
