"""Sweep one hyperparameter of the configured update rule.

The experiment is trained once per value; ablation.csv records the final
epoch of each run.  The swept parameter must be one the rule uses:
``alpha`` for rwp and sam_mix, ``gamma`` for rwp and rwp_pure, ``rho`` for
sam and sam_mix.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional

from rwp_toolbox.config import config_schema
from rwp_toolbox.registry import ToolParam, tool

log = logging.getLogger(__name__)

ABLATION_COLUMNS = ["parameter", "value", "final_train_loss", "final_test_accuracy"]

_USES = {
    "alpha": ("rwp", "sam_mix"),
    "gamma": ("rwp", "rwp_pure"),
    "rho": ("sam", "sam_mix"),
}


@tool(
    name="ablate",
    description="Train once per value of alpha, gamma or rho; write ablation.csv.",
    sub_schemas={"config": config_schema()},
)
def ablate(
    config: Path = ToolParam(help="Experiment config file.", placeholder="experiment.config"),
    parameter: Optional[str] = ToolParam(
        None, help="Swept parameter (default: [ablation] parameter).", choices=tuple(_USES)
    ),
    values: List[float] = ToolParam([], help="Swept value (repeatable; default: [ablation] values)."),
    out: Optional[Path] = ToolParam(None, help="Output directory (default: [output] dir)."),
    epochs: Optional[int] = ToolParam(None, help="Override [train] epochs."),
    seed_override: Optional[int] = ToolParam(
        None, help="Use N, N+1, N+2 as the init, batch and noise seeds."
    ),
) -> None:
    from rwp_toolbox.errors import ConfigurationError
    from rwp_toolbox.experiment import Experiment, prepare, write_resolved
    from rwp_toolbox.metrics import write_csv

    cfg, out_dir = prepare(config, out=out, seed_override=seed_override, epochs=epochs)
    name = (parameter or cfg.ablation.parameter).lower()
    sweep = tuple(values) or cfg.ablation.values
    if cfg.rule.variant.value not in _USES[name]:
        raise ConfigurationError(
            f"variant {cfg.rule.variant.value} does not use {name}", field="ablation.parameter"
        )
    write_resolved(cfg, out_dir)

    rows = []
    for value in sweep:
        run_cfg = cfg.with_rule(**{name: float(value)})
        log.info("Ablation %s=%g: %s", name, value, run_cfg.rule.label)
        _, records = Experiment.from_config(run_cfg).train()
        if records:
            rows.append((name, float(value), records[-1].train_loss, records[-1].test_accuracy))
        else:
            rows.append((name, float(value), None, None))
    write_csv(out_dir / "ablation.csv", ABLATION_COLUMNS, rows)
