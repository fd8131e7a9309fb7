"""Test accuracy of a checkpoint under synthetic corruptions.

corrupt.csv columns are ``kind, severity, accuracy, status``.  For every
corruption kind there is a severity-0 row (the clean accuracy) followed by
severities 1..5, each averaged over ``probe.corruption_seeds`` seeds.  A
final ``mean_severity5`` row averages severity 5 across the evaluated
kinds.  Blur and contrast need images; on flat data they get a single
``skipped`` row instead.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional

from rwp_toolbox.config import config_schema
from rwp_toolbox.registry import ToolParam, tool

log = logging.getLogger(__name__)

CORRUPT_COLUMNS = ["kind", "severity", "accuracy", "status"]
SUMMARY_KIND = "mean_severity5"


def corruption_rows(model, params, test_set, n_seeds: int) -> List[tuple]:
    """Rows of corrupt.csv for *params* on *test_set*."""
    import numpy as np

    from rwp_toolbox.data import IMAGE_ONLY, CorruptionKind, CorruptionSpec, corrupt

    _, clean = test_set.evaluate(model, params)
    rows: List[tuple] = []
    worst: List[float] = []
    for kind in CorruptionKind:
        if kind in IMAGE_ONLY and not test_set.is_image:
            log.warning("Skipping %s: the test set is not image-shaped", kind.value)
            rows.append((kind.value, None, None, "skipped"))
            continue
        rows.append((kind.value, 0, clean, "ok"))
        for severity in range(1, 6):
            spec = CorruptionSpec(kind, severity)
            accuracies = [
                corrupt(test_set, spec, seed).evaluate(model, params)[1] for seed in range(n_seeds)
            ]
            accuracy = float(np.mean(accuracies))
            rows.append((kind.value, severity, accuracy, "ok"))
            log.info("%s severity %d: accuracy %.4f", kind.value, severity, accuracy)
        worst.append(rows[-1][2])
    rows.append((SUMMARY_KIND, 5, float(np.mean(worst)), "ok"))
    return rows


@tool(
    name="corrupt-eval",
    description="Evaluate a checkpoint on corrupted test data; write corrupt.csv.",
    sub_schemas={"config": config_schema()},
)
def corrupt_eval(
    checkpoint: Path = ToolParam(help="RWP1 checkpoint matching the configured model.", placeholder="checkpoint"),
    config: Path = ToolParam(help="Experiment config file.", placeholder="experiment.config"),
    out: Optional[Path] = ToolParam(None, help="Output directory (default: [output] dir)."),
) -> None:
    from rwp_toolbox.experiment import Experiment, prepare
    from rwp_toolbox.metrics import write_csv

    cfg, out_dir = prepare(config, out=out)
    experiment = Experiment.from_config(cfg)
    params = experiment.load_params(checkpoint)
    rows = corruption_rows(experiment.model, params, experiment.test_set, cfg.probe.corruption_seeds)
    write_csv(out_dir / "corrupt.csv", CORRUPT_COLUMNS, rows)
