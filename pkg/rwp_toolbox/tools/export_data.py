"""Write the configured train and test splits as RWPD files.

Artifacts in the output directory:

- ``train.rwpd``  the training split
- ``test.rwpd``   the test split

A config with ``source = rwpd`` and ``train_file``/``test_file`` pointing
at them trains on exactly these examples.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from rwp_toolbox.config import config_schema
from rwp_toolbox.registry import ToolParam, tool

log = logging.getLogger(__name__)

TRAIN_FILE = "train.rwpd"
TEST_FILE = "test.rwpd"


@tool(
    name="export-data",
    description="Write the configured train and test splits to train.rwpd and test.rwpd.",
    sub_schemas={"config": config_schema()},
)
def export_data(
    config: Path = ToolParam(help="Experiment config file.", placeholder="experiment.config"),
    out: Optional[Path] = ToolParam(None, help="Output directory (default: [output] dir)."),
) -> None:
    from rwp_toolbox.data import save_dataset
    from rwp_toolbox.experiment import load_datasets, prepare

    cfg, out_dir = prepare(config, out=out)
    train_set, test_set = load_datasets(cfg)
    for name, dataset in ((TRAIN_FILE, train_set), (TEST_FILE, test_set)):
        path = save_dataset(out_dir / name, dataset)
        log.info("Wrote %d %s examples to %s", len(dataset), dataset.split.value, path)
