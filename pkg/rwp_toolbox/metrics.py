"""Per-epoch metrics and the CSV files every command writes.

All files carry a header row and are locale independent: floats are
written with ``repr`` (shortest round-trip form, period decimal point).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    train_loss: float
    test_accuracy: float
    learning_rate: float
    epoch_wall_ns: int
    degenerate_gradient_count: int


# epoch_wall_ns goes to timing.csv so metrics.csv stays byte-identical across reruns.
METRICS_COLUMNS = ["epoch", "train_loss", "test_accuracy", "learning_rate", "degenerate_gradient_count"]
TIMING_COLUMNS = ["epoch", "epoch_wall_ns"]


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "item"):  # numpy scalars
        return format_value(value.item())
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    log.info("Wrote %s", path)
    return path


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_metrics(path: str | Path, records: Sequence[MetricsRecord]) -> Path:
    return write_csv(
        path, METRICS_COLUMNS, ([getattr(r, c) for c in METRICS_COLUMNS] for r in records)
    )


def write_timing(path: str | Path, records: Sequence[MetricsRecord]) -> Path:
    return write_csv(path, TIMING_COLUMNS, ((r.epoch, r.epoch_wall_ns) for r in records))
