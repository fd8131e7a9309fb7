"""Median step time of SGD, SAM and RWP, with RWP's gradients run
sequentially and in parallel.

bench.csv holds one ``rule`` row per update rule and one ``ratio`` row per
timing ratio (sam/sgd, rwp_sequential/sam, rwp_parallel/sam).
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from rwp_toolbox.config import config_schema
from rwp_toolbox.registry import ToolParam, tool

log = logging.getLogger(__name__)

BENCH_COLUMNS = ["kind", "name", "sequential_median_ns", "parallel_median_ns", "value"]


@tool(
    name="bench",
    description="Benchmark per-step wall time of SGD, SAM and RWP; write bench.csv.",
    sub_schemas={"config": config_schema()},
)
def bench(
    config: Path = ToolParam(help="Experiment config file.", placeholder="experiment.config"),
    iterations: int = ToolParam(20, help="Timed steps per rule (at least 10)."),
    out: Optional[Path] = ToolParam(None, help="Output directory (default: [output] dir)."),
) -> None:
    from rwp_toolbox.executor import ExecMode, ExecPlan, benchmark_step_time, timing_ratios
    from rwp_toolbox.experiment import Experiment, prepare
    from rwp_toolbox.metrics import write_csv
    from rwp_toolbox.optim import UpdateRule

    cfg, out_dir = prepare(config, out=out)
    experiment = Experiment.from_config(cfg)
    rule = cfg.rule
    rules = [
        UpdateRule.sgd(),
        UpdateRule.sam(rho=rule.rho if rule.rho is not None else 0.05),
        UpdateRule.rwp(gamma=rule.gamma if rule.gamma is not None else 0.01, alpha=rule.alpha),
    ]
    plan = ExecPlan(ExecMode.PARALLEL, max(2, cfg.workers))

    reports = benchmark_step_time(experiment.model, experiment.train_set, rules, iterations, plan, cfg.train)
    ratios = timing_ratios(reports)

    rows = [("rule", r.label, r.sequential_ns, r.parallel_ns, r.speedup) for r in reports]
    rows += [("ratio", name, None, None, value) for name, value in ratios.items()]
    write_csv(out_dir / "bench.csv", BENCH_COLUMNS, rows)
    for name, value in ratios.items():
        log.info("%s = %.3f", name, value)
