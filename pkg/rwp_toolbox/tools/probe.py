"""Landscape, filter-norm and perturbation-radius probes of a checkpoint.

``--probe`` may be repeated; without it every probe runs.

- ``slice``         slice.csv (t, loss, accuracy) and slice_summary.csv
- ``filter-norms``  filternorms.csv (summary statistics) and
                    filternorms_hist.csv (30-bin histogram)
- ``radius``        radius.csv (method, parameter, radius): one RWP row
                    per gamma, one SAM row per rho and the weight norm
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional

from rwp_toolbox.config import config_schema
from rwp_toolbox.registry import ToolParam, tool

log = logging.getLogger(__name__)

PROBES = ("slice", "filter-norms", "radius")


def write_slice(experiment, params, out_dir: Path) -> None:
    from rwp_toolbox.metrics import write_csv
    from rwp_toolbox.probes import landscape_slice

    probe = experiment.config.probe
    result = landscape_slice(
        experiment.model, params, experiment.train_set.as_batch(), probe.slice_plan
    )
    write_csv(
        out_dir / "slice.csv",
        ["t", "loss", "accuracy"],
        zip(result.ts.tolist(), result.losses.tolist(), result.accuracies.tolist()),
    )
    width = result.flat_width(probe.flat_threshold)
    write_csv(out_dir / "slice_summary.csv", ["threshold", "flat_width"], [(probe.flat_threshold, width)])
    log.info("Flat width at threshold %g: %g", probe.flat_threshold, width)


def write_filter_norms(experiment, params, out_dir: Path) -> None:
    from rwp_toolbox.metrics import write_csv
    from rwp_toolbox.probes import filter_norm_stats

    stats = filter_norm_stats(params, experiment.model.partition)
    write_csv(
        out_dir / "filternorms.csv",
        ["filter_count", "mean", "std", "coefficient_of_variation", "mean_square"],
        [
            (
                int(stats.counts.sum()),
                stats.mean,
                stats.std,
                stats.coefficient_of_variation,
                stats.mean_square,
            )
        ],
    )
    edges = stats.bin_edges.tolist()
    write_csv(
        out_dir / "filternorms_hist.csv",
        ["bin_lower", "bin_upper", "count"],
        ((edges[i], edges[i + 1], int(c)) for i, c in enumerate(stats.counts)),
    )


def write_radius(experiment, params, out_dir: Path) -> None:
    from rwp_toolbox.metrics import write_csv
    from rwp_toolbox.probes import radius_sweep

    probe = experiment.config.probe
    sweep = radius_sweep(
        params, experiment.model.partition, probe.radius_gammas, probe.radius_samples, probe.radius_seed
    )
    rows: List[tuple] = [("rwp", gamma, radius) for gamma, radius in sweep.rows]
    rows += [("sam", rho, rho) for rho in probe.sam_rhos]
    rows.append(("weights", None, sweep.weight_norm))
    write_csv(out_dir / "radius.csv", ["method", "parameter", "radius"], rows)


_WRITERS = {"slice": write_slice, "filter-norms": write_filter_norms, "radius": write_radius}


@tool(
    name="probe",
    description="Run landscape, filter-norm and radius probes on a checkpoint.",
    sub_schemas={"config": config_schema()},
)
def probe(
    checkpoint: Path = ToolParam(help="RWP1 checkpoint matching the configured model.", placeholder="checkpoint"),
    config: Path = ToolParam(help="Experiment config file.", placeholder="experiment.config"),
    probe: List[str] = ToolParam(
        [], help="Probe to run (repeatable); default: all.", choices=PROBES
    ),
    out: Optional[Path] = ToolParam(None, help="Output directory (default: [output] dir)."),
) -> None:
    from rwp_toolbox.experiment import Experiment, prepare

    cfg, out_dir = prepare(config, out=out)
    experiment = Experiment.from_config(cfg)
    params = experiment.load_params(checkpoint)

    selected = [p.lower() for p in probe] or list(PROBES)
    for name in PROBES:
        if name in selected:
            log.info("Running %s probe", name)
            _WRITERS[name](experiment, params, out_dir)
