"""Directional experiments: RWP against SGD over several seeds.

These train real models for hundreds of epochs and are deselected by
default; run them with ``pytest -m slow``.
"""

from __future__ import annotations

import numpy as np
import pytest

from rwp_toolbox.config import parse_config
from rwp_toolbox.data import CorruptionKind, CorruptionSpec, corrupt
from rwp_toolbox.experiment import Experiment
from rwp_toolbox.probes import filter_norm_stats, landscape_slice
from rwp_toolbox.tools.corrupt_eval import SUMMARY_KIND, corruption_rows

pytestmark = pytest.mark.slow

SEEDS = range(5)

SPIRALS = """
[model]
kind = mlp
hidden = 32, 32

[data]
source = spirals
n_per_class = 250
test_n_per_class = 250
noise = 0.2

[rule]
variant = {variant}
gamma = 0.01
alpha = 0.5

[train]
epochs = 200
batch_size = 50
"""

GRATINGS = """
[model]
kind = cnn
channels = 4
kernel = 3

[data]
source = gratings
classes = 4
side = 12
n_per_class = 100
test_n_per_class = 100
noise = 0.2

[rule]
variant = {variant}
gamma = 0.01
alpha = 0.5

[train]
epochs = 30
batch_size = 32
"""


def run(template: str, variant: str, seed: int):
    cfg = parse_config(template.format(variant=variant)).with_seed(seed)
    experiment = Experiment.from_config(cfg)
    params, records = experiment.train()
    return experiment, params, records


@pytest.fixture(scope="module")
def spirals_runs():
    return {
        variant: [run(SPIRALS, variant, seed) for seed in SEEDS] for variant in ("sgd", "rwp")
    }


def test_rwp_accuracy_not_worse_than_sgd(spirals_runs):
    mean = {v: np.mean([records[-1].test_accuracy for _, _, records in runs]) for v, runs in spirals_runs.items()}
    assert mean["rwp"] >= mean["sgd"] - 0.005


def test_rwp_finds_wider_flat_region(spirals_runs):
    wins = 0
    for (exp_sgd, p_sgd, _), (exp_rwp, p_rwp, _) in zip(spirals_runs["sgd"], spirals_runs["rwp"]):
        plan = exp_sgd.config.probe.slice_plan
        threshold = exp_sgd.config.probe.flat_threshold
        w_sgd = landscape_slice(exp_sgd.model, p_sgd, exp_sgd.train_set.as_batch(), plan).flat_width(threshold)
        w_rwp = landscape_slice(exp_rwp.model, p_rwp, exp_rwp.train_set.as_batch(), plan).flat_width(threshold)
        wins += w_rwp >= w_sgd
    assert wins >= 3


def test_rwp_concentrates_filter_norms(spirals_runs):
    wins = 0
    for (exp_sgd, p_sgd, _), (exp_rwp, p_rwp, _) in zip(spirals_runs["sgd"], spirals_runs["rwp"]):
        cv_sgd = filter_norm_stats(p_sgd, exp_sgd.model.partition).coefficient_of_variation
        cv_rwp = filter_norm_stats(p_rwp, exp_rwp.model.partition).coefficient_of_variation
        wins += cv_rwp < cv_sgd
    assert wins >= 4


def _noise_accuracies(experiment, params, n_seeds=3):
    return [
        np.mean(
            [
                corrupt(experiment.test_set, CorruptionSpec(CorruptionKind.GAUSSIAN_NOISE, s), k)
                .evaluate(experiment.model, params)[1]
                for k in range(n_seeds)
            ]
        )
        for s in range(1, 6)
    ]


def _mean_severity5(experiment, params, n_seeds=3):
    kind, severity, accuracy, _ = corruption_rows(experiment.model, params, experiment.test_set, n_seeds)[-1]
    assert (kind, severity) == (SUMMARY_KIND, 5)
    return accuracy


def test_corruption_robustness():
    wins = 0
    for seed in SEEDS:
        sgd = run(GRATINGS, "sgd", seed)
        rwp = run(GRATINGS, "rwp", seed)
        for experiment, params, _ in (sgd, rwp):
            accuracies = _noise_accuracies(experiment, params)
            assert all(b <= a + 0.01 for a, b in zip(accuracies, accuracies[1:]))
        wins += _mean_severity5(*rwp[:2]) >= _mean_severity5(*sgd[:2])
    assert wins >= 3
