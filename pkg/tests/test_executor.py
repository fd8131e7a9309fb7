from __future__ import annotations

import os

import numpy as np
import pytest

import rwp_toolbox.executor as executor_mod
from rwp_toolbox.data import make_blobs
from rwp_toolbox.errors import ConfigurationError, EvaluationError, NumericError
from rwp_toolbox.executor import (
    ExecMode,
    ExecPlan,
    GradientExecutor,
    TimingReport,
    benchmark_step_time,
    eval_two_grads,
    timing_ratios,
)
from rwp_toolbox.model import build_linear, build_mlp, init_uniform
from rwp_toolbox.optim import TrainConfig, UpdateRule

from conftest import random_batch

PARALLEL = ExecPlan(ExecMode.PARALLEL, 2)


class TestExecPlan:
    def test_from_workers(self):
        assert ExecPlan.from_workers(1).mode is ExecMode.SEQUENTIAL
        assert ExecPlan.from_workers(4) == ExecPlan(ExecMode.PARALLEL, 4)

    def test_parallel_needs_two_workers(self):
        with pytest.raises(ConfigurationError, match="train.workers"):
            ExecPlan(ExecMode.PARALLEL, 1)

    def test_zero_workers(self):
        with pytest.raises(ConfigurationError):
            ExecPlan(ExecMode.SEQUENTIAL, 0)


class TestEvalTwoGrads:
    @pytest.mark.parametrize("seed", range(20))
    def test_parallel_is_bitwise_sequential(self, seed):
        rng = np.random.default_rng(seed)
        model = build_mlp([int(rng.integers(2, 30))], int(rng.integers(1, 10)), int(rng.integers(2, 6)))
        pa = init_uniform(model, seed)
        pb = pa + 0.01 * rng.standard_normal(pa.shape)
        ba, bb = random_batch(model, 16, seed), random_batch(model, 16, seed + 1)

        seq = eval_two_grads(model, pa, ba, pb, bb, ExecPlan())
        par = eval_two_grads(model, pa, ba, pb, bb, PARALLEL)
        assert np.array_equal(seq.g1, par.g1)
        assert np.array_equal(seq.g2, par.g2)
        assert seq.loss1 == par.loss1 and seq.loss2 == par.loss2

    def test_order_of_results(self, mlp, mlp_params):
        ba, bb = random_batch(mlp, 8, 0), random_batch(mlp, 8, 1)
        with GradientExecutor(PARALLEL) as executor:
            pair = executor.eval_two_grads(mlp, mlp_params, ba, mlp_params, bb)
        solo = eval_two_grads(mlp, mlp_params, bb, mlp_params, bb, ExecPlan())
        assert np.array_equal(pair.g2, solo.g1)

    def test_inputs_untouched(self, mlp, mlp_params):
        before = mlp_params.copy()
        eval_two_grads(mlp, mlp_params, random_batch(mlp, 4, 0), mlp_params, random_batch(mlp, 4, 1), PARALLEL)
        assert np.array_equal(before, mlp_params)

    def test_shape_mismatch(self, mlp, mlp_params):
        batch = random_batch(mlp, 4, 0)
        with pytest.raises(ConfigurationError):
            eval_two_grads(mlp, mlp_params, batch, mlp_params[:-1], batch, ExecPlan())

    @pytest.mark.parametrize("plan", [ExecPlan(), PARALLEL], ids=["sequential", "parallel"])
    def test_numeric_failure_names_side(self, plan):
        model = build_linear(2, 2)
        params = np.zeros(model.param_count)
        batch = random_batch(model, 3, 0)
        with pytest.raises(NumericError) as info:
            eval_two_grads(model, params, batch, np.full_like(params, np.nan), batch, plan)
        assert info.value.side == "g2"

    @pytest.mark.parametrize("plan", [ExecPlan(), PARALLEL], ids=["sequential", "parallel"])
    def test_unexpected_failure_wrapped(self, plan, mlp, mlp_params, monkeypatch):
        def broken(model, params, batch):
            raise RuntimeError("boom")

        monkeypatch.setattr(executor_mod, "loss_and_grad", broken)
        batch = random_batch(mlp, 3, 0)
        with pytest.raises(EvaluationError) as info:
            eval_two_grads(mlp, mlp_params, batch, mlp_params, batch, plan)
        assert info.value.side == "g1"


class TestBenchmark:
    def test_ratios(self):
        reports = [
            TimingReport("sgd", 100, 100, 10),
            TimingReport("sam(rho=0.05,same)", 200, 200, 10),
            TimingReport("rwp(gamma=0.01,alpha=0.5,same)", 210, 120, 10),
        ]
        ratios = timing_ratios(reports)
        assert ratios["sam/sgd"] == pytest.approx(2.0)
        assert ratios["rwp_sequential/sam"] == pytest.approx(1.05)
        assert ratios["rwp_parallel/sam"] == pytest.approx(0.6)

    def test_missing_rules_leave_ratios_out(self):
        assert timing_ratios([TimingReport("sgd", 1, 1, 10)]) == {}

    def test_needs_ten_iterations(self, mlp):
        data = make_blobs(3, 4, 5, 0.5, seed=0)
        with pytest.raises(ConfigurationError, match="iterations"):
            benchmark_step_time(mlp, data, [UpdateRule.sgd()], 5, PARALLEL, TrainConfig(epochs=1, batch_size=4))

    def test_reports_every_rule(self, mlp):
        data = make_blobs(3, 4, 5, 0.5, seed=0)
        rules = [UpdateRule.sgd(), UpdateRule.sam(0.05), UpdateRule.rwp(0.01)]
        reports = benchmark_step_time(mlp, data, rules, 10, PARALLEL, TrainConfig(epochs=1, batch_size=4))
        assert [r.label for r in reports] == [r.label for r in rules]
        assert all(r.sequential_ns > 0 and r.parallel_ns > 0 for r in reports)
        assert set(timing_ratios(reports)) == {"sam/sgd", "rwp_sequential/sam", "rwp_parallel/sam"}


@pytest.mark.slow
@pytest.mark.skipif((os.cpu_count() or 1) < 2, reason="needs at least two cores")
def test_parallel_rwp_is_faster_than_sam():
    model = build_mlp([512, 512], 64, 10)
    assert model.param_count >= 100_000
    data = make_blobs(10, 64, 100, 1.0, seed=0)
    rules = [UpdateRule.sgd(), UpdateRule.sam(0.05), UpdateRule.rwp(0.01)]
    cfg = TrainConfig(epochs=1, batch_size=256)
    ratios = timing_ratios(benchmark_step_time(model, data, rules, 30, PARALLEL, cfg))
    assert 1.6 <= ratios["sam/sgd"] <= 2.4
    assert 0.85 <= ratios["rwp_sequential/sam"] <= 1.15
    assert ratios["rwp_parallel/sam"] <= 0.65
