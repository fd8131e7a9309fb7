"""Concurrent evaluation of RWP's two independent gradients.

The executor never draws random numbers: callers materialise the
perturbed parameters and both batches before submitting.  Each
evaluation is a pure call to :func:`~rwp_toolbox.model.loss_and_grad`
over its own inputs, so running the pair on two threads gives bitwise the
same result as running them one after the other.  numpy releases the GIL
inside its matrix kernels, which is where the overlap comes from.
"""

from __future__ import annotations

import enum
import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, NamedTuple, Sequence

import numpy as np

from rwp_toolbox.errors import ConfigurationError, EvaluationError, NumericError
from rwp_toolbox.model import Batch, Model, init_uniform, loss_and_grad

if TYPE_CHECKING:
    from rwp_toolbox.data import Dataset
    from rwp_toolbox.optim import TrainConfig, UpdateRule

log = logging.getLogger(__name__)

WARMUP_ITERATIONS = 3
MIN_BENCH_ITERATIONS = 10


class ExecMode(str, enum.Enum):
    SEQUENTIAL = "sequential"
    PARALLEL = "parallel"


@dataclass(frozen=True)
class ExecPlan:
    mode: ExecMode = ExecMode.SEQUENTIAL
    worker_count: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", ExecMode(self.mode))
        if self.worker_count < 1:
            raise ConfigurationError(f"must be >= 1, got {self.worker_count}", field="train.workers")
        if self.mode is ExecMode.PARALLEL and self.worker_count < 2:
            raise ConfigurationError("parallel mode needs at least 2 workers", field="train.workers")

    @classmethod
    def from_workers(cls, workers: int) -> "ExecPlan":
        if workers >= 2:
            return cls(ExecMode.PARALLEL, workers)
        return cls(ExecMode.SEQUENTIAL, 1)


class GradPair(NamedTuple):
    g1: np.ndarray
    loss1: float
    g2: np.ndarray
    loss2: float


class GradientExecutor:
    """Evaluates two gradients, concurrently under a parallel plan.

    One executor serves one training loop; concurrent loops each need
    their own.
    """

    def __init__(self, plan: ExecPlan) -> None:
        self.plan = plan
        self._pool: ThreadPoolExecutor | None = None
        if plan.mode is ExecMode.PARALLEL:
            self._pool = ThreadPoolExecutor(
                max_workers=plan.worker_count, thread_name_prefix="rwp-grad"
            )

    def __enter__(self) -> "GradientExecutor":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def eval_two_grads(
        self,
        model: Model,
        params_a: np.ndarray,
        batch_a: Batch,
        params_b: np.ndarray,
        batch_b: Batch,
    ) -> GradPair:
        """Return ``g1 = grad L_a(params_a)`` and ``g2 = grad L_b(params_b)``."""
        if params_a.shape != params_b.shape:
            raise ConfigurationError("params_a and params_b differ in shape", field="params")
        if self._pool is None:
            loss1, g1 = _evaluate_side("g1", lambda: loss_and_grad(model, params_a, batch_a))
            loss2, g2 = _evaluate_side("g2", lambda: loss_and_grad(model, params_b, batch_b))
            return GradPair(g1, loss1, g2, loss2)

        log.debug("Submitting g1/g2 to %d workers", self.plan.worker_count)
        future_a = self._pool.submit(loss_and_grad, model, params_a, batch_a)
        future_b = self._pool.submit(loss_and_grad, model, params_b, batch_b)
        # Barrier: both sides finish before either result is used.
        loss1, g1 = _evaluate_side("g1", future_a.result)
        loss2, g2 = _evaluate_side("g2", future_b.result)
        return GradPair(g1, loss1, g2, loss2)


def _evaluate_side(side: str, call: Callable[[], tuple[float, np.ndarray]]) -> tuple[float, np.ndarray]:
    try:
        return call()
    except NumericError as exc:
        raise NumericError("gradient evaluation failed", layer_index=exc.layer_index, side=side) from exc
    except ConfigurationError:
        raise
    except Exception as exc:
        raise EvaluationError(side, exc) from exc


def eval_two_grads(
    model: Model,
    params_a: np.ndarray,
    batch_a: Batch,
    params_b: np.ndarray,
    batch_b: Batch,
    plan: ExecPlan,
) -> GradPair:
    """One-shot form of :meth:`GradientExecutor.eval_two_grads`."""
    with GradientExecutor(plan) as executor:
        return executor.eval_two_grads(model, params_a, batch_a, params_b, batch_b)


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimingReport:
    """Median step times of one rule under a sequential and a parallel plan."""

    label: str
    sequential_ns: int
    parallel_ns: int
    iterations: int

    @property
    def speedup(self) -> float:
        return self.sequential_ns / self.parallel_ns if self.parallel_ns else float("nan")


def _median_step_ns(
    model: Model,
    batch: Batch,
    rule: "UpdateRule",
    cfg: "TrainConfig",
    plan: ExecPlan,
    iterations: int,
) -> int:
    from rwp_toolbox.optim import OptState, RuleStepper

    total = WARMUP_ITERATIONS + iterations
    params = init_uniform(model, cfg.seed_init)
    state = OptState.fresh(model.param_count, total)
    samples: list[int] = []
    with GradientExecutor(plan) as executor:
        stepper = RuleStepper(rule, cfg, executor)
        for i in range(total):
            started = time.perf_counter_ns()
            outcome = stepper(model, params, batch, batch, state)
            elapsed = time.perf_counter_ns() - started
            params, state = outcome.params, outcome.state
            if i >= WARMUP_ITERATIONS:
                samples.append(elapsed)
    return int(statistics.median(samples))


def benchmark_step_time(
    model: Model,
    dataset: "Dataset",
    rules: Sequence["UpdateRule"],
    iterations: int,
    plan: ExecPlan,
    cfg: "TrainConfig",
) -> list[TimingReport]:
    """Median wall time per step for each rule, sequential and under *plan*.

    Every rule steps on the same fixed batch (the first ``batch_size``
    examples) so only the update rule differs.  The first
    ``WARMUP_ITERATIONS`` steps are discarded.
    """
    if iterations < MIN_BENCH_ITERATIONS:
        raise ConfigurationError(
            f"must be >= {MIN_BENCH_ITERATIONS}, got {iterations}", field="iterations"
        )
    batch = dataset.batch(np.arange(min(cfg.batch_size, len(dataset))))
    sequential = ExecPlan(ExecMode.SEQUENTIAL, 1)
    reports: list[TimingReport] = []
    for rule in rules:
        seq_ns = _median_step_ns(model, batch, rule, cfg, sequential, iterations)
        par_ns = _median_step_ns(model, batch, rule, cfg, plan, iterations)
        report = TimingReport(rule.label, seq_ns, par_ns, iterations)
        log.info(
            "%-40s sequential %.3f ms  %s %.3f ms",
            rule.label,
            seq_ns / 1e6,
            plan.mode.value,
            par_ns / 1e6,
        )
        reports.append(report)
    return reports


def timing_ratios(reports: Sequence[TimingReport]) -> dict[str, float]:
    """SAM/SGD, RWP-sequential/SAM and RWP-parallel/SAM median ratios.

    Rules are recognised by the prefix of their label; ratios whose
    inputs are missing are left out.
    """
    by_kind: dict[str, TimingReport] = {}
    for report in reports:
        kind = report.label.split("(", 1)[0]
        by_kind.setdefault(kind, report)
    ratios: dict[str, float] = {}
    sgd, sam, rwp = by_kind.get("sgd"), by_kind.get("sam"), by_kind.get("rwp")
    if sgd and sam:
        ratios["sam/sgd"] = sam.sequential_ns / sgd.sequential_ns
    if sam and rwp:
        ratios["rwp_sequential/sam"] = rwp.sequential_ns / sam.sequential_ns
        ratios["rwp_parallel/sam"] = rwp.parallel_ns / sam.sequential_ns
    return ratios
