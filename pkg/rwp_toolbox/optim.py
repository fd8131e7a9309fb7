"""Update rules (SGD, SAM, RWP and their ablations) and the training loop."""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator, NamedTuple

import numpy as np

from rwp_toolbox.data import Dataset, batch_stream
from rwp_toolbox.errors import ConfigurationError, DegenerateGradientError, NumericError
from rwp_toolbox.executor import ExecMode, ExecPlan, GradientExecutor
from rwp_toolbox.metrics import MetricsRecord
from rwp_toolbox.model import Batch, Model, init_uniform, loss_and_grad, save_checkpoint
from rwp_toolbox.perturb import RwpNoiseSpec, SamSpec, sam_perturbation, sample_rwp_noise

log = logging.getLogger(__name__)


class Variant(str, enum.Enum):
    SGD = "sgd"
    SAM = "sam"
    RWP = "rwp"
    SAM_MIX = "sam_mix"
    RWP_PURE = "rwp_pure"


class BatchPolicy(str, enum.Enum):
    SAME = "same"
    DIFFERENT = "different"


@dataclass(frozen=True)
class UpdateRule:
    """Which update to run and its hyperparameters.

    ``rho`` is used by SAM and SAM_MIX, ``gamma`` by RWP and RWP_PURE and
    ``alpha`` by RWP and SAM_MIX.  RWP_PURE always mixes with alpha = 0.
    """

    variant: Variant = Variant.SGD
    rho: float | None = None
    gamma: float | None = None
    alpha: float = 0.5
    batch_policy: BatchPolicy = BatchPolicy.SAME

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "batch_policy", BatchPolicy(self.batch_policy))
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"must lie in [0, 1], got {self.alpha}", field="rule.alpha")
        if self.variant in (Variant.SAM, Variant.SAM_MIX):
            if self.rho is None:
                raise ConfigurationError(f"required for variant {self.variant.value}", field="rule.rho")
            SamSpec(self.rho)
        if self.variant in (Variant.RWP, Variant.RWP_PURE):
            if self.gamma is None:
                raise ConfigurationError(f"required for variant {self.variant.value}", field="rule.gamma")
            RwpNoiseSpec(self.gamma)
        if self.variant is Variant.SAM_MIX and self.batch_policy is BatchPolicy.DIFFERENT:
            raise ConfigurationError("sam_mix only supports the same batch", field="rule.batch_policy")

    @classmethod
    def sgd(cls) -> "UpdateRule":
        return cls(Variant.SGD)

    @classmethod
    def sam(cls, rho: float = 0.05, policy: BatchPolicy = BatchPolicy.SAME) -> "UpdateRule":
        return cls(Variant.SAM, rho=rho, batch_policy=policy)

    @classmethod
    def rwp(
        cls, gamma: float = 0.01, alpha: float = 0.5, policy: BatchPolicy = BatchPolicy.SAME
    ) -> "UpdateRule":
        return cls(Variant.RWP, gamma=gamma, alpha=alpha, batch_policy=policy)

    @classmethod
    def sam_mix(cls, rho: float = 0.05, alpha: float = 0.5) -> "UpdateRule":
        return cls(Variant.SAM_MIX, rho=rho, alpha=alpha)

    @classmethod
    def rwp_pure(cls, gamma: float = 0.01, policy: BatchPolicy = BatchPolicy.SAME) -> "UpdateRule":
        return cls(Variant.RWP_PURE, gamma=gamma, alpha=0.0, batch_policy=policy)

    @property
    def effective_alpha(self) -> float:
        return 0.0 if self.variant is Variant.RWP_PURE else self.alpha

    @property
    def label(self) -> str:
        if self.variant is Variant.SGD:
            return "sgd"
        if self.variant is Variant.SAM:
            return f"sam(rho={self.rho},{self.batch_policy.value})"
        if self.variant is Variant.SAM_MIX:
            return f"sam_mix(rho={self.rho},alpha={self.alpha})"
        if self.variant is Variant.RWP_PURE:
            return f"rwp_pure(gamma={self.gamma},{self.batch_policy.value})"
        return f"rwp(gamma={self.gamma},alpha={self.alpha},{self.batch_policy.value})"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-3
    seed_init: int = 0
    seed_batches: int = 1
    seed_noise: int = 2

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigurationError(f"must be >= 0, got {self.epochs}", field="train.epochs")
        if self.batch_size < 1:
            raise ConfigurationError(f"must be >= 1, got {self.batch_size}", field="train.batch_size")
        if not self.lr0 > 0:
            raise ConfigurationError(f"must be > 0, got {self.lr0}", field="train.lr0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"must lie in [0, 1), got {self.momentum}", field="train.momentum")
        if not self.weight_decay >= 0:
            raise ConfigurationError(
                f"must be >= 0, got {self.weight_decay}", field="train.weight_decay"
            )


@dataclass(frozen=True)
class OptState:
    velocity: np.ndarray
    step_index: int
    total_steps: int
    degenerate_count: int = 0

    @classmethod
    def fresh(cls, param_count: int, total_steps: int) -> "OptState":
        return cls(np.zeros(param_count), 0, total_steps)


class StepOutcome(NamedTuple):
    params: np.ndarray
    state: OptState
    loss: float


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """``lr0 * (1 + cos(pi * step / total_steps)) / 2``, no warmup or restarts."""
    if not 0 <= step < total_steps:
        raise ConfigurationError(
            f"step {step} outside [0, {total_steps})", field="step"
        )
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def mix_gradients(g1: np.ndarray, g2: np.ndarray, alpha: float) -> np.ndarray:
    """``alpha * g1 + (1 - alpha) * g2``, written as ``g2 + alpha * (g1 - g2)``.

    This form returns g2 exactly for alpha = 0 and whenever g1 == g2;
    alpha = 1 returns g1 itself.
    """
    if alpha == 1.0:
        return g1
    return g2 + alpha * (g1 - g2)


def combine_and_apply(
    params: np.ndarray, g_combined: np.ndarray, state: OptState, cfg: TrainConfig
) -> tuple[np.ndarray, OptState]:
    """Heavy-ball SGD with coupled weight decay on the already-mixed gradient."""
    if g_combined.shape != params.shape:
        raise ConfigurationError("gradient and params differ in shape", field="g_combined")
    lr = cosine_lr(state.step_index, state.total_steps, cfg.lr0)
    g = g_combined + cfg.weight_decay * params if cfg.weight_decay else g_combined
    velocity = cfg.momentum * state.velocity + g if cfg.momentum else g
    updated = params - lr * velocity
    if not np.isfinite(updated).all():
        raise NumericError(f"non-finite update at step {state.step_index}")
    return updated, replace(state, velocity=velocity, step_index=state.step_index + 1)


def sgd_step(model: Model, params: np.ndarray, batch: Batch, state: OptState, cfg: TrainConfig) -> StepOutcome:
    loss, grad = loss_and_grad(model, params, batch)
    params, state = combine_and_apply(params, grad, state, cfg)
    return StepOutcome(params, state, loss)


def _ascent(grad: np.ndarray, spec: SamSpec, state: OptState) -> tuple[np.ndarray | None, OptState]:
    try:
        return sam_perturbation(grad, spec), state
    except DegenerateGradientError as exc:
        log.debug("Step %d: %s; taking an unperturbed step", state.step_index, exc)
        return None, replace(state, degenerate_count=state.degenerate_count + 1)


def sam_step(
    model: Model,
    params: np.ndarray,
    batch_1: Batch,
    batch_2: Batch,
    state: OptState,
    cfg: TrainConfig,
    spec: SamSpec,
    policy: BatchPolicy = BatchPolicy.SAME,
) -> StepOutcome:
    """Gradient at w, ascend to w + eps_s, descend with the gradient there."""
    if policy is BatchPolicy.SAME and batch_2 is not batch_1:
        raise ConfigurationError("the same-batch policy needs batch_1 is batch_2", field="rule.batch_policy")
    loss, g_a = loss_and_grad(model, params, batch_1)
    eps, state = _ascent(g_a, spec, state)
    if eps is None:
        g = g_a
    else:
        _, g = loss_and_grad(model, params + eps, batch_2)
    params, state = combine_and_apply(params, g, state, cfg)
    return StepOutcome(params, state, loss)


def sam_mix_step(
    model: Model,
    params: np.ndarray,
    batch: Batch,
    state: OptState,
    cfg: TrainConfig,
    spec: SamSpec,
    alpha: float,
) -> StepOutcome:
    """SAM whose descent direction mixes in the gradient at w."""
    loss, g1 = loss_and_grad(model, params, batch)
    eps, state = _ascent(g1, spec, state)
    g2 = g1 if eps is None else loss_and_grad(model, params + eps, batch)[1]
    params, state = combine_and_apply(params, mix_gradients(g1, g2, alpha), state, cfg)
    return StepOutcome(params, state, loss)


def rwp_step(
    model: Model,
    params: np.ndarray,
    batch_1: Batch,
    batch_2: Batch,
    state: OptState,
    cfg: TrainConfig,
    spec: RwpNoiseSpec,
    alpha: float,
    policy: BatchPolicy,
    executor: GradientExecutor,
    noise_rng: np.random.Generator,
) -> StepOutcome:
    """One step of alpha * L(w) + (1 - alpha) * L(w + eps_r).

    The two gradients are independent and go to *executor* together.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"must lie in [0, 1], got {alpha}", field="rule.alpha")
    if policy is BatchPolicy.SAME and batch_2 is not batch_1:
        raise ConfigurationError("the same-batch policy needs batch_1 is batch_2", field="rule.batch_policy")
    eps = sample_rwp_noise(params, model.partition, spec, noise_rng)
    pair = executor.eval_two_grads(model, params, batch_1, params + eps, batch_2)
    g = mix_gradients(pair.g1, pair.g2, alpha)
    params, state = combine_and_apply(params, g, state, cfg)
    return StepOutcome(params, state, pair.loss1)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


class RuleStepper:
    """Binds an :class:`UpdateRule` to its noise stream and executor."""

    def __init__(self, rule: UpdateRule, cfg: TrainConfig, executor: GradientExecutor) -> None:
        self.rule = rule
        self.cfg = cfg
        self.executor = executor
        self.noise_spec = (
            RwpNoiseSpec(rule.gamma, cfg.seed_noise) if rule.gamma is not None else None
        )
        self.noise_rng = np.random.default_rng(cfg.seed_noise)
        self.sam_spec = SamSpec(rule.rho) if rule.rho is not None else None

    def __call__(
        self, model: Model, params: np.ndarray, batch_1: Batch, batch_2: Batch, state: OptState
    ) -> StepOutcome:
        rule, cfg = self.rule, self.cfg
        if rule.batch_policy is BatchPolicy.SAME:
            batch_2 = batch_1
        if rule.variant is Variant.SGD:
            return sgd_step(model, params, batch_1, state, cfg)
        if rule.variant is Variant.SAM:
            return sam_step(model, params, batch_1, batch_2, state, cfg, self.sam_spec, rule.batch_policy)
        if rule.variant is Variant.SAM_MIX:
            return sam_mix_step(model, params, batch_1, state, cfg, self.sam_spec, rule.alpha)
        return rwp_step(
            model,
            params,
            batch_1,
            batch_2,
            state,
            cfg,
            self.noise_spec,
            rule.effective_alpha,
            rule.batch_policy,
            self.executor,
            self.noise_rng,
        )


def secondary_seed(seed_batches: int) -> list[int]:
    """Seed of the independent shuffle that feeds batch_2."""
    return [seed_batches, 1]


def train(
    model: Model,
    rule: UpdateRule,
    cfg: TrainConfig,
    train_set: Dataset,
    test_set: Dataset,
    executor: GradientExecutor | None = None,
    *,
    params: np.ndarray | None = None,
    checkpoint_path: Path | None = None,
    on_epoch: Callable[[MetricsRecord], None] | None = None,
) -> tuple[np.ndarray, list[MetricsRecord]]:
    """Run ``epochs * ceil(n / batch_size)`` steps of *rule*.

    Parameters start from ``init_uniform(model, cfg.seed_init)`` unless
    *params* is given.  On a numeric failure the last finite parameters
    are written to *checkpoint_path* (if set) before the error propagates.
    """
    if len(train_set) < 1:
        raise ConfigurationError("the training set is empty", field="data")
    if params is None:
        params = init_uniform(model, cfg.seed_init)
    records: list[MetricsRecord] = []
    if cfg.epochs == 0:
        return params, records

    owns_executor = executor is None
    if executor is None:
        executor = GradientExecutor(ExecPlan(ExecMode.SEQUENTIAL, 1))

    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    state = OptState.fresh(model.param_count, cfg.epochs * steps_per_epoch)
    stepper = RuleStepper(rule, cfg, executor)
    primary: Iterator[Batch] = batch_stream(train_set, cfg.batch_size, cfg.seed_batches)
    secondary: Iterator[Batch] | None = None
    if rule.batch_policy is BatchPolicy.DIFFERENT and rule.variant is not Variant.SGD:
        secondary = batch_stream(train_set, cfg.batch_size, secondary_seed(cfg.seed_batches))

    log.info(
        "Training %s with %s for %d epochs (%d steps/epoch)",
        model.describe(),
        rule.label,
        cfg.epochs,
        steps_per_epoch,
    )
    try:
        for epoch in range(cfg.epochs):
            started = time.perf_counter_ns()
            degenerate_before = state.degenerate_count
            loss_sum = 0.0
            lr = cfg.lr0
            for _ in range(steps_per_epoch):
                batch_1 = next(primary)
                batch_2 = next(secondary) if secondary is not None else batch_1
                lr = cosine_lr(state.step_index, state.total_steps, cfg.lr0)
                outcome = stepper(model, params, batch_1, batch_2, state)
                params, state = outcome.params, outcome.state
                loss_sum += outcome.loss
            _, accuracy = test_set.evaluate(model, params)
            record = MetricsRecord(
                epoch=epoch + 1,
                train_loss=loss_sum / steps_per_epoch,
                test_accuracy=accuracy,
                learning_rate=lr,
                epoch_wall_ns=time.perf_counter_ns() - started,
                degenerate_gradient_count=state.degenerate_count - degenerate_before,
            )
            records.append(record)
            log.info(
                "epoch %d/%d loss=%.4f acc=%.4f lr=%.5f (%.2fs)",
                record.epoch,
                cfg.epochs,
                record.train_loss,
                record.test_accuracy,
                record.learning_rate,
                record.epoch_wall_ns / 1e9,
            )
            if on_epoch is not None:
                on_epoch(record)
    except NumericError:
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, params)
            log.error("Numeric failure; last good parameters in %s", checkpoint_path)
        raise
    finally:
        if owns_executor:
            executor.close()
    return params, records
