"""Losses, the Adam optimizer, and the two-phase training loop.

Training runs MAE first, then switches to MSE with the learning rate divided
by ten and larger patches. An optional warm-up phase is the same MAE loop
under a separate iteration budget. One optimizer state spans all phases; only
the learning rate and loss change at the boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .checkpoint import ResumeState, save_params, save_resume
from .errors import ConfigError, DivergenceError, ShapeError, StateError, UsageError
from .layers import Tape, backward
from .model import IdnConfig, ModelParams, idn_forward
from .tensor import Tensor

PHASE_PRETRAIN = "pretrain"
PHASE_MAE = "mae_train"
PHASE_MSE = "mse_finetune"

# LR patch edge per scale; labels are m*l - m + 1 on each side
TRAIN_PATCH = {2: 29, 3: 15, 4: 11}
FINETUNE_PATCH = {2: 39, 3: 26, 4: 19}

WEIGHTS_NAME = "weights.idn"
RESUME_NAME = "resume.idn"
LOG_NAME = "train.log"


@dataclass
class LossBatch:
    predictions: Tensor
    targets: Tensor

    def __post_init__(self):
        if self.predictions.shape != self.targets.shape:
            raise ShapeError(f"prediction shape {self.predictions.shape} !="
                             f" target shape {self.targets.shape}")
        if self.predictions.dtype != self.targets.dtype:
            raise ShapeError("prediction and target dtypes differ")

    @property
    def count(self) -> int:
        return self.predictions.shape[0]


def loss_mae(batch: LossBatch):
    """Mean absolute error per sample: (1/N) * sum |diff|, grad sign(diff)/N."""
    diff = batch.predictions.data - batch.targets.data
    n = batch.count
    value = float(np.abs(diff).sum(dtype=np.float64) / n)
    grad = np.sign(diff)
    grad /= n
    return value, Tensor(grad)


def loss_mse(batch: LossBatch):
    """Mean squared error per sample: (1/N) * sum diff^2, grad 2*diff/N."""
    diff = batch.predictions.data - batch.targets.data
    n = batch.count
    value = float(np.square(diff, dtype=np.float64).sum() / n)
    grad = (2.0 / n) * diff
    return value, Tensor(grad.astype(diff.dtype, copy=False))


@dataclass
class AdamState:
    """Moment estimates keyed by parameter name, shared across phases."""
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ModelParams, grads: Dict[str, np.ndarray],
              state: AdamState) -> None:
    """One in-place Adam update; weight decay couples in as g + wd*p."""
    named = params.named_tensors()
    param_names = {name for name, _ in named}
    missing = param_names - set(grads.keys())
    if missing:
        raise StateError(f"no gradient for parameters: {sorted(missing)}")
    extra = set(grads.keys()) - param_names
    if extra:
        raise StateError(f"gradients for unknown parameters: {sorted(extra)}")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, tensor in named:
        g = grads[name]
        g = np.asarray(g.data if isinstance(g, Tensor) else g)
        if g.shape != tensor.shape:
            raise ShapeError(f"gradient for {name} shaped {g.shape},"
                             f" parameter is {tensor.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * tensor.data
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(tensor.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        step = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        tensor.data -= step.astype(tensor.data.dtype, copy=False)


@dataclass(frozen=True)
class PhaseSpec:
    name: str
    loss: str
    iterations: int
    lr: float
    lr_patch: int


@dataclass(frozen=True)
class TrainSchedule:
    scale: int
    pretrain_iters: int = 0
    mae_iters: int = 100_000
    mse_iters: int = 100_000
    lr: float = 1e-4
    batch_size: int = 64
    weight_decay: float = 1e-4
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.scale not in TRAIN_PATCH:
            raise ConfigError(f"no patch sizes for scale {self.scale}")
        for name in ("pretrain_iters", "mae_iters", "mse_iters"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.log_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("log_every and checkpoint_every must be >= 1")

    @property
    def finetune_lr(self) -> float:
        return self.lr / 10.0

    def phases(self) -> List[PhaseSpec]:
        small = TRAIN_PATCH[self.scale]
        large = FINETUNE_PATCH[self.scale]
        return [
            PhaseSpec(PHASE_PRETRAIN, "mae", self.pretrain_iters, self.lr, small),
            PhaseSpec(PHASE_MAE, "mae", self.mae_iters, self.lr, small),
            PhaseSpec(PHASE_MSE, "mse", self.mse_iters, self.finetune_lr, large),
        ]

    @property
    def total_iters(self) -> int:
        return self.pretrain_iters + self.mae_iters + self.mse_iters


def phase_at(schedule: TrainSchedule, iteration: int) -> PhaseSpec:
    """Phase owning a 1-based global iteration."""
    if iteration < 1:
        raise UsageError("iterations are 1-based")
    upper = 0
    for phase in schedule.phases():
        upper += phase.iterations
        if iteration <= upper:
            return phase
    raise UsageError(f"iteration {iteration} beyond the {upper}-iteration schedule")


def format_log_line(iteration: int, phase: str, loss: float, lr: float) -> str:
    return f"{iteration}\t{phase}\t{loss:.8e}\t{lr:.2e}"


@dataclass
class TrainResult:
    params: ModelParams
    iterations_run: int
    final_iteration: int
    log_lines: List[str]
    weights_path: Path
    resume_path: Path


def _check_batch(lr_batch: Tensor, hr_batch: Tensor, expected_n: int,
                 lr_size: int, scale: int) -> None:
    hr_size = scale * lr_size - scale + 1
    if lr_batch.shape != (expected_n, 1, lr_size, lr_size):
        raise ShapeError(f"sampler returned LR batch {lr_batch.shape}, wanted"
                         f" {(expected_n, 1, lr_size, lr_size)}")
    if hr_batch.shape != (expected_n, 1, hr_size, hr_size):
        raise ShapeError(f"sampler returned HR batch {hr_batch.shape}, wanted"
                         f" {(expected_n, 1, hr_size, hr_size)}")


def train_loop(schedule: TrainSchedule, config: IdnConfig, params: ModelParams,
               sampler, out_dir, *, resume: Optional[ResumeState] = None,
               max_iters: Optional[int] = None) -> TrainResult:
    """Run the scheduled phases, mutating params in place.

    `sampler.sample(rng, count, lr_size)` must yield an (lr, hr) Tensor pair
    sized for the active phase. Checkpoints (weights + resume sidecar) land in
    out_dir every checkpoint_every iterations and at the end; on a NaN loss
    the run aborts with DivergenceError and the files keep the last good
    state. `max_iters` caps the global iteration count, so a capped run stops
    mid-schedule and can be continued later from the sidecar.
    """
    if config.scale != schedule.scale:
        raise ConfigError(f"schedule scale {schedule.scale} != model scale"
                          f" {config.scale}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    weights_path = out_dir / WEIGHTS_NAME
    resume_path = out_dir / RESUME_NAME
    log_path = out_dir / LOG_NAME

    total = schedule.total_iters
    if max_iters is not None:
        if max_iters < 0:
            raise UsageError("max_iters must be >= 0")
        total = min(total, max_iters)

    rng = np.random.default_rng(schedule.seed)
    state = AdamState(lr=schedule.lr, weight_decay=schedule.weight_decay)
    start = 0
    if resume is not None:
        if resume.iteration > total:
            raise UsageError(f"resume iteration {resume.iteration} is beyond"
                             f" the {total}-iteration budget")
        start = resume.iteration
        rng.bit_generator.state = resume.rng_state
        state.t = resume.adam_t
        for name, tensor in params.named_tensors():
            if name in resume.adam_m:
                m = resume.adam_m[name].astype(tensor.data.dtype)
                v = resume.adam_v[name].astype(tensor.data.dtype)
                if m.shape != tensor.shape:
                    raise ShapeError(f"resumed moment for {name} shaped"
                                     f" {m.shape}, parameter is {tensor.shape}")
                state.m[name] = m
                state.v[name] = v

    def write_checkpoint(iteration: int, phase_name: str) -> None:
        save_params(weights_path, params, config)
        save_resume(resume_path, ResumeState(
            iteration=iteration, phase=phase_name, adam_t=state.t,
            rng_state=rng.bit_generator.state, adam_m=state.m, adam_v=state.v))

    log_lines: List[str] = []
    loss_fns = {"mae": loss_mae, "mse": loss_mse}
    checkpointed_at = -1
    with open(log_path, "a", encoding="utf-8") as log_fh:
        for it in range(start + 1, total + 1):
            phase = phase_at(schedule, it)
            state.lr = phase.lr
            lr_batch, hr_batch = sampler.sample(rng, schedule.batch_size,
                                                phase.lr_patch)
            _check_batch(lr_batch, hr_batch, schedule.batch_size,
                         phase.lr_patch, schedule.scale)
            tape = Tape()
            pred = idn_forward(lr_batch, params, config, mode="train", tape=tape)
            loss, grad = loss_fns[phase.loss](LossBatch(pred, hr_batch))
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at iteration {it} ({phase.name});"
                    f" last checkpoint kept")
            grad_map = backward(tape, grad)
            grads = {}
            for name, tensor in params.named_tensors():
                g = grad_map.get(tensor)
                grads[name] = np.zeros_like(tensor.data) if g is None else g.data
            adam_step(params, grads, state)

            if it % schedule.log_every == 0 or it == total:
                line = format_log_line(it, phase.name, loss, phase.lr)
                log_fh.write(line + "\n")
                log_fh.flush()
                log_lines.append(line)
            if it % schedule.checkpoint_every == 0 or it == total:
                write_checkpoint(it, phase.name)
                checkpointed_at = it

    if checkpointed_at != total:
        # zero-iteration run (or nothing past the resume point): record state
        phases = [p for p in schedule.phases() if p.iterations > 0]
        name = phase_at(schedule, total).name if total >= 1 else (
            phases[0].name if phases else PHASE_MAE)
        write_checkpoint(total, name)

    return TrainResult(params=params, iterations_run=total - start,
                       final_iteration=total, log_lines=log_lines,
                       weights_path=weights_path, resume_path=resume_path)
