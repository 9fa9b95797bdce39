"""Deterministic SGD training sessions for every distillation mode.

All randomness flows from explicit seeds: the student and self-learning
teachers get seeds derived from the run seed (distinct from each other and
from the teacher's), and each epoch's shuffle is seeded by (run seed, epoch).
A fixed seed therefore reproduces a session bitwise. Within one iteration
every loss is computed from forward passes taken before any parameter
update, so the (student, SL-T1, SL-T2) step order cannot affect results.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass
from typing import Optional

from kdlab import _kernels as K
from kdlab.data import Batch, Dataset, batch_iter
from kdlab.errors import ContractError, DimensionError, NumericError
from kdlab.losses import (
    DistillConfig,
    cross_entropy,
    distill_objective,
    fuse_logits,
    total_objective,
)
from kdlab.models import Model, ModelSpec, clone_architecture, forward, init_model
from kdlab.tensor import Tape, Tensor, backward
from kdlab.trajectory import TrajectoryLog, accuracy_from_logits, epoch_divergences


@dataclass(frozen=True)
class Schedule:
    """Epoch count, batch size, and the staged-decay SGD hyperparameters."""

    epochs: int = 60
    batch_size: int = 64
    lr0: float = 0.05
    decay_stages: tuple[int, ...] = (35, 45, 55)
    decay_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def __post_init__(self):
        object.__setattr__(self, "decay_stages", tuple(int(s) for s in self.decay_stages))
        if self.epochs < 0:
            raise ContractError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be positive, got {self.batch_size}")
        if not self.lr0 > 0.0:
            raise ContractError(f"lr0 must be positive, got {self.lr0}")
        if list(self.decay_stages) != sorted(set(self.decay_stages)):
            raise ContractError(f"decay_stages must be strictly increasing, got {self.decay_stages}")
        if self.decay_stages and self.decay_stages[-1] >= self.epochs:
            raise ContractError("decay stages must fall before the final epoch")
        if not 0.0 < self.decay_rate <= 1.0:
            raise ContractError(f"decay_rate must lie in (0,1], got {self.decay_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError(f"momentum must lie in [0,1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ContractError(f"weight_decay must be nonnegative, got {self.weight_decay}")


class OptimizerState:
    """Per-parameter momentum velocities, zero-initialized."""

    def __init__(self, params: list[Tensor]):
        self.params = params
        self.velocity = {id(p): array("d", bytes(8 * p.size)) for p in params}

    @classmethod
    def for_model(cls, model: Model) -> "OptimizerState":
        return cls(list(model.parameters()))


@dataclass(frozen=True)
class SessionResult:
    final_accuracy: float
    best_accuracy: float
    trajectory: TrajectoryLog
    elapsed_epochs: int
    seed: int
    train_losses: tuple[float, ...]


def lr_at_epoch(schedule: Schedule, epoch: int) -> float:
    """lr0 · decay_rate^(stages reached by this epoch)."""
    if not 0 <= epoch < schedule.epochs:
        raise ContractError(f"epoch {epoch} outside [0, {schedule.epochs})")
    hits = sum(1 for s in schedule.decay_stages if s <= epoch)
    return schedule.lr0 * schedule.decay_rate**hits


def sgd_step(
    params: list[Tensor],
    grads: dict[Tensor, Tensor],
    state: OptimizerState,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """g' = grad + wd·param; v ← momentum·v + g'; param ← param − lr·v."""
    for p in params:
        g = grads[p]
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        K.sgd_update(p.data, g.data, state.velocity[id(p)], lr, momentum, weight_decay, p.size)


def evaluate_accuracy(model: Model, dataset: Dataset) -> float:
    """Top-1 accuracy over a dataset; ties break to the lowest class index."""
    if dataset.n < 1:
        raise ContractError("dataset must be nonempty")
    return accuracy_from_logits(forward(model, dataset.features), dataset.labels)


def _derive_seed(seed: int, salt: int) -> int:
    return (seed * 1_000_003 + salt * 10_007 + 12_345) & ((1 << 62) - 1)

_STUDENT_SALT = 1
_SLT_SALT0 = 100


def _slt_seeds(run_seed: int, count: int, teacher_seed: int) -> list[int]:
    """Distinct SL-T init seeds, never colliding with the teacher's."""
    seeds: list[int] = []
    salt = _SLT_SALT0
    while len(seeds) < count:
        cand = _derive_seed(run_seed, salt)
        salt += 1
        if cand != teacher_seed and cand not in seeds:
            seeds.append(cand)
    return seeds


def _check_compat(teacher: Model, student_spec: ModelSpec) -> None:
    if teacher.spec.classes != student_spec.classes:
        raise ContractError(
            f"teacher emits {teacher.spec.classes} classes, student expects {student_spec.classes}"
        )
    if teacher.spec.input_dim != student_spec.input_dim:
        raise ContractError(
            f"teacher input_dim {teacher.spec.input_dim} != student input_dim {student_spec.input_dim}"
        )


def _finite_or_raise(value: float, epoch: int) -> float:
    if not math.isfinite(value):
        raise NumericError(f"training loss diverged at epoch {epoch}: {value!r}")
    return value


class _Session:
    """Shared per-epoch bookkeeping for every training mode."""

    def __init__(self, mode: str, cfg_snapshot: dict, train: Dataset, test: Dataset,
                 schedule: Schedule, seed: int):
        self.train = train
        self.test = test
        self.schedule = schedule
        self.seed = seed
        self.log = TrajectoryLog(mode, cfg_snapshot)
        self.losses: list[float] = []

    def batches(self, epoch: int):
        return batch_iter(self.train, self.schedule.batch_size, self.seed, epoch)

    def finish_epoch(self, epoch: int, student: Model, teacher: Optional[Model],
                     slt_provider, tau: float, loss_sum: float, n_batches: int) -> None:
        self.losses.append(_finite_or_raise(loss_sum / max(1, n_batches), epoch))
        self.log.append(epoch_divergences(epoch, student, teacher, slt_provider, self.test, tau))

    def result(self, student: Model) -> SessionResult:
        if self.log.records:
            final = self.log.records[-1].acc_student
            best = max(r.acc_student for r in self.log.records)
        else:
            final = evaluate_accuracy(student, self.test)
            best = final
        return SessionResult(
            final_accuracy=final,
            best_accuracy=best,
            trajectory=self.log,
            elapsed_epochs=self.schedule.epochs,
            seed=self.seed,
            train_losses=tuple(self.losses),
        )


def _cfg_snapshot(cfg: Optional[DistillConfig], schedule: Schedule, extra: dict | None = None) -> dict:
    snap: dict = {
        "epochs": schedule.epochs,
        "batch_size": schedule.batch_size,
        "lr0": schedule.lr0,
        "decay_stages": list(schedule.decay_stages),
        "decay_rate": schedule.decay_rate,
        "momentum": schedule.momentum,
        "weight_decay": schedule.weight_decay,
    }
    if cfg is not None:
        snap.update(
            alpha=cfg.alpha, tau=cfg.tau, lambda_w=cfg.lambda_w, eta_w=cfg.eta_w,
            rho=cfg.rho, mode=cfg.mode, tau_squared=cfg.tau_squared,
        )
    if extra:
        snap.update(extra)
    return snap


def train_scratch(spec: ModelSpec, data: tuple[Dataset, Dataset], schedule: Schedule,
                  seed: int) -> SessionResult:
    """Cross-entropy-only baseline: no teacher involved."""
    train, test = data
    student = init_model(spec, _derive_seed(seed, _STUDENT_SALT))
    state = OptimizerState.for_model(student)
    sess = _Session("scratch", _cfg_snapshot(None, schedule), train, test, schedule, seed)
    for epoch in range(schedule.epochs):
        lr = lr_at_epoch(schedule, epoch)
        loss_sum, n_batches = 0.0, 0
        for batch in sess.batches(epoch):
            with Tape():
                logits = forward(student, batch.features)
                loss = cross_entropy(logits, batch.labels)
            grads = backward(loss)
            sgd_step(state.params, grads, state, lr, schedule.momentum, schedule.weight_decay)
            loss_sum += loss.item()
            n_batches += 1
        sess.finish_epoch(epoch, student, None, None, 1.0, loss_sum, n_batches)
    return sess.result(student)


def train_kd(teacher: Model, student_spec: ModelSpec, data: tuple[Dataset, Dataset],
             schedule: Schedule, cfg: DistillConfig, seed: int) -> SessionResult:
    """Vanilla distillation: the student minimizes the teacher-branch objective."""
    _check_compat(teacher, student_spec)
    train, test = data
    student = init_model(student_spec, _derive_seed(seed, _STUDENT_SALT))
    state = OptimizerState.for_model(student)
    sess = _Session("kd", _cfg_snapshot(cfg, schedule), train, test, schedule, seed)

    for epoch in range(schedule.epochs):
        lr = lr_at_epoch(schedule, epoch)
        loss_sum, n_batches = 0.0, 0
        for batch in sess.batches(epoch):
            t_logits = forward(teacher, batch.features)
            with Tape():
                s_logits = forward(student, batch.features)
                loss = distill_objective(batch.labels, s_logits, t_logits, cfg)
            grads = backward(loss)
            sgd_step(state.params, grads, state, lr, schedule.momentum, schedule.weight_decay)
            loss_sum += loss.item()
            n_batches += 1
        sess.finish_epoch(epoch, student, teacher, None, cfg.tau, loss_sum, n_batches)
    return sess.result(student)


def _slt_count(mode: str) -> int:
    return 1 if mode == "slkd_single" else 2


def _fusion_weights(cfg: DistillConfig, count: int) -> tuple[float, ...]:
    return (1.0,) if count == 1 else (cfg.rho, 1.0 - cfg.rho)


def train_slkd(teacher: Model, student_spec: ModelSpec, data: tuple[Dataset, Dataset],
               schedule: Schedule, cfg: DistillConfig, seed: int) -> SessionResult:
    """Parallel co-training: self-learning teachers learn from the teacher
    while their fused output supervises the student, batch by batch."""
    if cfg.mode not in ("slkd", "slkd_single"):
        raise ContractError(f"train_slkd requires mode slkd or slkd_single, got {cfg.mode!r}")
    _check_compat(teacher, student_spec)
    train, test = data
    student = init_model(student_spec, _derive_seed(seed, _STUDENT_SALT))
    n_slt = _slt_count(cfg.mode)
    if n_slt < 1:
        raise ContractError("at least one self-learning teacher is required")
    slts = [clone_architecture(teacher, s) for s in _slt_seeds(seed, n_slt, teacher.param_seed)]
    weights = _fusion_weights(cfg, n_slt)

    s_state = OptimizerState.for_model(student)
    slt_states = [OptimizerState.for_model(m) for m in slts]
    sess = _Session(cfg.mode, _cfg_snapshot(cfg, schedule), train, test, schedule, seed)

    def slt_provider(x: Tensor) -> Tensor:
        return fuse_logits(weights, [forward(m, x) for m in slts])

    for epoch in range(schedule.epochs):
        lr = lr_at_epoch(schedule, epoch)
        loss_sum, n_batches = 0.0, 0
        for batch in sess.batches(epoch):
            loss_sum += self_learning_step(
                batch, teacher, student, slts, weights, cfg, s_state, slt_states,
                lr, schedule,
            )
            n_batches += 1
        sess.finish_epoch(epoch, student, teacher, slt_provider, cfg.tau, loss_sum, n_batches)
    return sess.result(student)


def self_learning_step(
    batch: Batch,
    teacher: Model,
    student: Model,
    slts: list[Model],
    weights: tuple[float, ...],
    cfg: DistillConfig,
    s_state: OptimizerState,
    slt_states: list[OptimizerState],
    lr: float,
    schedule: Schedule,
    update_order: tuple[int, ...] = (0, 1, 2),
) -> float:
    """One parallel co-training iteration; returns the student loss value.

    All forward passes and losses are computed first; the parameter updates
    are applied afterwards (index 0 = student, 1.. = SL-Ts in order), so
    ``update_order`` cannot change the outcome.
    """
    t_logits = forward(teacher, batch.features)

    slt_losses = []
    slt_logits = []
    for m in slts:
        with Tape():
            logits = forward(m, batch.features)
            slt_losses.append(distill_objective(batch.labels, logits, t_logits, cfg))
        slt_logits.append(logits.detach())
    fused = fuse_logits(weights, slt_logits)

    with Tape():
        s_logits = forward(student, batch.features)
        l_ts = distill_objective(batch.labels, s_logits, t_logits, cfg)
        l_slts = distill_objective(batch.labels, s_logits, fused, cfg)
        total = total_objective(l_ts, l_slts, cfg)

    grad_sets = [backward(total)] + [backward(l) for l in slt_losses]
    states = [s_state] + slt_states
    for idx in update_order:
        if idx - 1 >= len(slts):
            continue
        sgd_step(states[idx].params, grad_sets[idx], states[idx], lr,
                 schedule.momentum, schedule.weight_decay)
    return total.item()


def train_slt_only(teacher: Model, student_spec: ModelSpec, data: tuple[Dataset, Dataset],
                   schedule: Schedule, cfg: DistillConfig, seed: int) -> SessionResult:
    """Ablation: the student sees only the fused SL-T supervision (teacher
    branch weight forced to zero); SL-Ts still learn from the teacher."""
    forced = DistillConfig(
        alpha=cfg.alpha, tau=cfg.tau, lambda_w=0.0, eta_w=cfg.eta_w, rho=cfg.rho,
        mode="slkd", tau_squared=cfg.tau_squared,
    )
    result = train_slkd(teacher, student_spec, data, schedule, forced, seed)
    result.trajectory.mode = "slt_only"
    result.trajectory.config["mode"] = "slt_only"
    return result


def train_slkd_sequential(teacher: Model, student_spec: ModelSpec,
                          data: tuple[Dataset, Dataset], schedule: Schedule,
                          cfg: DistillConfig, seed: int) -> SessionResult:
    """Two-phase ablation: SL-Ts fully train against the teacher and freeze;
    the student then trains against the frozen fused target. The SL-T
    learning trajectory is thereby discarded."""
    if cfg.mode not in ("slkd_seq", "slkd", "slkd_single"):
        raise ContractError(f"train_slkd_sequential got unexpected mode {cfg.mode!r}")
    _check_compat(teacher, student_spec)
    train, test = data
    n_slt = 1 if cfg.mode == "slkd_single" else 2
    slts = [clone_architecture(teacher, s) for s in _slt_seeds(seed, n_slt, teacher.param_seed)]
    weights = _fusion_weights(cfg, n_slt)
    slt_states = [OptimizerState.for_model(m) for m in slts]

    # phase 1: the SL-Ts run the full schedule against the teacher
    for epoch in range(schedule.epochs):
        lr = lr_at_epoch(schedule, epoch)
        for batch in batch_iter(train, schedule.batch_size, seed, epoch):
            t_logits = forward(teacher, batch.features)
            losses = []
            for m in slts:
                with Tape():
                    logits = forward(m, batch.features)
                    losses.append(distill_objective(batch.labels, logits, t_logits, cfg))
            for m, st, loss in zip(slts, slt_states, losses):
                sgd_step(st.params, backward(loss), st, lr, schedule.momentum,
                         schedule.weight_decay)

    # phase 2: frozen fused target, student runs the full schedule again
    student = init_model(student_spec, _derive_seed(seed, _STUDENT_SALT))
    s_state = OptimizerState.for_model(student)
    sess = _Session("slkd_seq", _cfg_snapshot(cfg, schedule, {"mode": "slkd_seq"}),
                    train, test, schedule, seed)

    def slt_provider(x: Tensor) -> Tensor:
        return fuse_logits(weights, [forward(m, x) for m in slts])

    for epoch in range(schedule.epochs):
        lr = lr_at_epoch(schedule, epoch)
        loss_sum, n_batches = 0.0, 0
        for batch in sess.batches(epoch):
            t_logits = forward(teacher, batch.features)
            fused = slt_provider(batch.features)
            with Tape():
                s_logits = forward(student, batch.features)
                l_ts = distill_objective(batch.labels, s_logits, t_logits, cfg)
                l_slts = distill_objective(batch.labels, s_logits, fused, cfg)
                total = total_objective(l_ts, l_slts, cfg)
            grads = backward(total)
            sgd_step(s_state.params, grads, s_state, lr, schedule.momentum,
                     schedule.weight_decay)
            loss_sum += total.item()
            n_batches += 1
        sess.finish_epoch(epoch, student, teacher, slt_provider, cfg.tau, loss_sum, n_batches)
    return sess.result(student)


def run_mode(mode: str, teacher: Optional[Model], student_spec: ModelSpec,
             data: tuple[Dataset, Dataset], schedule: Schedule, cfg: DistillConfig,
             seed: int) -> SessionResult:
    """Dispatch a training session by mode name."""
    if mode == "scratch":
        return train_scratch(student_spec, data, schedule, seed)
    if teacher is None:
        raise ContractError(f"mode {mode!r} requires a teacher model")
    if mode == "kd":
        return train_kd(teacher, student_spec, data, schedule, cfg.with_mode("kd"), seed)
    if mode == "slkd":
        return train_slkd(teacher, student_spec, data, schedule, cfg.with_mode("slkd"), seed)
    if mode == "slkd_single":
        return train_slkd(teacher, student_spec, data, schedule, cfg.with_mode("slkd_single"), seed)
    if mode == "slt_only":
        return train_slt_only(teacher, student_spec, data, schedule, cfg.with_mode("slt_only"), seed)
    if mode == "slkd_seq":
        return train_slkd_sequential(teacher, student_spec, data, schedule,
                                     cfg.with_mode("slkd_seq"), seed)
    raise ContractError(f"unknown mode {mode!r}")
