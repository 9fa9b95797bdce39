"""Scalar training objectives: cross-entropy, softened KL distillation,
their weighted compositions, and supervision-target fusion.

Supervision targets are always detached; each objective minimizes over one
network's parameters only, so no gradient may leak into the target network.
Batch reductions are means, keeping the weight knobs meaningful regardless
of batch size.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, replace
from typing import Sequence

from kdlab import _kernels as K
from kdlab.errors import ContractError, DimensionError
from kdlab.tensor import (
    Tensor,
    add,
    add_const,
    log_softmax_rows,
    neg_mean_gather,
    scale,
    weighted_sum,
)

MODES = ("scratch", "kd", "slkd", "slkd_seq", "slt_only", "slkd_single")


@dataclass(frozen=True)
class DistillConfig:
    """All scalar knobs of the distillation objectives.

    alpha mixes hard-label CE against the softened-KL term inside each
    branch objective; tau is the softening temperature; lambda_w and eta_w
    weight the teacher branch and the self-learning-teacher branch of the
    student's total loss; rho is the convex fusion weight over the two
    self-learning teachers. tau_squared selects the conventional tau^2
    rescaling of the KL term (off gives the raw softened KL).
    """

    alpha: float = 0.1
    tau: float = 4.0
    lambda_w: float = 1.0
    eta_w: float = 1.0
    rho: float = 0.5
    mode: str = "slkd"
    tau_squared: bool = True

    def __post_init__(self):
        for name in ("alpha", "tau", "lambda_w", "eta_w", "rho"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ContractError(f"{name} must be finite, got {v!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0,1], got {self.alpha}")
        if self.tau <= 0.0:
            raise ContractError(f"tau must be positive, got {self.tau}")
        if self.lambda_w < 0.0 or self.eta_w < 0.0:
            raise ContractError("lambda_w and eta_w must be nonnegative")
        if not 0.0 <= self.rho <= 1.0:
            raise ContractError(f"rho must lie in [0,1], got {self.rho}")
        if self.mode not in MODES:
            raise ContractError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.mode in ("slkd", "slkd_seq", "slkd_single") and self.lambda_w == 0.0 and self.eta_w == 0.0:
            raise ContractError("at least one of lambda_w, eta_w must be positive in slkd modes")

    def with_mode(self, mode: str) -> "DistillConfig":
        return replace(self, mode=mode)


def _as_label_array(labels: Sequence[int] | array, classes: int) -> array:
    out = labels if isinstance(labels, array) and labels.typecode == "q" else array("q", labels)
    for i, v in enumerate(out):
        if not 0 <= v < classes:
            raise ContractError(f"label {v} at row {i} outside [0, {classes})")
    return out


def cross_entropy(logits: Tensor, labels: Sequence[int] | array) -> Tensor:
    """Mean over the batch of −log softmax(logits)[label]."""
    if len(logits.shape) != 2:
        raise DimensionError(f"logits must be 2-D, got {logits.shape}")
    lab = _as_label_array(labels, logits.shape[1])
    if len(lab) != logits.shape[0]:
        raise DimensionError(f"{len(lab)} labels for {logits.shape[0]} rows")
    return neg_mean_gather(log_softmax_rows(logits), lab)


def kd_divergence(
    target_logits: Tensor,
    student_logits: Tensor,
    tau: float,
    *,
    tau_squared: bool = True,
) -> Tensor:
    """Mean softened KL(target ‖ student), optionally times tau².

    The target logits must be detached: they are a fixed supervision signal
    and contribute no gradient.
    """
    if tau is None or not math.isfinite(tau) or tau <= 0.0:
        raise ContractError(f"tau must be positive and finite, got {tau!r}")
    if target_logits.shape != student_logits.shape:
        raise DimensionError(
            f"logit shapes disagree: {target_logits.shape} vs {student_logits.shape}"
        )
    if len(target_logits.shape) != 2:
        raise DimensionError(f"logits must be 2-D, got {target_logits.shape}")
    if target_logits.node is not None:
        raise ContractError("target logits must be detached from any tape")
    m, n = target_logits.shape

    target_logp = log_softmax_rows(scale(target_logits, 1.0 / tau))
    target_p = array("d", bytes(8 * m * n))
    K.exp_v(target_logp.data, target_p, m * n)
    # Σ p·log p over the whole batch: the student-independent part of the KL
    entropy_term = K.vdot(target_p, target_logp.data, m * n)

    student_logp = log_softmax_rows(scale(student_logits, 1.0 / tau))
    cross = weighted_sum(student_logp, target_p)

    factor = ((tau * tau) if tau_squared else 1.0) / m
    out = scale(add_const(scale(cross, -1.0), entropy_term), factor)
    if out.data[0] < 0.0:
        # cancellation noise on near-identical softened distributions; the
        # true divergence is nonnegative, and no backward rule reads out.data
        out.data[0] = 0.0
    return out


def distill_objective(
    labels: Sequence[int] | array,
    student_logits: Tensor,
    target_logits: Tensor,
    cfg: DistillConfig,
) -> Tensor:
    """alpha·CE(labels, student) + (1−alpha)·KL(target ‖ student)."""
    ce = cross_entropy(student_logits, labels)
    kd = kd_divergence(target_logits, student_logits, cfg.tau, tau_squared=cfg.tau_squared)
    return add(scale(ce, cfg.alpha), scale(kd, 1.0 - cfg.alpha))


def total_objective(l_ts: Tensor, l_slts: Tensor, cfg: DistillConfig) -> Tensor:
    """lambda·L_teacher-branch + eta·L_slt-branch for the student step."""
    for name, t in (("teacher-branch", l_ts), ("slt-branch", l_slts)):
        if t.shape != ():
            raise ContractError(f"{name} loss must be scalar, got shape {t.shape}")
        if not math.isfinite(t.item()):
            raise ContractError(f"{name} loss is not finite: {t.item()!r}")
    return add(scale(l_ts, cfg.lambda_w), scale(l_slts, cfg.eta_w))


def fuse_logits(weights: Sequence[float], logit_list: Sequence[Tensor]) -> Tensor:
    """Convex combination of same-shape logit tensors; the result is detached."""
    if len(weights) != len(logit_list) or not logit_list:
        raise ContractError(
            f"need matching nonempty weights and logits, got {len(weights)} and {len(logit_list)}"
        )
    ws = [float(w) for w in weights]
    if any(w < 0.0 for w in ws):
        raise ContractError(f"fusion weights must be nonnegative, got {ws}")
    if abs(math.fsum(ws) - 1.0) > 1e-9:
        raise ContractError(f"fusion weights must sum to 1, got sum {math.fsum(ws)!r}")
    shape = logit_list[0].shape
    for t in logit_list[1:]:
        if t.shape != shape:
            raise DimensionError(f"fused logits shapes disagree: {shape} vs {t.shape}")
    out = array("d", bytes(8 * logit_list[0].size))
    for w, t in zip(ws, logit_list):
        K.axpy(out, t.data, w, t.size)
    return Tensor(shape, out)


def soft_kl(target_logits: Tensor, student_logits: Tensor, tau: float) -> float:
    """Plain mean softened KL(target ‖ student) as a float, for tracking.

    Same direction and temperature as the training losses but without the
    tau² loss-scaling convention (it would cancel in any comparison).
    """
    if target_logits.shape != student_logits.shape or len(target_logits.shape) != 2:
        raise DimensionError(
            f"logit shapes disagree: {target_logits.shape} vs {student_logits.shape}"
        )
    if tau <= 0.0:
        raise ContractError(f"tau must be positive, got {tau}")
    m, n = target_logits.shape
    t_logp = log_softmax_rows(scale(target_logits.detach(), 1.0 / tau))
    s_logp = log_softmax_rows(scale(student_logits.detach(), 1.0 / tau))
    p = array("d", bytes(8 * m * n))
    K.exp_v(t_logp.data, p, m * n)
    total = K.vdot(p, t_logp.data, m * n) - K.vdot(p, s_logp.data, m * n)
    # cancellation can leave a -1e-18 residue on near-identical inputs
    return max(0.0, total / m)
