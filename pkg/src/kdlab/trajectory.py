"""Per-epoch divergence and accuracy tracking among student, teacher, and
the fused self-learning-teacher target.

Measurements run on a fixed held-out probe set, never on training batches,
and are taken at epoch end after all networks have stepped. The logged KL
uses the same target-first direction and temperature as the training losses,
so the numbers are the actual optimization pressure.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, field
from typing import Callable, Optional

from kdlab.data import Dataset
from kdlab.errors import ContractError, ParseError
from kdlab.losses import soft_kl
from kdlab.models import Model, argmax_logits, forward
from kdlab.tensor import Tensor

CSV_HEADER = "epoch,kl_student_teacher,kl_student_slt,acc_student,acc_slt,acc_teacher"

LogitsProvider = Callable[[Tensor], Tensor]


@dataclass(frozen=True)
class TrajectoryRecord:
    epoch: int
    kl_student_teacher: float
    kl_student_slt: float
    acc_student: float
    acc_slt: float
    acc_teacher: float

    def __post_init__(self):
        for name in ("kl_student_teacher", "kl_student_slt"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise ContractError(f"{name} must be finite and nonnegative, got {v!r}")
        for name in ("acc_student", "acc_slt", "acc_teacher"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{name} must lie in [0,1], got {v!r}")


@dataclass
class TrajectoryLog:
    mode: str
    config: dict
    records: list[TrajectoryRecord] = field(default_factory=list)

    def append(self, record: TrajectoryRecord) -> "TrajectoryLog":
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ContractError(
                f"epoch {record.epoch} does not advance past {self.records[-1].epoch}"
            )
        self.records.append(record)
        return self

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.kl_student_teacher:.17g},{r.kl_student_slt:.17g},"
                f"{r.acc_student:.17g},{r.acc_slt:.17g},{r.acc_teacher:.17g}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_csv())


def parse_csv(text: str) -> list[TrajectoryRecord]:
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise ParseError(f"bad trajectory header: {lines[0] if lines else '<empty>'!r}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 6:
            raise ParseError(f"line {lineno}: expected 6 fields, got {len(parts)}")
        try:
            records.append(
                TrajectoryRecord(
                    int(parts[0]), *(float(p) for p in parts[1:])
                )
            )
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    return records


def accuracy_from_logits(logits: Tensor, labels: array) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    pred = argmax_logits(logits)
    hits = sum(1 for p, y in zip(pred, labels) if p == y)
    return hits / len(labels)


def epoch_divergences(
    epoch: int,
    student: Model,
    teacher: Optional[Model],
    slt_logits_provider: Optional[LogitsProvider],
    probe_set: Dataset,
    tau: float,
) -> TrajectoryRecord:
    """Evaluation-only snapshot on the probe set; mutates nothing.

    ``teacher`` or ``slt_logits_provider`` may be None (modes without that
    supervision source); the corresponding columns log 0.0.
    """
    if probe_set.n < 1:
        raise ContractError("probe set must be nonempty")
    x = probe_set.features
    s_logits = forward(student, x)
    acc_student = accuracy_from_logits(s_logits, probe_set.labels)

    kl_st = 0.0
    acc_teacher = 0.0
    if teacher is not None:
        t_logits = forward(teacher, x)
        kl_st = soft_kl(t_logits, s_logits, tau)
        acc_teacher = accuracy_from_logits(t_logits, probe_set.labels)

    kl_slt = 0.0
    acc_slt = 0.0
    if slt_logits_provider is not None:
        slt_logits = slt_logits_provider(x)
        kl_slt = soft_kl(slt_logits, s_logits, tau)
        acc_slt = accuracy_from_logits(slt_logits, probe_set.labels)

    return TrajectoryRecord(epoch, kl_st, kl_slt, acc_student, acc_slt, acc_teacher)
