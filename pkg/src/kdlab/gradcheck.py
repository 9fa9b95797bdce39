"""Finite-difference verification of every differentiable operation and of
the full composite student objective with two self-learning teachers.

A gradient passes when |analytic − numeric| < max(1e-4·max(|a|,|n|), 1e-6),
which is the same as requiring the floored relative error
|a − n| / max(|a|, |n|, 1e-2) to stay below 1e-4.
"""

from __future__ import annotations

import random
from array import array
from dataclasses import dataclass

from kdlab.losses import (
    DistillConfig,
    cross_entropy,
    distill_objective,
    kd_divergence,
    total_objective,
)
from kdlab.models import ModelSpec, forward, init_model
from kdlab.tensor import (
    Tape,
    Tensor,
    add,
    add_bias,
    backward,
    finite_diff_grad,
    log_softmax_rows,
    matmul,
    mul,
    neg_mean_gather,
    reduce_sum,
    relu,
    scale,
    weighted_sum,
)

REL_TOL = 1e-4
ABS_FLOOR = 1e-6
_FLOOR_DENOM = ABS_FLOOR / REL_TOL


@dataclass(frozen=True)
class CheckResult:
    op: str
    max_rel_err: float
    passed: bool


def floored_rel_err(analytic: Tensor, numeric: Tensor) -> float:
    worst = 0.0
    for a, n in zip(analytic.data, numeric.data):
        denom = max(abs(a), abs(n), _FLOOR_DENOM)
        worst = max(worst, abs(a - n) / denom)
    return worst


def _rand_tensor(rng: random.Random, shape: tuple[int, ...], lo=-2.0, hi=2.0) -> Tensor:
    n = 1
    for s in shape:
        n *= s
    return Tensor(shape, array("d", (rng.uniform(lo, hi) for _ in range(n))))


def _rand_relu_safe(rng: random.Random, shape: tuple[int, ...]) -> Tensor:
    """Random values avoiding the kink region |x| < 1e-3."""
    n = 1
    for s in shape:
        n *= s
    vals = array("d")
    while len(vals) < n:
        v = rng.uniform(-2.0, 2.0)
        if abs(v) >= 1e-3:
            vals.append(v)
    return Tensor(shape, vals)


def _analytic_grad(build, x: Tensor) -> Tensor:
    """Gradient of a scalar-producing graph w.r.t. the watched input x."""
    with Tape() as tape:
        tape.watch(x)
        loss = build(x)
    return backward(loss)[x]


def _numeric_grad(build, x: Tensor, h: float) -> Tensor:
    return finite_diff_grad(lambda t: build(t).item(), x, h)


def _check(build, x: Tensor, h: float) -> float:
    return floored_rel_err(_analytic_grad(build, x), _numeric_grad(build, x, h))


def _weights_for(rng: random.Random, size: int) -> array:
    return array("d", (rng.uniform(-1.0, 1.0) for _ in range(size)))


def _labels_for(rng: random.Random, rows: int, classes: int) -> array:
    return array("q", (rng.randrange(classes) for _ in range(rows)))


def _op_cases(rng: random.Random, h: float) -> dict[str, float]:
    m, k, n = 3, 4, 2
    errs: dict[str, float] = {}

    a = _rand_tensor(rng, (m, k))
    b = _rand_tensor(rng, (k, n))
    errs["matmul_lhs"] = _check(lambda t: reduce_sum(matmul(t, b)), a, h)
    errs["matmul_rhs"] = _check(lambda t: reduce_sum(matmul(a, t)), b, h)

    x = _rand_tensor(rng, (m, k))
    bias = _rand_tensor(rng, (k,))
    w = _weights_for(rng, m * k)
    errs["add_bias_input"] = _check(lambda t: weighted_sum(add_bias(t, bias), w), x, h)
    errs["add_bias_bias"] = _check(lambda t: weighted_sum(add_bias(x, t), w), bias, h)

    xr = _rand_relu_safe(rng, (m, k))
    errs["relu"] = _check(lambda t: weighted_sum(relu(t), w), xr, h)

    xs = _rand_tensor(rng, (m, k), lo=-3.0, hi=3.0)
    errs["log_softmax_rows"] = _check(lambda t: weighted_sum(log_softmax_rows(t), w), xs, h)

    s = rng.uniform(-2.0, 2.0)
    errs["scale"] = _check(lambda t: weighted_sum(scale(t, s), w), x, h)

    y = _rand_tensor(rng, (m, k))
    errs["add"] = _check(lambda t: weighted_sum(add(t, y), w), x, h)
    errs["mul"] = _check(lambda t: weighted_sum(mul(t, y), w), x, h)
    errs["reduce_sum"] = _check(lambda t: reduce_sum(t), x, h)

    classes = 5
    logits = _rand_tensor(rng, (m, classes), lo=-3.0, hi=3.0)
    labels = _labels_for(rng, m, classes)
    errs["neg_mean_gather"] = _check(
        lambda t: neg_mean_gather(log_softmax_rows(t), labels), logits, h
    )
    errs["cross_entropy"] = _check(lambda t: cross_entropy(t, labels), logits, h)

    target = _rand_tensor(rng, (m, classes), lo=-3.0, hi=3.0)
    errs["kd_divergence"] = _check(
        lambda t: kd_divergence(target, t, 4.0), logits, h
    )
    cfg = DistillConfig(alpha=0.1, tau=4.0, mode="kd")
    errs["distill_objective"] = _check(
        lambda t: distill_objective(labels, t, target, cfg), logits, h
    )
    return errs


def _mlp_ce_case(rng: random.Random, h: float) -> dict[str, float]:
    """Full two-layer network cross-entropy gradient versus every parameter."""
    spec = ModelSpec(input_dim=4, hidden=(6,), classes=3)
    model = init_model(spec, rng.randrange(1 << 30))
    x = _rand_tensor(rng, (5, 4))
    labels = _labels_for(rng, 5, 3)

    def loss_with(candidate: Tensor, kind: str, idx: int) -> Tensor:
        store = model.weights if kind == "w" else model.biases
        saved = store[idx]
        store[idx] = candidate
        try:
            return cross_entropy(forward(model, x), labels)
        finally:
            store[idx] = saved

    with Tape() as tape:
        loss = cross_entropy(forward(model, x), labels)
    grads = backward(loss)

    worst = 0.0
    for kind, store in (("w", model.weights), ("b", model.biases)):
        for idx, p in enumerate(store):
            numeric = finite_diff_grad(lambda t: loss_with(t, kind, idx).item(), p, h)
            worst = max(worst, floored_rel_err(grads[p], numeric))
    return {"mlp_cross_entropy": worst}


def _slkd_total_case(rng: random.Random, h: float) -> dict[str, float]:
    """Composite student loss with a teacher target and two fused SL-Ts."""
    from kdlab.losses import fuse_logits

    spec_t = ModelSpec(input_dim=4, hidden=(6,), classes=3)
    spec_s = ModelSpec(input_dim=4, hidden=(3,), classes=3)
    teacher = init_model(spec_t, rng.randrange(1 << 30))
    slt1 = init_model(spec_t, rng.randrange(1 << 30))
    slt2 = init_model(spec_t, rng.randrange(1 << 30))
    student = init_model(spec_s, rng.randrange(1 << 30))
    x = _rand_tensor(rng, (5, 4))
    labels = _labels_for(rng, 5, 3)
    cfg = DistillConfig(alpha=0.1, tau=4.0, lambda_w=0.7, eta_w=0.9, rho=0.6, mode="slkd")

    t_logits = forward(teacher, x)
    fused = fuse_logits((cfg.rho, 1.0 - cfg.rho), [forward(slt1, x), forward(slt2, x)])

    def student_total() -> Tensor:
        s_logits = forward(student, x)
        l_ts = distill_objective(labels, s_logits, t_logits, cfg)
        l_slts = distill_objective(labels, s_logits, fused, cfg)
        return total_objective(l_ts, l_slts, cfg)

    def loss_with(candidate: Tensor, kind: str, idx: int) -> Tensor:
        store = student.weights if kind == "w" else student.biases
        saved = store[idx]
        store[idx] = candidate
        try:
            return student_total()
        finally:
            store[idx] = saved

    with Tape():
        loss = student_total()
    grads = backward(loss)

    worst = 0.0
    for kind, store in (("w", student.weights), ("b", student.biases)):
        for idx, p in enumerate(store):
            numeric = finite_diff_grad(lambda t: loss_with(t, kind, idx).item(), p, h)
            worst = max(worst, floored_rel_err(grads[p], numeric))

    # the SL-T branch objective trains each SL-T; check one of those too
    def slt_loss_with(candidate: Tensor, idx: int) -> Tensor:
        saved = slt1.weights[idx]
        slt1.weights[idx] = candidate
        try:
            return distill_objective(labels, forward(slt1, x), t_logits, cfg)
        finally:
            slt1.weights[idx] = saved

    with Tape():
        slt_loss = distill_objective(labels, forward(slt1, x), t_logits, cfg)
    slt_grads = backward(slt_loss)
    slt_worst = 0.0
    for idx, p in enumerate(slt1.weights):
        numeric = finite_diff_grad(lambda t: slt_loss_with(t, idx).item(), p, h)
        slt_worst = max(slt_worst, floored_rel_err(slt_grads[p], numeric))
    return {"slkd_total_student": worst, "slt_branch_objective": slt_worst}


def run_checks(n_seeds: int = 20, h: float = 1e-5, corrupt: bool = False) -> list[CheckResult]:
    """All gradient checks across seeds; one aggregated row per operation."""
    worst: dict[str, float] = {}
    for seed in range(n_seeds):
        rng = random.Random(seed)
        for case in (_op_cases, _mlp_ce_case, _slkd_total_case):
            for name, err in case(rng, h).items():
                worst[name] = max(worst.get(name, 0.0), err)
    if corrupt:
        # fault injection for the gate's own test: misreport one rule
        worst["matmul_lhs"] = max(worst.get("matmul_lhs", 0.0), 1.0)
    return [CheckResult(op, err, err < REL_TOL) for op, err in sorted(worst.items())]
