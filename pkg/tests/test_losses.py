"""Objective values against hand-derived scalars, gradient checks, and the
detachment contract for supervision targets."""

import math
import random
from array import array

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdlab.errors import ContractError, DimensionError
from kdlab.gradcheck import REL_TOL, floored_rel_err
from kdlab.losses import (
    DistillConfig,
    cross_entropy,
    distill_objective,
    fuse_logits,
    kd_divergence,
    soft_kl,
    total_objective,
)
from kdlab.tensor import Tape, Tensor, backward, finite_diff_grad
from tests.conftest import rand_tensor

logit_rows = st.lists(
    st.lists(st.floats(-20, 20, allow_nan=False), min_size=2, max_size=5),
    min_size=1,
    max_size=4,
).filter(lambda rows: len({len(r) for r in rows}) == 1)


def _pair_same_shape(rows_a, rows_b):
    n = min(len(rows_a), len(rows_b))
    w = min(len(rows_a[0]), len(rows_b[0]))
    a = [r[:w] for r in rows_a[:n]]
    b = [r[:w] for r in rows_b[:n]]
    return Tensor.from_rows(a), Tensor.from_rows(b)


class TestCrossEntropy:
    def test_certain_correct_is_near_zero(self):
        logits = Tensor.from_rows([[1e4, 0.0, 0.0]])
        assert cross_entropy(logits, [0]).item() < 1e-12

    def test_uniform_logits_give_log_c(self):
        for c in (2, 4, 7):
            logits = Tensor.from_rows([[0.0] * c])
            assert abs(cross_entropy(logits, [1]).item() - math.log(c)) < 1e-12

    def test_two_class_example(self):
        # -ln(softmax([2,0])[1]) = ln(1 + e^2)
        logits = Tensor.from_rows([[2.0, 0.0]])
        expected = math.log(1.0 + math.exp(2.0))
        got = cross_entropy(logits, [1]).item()
        assert abs(got - expected) < 1e-12
        assert abs(got - 2.1269) < 1e-4

    def test_label_out_of_range(self):
        logits = Tensor.from_rows([[0.0, 0.0]])
        with pytest.raises(ContractError):
            cross_entropy(logits, [2])
        with pytest.raises(ContractError):
            cross_entropy(logits, [-1])


def _scalar_kl_two_class(t_logits, s_logits, tau):
    """Direct two-class evaluation used as the oracle."""

    def soft(pair):
        a, b = pair[0] / tau, pair[1] / tau
        za = math.exp(a) / (math.exp(a) + math.exp(b))
        return za, 1.0 - za

    p = soft(t_logits)
    q = soft(s_logits)
    return p[0] * math.log(p[0] / q[0]) + p[1] * math.log(p[1] / q[1])


class TestKdDivergence:
    def test_identical_logits_zero(self, rng):
        for tau in (1.0, 2.0, 4.0):
            x = rand_tensor(rng, (3, 5))
            assert kd_divergence(x, x.detach(), tau).item() == 0.0

    def test_two_class_example_tau_one(self):
        target = Tensor.from_rows([[2.0, 0.0]])
        student = Tensor.from_rows([[0.0, 2.0]])
        expected = _scalar_kl_two_class((2, 0), (0, 2), 1.0)
        got = kd_divergence(target, student, 1.0).item()
        assert abs(got - expected) < 1e-12
        assert abs(got - 1.5232) < 1e-4

    def test_tau_squared_convention(self):
        target = Tensor.from_rows([[2.0, 0.0]])
        student = Tensor.from_rows([[0.0, 2.0]])
        unscaled = kd_divergence(target, student, 4.0, tau_squared=False).item()
        scaled = kd_divergence(target, student, 4.0, tau_squared=True).item()
        assert abs(unscaled - _scalar_kl_two_class((2, 0), (0, 2), 4.0)) < 1e-12
        assert abs(scaled - 16.0 * unscaled) < 1e-12
        assert scaled > unscaled

    def test_batch_mean_reduction(self):
        one = kd_divergence(Tensor.from_rows([[2.0, 0.0]]), Tensor.from_rows([[0.0, 2.0]]), 1.0)
        two = kd_divergence(
            Tensor.from_rows([[2.0, 0.0], [2.0, 0.0]]),
            Tensor.from_rows([[0.0, 2.0], [0.0, 2.0]]),
            1.0,
        )
        assert abs(one.item() - two.item()) < 1e-12

    def test_bad_tau(self, rng):
        x = rand_tensor(rng, (2, 3))
        with pytest.raises(ContractError):
            kd_divergence(x, x, 0.0)
        with pytest.raises(ContractError):
            kd_divergence(x, x, -1.0)

    def test_rejects_attached_target(self, rng):
        student = rand_tensor(rng, (2, 3))
        target = rand_tensor(rng, (2, 3))
        with Tape() as tape:
            tape.watch(target)
            from kdlab.tensor import scale

            attached = scale(target, 2.0)
            with pytest.raises(ContractError):
                kd_divergence(attached, student, 2.0)

    @given(logit_rows, logit_rows)
    @settings(max_examples=30, deadline=None)
    def test_nonnegative(self, rows_a, rows_b):
        t, s = _pair_same_shape(rows_a, rows_b)
        assert kd_divergence(t, s, 3.0).item() >= 0.0

    @given(logit_rows, st.floats(-15, 15, allow_nan=False))
    @settings(max_examples=30, deadline=None)
    def test_shift_invariance_both_arguments(self, rows, c):
        t, s = _pair_same_shape(rows, [[v * 0.5 + 1 for v in r] for r in rows])
        base = kd_divergence(t, s, 2.0).item()
        shifted_t = Tensor.from_rows([[v + c for v in row] for row in t.tolist()])
        shifted_s = Tensor.from_rows([[v + c for v in row] for row in s.tolist()])
        assert abs(kd_divergence(shifted_t, s, 2.0).item() - base) < 1e-9
        assert abs(kd_divergence(t, shifted_s, 2.0).item() - base) < 1e-9

    def test_gradient_matches_finite_differences(self, rng):
        target = rand_tensor(rng, (3, 4))
        student = rand_tensor(rng, (3, 4))

        def value(t):
            return kd_divergence(target, t, 4.0).item()

        with Tape() as tape:
            tape.watch(student)
            loss = kd_divergence(target, student, 4.0)
        grads = backward(loss)
        fd = finite_diff_grad(value, student, 1e-5)
        assert floored_rel_err(grads[student], fd) < REL_TOL

    def test_no_gradient_reaches_target(self, rng):
        target = rand_tensor(rng, (3, 4))
        student = rand_tensor(rng, (3, 4))
        with Tape() as tape:
            tape.watch(target)
            tape.watch(student)
            loss = kd_divergence(target.detach(), student, 4.0)
        grads = backward(loss)
        assert all(v == 0.0 for v in grads[target].data)
        assert any(v != 0.0 for v in grads[student].data)


class TestDistillObjective:
    def test_alpha_one_equals_cross_entropy_exactly(self, rng):
        logits = rand_tensor(rng, (4, 5))
        target = rand_tensor(rng, (4, 5))
        labels = array("q", [rng.randrange(5) for _ in range(4)])
        cfg = DistillConfig(alpha=1.0, tau=4.0, mode="kd")
        assert (
            distill_objective(labels, logits, target, cfg).item()
            == cross_entropy(logits, labels).item()
        )

    def test_alpha_zero_identical_logits_zero(self, rng):
        logits = rand_tensor(rng, (3, 4))
        labels = array("q", [0, 1, 2])
        cfg = DistillConfig(alpha=0.0, tau=2.0, mode="kd")
        assert distill_objective(labels, logits, logits.detach(), cfg).item() == 0.0

    def test_recomposition(self, rng):
        cfg = DistillConfig(alpha=0.1, tau=4.0, mode="kd")
        student = rand_tensor(rng, (6, 4))
        target = rand_tensor(rng, (6, 4))
        labels = array("q", [rng.randrange(4) for _ in range(6)])
        combined = distill_objective(labels, student, target, cfg).item()
        ce = cross_entropy(student, labels).item()
        kd = kd_divergence(target, student, cfg.tau).item()
        assert abs(combined - (0.1 * ce + 0.9 * kd)) < 1e-12


class TestTotalObjective:
    def test_kd_recovered_when_eta_zero(self):
        cfg = DistillConfig(lambda_w=1.0, eta_w=0.0, mode="slkd")
        out = total_objective(Tensor.scalar(0.3), Tensor.scalar(0.5), cfg)
        assert out.item() == 0.3

    def test_slt_only_when_lambda_zero(self):
        cfg = DistillConfig(lambda_w=0.0, eta_w=1.0, mode="slkd")
        out = total_objective(Tensor.scalar(0.3), Tensor.scalar(0.5), cfg)
        assert out.item() == 0.5

    def test_sum_case(self):
        cfg = DistillConfig(lambda_w=1.0, eta_w=1.0, mode="slkd")
        out = total_objective(Tensor.scalar(0.3), Tensor.scalar(0.5), cfg)
        assert abs(out.item() - 0.8) < 1e-15

    def test_rejects_both_branch_weights_zero(self):
        with pytest.raises(ContractError):
            DistillConfig(lambda_w=0.0, eta_w=0.0, mode="slkd")


class TestFuseLogits:
    def test_degenerate_weight_returns_first(self, rng):
        l1, l2 = rand_tensor(rng, (2, 3)), rand_tensor(rng, (2, 3))
        fused = fuse_logits((1.0, 0.0), [l1, l2])
        assert fused.data == l1.data

    def test_symmetric_midpoint(self):
        l1 = Tensor.from_rows([[1.0, 3.0]])
        l2 = Tensor.from_rows([[3.0, 1.0]])
        assert fuse_logits((0.5, 0.5), [l1, l2]).tolist() == [[2.0, 2.0]]

    def test_seven_three_split(self):
        l1 = Tensor.from_rows([[1.0, 3.0]])
        l2 = Tensor.from_rows([[3.0, 1.0]])
        fused = fuse_logits((0.7, 0.3), [l1, l2])
        assert all(abs(a - b) < 1e-12 for a, b in zip(fused.data, [1.6, 2.4]))

    def test_weight_sum_violation(self, rng):
        ts = [rand_tensor(rng, (2, 2)), rand_tensor(rng, (2, 2))]
        with pytest.raises(ContractError):
            fuse_logits((0.7, 0.4), ts)
        with pytest.raises(ContractError):
            fuse_logits((1.2, -0.2), ts)

    def test_result_is_detached_even_from_taped_inputs(self, rng):
        x = rand_tensor(rng, (2, 2))
        with Tape() as tape:
            tape.watch(x)
            from kdlab.tensor import scale

            tracked = scale(x, 2.0)
            fused = fuse_logits((1.0,), [tracked])
            assert fused.node is None

    @given(logit_rows, logit_rows, st.floats(0, 1, allow_nan=False))
    @settings(max_examples=30, deadline=None)
    def test_permutation_consistency(self, rows_a, rows_b, w):
        a, b = _pair_same_shape(rows_a, rows_b)
        left = fuse_logits((w, 1.0 - w), [a, b])
        right = fuse_logits((1.0 - w, w), [b, a])
        assert all(abs(x - y) < 1e-12 for x, y in zip(left.data, right.data))


class TestSoftKl:
    def test_matches_unscaled_divergence(self, rng):
        t, s = rand_tensor(rng, (4, 3)), rand_tensor(rng, (4, 3))
        via_loss = kd_divergence(t, s, 4.0, tau_squared=False).item()
        assert abs(soft_kl(t, s, 4.0) - via_loss) < 1e-12

    def test_hand_value(self):
        got = soft_kl(Tensor.from_rows([[2.0, 0.0]]), Tensor.from_rows([[0.0, 2.0]]), 1.0)
        assert abs(got - 1.5232) < 1e-4


def test_config_validation():
    with pytest.raises(ContractError):
        DistillConfig(alpha=1.5)
    with pytest.raises(ContractError):
        DistillConfig(tau=0.0)
    with pytest.raises(ContractError):
        DistillConfig(rho=-0.1)
    with pytest.raises(ContractError):
        DistillConfig(mode="nope")
    with pytest.raises(ContractError):
        DistillConfig(lambda_w=-1.0)
