import numpy as np
import pytest
import torch

from robustdistill import (
    DistillLossConfig,
    ModelSpec,
    build_model,
    compute_loss,
    iga_term,
    input_gradient_ce,
    lambda_iga_from_batch,
)
from robustdistill.errors import InvalidCallError, InvalidConfigError, InvalidInputError


def _pair(seed_t=3, seed_s=4, width_t=6, width_s=5):
    teacher = build_model(ModelSpec("mlp-relu", (2,), 3, width=width_t, depth=1), seed=seed_t).freeze()
    student = build_model(ModelSpec("mlp-relu", (2,), 3, width=width_s, depth=1), seed=seed_s)
    return teacher, student


def _batch(rng, n=6, d=2, classes=3):
    return (torch.as_tensor(rng.uniform(0.1, 0.9, size=(n, d))),
            torch.as_tensor(rng.integers(0, classes, size=n)))


class TestConfig:
    def test_variant_invariants(self):
        with pytest.raises(InvalidConfigError):
            DistillLossConfig(variant="ST", lambda_kl=0.5)
        with pytest.raises(InvalidConfigError):
            DistillLossConfig(variant="KD", lambda_iga=0.1)
        with pytest.raises(InvalidConfigError):
            DistillLossConfig(variant="ARD", lambda_iga=0.1)
        with pytest.raises(InvalidConfigError):
            DistillLossConfig(variant="KD", temperature=0.0)
        with pytest.raises(InvalidConfigError):
            DistillLossConfig(variant="nope")

    def test_for_variant_zeroes_inapplicable(self):
        base = DistillLossConfig(variant="KDIGA", lambda_iga=0.2)
        st = base.for_variant("ST")
        assert st.lambda_kl == 0 and st.lambda_iga == 0
        kd = base.for_variant("KD")
        assert kd.lambda_kl == base.lambda_kl and kd.lambda_iga == 0


class TestLambdaFromBatch:
    def test_reference_settings(self):
        assert lambda_iga_from_batch(1000.0, 128) == 7.8125
        assert lambda_iga_from_batch(10.0, 125) == 0.08

    def test_zero_coefficient(self):
        assert lambda_iga_from_batch(0.0, 7) == 0.0

    def test_zero_batch(self):
        with pytest.raises(InvalidConfigError):
            lambda_iga_from_batch(10.0, 0)


class TestIgaTerm:
    def test_perfect_alignment_is_exactly_zero(self, rng):
        g = torch.as_tensor(rng.normal(size=(4, 3)))
        for agg in ("per-sample-mean", "whole-batch-norm"):
            assert float(iga_term(g, g.clone(), agg)) == 0.0

    def test_unit_offset_batch_of_one(self, rng):
        g = torch.as_tensor(rng.normal(size=(1, 4)))
        e = torch.as_tensor(rng.normal(size=(1, 4)))
        e = e / e.norm()
        for agg in ("per-sample-mean", "whole-batch-norm"):
            assert abs(float(iga_term(g + e, g, agg)) - 1.0) < 1e-12

    def test_whole_batch_norm_matches_elementwise_summation(self, rng):
        g_s = torch.as_tensor(rng.normal(size=(4, 5)))
        g_t = torch.as_tensor(rng.normal(size=(4, 5)))
        # independent oracle: explicit per-example sums of squares
        per_example_sq = [sum((g_s[i, j] - g_t[i, j]) ** 2 for j in range(5)) for i in range(4)]
        expect = float(np.sqrt(sum(float(v) for v in per_example_sq)))
        assert abs(float(iga_term(g_s, g_t, "whole-batch-norm")) - expect) < 1e-12
        expect_mean = float(np.mean([np.sqrt(float(v)) for v in per_example_sq]))
        assert abs(float(iga_term(g_s, g_t, "per-sample-mean")) - expect_mean) < 1e-12

    def test_shape_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            iga_term(torch.zeros(2, 3), torch.zeros(2, 4))

    def test_gradient_at_zero_difference_is_zero(self):
        g_s = torch.zeros(2, 3, requires_grad=True)
        g_t = torch.zeros(2, 3)
        for agg in ("per-sample-mean", "whole-batch-norm"):
            val = iga_term(g_s, g_t, agg)
            (grad,) = torch.autograd.grad(val, g_s)
            assert torch.isfinite(grad).all()
            assert float(grad.abs().max()) == 0.0


class TestComputeLoss:
    def test_breakdown_identity(self, rng):
        teacher, student = _pair()
        x, y = _batch(rng)
        cfg = DistillLossConfig(variant="KDIGA", lambda_ce=0.4, lambda_kl=0.35, lambda_iga=0.1, temperature=2.0)
        out = compute_loss(student, teacher, (x, y), cfg)
        recomposed = cfg.lambda_ce * out.ce_term + cfg.lambda_kl * cfg.temperature**2 * out.kl_term \
            + cfg.lambda_iga * out.iga_term
        assert abs(out.total_value - recomposed) <= 1e-10 * max(1.0, abs(recomposed))

    def test_perfect_student_terms_are_exactly_zero(self, rng):
        teacher, _ = _pair()
        student = teacher.snapshot().unfreeze()
        x, y = _batch(rng)
        cfg = DistillLossConfig(variant="KDIGA", lambda_iga=0.1)
        out = compute_loss(student, teacher, (x, y), cfg)
        assert out.kl_term == 0.0
        assert out.iga_term == 0.0
        assert abs(out.total_value - cfg.lambda_ce * out.ce_term) < 1e-15

    def test_reference_kd_configuration(self, rng):
        # the reference recipe: CE and KL coefficients both 0.5, temperature 1
        cfg = DistillLossConfig(variant="KD", lambda_ce=0.5, lambda_kl=0.5, temperature=1.0)
        teacher, student = _pair()
        x, y = _batch(rng)
        out = compute_loss(student, teacher, (x, y), cfg)
        assert abs(out.total_value - 0.5 * (out.ce_term + out.kl_term)) < 1e-12

    def test_ard_c_equals_ard_a_at_zero_delta(self, rng):
        teacher, student = _pair()
        x, y = _batch(rng)
        delta = torch.zeros_like(x)
        base = dict(lambda_ce=0.5, lambda_kl=0.5, lambda_iga=0.05, temperature=1.5)
        out_c = compute_loss(student, teacher, (x, y), DistillLossConfig(variant="KDIGA_ARD_C", **base), delta)
        out_a = compute_loss(student, teacher, (x, y), DistillLossConfig(variant="KDIGA_ARD_A", **base), delta)
        assert out_c.total_value == out_a.total_value

    def test_missing_delta_raises(self, rng):
        teacher, student = _pair()
        x, y = _batch(rng)
        for variant in ("ARD", "KDIGA_ARD_C", "KDIGA_ARD_A"):
            cfg = DistillLossConfig(variant=variant, lambda_iga=0.1 if variant != "ARD" else 0.0)
            with pytest.raises(InvalidCallError):
                compute_loss(student, teacher, (x, y), cfg)

    def test_unexpected_delta_raises(self, rng):
        teacher, student = _pair()
        x, y = _batch(rng)
        with pytest.raises(InvalidCallError):
            compute_loss(student, teacher, (x, y), DistillLossConfig(variant="KD"), torch.zeros_like(x))

    def test_variant_degeneracy_bit_for_bit(self, rng):
        teacher, student = _pair()
        x, y = _batch(rng)
        kd = compute_loss(student, teacher, (x, y), DistillLossConfig(variant="KD"))
        kdiga = compute_loss(student, teacher, (x, y), DistillLossConfig(variant="KDIGA", lambda_iga=0.0))
        assert kd.total_value == kdiga.total_value
        g_kd = torch.autograd.grad(kd.total, list(student.parameters()))
        g_ig = torch.autograd.grad(kdiga.total, list(student.parameters()))
        for a, b in zip(g_kd, g_ig):
            assert torch.equal(a, b)

    def test_teacher_gets_no_parameter_gradient(self, rng):
        teacher, student = _pair()
        teacher.unfreeze()  # even with grads enabled, no gradient may flow
        x, y = _batch(rng)
        cfg = DistillLossConfig(variant="KDIGA", lambda_iga=0.1)
        out = compute_loss(student, teacher, (x, y), cfg)
        grads = torch.autograd.grad(out.total, list(teacher.parameters()), allow_unused=True)
        assert all(g is None or float(g.abs().max()) == 0.0 for g in grads)

    def test_iga_scale_law(self, rng):
        teacher, student = _pair()
        x, y = _batch(rng)

        def extra(lam):
            cfg = DistillLossConfig(variant="KDIGA", lambda_ce=0.5, lambda_kl=0.5, lambda_iga=lam)
            out = compute_loss(student, teacher, (x, y), cfg)
            return out.total_value - 0.5 * out.ce_term - 0.5 * out.kl_term

        assert abs(extra(0.2) - 2 * extra(0.1)) < 1e-12

    def test_adversarial_wiring_moves_the_right_terms(self, rng):
        # ARD: KL compares student(x+delta) with teacher(x); CE stays clean.
        teacher, student = _pair()
        x, y = _batch(rng)
        delta = torch.as_tensor(rng.uniform(-0.05, 0.05, size=x.shape))
        out = compute_loss(student, teacher, (x, y), DistillLossConfig(variant="ARD"), delta)
        from robustdistill import cross_entropy, kl_with_temperature

        with torch.no_grad():
            ce = float(cross_entropy(student.logits(x), y))
            kl = float(kl_with_temperature(student.logits(x + delta), teacher.logits(x), 1.0))
        assert abs(out.ce_term - ce) < 1e-12
        assert abs(out.kl_term - kl) < 1e-12

    def test_kdiga_ard_a_uses_perturbed_gradients(self, rng):
        teacher, student = _pair()
        x, y = _batch(rng)
        delta = torch.as_tensor(rng.uniform(-0.05, 0.05, size=x.shape))
        out = compute_loss(student, teacher, (x, y),
                           DistillLossConfig(variant="KDIGA_ARD_A", lambda_iga=1.0), delta)
        g_s = input_gradient_ce(student, x + delta, y)
        g_t = input_gradient_ce(teacher, x + delta, y)
        assert abs(out.iga_term - float(iga_term(g_s, g_t))) < 1e-12
