"""Distillation objectives.

Five variants share one composer: plain supervised training (ST), standard
distillation (KD), distillation with input-gradient alignment (KDIGA),
adversarially robust distillation (ARD), and the two KDIGA/ARD combinations.
Every KL term carries the temperature-squared multiplier; the gradient
alignment term always uses temperature-free CE gradients. Terms with a zero
coefficient are skipped entirely, so e.g. KDIGA with a zero alignment weight
runs bit-for-bit identically to KD.
"""

from dataclasses import dataclass, replace

import torch

from .errors import InvalidCallError, InvalidConfigError, InvalidInputError
from .models import cross_entropy, input_gradient_ce, kl_with_temperature

VARIANTS = ("ST", "KD", "KDIGA", "ARD", "KDIGA_ARD_C", "KDIGA_ARD_A")
ADVERSARIAL_VARIANTS = ("ARD", "KDIGA_ARD_C", "KDIGA_ARD_A")
IGA_VARIANTS = ("KDIGA", "KDIGA_ARD_C", "KDIGA_ARD_A")
AGGREGATIONS = ("per-sample-mean", "whole-batch-norm")


@dataclass(frozen=True)
class DistillLossConfig:
    """Loss-variant selector and term weights.

    ``lambda_iga`` is the absolute weight of the alignment term; use
    :func:`lambda_iga_from_batch` to derive it from a batch-size-relative
    coefficient (the ``c / B`` convention).
    """

    variant: str = "KD"
    lambda_ce: float = 0.5
    lambda_kl: float = 0.5
    lambda_iga: float = 0.0
    temperature: float = 1.0
    iga_aggregation: str = "whole-batch-norm"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidConfigError(f"unknown loss variant {self.variant!r}; known: {VARIANTS}")
        if self.iga_aggregation not in AGGREGATIONS:
            raise InvalidConfigError(f"unknown iga aggregation {self.iga_aggregation!r}")
        if min(self.lambda_ce, self.lambda_kl, self.lambda_iga) < 0:
            raise InvalidConfigError("loss weights must be nonnegative")
        if not self.temperature > 0:
            raise InvalidConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.variant == "ST" and (self.lambda_kl != 0 or self.lambda_iga != 0):
            raise InvalidConfigError("ST requires lambda_kl = lambda_iga = 0")
        if self.variant in ("KD", "ARD") and self.lambda_iga != 0:
            raise InvalidConfigError(f"{self.variant} requires lambda_iga = 0")

    @property
    def adversarial(self) -> bool:
        return self.variant in ADVERSARIAL_VARIANTS

    def for_variant(self, variant: str) -> "DistillLossConfig":
        """Same weights re-targeted at ``variant``, zeroing inapplicable terms."""
        kl = 0.0 if variant == "ST" else self.lambda_kl
        iga = self.lambda_iga if variant in IGA_VARIANTS else 0.0
        return replace(self, variant=variant, lambda_kl=kl, lambda_iga=iga)


def lambda_iga_from_batch(c: float, batch_size: int) -> float:
    """Batch-relative alignment weight ``c / B``."""
    if batch_size < 1:
        raise InvalidConfigError(f"batch size must be >= 1, got {batch_size}")
    return c / batch_size


@dataclass
class LossBreakdown:
    """Composite loss and its unweighted terms.

    ``total`` keeps the autograd graph; the term fields are plain floats with
    ``total == lambda_ce * ce + lambda_kl * T^2 * kl + lambda_iga * iga``.
    Terms that were skipped (zero coefficient) are reported as 0.0.
    """

    total: torch.Tensor
    ce_term: float
    kl_term: float
    iga_term: float

    @property
    def total_value(self) -> float:
        return float(self.total.detach())


def _safe_l2_norm(sumsq: torch.Tensor) -> torch.Tensor:
    """sqrt that defines the gradient at exactly zero as zero (subgradient choice).

    The naive ``sqrt(sum(d^2))`` backward produces NaN at d = 0, which would
    poison double backprop on a perfectly aligned batch.
    """
    zero = sumsq == 0
    guarded = torch.where(zero, torch.ones_like(sumsq), sumsq)
    return torch.where(zero, torch.zeros_like(sumsq), torch.sqrt(guarded))


def iga_term(g_s: torch.Tensor, g_t: torch.Tensor, aggregation: str = "whole-batch-norm") -> torch.Tensor:
    """l2 misalignment between student and teacher input gradients.

    ``whole-batch-norm`` takes a single norm over the concatenated batch
    difference; ``per-sample-mean`` averages per-example norms. The teacher
    gradient is treated as a constant.
    """
    if aggregation not in AGGREGATIONS:
        raise InvalidConfigError(f"unknown iga aggregation {aggregation!r}")
    if g_s.shape != g_t.shape:
        raise InvalidInputError(f"gradient shapes differ: {tuple(g_s.shape)} vs {tuple(g_t.shape)}")
    diff = g_s - g_t.detach()
    if diff.dim() == 0:
        diff = diff.reshape(1, 1)
    flat = diff.reshape(diff.shape[0], -1)
    if aggregation == "whole-batch-norm":
        return _safe_l2_norm((flat * flat).sum())
    return _safe_l2_norm((flat * flat).sum(dim=1)).mean()


def _unpack_batch(batch):
    if isinstance(batch, (tuple, list)) and len(batch) == 2:
        return batch[0], batch[1]
    return batch.x, batch.y


def compute_loss(student, teacher, batch, config: DistillLossConfig, delta=None) -> LossBreakdown:
    """Compose the configured objective on one batch.

    ``delta`` is the inner-maximization perturbation and is required exactly
    for the adversarial variants; it is treated as a constant. Term wiring:

    - ST / KD / KDIGA evaluate everything on clean inputs.
    - ARD and KDIGA_ARD_C move only the student's KL input to ``x + delta``
      (teacher stays clean); KDIGA_ARD_C adds clean-gradient alignment.
    - KDIGA_ARD_A evaluates both KL inputs and both alignment gradients at
      ``x + delta``; its CE term stays clean.
    """
    x, y = _unpack_batch(batch)
    if config.adversarial and delta is None:
        raise InvalidCallError(f"variant {config.variant} requires the perturbation batch delta")
    if not config.adversarial and delta is not None:
        raise InvalidCallError(f"variant {config.variant} does not take a perturbation batch")

    x = torch.as_tensor(x, dtype=student.dtype) if not isinstance(x, torch.Tensor) else x
    if delta is not None:
        delta = torch.as_tensor(delta, dtype=x.dtype) if not isinstance(delta, torch.Tensor) else delta
        if delta.shape != x.shape:
            raise InvalidInputError("delta shape does not match the batch")
        delta = delta.detach()
        x_adv = x + delta

    zero = torch.zeros((), dtype=student.dtype)
    ce = kl = iga = None
    s_clean = None

    if config.lambda_ce > 0:
        s_clean = student.logits(x)
        ce = cross_entropy(s_clean, y, reduction="mean")

    if config.lambda_kl > 0:
        if config.variant in ("KD", "KDIGA"):
            if s_clean is None:
                s_clean = student.logits(x)
            s_for_kl = s_clean
        else:
            s_for_kl = student.logits(x_adv)
        with torch.no_grad():
            t_for_kl = teacher.logits(x_adv if config.variant == "KDIGA_ARD_A" else x)
        kl = kl_with_temperature(s_for_kl, t_for_kl, config.temperature, reduction="mean")

    if config.lambda_iga > 0 and config.variant in IGA_VARIANTS:
        grad_input = x_adv if config.variant == "KDIGA_ARD_A" else x
        g_s = input_gradient_ce(student, grad_input, y, create_graph=True)
        g_t = input_gradient_ce(teacher, grad_input, y, create_graph=False).detach()
        iga = iga_term(g_s, g_t, config.iga_aggregation)

    total = zero
    if ce is not None:
        total = total + config.lambda_ce * ce
    if kl is not None:
        total = total + config.lambda_kl * config.temperature**2 * kl
    if iga is not None:
        total = total + config.lambda_iga * iga

    return LossBreakdown(
        total=total,
        ce_term=float(ce.detach()) if ce is not None else 0.0,
        kl_term=float(kl.detach()) if kl is not None else 0.0,
        iga_term=float(iga.detach()) if iga is not None else 0.0,
    )
