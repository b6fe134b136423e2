"""l-infinity PGD attack, the box clip operator, and the inner maximization.

Attacks are deterministic given the spec's seed: each restart draws from its
own derived substream, so the best-of-k result over restarts is monotone in k
for a fixed seed. sgn(0) is 0, and every iterate is clipped back into the
epsilon ball intersected with the data range.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import CapabilityError, InvalidConfigError, InvalidInputError, NonFiniteGradientError
from .models import cross_entropy
from .seeding import substream_seed

FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class AttackSpec:
    """Parameters of an l-infinity PGD attack.

    ``alpha=None`` selects the conventional evaluation step size
    ``2.5 * epsilon / steps``. ``random_start`` defaults to off so that
    evaluation attacks are deterministic.
    """

    epsilon: float
    steps: int = 20
    alpha: float = None
    clip_min: float = 0.0
    clip_max: float = 1.0
    random_start: bool = False
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidConfigError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.steps < 0:
            raise InvalidConfigError("steps must be >= 0")
        if self.alpha is not None and not self.alpha > 0:
            raise InvalidConfigError("alpha must be > 0 when given")
        if not self.clip_min < self.clip_max:
            raise InvalidConfigError("clip_min must be < clip_max")
        if self.restarts < 1:
            raise InvalidConfigError("restarts must be >= 1")

    @property
    def step_size(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return 2.5 * self.epsilon / max(1, self.steps)


@dataclass
class AdversarialBatch:
    """Attack output: perturbed inputs plus per-example achieved loss and success.

    ``success`` marks examples whose adversarial prediction no longer matches
    the label. Invariants (validated on construction): the perturbation stays
    inside the epsilon box and the data range elementwise.
    """

    x: torch.Tensor
    x_adv: torch.Tensor
    loss: torch.Tensor
    success: torch.Tensor
    spec: AttackSpec

    def __post_init__(self):
        validate_feasibility(self.x, self.x_adv, self.spec)

    @property
    def delta(self) -> torch.Tensor:
        return self.x_adv - self.x


def validate_feasibility(x, x_adv, spec: AttackSpec, tol: float = FEASIBILITY_TOL):
    """Raise unless ``x_adv`` satisfies the ball and range constraints elementwise."""
    gap = (x_adv - x).abs().max().item() if x_adv.numel() else 0.0
    if gap > spec.epsilon + tol:
        raise InvalidInputError(f"adversarial batch leaves the epsilon ball: |delta|_inf = {gap}")
    if x_adv.numel():
        lo, hi = x_adv.min().item(), x_adv.max().item()
        if lo < spec.clip_min - tol or hi > spec.clip_max + tol:
            raise InvalidInputError(f"adversarial batch leaves the data range: [{lo}, {hi}]")


def clip_to_ball_and_range(x_candidate: torch.Tensor, x_0: torch.Tensor, spec: AttackSpec) -> torch.Tensor:
    """Project onto ``[x_0 - eps, x_0 + eps]`` intersected with the data range.

    Idempotent and the identity on already-feasible points.
    """
    if x_candidate.shape != x_0.shape:
        raise InvalidInputError("candidate and reference shapes differ")
    lower = torch.clamp(x_0 - spec.epsilon, min=spec.clip_min)
    upper = torch.clamp(x_0 + spec.epsilon, max=spec.clip_max)
    return torch.min(torch.max(x_candidate, lower), upper)


def _ce_objective(model, x_adv, y):
    return cross_entropy(model.logits(x_adv), y, reduction="none")


def _argmax_lowest(logits: torch.Tensor) -> torch.Tensor:
    # torch.argmax returns the first maximal index, i.e. ties break low.
    return torch.argmax(logits, dim=-1)


def pgd_attack(model, x, y, spec: AttackSpec, objective=None) -> AdversarialBatch:
    """Iterative sign-gradient ascent with projection after every step.

    ``objective(model, x_adv, y)`` must return per-example losses; the default
    is cross-entropy against the true label. With multiple restarts the
    per-example result with the highest achieved loss is kept.
    """
    objective = objective or _ce_objective
    x0 = torch.as_tensor(np.asarray(x), dtype=model.dtype) if not isinstance(x, torch.Tensor) else x.to(model.dtype)
    x0 = x0.detach()
    yt = torch.as_tensor(np.asarray(y), dtype=torch.long).reshape(-1)
    if not torch.isfinite(x0).all():
        raise InvalidInputError("attack input contains non-finite values")

    best_x = None
    best_loss = None
    for restart in range(spec.restarts):
        gen = torch.Generator()
        gen.manual_seed(substream_seed(spec.seed, "pgd-restart", restart))
        if spec.random_start and spec.epsilon > 0:
            noise = (torch.rand(x0.shape, generator=gen, dtype=x0.dtype) * 2 - 1) * spec.epsilon
            x_adv = clip_to_ball_and_range(x0 + noise, x0, spec)
        else:
            x_adv = x0.clone()

        for _ in range(spec.steps):
            x_adv = x_adv.detach().requires_grad_(True)
            with torch.enable_grad():
                loss = objective(model, x_adv, yt).sum()
            (grad,) = torch.autograd.grad(loss, x_adv, allow_unused=True)
            if grad is None:
                grad = torch.zeros_like(x_adv)
            finite = torch.isfinite(grad.reshape(grad.shape[0], -1)).all(dim=1)
            if not finite.all():
                bad = torch.nonzero(~finite).reshape(-1).tolist()
                raise NonFiniteGradientError(
                    f"non-finite attack gradient for example(s) {bad}", example_indices=bad
                )
            x_adv = clip_to_ball_and_range(x_adv.detach() + spec.step_size * torch.sign(grad), x0, spec)

        with torch.no_grad():
            achieved = objective(model, x_adv, yt)
        if best_loss is None:
            best_x, best_loss = x_adv, achieved
        else:
            better = achieved > best_loss
            mask = better.reshape((-1,) + (1,) * (x_adv.dim() - 1))
            best_x = torch.where(mask, x_adv, best_x)
            best_loss = torch.where(better, achieved, best_loss)

    with torch.no_grad():
        preds = _argmax_lowest(model.logits(best_x))
    return AdversarialBatch(x=x0, x_adv=best_x.detach(), loss=best_loss.detach(), success=preds != yt, spec=spec)


def inner_max_delta(student, x, y, spec: AttackSpec, objective=None) -> torch.Tensor:
    """Inner-maximization perturbation computed against the student."""
    return pgd_attack(student, x, y, spec, objective=objective).delta


# ---------------------------------------------------------------------------
# External attack adapter slot
# ---------------------------------------------------------------------------

_ATTACK_REGISTRY = {"pgd": pgd_attack}


def register_attack(name: str, fn):
    """Register an external attack adapter: (model, x, y, spec) -> AdversarialBatch.

    Adapter results must satisfy the AdversarialBatch feasibility invariants;
    the evaluation harness re-validates them.
    """
    _ATTACK_REGISTRY[str(name)] = fn


def get_attack(name: str):
    try:
        return _ATTACK_REGISTRY[str(name)]
    except KeyError:
        raise CapabilityError(
            f"attack {name!r} is not implemented; it is an external adapter slot -- "
            f"use register_attack() to plug one in (registered: {sorted(_ATTACK_REGISTRY)})"
        )


# Reserved adapter name for the external ensemble attack; intentionally has no
# built-in implementation.
AUTOATTACK_SLOT = "autoattack"
