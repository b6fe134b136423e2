"""Robust-accuracy evaluation over a radius ladder.

An example counted broken at a smaller radius stays broken at every larger
one: the smaller perturbation is a feasible certificate at the larger radius.
This makes the reported robust accuracy non-increasing in the radius by
construction for deterministic attacks.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .attacks import AttackSpec, get_attack, validate_feasibility
from .errors import InvalidConfigError
from .seeding import substream_seed

REPORT_SCHEMA = "robustness-report-v1"


@dataclass
class RobustnessReport:
    model_id: str
    clean_accuracy: float
    robust: dict  # radius -> robust accuracy
    attack: dict  # attack metadata (name, steps, restarts, ...)
    n_examples: int
    teacher_reference: dict = None
    timing: dict = field(default_factory=dict)  # excluded from determinism comparisons

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "model_id": self.model_id,
            "clean_accuracy": self.clean_accuracy,
            "robust": {f"{r:.10g}": acc for r, acc in self.robust.items()},
            "attack": self.attack,
            "n_examples": self.n_examples,
            "teacher_reference": self.teacher_reference,
            "timing": self.timing,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RobustnessReport":
        d = json.loads(text)
        if d.pop("schema", None) != REPORT_SCHEMA:
            raise InvalidConfigError("unknown robustness report schema")
        d["robust"] = {float(k): v for k, v in d["robust"].items()}
        return cls(**d)


def subsample_indices(n: int, k, seed: int) -> np.ndarray:
    """Deterministic evaluation subsample: first k of a seeded permutation, sorted."""
    if k is None or k >= n:
        return np.arange(n)
    order = np.random.default_rng(substream_seed(seed, "eval-subsample")).permutation(n)
    return np.sort(order[: int(k)])


def evaluate(model, examples, radii, attack: AttackSpec = None, attack_name: str = "pgd",
             subsample: int = None, seed: int = 0, model_id: str = "model",
             teacher_reference: dict = None) -> RobustnessReport:
    """Clean accuracy plus robust accuracy at each radius of the ladder.

    ``attack`` is a template whose epsilon is replaced by each radius (its
    seed is re-derived per radius). Ties in the argmax break toward the lowest
    class index. Radius 0 reproduces the clean accuracy exactly.
    """
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise InvalidConfigError("radius ladder must be strictly increasing")
    template = attack or AttackSpec(epsilon=0.0, steps=20)
    attack_fn = get_attack(attack_name)

    idx = subsample_indices(len(examples), subsample, seed)
    x = torch.as_tensor(examples.x[idx], dtype=model.dtype)
    y = np.asarray(examples.y[idx])
    yt = torch.as_tensor(y, dtype=torch.long)

    with torch.no_grad():
        clean_preds = torch.argmax(model.logits(x), dim=-1).numpy()
    clean_acc = float((clean_preds == y).mean())

    broken = clean_preds != y  # carried forward: a certificate at radius r holds at r' > r
    robust = {}
    for i, r in enumerate(radii):
        spec = replace(template, epsilon=r, seed=substream_seed(seed, "eval-attack", i))
        batch = attack_fn(model, x, yt, spec)
        validate_feasibility(batch.x, batch.x_adv, spec)
        with torch.no_grad():
            adv_preds = torch.argmax(model.logits(batch.x_adv), dim=-1).numpy()
        broken = broken | (adv_preds != y)
        robust[r] = float((~broken).mean())

    return RobustnessReport(
        model_id=model_id,
        clean_accuracy=clean_acc,
        robust=robust,
        attack={
            "name": attack_name,
            "steps": template.steps,
            "alpha": template.alpha,
            "random_start": template.random_start,
            "restarts": template.restarts,
            "subsample": None if subsample is None else int(subsample),
        },
        n_examples=int(len(idx)),
        teacher_reference=teacher_reference,
    )
