"""Built-in verification suites behind the ``verify`` CLI verb.

Each suite re-derives a core guarantee on freshly built models: the
softmax/Jacobian form of the CE input gradient, the two-model bound
inequality under grid-exact linearity measurement, and the prediction-
stability checker against the closed-form margin of a linear classifier.
"""

import numpy as np
import torch

from .analysis import (
    check_delta_robust,
    check_delta_robust_ladder,
    gradient_identity_residual,
    verify_bound,
)
from .models import ModelSpec, build_model
from .seeding import numpy_generator

GRADIENT_IDENTITY_TOL = 1e-5


def _zoo_samples(seed, count, families=("linear", "mlp-relu", "cnn-relu", "tiny-attention")):
    rng = numpy_generator(seed, "selfcheck-zoo")
    for i in range(count):
        family = families[i % len(families)]
        shape = (4, 4, 1) if family == "cnn-relu" else (3,)
        spec = ModelSpec(family=family, input_shape=shape, num_classes=int(rng.integers(2, 5)),
                         width=int(rng.integers(4, 12)), depth=int(rng.integers(1, 3)))
        model = build_model(spec, seed=int(rng.integers(0, 2**31)))
        x = rng.uniform(0, 1, size=shape)
        y = int(rng.integers(0, spec.num_classes))
        yield model, x, y


def gradient_identity_suite(seed: int = 0, count: int = 40) -> dict:
    worst = 0.0
    for model, x, y in _zoo_samples(seed, count):
        worst = max(worst, gradient_identity_residual(model, x, y))
    return {"pass": worst < GRADIENT_IDENTITY_TOL, "worst_residual": worst,
            "tolerance": GRADIENT_IDENTITY_TOL, "models": count}


def bound_suite(seed: int = 0, pairs: int = 5, samples: int = 200, delta: float = 8 / 255) -> dict:
    rng = numpy_generator(seed, "selfcheck-bound")
    violations = 0
    worst = -np.inf
    for i in range(pairs):
        spec_s = ModelSpec("mlp-relu", (2,), 3, width=int(rng.integers(4, 10)), depth=1)
        spec_t = ModelSpec("mlp-relu", (2,), 3, width=int(rng.integers(4, 10)), depth=2)
        student = build_model(spec_s, seed=int(rng.integers(0, 2**31)))
        teacher = build_model(spec_t, seed=int(rng.integers(0, 2**31)))
        x = rng.uniform(0.2, 0.8, size=(2,))
        y = int(rng.integers(0, 3))
        report = verify_bound(student, teacher, (x, y), delta, samples=samples,
                              llm_method="grid", resolution=161, seed=seed + i)
        violations += report.total_violations
        worst = max(worst, report.worst_margin)
    return {"pass": violations == 0, "violations": violations, "worst_margin": float(worst),
            "pairs": pairs, "samples_per_pair": samples}


def delta_robust_suite(seed: int = 0, cases: int = 10) -> dict:
    rng = numpy_generator(seed, "selfcheck-delta")
    ok = True
    detail = []
    for i in range(cases):
        model = build_model(ModelSpec("linear", (2,), 2), seed=int(rng.integers(0, 2**31)))
        x = rng.uniform(0.3, 0.7, size=(2,))
        with torch.no_grad():
            logits = model.logits(torch.as_tensor(x)).numpy()
        w = model.module.net[1].weight.detach().numpy()
        pred = int(np.argmax(logits))
        dw = w[pred] - w[1 - pred]
        margin = float(logits[pred] - logits[1 - pred])
        d_inf = margin / max(np.abs(dw).sum(), 1e-12)  # closed-form l-inf margin
        for frac in (0.5, 2.0):
            delta = d_inf * frac
            if delta <= 0 or delta > 1.0:
                continue
            expect_robust = frac < 1.0  # robust exactly when delta < the margin distance
            got = check_delta_robust(model, x, delta, resolution=81).robust
            if got is not expect_robust:
                ok = False
                detail.append({"case": i, "delta": delta, "expected": expect_robust, "got": got})
        ladder = check_delta_robust_ladder(model, x, [0.01, 0.05, 0.1, 0.2], resolution=41)
        flags = [r.robust for r in ladder]
        if any(a < b for a, b in zip(flags, flags[1:])):  # False before True breaks monotonicity
            ok = False
            detail.append({"case": i, "ladder": flags})
    return {"pass": ok, "cases": cases, "failures": detail}


SUITES = {
    "gradient-identity": gradient_identity_suite,
    "bound": bound_suite,
    "delta-robust": delta_robust_suite,
}


def run_suites(names=None, seed: int = 0) -> dict:
    names = list(names or SUITES)
    return {name: SUITES[name](seed=seed) for name in names}
