import numpy as np
import pytest
import torch

from robustdistill import ModelSpec, build_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def zoo_triples(rng, count, families=("linear", "mlp-relu", "cnn-relu", "tiny-attention"),
                fd_safe=False):
    """Random (model, x, y) triples across the zoo families.

    ``fd_safe`` redraws x until every ReLU pre-activation sits well away from
    its kink: central differences are only valid where the function is smooth,
    and away from kinks they are exact for the piecewise-linear families.
    """
    for i in range(count):
        family = families[i % len(families)]
        shape = (4, 4, 1) if family == "cnn-relu" else (3,)
        spec = ModelSpec(family=family, input_shape=shape, num_classes=int(rng.integers(2, 5)),
                         width=int(rng.integers(4, 12)), depth=int(rng.integers(1, 3)))
        model = build_model(spec, seed=int(rng.integers(0, 2**31)))
        x = sample_fd_safe_input(model, rng) if fd_safe else rng.uniform(0.0, 1.0, size=shape)
        y = int(rng.integers(0, spec.num_classes))
        yield model, x, y


def min_relu_preactivation(model, x) -> float:
    """Smallest |pre-activation| feeding any ReLU for input x (inf if none)."""
    mins = []
    hooks = []
    for m in model.module.modules():
        if isinstance(m, torch.nn.ReLU):
            hooks.append(m.register_forward_pre_hook(
                lambda mod, inp: mins.append(float(inp[0].abs().min()))))
    try:
        with torch.no_grad():
            model.logits(torch.as_tensor(np.asarray(x), dtype=model.dtype))
    finally:
        for h in hooks:
            h.remove()
    return min(mins) if mins else float("inf")


def sample_fd_safe_input(model, rng, margin=1e-3, tries=60):
    """Draw x in [0, 1] with every ReLU pre-activation at least ``margin`` from 0."""
    shape = model.spec.input_shape
    x = rng.uniform(0.0, 1.0, size=shape)
    for _ in range(tries):
        if min_relu_preactivation(model, x) > margin:
            break
        x = rng.uniform(0.0, 1.0, size=shape)
    return x


def central_diff_input(model, x, y, h=1e-4):
    """Central-difference CE input gradient (float64 oracle)."""
    from robustdistill import cross_entropy

    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.size):
            xp, xm = flat.copy(), flat.copy()
            xp[i] += h
            xm[i] -= h
            lp = float(cross_entropy(model.logits(torch.as_tensor(xp.reshape(x.shape))), y))
            lm = float(cross_entropy(model.logits(torch.as_tensor(xm.reshape(x.shape))), y))
            out[i] = (lp - lm) / (2 * h)
    return out.reshape(x.shape)
