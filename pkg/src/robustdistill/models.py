"""Differentiable classifiers: elementary probabilistic ops and a small model zoo.

Models are double precision by default so that gradient identities and
local-linearity estimates have numerical headroom; training may downcast
behind a config flag. Logits are never normalized internally -- softmax and
temperature scaling happen explicitly at call sites.
"""

import copy
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import CapabilityError, InvalidConfigError, InvalidInputError
from .seeding import torch_generator

FAMILIES = ("linear", "mlp-relu", "cnn-relu", "tiny-attention")

_DTYPES = {"float64": torch.float64, "float32": torch.float32}


def resolve_dtype(dtype) -> torch.dtype:
    if isinstance(dtype, torch.dtype):
        return dtype
    try:
        return _DTYPES[str(dtype)]
    except KeyError:
        raise InvalidConfigError(f"unsupported dtype {dtype!r}; use one of {sorted(_DTYPES)}")


def _as_tensor(x, dtype=None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    t = torch.as_tensor(np.asarray(x))
    if dtype is not None:
        t = t.to(dtype)
    elif not t.is_floating_point():
        t = t.to(torch.float64)
    return t


def _check_finite(t: torch.Tensor, what: str):
    if not torch.isfinite(t).all():
        raise InvalidInputError(f"{what} contains non-finite values")


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------

def softmax(logits, dim: int = -1) -> torch.Tensor:
    """Shift-invariant softmax along ``dim``. Rejects non-finite input."""
    z = _as_tensor(logits)
    _check_finite(z, "logits")
    z = z - z.max(dim=dim, keepdim=True).values
    e = torch.exp(z)
    return e / e.sum(dim=dim, keepdim=True)


def cross_entropy(logits, y, reduction: str = "mean") -> torch.Tensor:
    """Cross-entropy ``-logits_y + logsumexp(logits)`` with log-sum-exp stabilization.

    ``logits`` is ``(N,)`` or ``(B, N)``; ``y`` a class index or ``(B,)`` of them.
    """
    z = _as_tensor(logits)
    _check_finite(z, "logits")
    squeeze = z.dim() == 1
    if squeeze:
        z = z.unsqueeze(0)
    yt = torch.as_tensor(y, dtype=torch.long).reshape(-1)
    if yt.numel() != z.shape[0]:
        raise InvalidInputError(
            f"label batch {tuple(yt.shape)} does not match logits batch {z.shape[0]}"
        )
    n_classes = z.shape[-1]
    if ((yt < 0) | (yt >= n_classes)).any():
        raise IndexError(f"class index out of range for {n_classes} classes")
    lse = torch.logsumexp(z, dim=-1)
    picked = z.gather(-1, yt.unsqueeze(-1)).squeeze(-1)
    ce = lse - picked
    if squeeze:
        ce = ce.squeeze(0)
    if reduction == "none":
        return ce
    if reduction == "sum":
        return ce.sum()
    if reduction == "mean":
        return ce.mean()
    raise InvalidConfigError(f"unknown reduction {reduction!r}")


def kl_with_temperature(student_logits, teacher_logits, temperature, reduction: str = "mean") -> torch.Tensor:
    """KL(softmax(teacher/T) || softmax(student/T)).

    The temperature-squared multiplier of the distillation objective is applied
    by the loss composer, not here. Gradients do not flow into the teacher.
    """
    if not (isinstance(temperature, (int, float)) and temperature > 0):
        raise InvalidConfigError(f"temperature must be > 0, got {temperature!r}")
    s = _as_tensor(student_logits)
    t = _as_tensor(teacher_logits)
    if s.shape != t.shape:
        raise InvalidInputError(f"logit shapes differ: {tuple(s.shape)} vs {tuple(t.shape)}")
    _check_finite(s, "student logits")
    _check_finite(t, "teacher logits")
    log_ps = torch.log_softmax(s / temperature, dim=-1)
    with torch.no_grad():
        log_pt = torch.log_softmax(t.detach() / temperature, dim=-1)
        pt = torch.exp(log_pt)
    kl = (pt * (log_pt - log_ps)).sum(dim=-1)
    if reduction == "none":
        return kl
    if reduction == "sum":
        return kl.sum()
    if reduction == "mean":
        return kl.mean()
    raise InvalidConfigError(f"unknown reduction {reduction!r}")


def input_gradient_ce(model, x, y, create_graph: bool = False) -> torch.Tensor:
    """Gradient of the cross-entropy loss with respect to the input.

    Works on a single example or a batch (per-example gradients are independent,
    so the batch is handled with one summed backward pass). With
    ``create_graph=True`` the result stays differentiable with respect to the
    model parameters, which is what the gradient-alignment penalty needs.
    """
    if not getattr(model, "supports_input_gradients", True):
        raise CapabilityError(f"{model!r} does not support input gradients")
    xt = _as_tensor(x, dtype=getattr(model, "dtype", None))
    _check_finite(xt, "input")
    xt = xt.detach().requires_grad_(True)
    logits = model.logits(xt) if hasattr(model, "logits") else model(xt)
    loss = cross_entropy(logits, y, reduction="sum")
    (grad,) = torch.autograd.grad(loss, xt, create_graph=create_graph, allow_unused=True)
    if grad is None:  # output does not depend on the input at all
        grad = torch.zeros_like(xt)
    return grad


def logit_jacobian(model, x) -> torch.Tensor:
    """Jacobian of the logit vector w.r.t. a single input, one backward per class.

    Returns shape ``(N, *input_shape)``.
    """
    xt = _as_tensor(x, dtype=getattr(model, "dtype", None)).detach().requires_grad_(True)
    logits = model.logits(xt.unsqueeze(0)).squeeze(0)
    rows = []
    for k in range(logits.shape[0]):
        (g,) = torch.autograd.grad(logits[k], xt, retain_graph=k + 1 < logits.shape[0], allow_unused=True)
        rows.append(torch.zeros_like(xt) if g is None else g)
    return torch.stack(rows)


# ---------------------------------------------------------------------------
# Model zoo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor for the desk-scale zoo.

    ``family`` is one of ``linear``, ``mlp-relu``, ``cnn-relu``,
    ``tiny-attention``. The piecewise-linear families use only ReLU/affine/
    average-pool operations (the ReLU subgradient at 0 is taken as 0);
    ``tiny-attention`` uses smooth activations and is exempt from
    piecewise-linearity claims.
    """

    family: str
    input_shape: tuple
    num_classes: int
    width: int = 16
    depth: int = 1
    tokens: int = 4  # tiny-attention only

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidConfigError(f"unknown model family {self.family!r}; known: {FAMILIES}")
        shape = tuple(int(d) for d in (self.input_shape if isinstance(self.input_shape, (tuple, list)) else (self.input_shape,)))
        object.__setattr__(self, "input_shape", shape)
        if any(d <= 0 for d in shape) or not shape:
            raise InvalidConfigError(f"bad input shape {shape}")
        if self.num_classes < 2:
            raise InvalidConfigError("need at least two classes")
        if self.width < 1 or self.depth < 1 or self.tokens < 1:
            raise InvalidConfigError("width, depth and tokens must be >= 1")
        if self.family == "cnn-relu" and len(shape) != 3:
            raise InvalidConfigError("cnn-relu expects (H, W, C) input shape")

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def piecewise_linear(self) -> bool:
        return self.family in ("linear", "mlp-relu", "cnn-relu")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "width": self.width,
            "depth": self.depth,
            "tokens": self.tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {"family", "input_shape", "num_classes", "width", "depth", "tokens"}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown model fields {sorted(unknown)}")
        return cls(**{k: (tuple(v) if k == "input_shape" else v) for k, v in d.items()})


class _MLP(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        layers = [nn.Flatten()]
        d = spec.input_dim
        for _ in range(spec.depth):
            layers += [nn.Linear(d, spec.width), nn.ReLU()]
            d = spec.width
        layers.append(nn.Linear(d, spec.num_classes))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class _LinearModel(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.net = nn.Sequential(nn.Flatten(), nn.Linear(spec.input_dim, spec.num_classes))

    def forward(self, x):
        return self.net(x)


class _CNN(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        h, w, c = spec.input_shape
        convs = [nn.Conv2d(c, spec.width, 3, padding=1), nn.ReLU()]
        for _ in range(spec.depth - 1):
            convs += [nn.Conv2d(spec.width, spec.width, 3, padding=1), nn.ReLU()]
        self.convs = nn.Sequential(*convs)
        pooled = (max(1, h // 2), max(1, w // 2))
        self.pool = nn.AdaptiveAvgPool2d(pooled)
        self.head = nn.Linear(spec.width * pooled[0] * pooled[1], spec.num_classes)

    def forward(self, x):
        x = x.permute(0, 3, 1, 2)  # HWC input convention -> NCHW
        x = self.pool(self.convs(x))
        return self.head(x.flatten(1))


class _AttentionBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, 2 * width), nn.GELU(), nn.Linear(2 * width, width))
        self.scale = 1.0 / math.sqrt(width)

    def forward(self, x):
        h = self.norm1(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        x = x + self.proj(attn @ v)
        return x + self.mlp(self.norm2(x))


class _TinyAttention(nn.Module):
    """Single-head transformer over fixed-size chunks of the flattened input."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        d = spec.input_dim
        self.tokens = min(spec.tokens, d)
        self.token_size = math.ceil(d / self.tokens)
        self.pad = self.tokens * self.token_size - d
        self.embed = nn.Linear(self.token_size, spec.width)
        self.pos = nn.Parameter(torch.zeros(self.tokens, spec.width))
        self.blocks = nn.Sequential(*[_AttentionBlock(spec.width) for _ in range(spec.depth)])
        self.norm = nn.LayerNorm(spec.width)
        self.head = nn.Linear(spec.width, spec.num_classes)

    def forward(self, x):
        x = x.flatten(1)
        if self.pad:
            x = torch.cat([x, x.new_zeros(x.shape[0], self.pad)], dim=1)
        x = x.reshape(x.shape[0], self.tokens, self.token_size)
        x = self.embed(x) + self.pos
        x = self.norm(self.blocks(x)).mean(dim=1)
        return self.head(x)


_BUILDERS = {
    "linear": _LinearModel,
    "mlp-relu": _MLP,
    "cnn-relu": _CNN,
    "tiny-attention": _TinyAttention,
}


def _init_parameters(module: nn.Module, gen: torch.Generator):
    """He-style init for affine weights, zeros for biases, drawn from ``gen``."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Linear, nn.Conv2d)):
                fan_in = m.weight.shape[1] if isinstance(m, nn.Linear) else int(np.prod(m.weight.shape[1:]))
                std = math.sqrt(2.0 / max(1, fan_in))
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen, dtype=m.weight.dtype) * std)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.LayerNorm):
                m.weight.fill_(1.0)
                m.bias.zero_()
        for name, p in module.named_parameters():
            if name.endswith("pos"):
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.02)


class Classifier:
    """A differentiable classifier handle around a torch module.

    Eval-mode ``logits`` on a frozen handle is a pure function of
    ``(parameters, x)`` and safe to call concurrently; parameter mutation
    requires exclusive access (single writer). Use :meth:`snapshot` to get an
    immutable copy for concurrent evaluation.
    """

    supports_input_gradients = True

    def __init__(self, spec: ModelSpec, module: nn.Module, seed: int, dtype=torch.float64):
        self.spec = spec
        self.module = module
        self.seed = seed
        self.dtype = resolve_dtype(dtype)
        self.module.to(self.dtype)
        self.module.eval()

    # -- mode -------------------------------------------------------------
    def train(self):
        self.module.train()
        return self

    def eval(self):
        self.module.eval()
        return self

    @property
    def training(self) -> bool:
        return self.module.training

    # -- forward ----------------------------------------------------------
    def logits(self, x) -> torch.Tensor:
        """Raw logits for a batch ``(B, *input_shape)`` or a single example."""
        xt = _as_tensor(x, dtype=self.dtype)
        single = xt.shape == torch.Size(self.spec.input_shape)
        if single:
            xt = xt.unsqueeze(0)
        expect = (xt.shape[0],) + self.spec.input_shape
        if tuple(xt.shape) != expect:
            raise InvalidInputError(
                f"input shape {tuple(xt.shape)} does not match {expect} for {self.spec.family}"
            )
        out = self.module(xt)
        return out.squeeze(0) if single else out

    __call__ = logits

    # -- parameters ---------------------------------------------------------
    def parameters(self):
        return self.module.parameters()

    def named_parameters(self):
        return self.module.named_parameters()

    @property
    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.module.parameters())

    def parameter_vector(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.module.parameters()]).clone()

    def set_parameter_vector(self, vec):
        vec = _as_tensor(vec, dtype=self.dtype).reshape(-1)
        if vec.numel() != self.num_parameters:
            raise InvalidInputError("parameter vector length mismatch")
        with torch.no_grad():
            i = 0
            for p in self.module.parameters():
                n = p.numel()
                p.copy_(vec[i : i + n].reshape(p.shape))
                i += n

    def parameter_fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, p in self.module.named_parameters():
            h.update(name.encode())
            h.update(p.detach().to(torch.float64).numpy().astype("<f8").tobytes())
        return h.hexdigest()

    # -- lifecycle ----------------------------------------------------------
    def freeze(self):
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.module.eval()
        return self

    def unfreeze(self):
        for p in self.module.parameters():
            p.requires_grad_(True)
        return self

    def snapshot(self) -> "Classifier":
        """Frozen eval-mode deep copy, safe to hand to concurrent readers."""
        clone = Classifier(self.spec, copy.deepcopy(self.module), self.seed, self.dtype)
        return clone.freeze()

    def to_dtype(self, dtype) -> "Classifier":
        self.dtype = resolve_dtype(dtype)
        self.module.to(self.dtype)
        return self

    def __repr__(self):
        return (
            f"Classifier({self.spec.family}, in={self.spec.input_shape}, "
            f"classes={self.spec.num_classes}, params={self.num_parameters})"
        )


def build_model(spec: ModelSpec, seed: int, dtype=torch.float64) -> Classifier:
    """Build a zoo model with deterministic seed-driven initialization."""
    builder = _BUILDERS.get(spec.family)
    if builder is None:
        raise InvalidConfigError(f"unknown model family {spec.family!r}")
    module = builder(spec).to(resolve_dtype(dtype))
    _init_parameters(module, torch_generator(seed, "init", spec.family))
    return Classifier(spec, module, seed, dtype)
