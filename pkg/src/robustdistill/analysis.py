"""Theoretical instruments: local-linearity measurement, the two-model
robustness bound, exhaustive prediction-stability checks, and the
perfect-student report.

The local linearity measure (LLM) of a model at x with radius delta is the
maximum over the l-infinity ball of the absolute gap between the loss and its
first-order Taylor expansion. The grid method enumerates a lattice (exact up
to lattice resolution, feasible in low dimension); the ascent method runs
sign-gradient ascent on the absolute gap and is a lower bound on the true
maximum. Ladder helpers evaluate one lattice at the largest radius and read
nested sub-boxes off it, so radius monotonicity holds by construction.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import CapabilityError, InvalidConfigError
from .models import (
    cross_entropy,
    input_gradient_ce,
    kl_with_temperature,
    logit_jacobian,
    softmax,
)
from .seeding import numpy_generator, torch_generator

GRID_MAX_DIM = 3  # exhaustive lattices get infeasible beyond this


def _default_loss(model, xb: torch.Tensor, y: int) -> torch.Tensor:
    yt = torch.full((xb.shape[0],), int(y), dtype=torch.long)
    return cross_entropy(model.logits(xb), yt, reduction="none")


class _TaylorGap:
    """Residual ``loss(x+eps) - loss(x) - eps . grad`` for one anchor point."""

    def __init__(self, model, x, y, loss_fn=None):
        self.model = model
        self.loss_fn = loss_fn or _default_loss
        self.y = y
        self.x0 = torch.as_tensor(np.asarray(x), dtype=model.dtype).reshape(model.spec.input_shape)
        self.shape = tuple(self.x0.shape)
        self.dim = int(np.prod(self.shape))
        xg = self.x0.detach().requires_grad_(True)
        loss0 = self.loss_fn(model, xg.unsqueeze(0), y).sum()
        (g0,) = torch.autograd.grad(loss0, xg, allow_unused=True)
        self.g0 = (torch.zeros_like(xg) if g0 is None else g0).detach().reshape(-1)
        self.loss0 = float(loss0.detach())

    def residuals(self, eps_flat: torch.Tensor) -> torch.Tensor:
        xb = self.x0.reshape(1, -1) + eps_flat
        losses = self.loss_fn(self.model, xb.reshape((-1,) + self.shape), self.y)
        return losses - self.loss0 - eps_flat @ self.g0

    def abs_residuals(self, eps_flat: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.residuals(eps_flat).abs()


def _lattice(delta: float, dim: int, resolution: int, dtype=torch.float64) -> torch.Tensor:
    """Uniform lattice over ``[-delta, delta]^dim`` including endpoints, (R^dim, dim)."""
    axis = torch.linspace(-delta, delta, resolution, dtype=dtype)
    grids = torch.meshgrid(*([axis] * dim), indexing="ij")
    return torch.stack([g.reshape(-1) for g in grids], dim=1)


@dataclass
class LLMEstimate:
    """Local linearity measure estimate; ``value == |residual at epsilon_star|``."""

    value: float
    radius: float
    method: str
    epsilon_star: np.ndarray
    restarts: int = 0
    resolution: int = None


def estimate_llm(model, x, y, delta: float, method: str = "ascent", budget: int = 10,
                 steps: int = 50, resolution: int = 101, seed: int = 0, loss_fn=None) -> LLMEstimate:
    """Estimate the local linearity measure of ``model`` at ``x`` with radius ``delta``.

    ``grid`` enumerates a ``resolution``-per-axis lattice (dimension capped at
    3); ``ascent`` runs ``budget`` sign-ascent restarts of ``steps`` steps each,
    started from the gradient-aligned corners, the box corners (in low
    dimension) and random points.
    """
    if delta < 0:
        raise InvalidConfigError("delta must be >= 0")
    gap = _TaylorGap(model, x, y, loss_fn)
    if delta == 0:
        return LLMEstimate(0.0, 0.0, method, np.zeros(gap.shape), restarts=0,
                           resolution=resolution if method == "grid" else None)

    if method == "grid":
        if gap.dim > GRID_MAX_DIM:
            raise CapabilityError(
                f"grid method infeasible for {gap.dim}-dimensional inputs (cap {GRID_MAX_DIM}); use ascent"
            )
        if resolution < 2:
            raise InvalidConfigError("grid resolution must be >= 2")
        pts = _lattice(delta, gap.dim, resolution, dtype=model.dtype)
        best_val, best_eps = -1.0, None
        for chunk in pts.split(16384):
            vals = gap.abs_residuals(chunk)
            i = int(torch.argmax(vals))
            if float(vals[i]) > best_val:
                best_val, best_eps = float(vals[i]), chunk[i].clone()
        return LLMEstimate(best_val, delta, "grid", best_eps.numpy().reshape(gap.shape),
                           restarts=0, resolution=resolution)

    if method != "ascent":
        raise InvalidConfigError(f"unknown LLM method {method!r}")
    if budget < 1 or steps < 0:
        raise InvalidConfigError("budget must be >= 1 and steps >= 0")

    starts = []
    g_sign = torch.sign(gap.g0)
    g_sign = torch.where(g_sign == 0, torch.ones_like(g_sign), g_sign)
    starts.append(delta * g_sign)
    starts.append(-delta * g_sign)
    if gap.dim <= 4 and 2**gap.dim <= max(budget, 4):
        corners = _lattice(delta, gap.dim, 2, dtype=model.dtype)
        starts.extend(corners)
    gen = torch_generator(seed, "llm-ascent")
    while len(starts) < budget:
        u = torch.rand(gap.dim, generator=gen, dtype=model.dtype) * 2 - 1
        if len(starts) % 2 == 0:
            starts.append(delta * torch.sign(u + 1e-12))  # random corner
        else:
            starts.append(delta * u)  # random interior point
    eps = torch.stack(starts[: max(budget, len(starts))], dim=0)
    n_restarts = eps.shape[0]

    step_size = 2.5 * delta / max(1, steps)
    best_val, best_eps = -1.0, None

    def consider(values: torch.Tensor, points: torch.Tensor):
        nonlocal best_val, best_eps
        i = int(torch.argmax(values))
        if float(values[i]) > best_val:
            best_val, best_eps = float(values[i]), points[i].detach().clone()

    for _ in range(steps):
        eps = eps.detach().requires_grad_(True)
        r = gap.residuals(eps)
        (dr,) = torch.autograd.grad(r.sum(), eps)
        consider(r.detach().abs(), eps)
        sign_r = torch.sign(r.detach()).unsqueeze(1)
        sign_r = torch.where(sign_r == 0, torch.ones_like(sign_r), sign_r)
        eps = torch.clamp(eps.detach() + step_size * sign_r * torch.sign(dr), -delta, delta)
    consider(gap.abs_residuals(eps), eps)

    return LLMEstimate(best_val, delta, "ascent", best_eps.numpy().reshape(gap.shape), restarts=n_restarts)


def grid_llm_ladder(model, x, y, radii, resolution: int = 101, loss_fn=None) -> list:
    """Grid LLM at several radii from one lattice at the largest radius.

    Radii are read off nested sub-boxes of the same lattice, so the returned
    values are monotone in the radius by construction.
    """
    radii = [float(r) for r in radii]
    if any(r < 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
        raise InvalidConfigError("radii must be nonnegative and strictly increasing")
    gap = _TaylorGap(model, x, y, loss_fn)
    if gap.dim > GRID_MAX_DIM:
        raise CapabilityError(f"grid method infeasible for {gap.dim}-dimensional inputs")
    out = []
    delta_max = radii[-1]
    if delta_max == 0:
        return [LLMEstimate(0.0, 0.0, "grid", np.zeros(gap.shape), resolution=resolution)]
    pts = _lattice(delta_max, gap.dim, resolution, dtype=model.dtype)
    vals = torch.cat([gap.abs_residuals(c) for c in pts.split(16384)])
    inf_norms = pts.abs().max(dim=1).values
    for r in radii:
        if r == 0:
            out.append(LLMEstimate(0.0, 0.0, "grid", np.zeros(gap.shape), resolution=resolution))
            continue
        mask = inf_norms <= r + 1e-12
        sub = vals[mask]
        i = int(torch.argmax(sub))
        eps_star = pts[mask][i].numpy().reshape(gap.shape)
        out.append(LLMEstimate(float(sub[i]), r, "grid", eps_star, resolution=resolution))
    return out


# ---------------------------------------------------------------------------
# Robustness bound (two-model Taylor-gap inequality)
# ---------------------------------------------------------------------------

@dataclass
class RobustnessBound:
    """Right-hand side of the two-model bound at one anchor point.

    ``phi = ce_s + ce_t + delta * grad_gap`` and
    ``total = gamma_s + gamma_t + phi``.
    """

    gamma_s: float
    gamma_t: float
    ce_s: float
    ce_t: float
    grad_gap: float
    delta: float
    llm_method: str
    norm: str = "l2"

    @property
    def phi(self) -> float:
        return self.ce_s + self.ce_t + self.delta * self.grad_gap

    @property
    def total(self) -> float:
        return self.gamma_s + self.gamma_t + self.phi

    def to_dict(self) -> dict:
        return {
            "gamma_s": self.gamma_s, "gamma_t": self.gamma_t,
            "ce_s": self.ce_s, "ce_t": self.ce_t,
            "grad_gap": self.grad_gap, "delta": self.delta,
            "phi": self.phi, "total": self.total,
            "llm_method": self.llm_method, "norm": self.norm,
        }


def _grad_gap_norm(student, teacher, x, y, norm: str) -> float:
    gs = input_gradient_ce(student, x, y).reshape(-1)
    gt = input_gradient_ce(teacher, x, y).reshape(-1)
    diff = gs - gt
    if norm == "l2":
        return float(diff.norm())
    if norm == "l1":
        return float(diff.abs().sum())
    raise InvalidConfigError(f"unknown norm {norm!r}")


def robustness_bound(student, teacher, x, y, delta: float, llm_method: str = "ascent",
                     norm: str = "l2", **llm_kwargs) -> RobustnessBound:
    """Assemble the bound components for a student/teacher pair at one point.

    ``norm`` applies to the gradient gap inside phi; l2 matches the alignment
    term, l1 is the Hoelder-tight pairing for the l-infinity ball.
    """
    gamma_s = estimate_llm(student, x, y, delta, method=llm_method, **llm_kwargs).value
    gamma_t = estimate_llm(teacher, x, y, delta, method=llm_method, **llm_kwargs).value
    with torch.no_grad():
        ce_s = float(cross_entropy(student.logits(torch.as_tensor(np.asarray(x), dtype=student.dtype)), int(y)))
        ce_t = float(cross_entropy(teacher.logits(torch.as_tensor(np.asarray(x), dtype=teacher.dtype)), int(y)))
    grad_gap = _grad_gap_norm(student, teacher, x, y, norm)
    return RobustnessBound(gamma_s=gamma_s, gamma_t=gamma_t, ce_s=ce_s, ce_t=ce_t,
                           grad_gap=grad_gap, delta=float(delta), llm_method=llm_method, norm=norm)


@dataclass
class BoundCheck:
    """Monte-Carlo check of the bound inequality at one anchor point."""

    bound: RobustnessBound
    samples: int
    violations: int
    worst_margin: float  # max of |lhs| - (total + slack); satisfied iff <= 0
    slack: float
    advisory: bool  # True when the LLM was not grid-exact


@dataclass
class BoundCheckReport:
    checks: list
    total_samples: int = 0
    total_violations: int = 0
    worst_margin: float = -math.inf
    advisory: bool = False

    @classmethod
    def collect(cls, checks) -> "BoundCheckReport":
        rep = cls(checks=list(checks))
        for c in rep.checks:
            rep.total_samples += c.samples
            rep.total_violations += c.violations
            rep.worst_margin = max(rep.worst_margin, c.worst_margin)
            rep.advisory = rep.advisory or c.advisory
        return rep


def _verify_bound_single(student, teacher, x, y, delta, samples, llm_method, resolution,
                         seed, slack, norm) -> BoundCheck:
    bound = robustness_bound(student, teacher, x, y, delta, llm_method=llm_method,
                             norm=norm, resolution=resolution, seed=seed)
    gap_s = _TaylorGap(student, x, y)
    gap_t = _TaylorGap(teacher, x, y)
    rng = numpy_generator(seed, "bound-eps")
    eps = torch.as_tensor(rng.uniform(-delta, delta, size=(samples, gap_s.dim)), dtype=student.dtype)

    with torch.no_grad():
        xb = gap_s.x0.reshape(1, -1) + eps
        xb = xb.reshape((-1,) + gap_s.shape)
        ls = _default_loss(student, xb, y)
        lt = _default_loss(teacher, xb, y)
        lhs = (ls - lt).abs()

    advisory = llm_method != "grid"
    if slack is None:
        if advisory:
            slack = 0.0
        else:
            # first-order within-cell bound: lattice spacing times the largest
            # observed residual-gradient norm of either model over the samples
            h = 2 * delta / max(1, resolution - 1)
            slack = h * (_max_residual_grad(gap_s, eps) + _max_residual_grad(gap_t, eps))
    margins = lhs - (bound.total + slack)
    return BoundCheck(bound=bound, samples=samples, violations=int((margins > 0).sum()),
                      worst_margin=float(margins.max()) if samples else -math.inf,
                      slack=float(slack), advisory=advisory)


def _max_residual_grad(gap: _TaylorGap, eps: torch.Tensor) -> float:
    """max over samples of || grad loss(x+eps) - grad loss(x) ||_2."""
    xb = (gap.x0.reshape(1, -1) + eps).reshape((-1,) + gap.shape).detach().requires_grad_(True)
    loss = gap.loss_fn(gap.model, xb, gap.y).sum()
    (g,) = torch.autograd.grad(loss, xb)
    diff = g.reshape(g.shape[0], -1) - gap.g0.reshape(1, -1)
    return float(diff.norm(dim=1).max())


def verify_bound(student, teacher, batch, delta: float, samples: int = 1000,
                 llm_method: str = "grid", resolution: int = 201, seed: int = 0,
                 slack: float = None, norm: str = "l2") -> BoundCheckReport:
    """Sample perturbations in the ball and count violations of the bound.

    With grid LLM the check is theorem-level up to the reported lattice slack;
    with ascent LLM the result is advisory only (flagged). Violations are
    data, not errors.
    """
    x, y = (batch.x, batch.y) if hasattr(batch, "x") else batch
    x = np.asarray(x, dtype=np.float64)
    shape = tuple(student.spec.input_shape)
    if x.shape == shape:
        x = x[None]
        y = np.asarray([y])
    else:
        y = np.asarray(y)
    checks = []
    for i in range(x.shape[0]):
        checks.append(_verify_bound_single(student, teacher, x[i], int(y[i]), delta, samples,
                                           llm_method, resolution, seed + i, slack, norm))
    return BoundCheckReport.collect(checks)


# ---------------------------------------------------------------------------
# Prediction-stability (delta-robustness) checks
# ---------------------------------------------------------------------------

@dataclass
class DeltaRobustResult:
    robust: bool
    radius: float
    witness: np.ndarray = None
    coverage: str = "exhaustive"
    points_checked: int = 0
    base_class: int = -1


def _stability_points(dim: int, delta: float, resolution: int, mode: str, samples, seed, dtype):
    if mode not in ("symmetric", "orthant"):
        raise InvalidConfigError(f"unknown mode {mode!r}")
    if dim <= 2:
        axis = torch.linspace(0.0 if mode == "orthant" else -delta, delta, resolution, dtype=dtype)
        grids = torch.meshgrid(*([axis] * dim), indexing="ij")
        return torch.stack([g.reshape(-1) for g in grids], dim=1), "exhaustive"
    n = samples or 1024
    rng = numpy_generator(seed, "delta-robust")
    lo = 0.0 if mode == "orthant" else -delta
    pts = rng.uniform(lo, delta, size=(n, dim))
    pts = np.concatenate([pts, np.full((1, dim), delta), np.full((1, dim), lo)])
    return torch.as_tensor(pts, dtype=dtype), f"sampled({n + 2})"


def check_delta_robust(model, x, delta: float, resolution: int = 41, mode: str = "symmetric",
                       samples: int = None, seed: int = 0) -> DeltaRobustResult:
    """Is the argmax prediction constant over the perturbation box around x?

    ``symmetric`` covers ``[-delta, delta]^D`` (the stronger condition);
    ``orthant`` restricts to ``[0, delta]^D``. Exhaustive lattice for D <= 2,
    sampled with reported coverage above. Argmax ties break toward the lowest
    class index. On failure the witness perturbation is returned.
    """
    if delta < 0:
        raise InvalidConfigError("delta must be >= 0")
    x0 = torch.as_tensor(np.asarray(x), dtype=model.dtype).reshape(model.spec.input_shape)
    with torch.no_grad():
        base = int(torch.argmax(model.logits(x0.unsqueeze(0)), dim=-1))
    if delta == 0:
        return DeltaRobustResult(True, 0.0, coverage="exact", points_checked=1, base_class=base)
    dim = int(np.prod(x0.shape))
    pts, coverage = _stability_points(dim, delta, resolution, mode, samples, seed, model.dtype)
    checked = 0
    for chunk in pts.split(16384):
        with torch.no_grad():
            logits = model.logits((x0.reshape(1, -1) + chunk).reshape((-1,) + tuple(x0.shape)))
            preds = torch.argmax(logits, dim=-1)
        bad = torch.nonzero(preds != base).reshape(-1)
        if len(bad):
            i = int(bad[0])
            return DeltaRobustResult(False, delta, witness=chunk[i].numpy().reshape(tuple(x0.shape)),
                                     coverage=coverage, points_checked=checked + i + 1, base_class=base)
        checked += len(chunk)
    return DeltaRobustResult(True, delta, coverage=coverage, points_checked=checked, base_class=base)


def check_delta_robust_ladder(model, x, radii, resolution: int = 41, mode: str = "symmetric",
                              samples: int = None, seed: int = 0) -> list:
    """Stability at several radii from one point set at the largest radius.

    Nested sub-boxes of a single lattice/sample set make the result monotone:
    robust at a larger radius implies robust at every smaller one.
    """
    radii = [float(r) for r in radii]
    if any(r < 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
        raise InvalidConfigError("radii must be nonnegative and strictly increasing")
    x0 = torch.as_tensor(np.asarray(x), dtype=model.dtype).reshape(model.spec.input_shape)
    with torch.no_grad():
        base = int(torch.argmax(model.logits(x0.unsqueeze(0)), dim=-1))
    dim = int(np.prod(x0.shape))
    delta_max = radii[-1]
    if delta_max == 0:
        return [DeltaRobustResult(True, 0.0, coverage="exact", points_checked=1, base_class=base)]
    pts, coverage = _stability_points(dim, delta_max, resolution, mode, samples, seed, model.dtype)
    with torch.no_grad():
        preds = []
        for chunk in pts.split(16384):
            logits = model.logits((x0.reshape(1, -1) + chunk).reshape((-1,) + tuple(x0.shape)))
            preds.append(torch.argmax(logits, dim=-1))
        preds = torch.cat(preds)
    inf_norms = pts.abs().max(dim=1).values
    results = []
    for r in radii:
        if r == 0:
            results.append(DeltaRobustResult(True, 0.0, coverage="exact", points_checked=1, base_class=base))
            continue
        mask = inf_norms <= r + 1e-12
        bad = torch.nonzero((preds != base) & mask).reshape(-1)
        if len(bad):
            i = int(bad[0])
            results.append(DeltaRobustResult(False, r, witness=pts[i].numpy().reshape(tuple(x0.shape)),
                                             coverage=coverage, points_checked=int(mask.sum()), base_class=base))
        else:
            results.append(DeltaRobustResult(True, r, coverage=coverage,
                                             points_checked=int(mask.sum()), base_class=base))
    return results


# ---------------------------------------------------------------------------
# Perfect-student report and the gradient identity
# ---------------------------------------------------------------------------

@dataclass
class PerfectStudentReport:
    max_kl: float
    max_iga: float
    max_ce: float
    within_tolerance: bool
    ladder_radii: list = None
    student_robust_fracs: list = None
    teacher_robust_fracs: list = None
    pointwise_dominates: bool = None
    claim: str = None


DEFAULT_LADDER = (2 / 255, 4 / 255, 8 / 255, 16 / 255, 32 / 255)


def perfect_student_check(student, teacher, dataset, kl_tol: float = 1e-6, iga_tol: float = 1e-6,
                          ce_tol: float = math.inf, temperature: float = 1.0,
                          ladder=DEFAULT_LADDER, resolution: int = 41, max_points: int = 20,
                          mode: str = "symmetric") -> PerfectStudentReport:
    """Report how close the student is to a zero-distillation-loss fit, and
    (for piecewise-linear pairs on 2-D inputs) compare robustness ladders.

    The robustness-ladder cross-check runs only when all maxima fall below
    their tolerances; the CE tolerance defaults to infinity because the KL and
    alignment terms are the distillation-specific parts of the loss.
    """
    x = torch.as_tensor(dataset.x, dtype=student.dtype)
    y = torch.as_tensor(np.asarray(dataset.y), dtype=torch.long)
    with torch.no_grad():
        s_logits = student.logits(x)
        t_logits = teacher.logits(x)
        kl = kl_with_temperature(s_logits, t_logits, temperature, reduction="none")
        ce = cross_entropy(s_logits, y, reduction="none")
    g_s = input_gradient_ce(student, x, y).reshape(len(dataset), -1)
    g_t = input_gradient_ce(teacher, x, y).reshape(len(dataset), -1)
    iga = (g_s - g_t).norm(dim=1)

    report = PerfectStudentReport(
        max_kl=float(kl.max()), max_iga=float(iga.max()), max_ce=float(ce.max()),
        within_tolerance=bool(float(kl.max()) <= kl_tol and float(iga.max()) <= iga_tol
                              and float(ce.max()) <= ce_tol),
    )
    eligible = (report.within_tolerance and student.spec.piecewise_linear
                and teacher.spec.piecewise_linear and student.spec.input_dim == 2)
    if not eligible:
        report.claim = None if report.within_tolerance else "tolerances exceeded; no robustness claim"
        return report

    radii = [float(r) for r in ladder]
    pts = min(max_points, len(dataset))
    s_flags = np.zeros((pts, len(radii)), dtype=bool)
    t_flags = np.zeros((pts, len(radii)), dtype=bool)
    for i in range(pts):
        xi = dataset.x[i]
        for j, res in enumerate(check_delta_robust_ladder(student, xi, radii, resolution, mode=mode)):
            s_flags[i, j] = res.robust
        for j, res in enumerate(check_delta_robust_ladder(teacher, xi, radii, resolution, mode=mode)):
            t_flags[i, j] = res.robust
    report.ladder_radii = radii
    report.student_robust_fracs = s_flags.mean(axis=0).tolist()
    report.teacher_robust_fracs = t_flags.mean(axis=0).tolist()
    report.pointwise_dominates = bool((s_flags | ~t_flags).all())
    report.claim = ("student at least as robust as teacher on the ladder"
                    if report.pointwise_dominates else "teacher robust at points where student is not")
    return report


def gradient_identity_residual(model, x, y) -> float:
    """Relative residual between the direct CE input gradient and its
    softmax/Jacobian closed form ``(alpha - e_y)^T J``."""
    direct = input_gradient_ce(model, x, y).reshape(-1)
    with torch.no_grad():
        probs = softmax(model.logits(torch.as_tensor(np.asarray(x), dtype=model.dtype)))
    jac = logit_jacobian(model, x).reshape(probs.shape[-1], -1)
    coeff = probs.reshape(-1).clone()
    coeff[int(y)] -= 1.0
    composed = coeff @ jac
    return float((direct - composed).norm() / max(1.0, float(direct.norm())))


# ---------------------------------------------------------------------------
# Bound tables (report emission)
# ---------------------------------------------------------------------------

@dataclass
class BoundTableRow:
    model_id: str
    llm: dict
    ce: float
    grad_gap: float


@dataclass
class BoundTable:
    rows: list
    radii: list
    method: str
    samples: int
    seed: int
    norm: str = "l2"

    def to_tsv(self) -> str:
        cols = ["model"] + [f"llm_{r:g}" for r in self.radii] + ["l_ce", "grad_gap_l2", "method", "samples", "seed"]
        lines = ["\t".join(cols)]
        for row in self.rows:
            cells = [row.model_id]
            cells += [f"{row.llm[r]:.6f}" for r in self.radii]
            cells += [f"{row.ce:.6f}", f"{row.grad_gap:.6f}", self.method, str(self.samples), str(self.seed)]
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"


def bound_table(models: dict, teacher, dataset, radii, method: str = "ascent",
                budget: int = 10, steps: int = 50, resolution: int = 101,
                max_samples: int = 100, seed: int = 0, norm: str = "l2") -> BoundTable:
    """Per-model bound components averaged over a deterministic subsample.

    One row per entry of ``models``: mean LLM at each radius, mean clean CE,
    and the mean gradient gap to ``teacher``.
    """
    radii = [float(r) for r in radii]
    n = len(dataset)
    take = min(max_samples, n)
    order = numpy_generator(seed, "bound-table").permutation(n)[:take]
    rows = []
    for model_id, model in models.items():
        llm_sums = {r: 0.0 for r in radii}
        ce_sum = 0.0
        gap_sum = 0.0
        for i in order:
            x, y = dataset.x[i], int(dataset.y[i])
            for r in radii:
                llm_sums[r] += estimate_llm(model, x, y, r, method=method, budget=budget,
                                            steps=steps, resolution=resolution, seed=seed).value
            with torch.no_grad():
                ce_sum += float(cross_entropy(model.logits(torch.as_tensor(x, dtype=model.dtype)), y))
            gap_sum += _grad_gap_norm(model, teacher, x, y, norm)
        rows.append(BoundTableRow(
            model_id=model_id,
            llm={r: llm_sums[r] / take for r in radii},
            ce=ce_sum / take,
            grad_gap=gap_sum / take,
        ))
    return BoundTable(rows=rows, radii=radii, method=method, samples=take, seed=seed, norm=norm)
