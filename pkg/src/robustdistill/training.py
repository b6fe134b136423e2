"""Training engine: distillation loop, SGD with momentum and milestones,
and plain adversarial training for manufacturing robust desk-scale teachers.

Every run is a pure function of (config, seed): data order, attack noise and
initialization draw from named substreams of the optimizer seed. The teacher
is snapshotted and frozen, so the caller's instance is never mutated.
"""

import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import checkpoint as ckpt
from .attacks import AttackSpec, inner_max_delta, pgd_attack
from .errors import InvalidCallError, InvalidConfigError, InvalidInputError, TrainingDivergedError
from .losses import DistillLossConfig, LossBreakdown, compute_loss
from .models import Classifier, cross_entropy, resolve_dtype
from .seeding import substream_seed, torch_generator

HISTORY_SCHEMA = "training-history-v1"


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    milestones: tuple = ()
    decay_factor: float = 0.1
    epochs: int = 1
    batch_size: int = 32
    seed: int = 0
    precision: str = "float64"
    grad_clip: float = None  # global-norm divergence safeguard, off by default

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if not self.learning_rate > 0:
            raise InvalidConfigError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidConfigError("weight_decay must be >= 0")
        if not 0.0 < self.decay_factor <= 1.0:
            raise InvalidConfigError("decay_factor must be in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfigError("epochs and batch_size must be >= 1")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise InvalidConfigError("milestones must be strictly increasing")
        if any(m < 0 or m >= self.epochs for m in self.milestones):
            raise InvalidConfigError("milestones must lie in [0, epochs)")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise InvalidConfigError("grad_clip must be > 0 when set")
        resolve_dtype(self.precision)

    def learning_rate_at(self, epoch: int) -> float:
        """Milestone schedule: lr * decay^(number of milestones <= epoch)."""
        hits = sum(1 for m in self.milestones if m <= epoch)
        return self.learning_rate * self.decay_factor**hits


def sgd_momentum_step(theta: torch.Tensor, gradient: torch.Tensor, velocity, opt: OptimizerConfig, lr=None):
    """One classical SGD-with-momentum update.

    v <- momentum * v + (gradient + weight_decay * theta)
    theta <- theta - lr * v

    Returns the updated ``(theta, velocity)``; weight decay is plain gradient
    augmentation (no decoupling).
    """
    if gradient.shape != theta.shape:
        raise InvalidInputError("gradient shape does not match parameters")
    lr = opt.learning_rate if lr is None else lr
    g = gradient + opt.weight_decay * theta if opt.weight_decay != 0 else gradient
    if velocity is None:
        velocity = torch.zeros_like(theta)
    velocity = opt.momentum * velocity + g
    return theta - lr * velocity, velocity


@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    ce_term: float
    kl_term: float
    iga_term: float
    learning_rate: float
    clean_accuracy: float = None  # held-out split; None when no split given
    wall_time_s: float = 0.0
    grad_clip_events: int = 0

    def to_dict(self) -> dict:
        return {"schema": HISTORY_SCHEMA, **self.__dict__}


@dataclass
class TrainingHistory:
    records: list = field(default_factory=list)
    best_epoch: int = None

    def append(self, record: EpochRecord):
        self.records.append(record)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainingHistory":
        hist = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            if d.pop("schema", HISTORY_SCHEMA) != HISTORY_SCHEMA:
                raise InvalidConfigError("unknown history schema")
            hist.append(EpochRecord(**d))
        return hist

    def final_record(self) -> EpochRecord:
        return self.records[-1]


def _accuracy(model: Classifier, examples) -> float:
    with torch.no_grad():
        logits = model.logits(torch.as_tensor(examples.x, dtype=model.dtype))
        preds = torch.argmax(logits, dim=-1)
    return float((preds.numpy() == examples.y).mean())


def _write_divergence_snapshot(output_dir, payload: dict) -> str:
    directory = output_dir or tempfile.mkdtemp(prefix="robustdistill-diverged-")
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, "divergence.json")
    with open(path, "w") as f:
        json.dump({k: (v if not isinstance(v, float) or math.isfinite(v) else repr(v)) for k, v in payload.items()}, f, indent=2)
    return path


def _fit(model: Classifier, train_set, opt: OptimizerConfig, batch_objective, eval_set=None,
         output_dir=None, checkpoint_every=None, select_best=True):
    """Shared epoch/batch loop.

    ``batch_objective(x, y, epoch, batch_index) -> LossBreakdown`` supplies the
    objective; this loop owns shuffling, the milestone schedule, momentum
    state, divergence handling, history streaming and best-model selection.
    """
    dtype = resolve_dtype(opt.precision)
    model.to_dtype(dtype)
    model.train()
    params = [p for p in model.parameters()]
    for p in params:
        p.requires_grad_(True)
    velocity = [None] * len(params)

    n = len(train_set)
    x_all = torch.as_tensor(train_set.x, dtype=dtype)
    y_all = torch.as_tensor(np.asarray(train_set.y), dtype=torch.long)

    history = TrainingHistory()
    history_path = None
    if output_dir is not None:
        os.makedirs(output_dir, exist_ok=True)
        history_path = os.path.join(output_dir, "history.jsonl")
        open(history_path, "w").close()

    best = None  # (accuracy, -epoch, parameter vector)
    for epoch in range(opt.epochs):
        t0 = time.monotonic()
        lr = opt.learning_rate_at(epoch)
        order = torch.randperm(n, generator=torch_generator(opt.seed, "data", epoch))
        sums = {"total": 0.0, "ce": 0.0, "kl": 0.0, "iga": 0.0}
        clip_events = 0
        for bi in range(0, n, opt.batch_size):
            idx = order[bi : bi + opt.batch_size]
            x, y = x_all[idx], y_all[idx]
            batch_index = bi // opt.batch_size

            def _diverged(reason):
                path = _write_divergence_snapshot(output_dir, {
                    "epoch": epoch, "batch_index": batch_index, "reason": reason,
                    "learning_rate": lr,
                    "parameter_norm": float(model.parameter_vector().norm()),
                })
                return TrainingDivergedError(
                    f"{reason} at epoch {epoch}, batch {batch_index}; snapshot: {path}",
                    epoch=epoch, batch_index=batch_index, snapshot_path=path,
                )

            try:
                breakdown = batch_objective(x, y, epoch, batch_index)
            except InvalidInputError as e:  # non-finite activations inside the objective
                raise _diverged(f"non-finite objective ({e})") from e
            total = breakdown.total
            if not torch.isfinite(total.detach()):
                raise _diverged(f"non-finite loss {float(total.detach())}")
            if total.requires_grad:
                grads = torch.autograd.grad(total, params, allow_unused=True)
                grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
                if opt.grad_clip is not None:
                    gnorm = torch.sqrt(sum((g * g).sum() for g in grads))
                    if gnorm > opt.grad_clip:
                        grads = [g * (opt.grad_clip / gnorm) for g in grads]
                        clip_events += 1
                with torch.no_grad():
                    for i, (p, g) in enumerate(zip(params, grads)):
                        new_p, velocity[i] = sgd_momentum_step(p, g, velocity[i], opt, lr=lr)
                        p.copy_(new_p)
            w = len(idx)
            sums["total"] += breakdown.total_value * w
            sums["ce"] += breakdown.ce_term * w
            sums["kl"] += breakdown.kl_term * w
            sums["iga"] += breakdown.iga_term * w

        record = EpochRecord(
            epoch=epoch,
            loss_total=sums["total"] / n,
            ce_term=sums["ce"] / n,
            kl_term=sums["kl"] / n,
            iga_term=sums["iga"] / n,
            learning_rate=lr,
            clean_accuracy=_accuracy(model, eval_set) if eval_set is not None else None,
            wall_time_s=time.monotonic() - t0,
            grad_clip_events=clip_events,
        )
        history.append(record)
        if history_path is not None:
            with open(history_path, "a") as f:
                f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
        if eval_set is not None and select_best:
            if best is None or record.clean_accuracy > best[0]:
                best = (record.clean_accuracy, epoch, model.parameter_vector())
        if checkpoint_every and output_dir and (epoch + 1) % checkpoint_every == 0:
            ckpt.save_checkpoint(model, os.path.join(output_dir, "checkpoints", f"epoch_{epoch:04d}.ckpt"))

    if best is not None:
        history.best_epoch = best[1]
        model.set_parameter_vector(best[2])
    model.eval()
    return model, history


def train_distill(teacher: Classifier, student: Classifier, train_set, loss_config: DistillLossConfig,
                  opt: OptimizerConfig, attack: AttackSpec = None, eval_set=None,
                  output_dir=None, checkpoint_every=None, select_best=True):
    """Distill ``teacher`` into ``student``.

    The adversarial variants require an attack spec for the inner
    maximization (recomputed fresh every batch, against the student); the
    clean variants must not get one. Parameter gradients flow through the
    student's input gradient (second-order) but never into the teacher, which
    runs frozen in eval mode throughout.
    """
    if loss_config.adversarial and attack is None:
        raise InvalidCallError(f"variant {loss_config.variant} requires an attack spec")
    if not loss_config.adversarial and attack is not None:
        raise InvalidCallError(f"variant {loss_config.variant} does not take an attack spec")

    frozen_teacher = teacher.snapshot().to_dtype(resolve_dtype(opt.precision))

    def objective(x, y, epoch, batch_index):
        delta = None
        if attack is not None:
            spec = replace(attack, seed=substream_seed(opt.seed, "attack", epoch, batch_index))
            delta = inner_max_delta(student, x, y, spec)
        return compute_loss(student, frozen_teacher, (x, y), loss_config, delta)

    return _fit(student, train_set, opt, objective, eval_set=eval_set, output_dir=output_dir,
                checkpoint_every=checkpoint_every, select_best=select_best)


def standard_train(model: Classifier, train_set, opt: OptimizerConfig, eval_set=None,
                   output_dir=None, checkpoint_every=None, select_best=True):
    """Plain cross-entropy training (the ST baseline)."""

    def objective(x, y, epoch, batch_index):
        ce = cross_entropy(model.logits(x), y, reduction="mean")
        return LossBreakdown(total=ce, ce_term=float(ce.detach()), kl_term=0.0, iga_term=0.0)

    return _fit(model, train_set, opt, objective, eval_set=eval_set, output_dir=output_dir,
                checkpoint_every=checkpoint_every, select_best=select_best)


def adversarial_train(model: Classifier, train_set, attack: AttackSpec, opt: OptimizerConfig,
                      eval_set=None, output_dir=None, checkpoint_every=None, select_best=True):
    """Adversarial training: minimize CE on PGD-perturbed inputs.

    With ``epsilon = 0`` the trajectory is identical to standard training
    under the same seed. Used to manufacture robust desk-scale teachers.
    """

    def objective(x, y, epoch, batch_index):
        spec = replace(attack, seed=substream_seed(opt.seed, "attack", epoch, batch_index))
        batch = pgd_attack(model, x, y, spec)
        ce = cross_entropy(model.logits(batch.x_adv), y, reduction="mean")
        return LossBreakdown(total=ce, ce_term=float(ce.detach()), kl_term=0.0, iga_term=0.0)

    return _fit(model, train_set, opt, objective, eval_set=eval_set, output_dir=output_dir,
                checkpoint_every=checkpoint_every, select_best=select_best)
