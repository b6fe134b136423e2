"""Experiment configuration: human-readable YAML with a schema version.

Unknown keys are hard errors at every level -- a silently ignored typo in a
loss weight would corrupt an experiment. A flag/override always wins over the
config file (see ``apply_overrides``); the serialized snapshot reflects the
resolved values.
"""

import hashlib
import json
from dataclasses import asdict, dataclass

import yaml

from .attacks import AttackSpec
from .errors import InvalidConfigError
from .losses import ADVERSARIAL_VARIANTS, VARIANTS, DistillLossConfig, lambda_iga_from_batch
from .training import OptimizerConfig

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "dataset", "teacher", "student", "variants", "loss",
             "optimizer", "train_attack", "evaluation", "analysis", "seeds", "output_dir"}
_LOSS_KEYS = {"lambda_ce", "lambda_kl", "lambda_iga", "iga_coefficient", "temperature", "iga_aggregation"}
_OPT_KEYS = {"learning_rate", "momentum", "weight_decay", "milestones", "decay_factor",
             "epochs", "batch_size", "precision", "grad_clip"}
_ATTACK_KEYS = {"epsilon", "steps", "alpha", "random_start", "restarts"}
_MODEL_KEYS = {"family", "width", "depth", "tokens"}
_EVAL_KEYS = {"radii", "steps", "alpha", "random_start", "restarts", "subsample", "attack"}
_ANALYSIS_KEYS = {"radii", "method", "budget", "steps", "resolution", "samples"}
_TEACHER_KEYS = {"checkpoint", "adversarial_train"}
_TEACHER_AT_KEYS = {"model", "attack", "optimizer", "seed"}
_STUDENT_KEYS = {"model", "checkpoint"}


def _reject_unknown(section: dict, allowed: set, where: str):
    if not isinstance(section, dict):
        raise InvalidConfigError(f"{where} must be a mapping")
    unknown = set(section) - allowed
    if unknown:
        raise InvalidConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


@dataclass
class ExperimentConfig:
    dataset: dict
    teacher: dict
    student: dict
    variants: list
    loss: dict
    optimizer: dict
    evaluation: dict
    seeds: list
    output_dir: str
    train_attack: dict = None
    analysis: dict = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise InvalidConfigError(f"unsupported schema_version {self.schema_version}")
        if not isinstance(self.dataset, dict) or "name" not in self.dataset:
            raise InvalidConfigError("dataset must be a mapping with a 'name'")
        _reject_unknown(self.teacher, _TEACHER_KEYS, "teacher")
        if sum(k in self.teacher for k in _TEACHER_KEYS) != 1:
            raise InvalidConfigError("teacher needs exactly one of: checkpoint, adversarial_train")
        if "adversarial_train" in self.teacher:
            at = self.teacher["adversarial_train"]
            _reject_unknown(at, _TEACHER_AT_KEYS, "teacher.adversarial_train")
            for need in ("model", "attack", "optimizer"):
                if need not in at:
                    raise InvalidConfigError(f"teacher.adversarial_train missing {need!r}")
            _reject_unknown(at["model"], _MODEL_KEYS, "teacher.adversarial_train.model")
            _reject_unknown(at["attack"], _ATTACK_KEYS, "teacher.adversarial_train.attack")
            _reject_unknown(at["optimizer"], _OPT_KEYS, "teacher.adversarial_train.optimizer")
        _reject_unknown(self.student, _STUDENT_KEYS, "student")
        if sum(k in self.student for k in _STUDENT_KEYS) != 1:
            raise InvalidConfigError("student needs exactly one of: model, checkpoint")
        if "model" in self.student:
            _reject_unknown(self.student["model"], _MODEL_KEYS, "student.model")
        if not self.variants:
            raise InvalidConfigError("variants must be a non-empty list")
        for v in self.variants:
            if v not in VARIANTS:
                raise InvalidConfigError(f"unknown variant {v!r}; known: {VARIANTS}")
        _reject_unknown(self.loss, _LOSS_KEYS, "loss")
        if "lambda_iga" in self.loss and "iga_coefficient" in self.loss:
            raise InvalidConfigError("give either loss.lambda_iga or loss.iga_coefficient, not both")
        _reject_unknown(self.optimizer, _OPT_KEYS, "optimizer")
        _reject_unknown(self.evaluation, _EVAL_KEYS, "evaluation")
        radii = self.evaluation.get("radii", [])
        if not radii or any(float(b) <= float(a) for a, b in zip(radii, radii[1:])):
            raise InvalidConfigError("evaluation.radii must be a strictly increasing list")
        if self.analysis is not None:
            _reject_unknown(self.analysis, _ANALYSIS_KEYS, "analysis")
        needs_attack = any(v in ADVERSARIAL_VARIANTS for v in self.variants)
        if needs_attack and not self.train_attack:
            raise InvalidConfigError("adversarial variants require a train_attack section")
        if self.train_attack is not None:
            _reject_unknown(self.train_attack, _ATTACK_KEYS, "train_attack")
        if not self.seeds:
            raise InvalidConfigError("seeds must be a non-empty list")
        if not self.output_dir:
            raise InvalidConfigError("output_dir is required")

    # -- typed views --------------------------------------------------------
    def loss_config(self, variant: str) -> DistillLossConfig:
        """Resolved loss config for one variant; the alignment weight may be
        batch-relative (``iga_coefficient`` -> c / batch_size)."""
        lam_iga = self.loss.get("lambda_iga")
        if lam_iga is None and "iga_coefficient" in self.loss:
            lam_iga = lambda_iga_from_batch(float(self.loss["iga_coefficient"]),
                                            int(self.optimizer["batch_size"]))
        base = DistillLossConfig(
            variant="KDIGA",  # permissive carrier; for_variant() zeroes inapplicable terms
            lambda_ce=float(self.loss.get("lambda_ce", 0.5)),
            lambda_kl=float(self.loss.get("lambda_kl", 0.5)),
            lambda_iga=float(lam_iga or 0.0),
            temperature=float(self.loss.get("temperature", 1.0)),
            iga_aggregation=self.loss.get("iga_aggregation", "whole-batch-norm"),
        )
        return base.for_variant(variant)

    def optimizer_config(self, seed: int, section: dict = None) -> OptimizerConfig:
        opt = dict(section if section is not None else self.optimizer)
        opt.setdefault("milestones", ())
        return OptimizerConfig(seed=seed, **{k: (tuple(v) if k == "milestones" else v) for k, v in opt.items()})

    def attack_spec(self, section: dict, seed: int = 0) -> AttackSpec:
        return AttackSpec(seed=seed, **section)

    def evaluation_attack(self) -> AttackSpec:
        ev = self.evaluation
        return AttackSpec(
            epsilon=float(ev["radii"][-1]),
            steps=int(ev.get("steps", 20)),
            alpha=ev.get("alpha"),
            random_start=bool(ev.get("random_start", False)),
            restarts=int(ev.get("restarts", 1)),
        )

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        return d


def parse_config(text: str) -> ExperimentConfig:
    raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise InvalidConfigError("config must be a mapping")
    _reject_unknown(raw, _TOP_KEYS, "config")
    missing = {"dataset", "teacher", "student", "variants", "loss", "optimizer",
               "evaluation", "seeds", "output_dir"} - set(raw)
    if missing:
        raise InvalidConfigError(f"config missing required section(s) {sorted(missing)}")
    return ExperimentConfig(**raw)


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        return parse_config(f.read())


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()


def validate_paths(cfg: ExperimentConfig):
    """Check that every referenced file exists (called before work starts,
    not at parse time, so configs can be authored ahead of their inputs)."""
    import os

    paths = []
    if "checkpoint" in cfg.teacher:
        paths.append(("teacher.checkpoint", cfg.teacher["checkpoint"]))
    if "checkpoint" in cfg.student:
        paths.append(("student.checkpoint", cfg.student["checkpoint"]))
    ds = cfg.dataset
    if ds.get("path"):
        paths.append(("dataset.path", ds["path"]))
    for key in ("train_files", "test_files"):
        for p in ds.get(key) or []:
            paths.append((f"dataset.{key}", p))
    missing = [(k, p) for k, p in paths if not os.path.exists(p)]
    if missing:
        detail = ", ".join(f"{k}={p!r}" for k, p in missing)
        raise InvalidConfigError(f"referenced path(s) do not exist: {detail}")


def apply_overrides(raw: dict, overrides: dict) -> dict:
    """Apply ``{'optimizer.epochs': 5, ...}`` dotted-path overrides onto a raw
    config mapping (in place); a flag always beats the file."""
    for path, value in overrides.items():
        node = raw
        *parents, leaf = path.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise InvalidConfigError(f"cannot override through non-mapping at {p!r} in {path!r}")
        node[leaf] = value
    return raw
