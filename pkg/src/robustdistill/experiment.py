"""Config-driven experiment runner.

One experiment = teacher preparation, a (variant x seed) grid of distillation
cells sharing that teacher, robust-accuracy evaluation, a bound table, and a
summary plot -- all under one output directory with a content-hash manifest.
Completed work is skipped on re-runs: a complete manifest makes the whole run
a no-op (unless forced), and a partial run resumes cell by cell.
"""

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import plots
from .analysis import bound_table
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_hash, serialize_config, validate_paths
from .datasets import load_dataset
from .evaluation import RobustnessReport, evaluate
from .models import ModelSpec, build_model
from .seeding import substream_seed
from .training import adversarial_train, train_distill

MANIFEST_SCHEMA = "experiment-manifest-v1"
SUMMARY_SCHEMA = "experiment-summary-v1"


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _json_dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def verify_manifest(output_dir) -> bool:
    """True iff a manifest exists, claims completion, and every artifact hash matches."""
    path = os.path.join(output_dir, "manifest.json")
    if not os.path.exists(path):
        return False
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("schema") != MANIFEST_SCHEMA or manifest.get("status") != "complete":
        return False
    for rel, digest in manifest.get("artifacts", {}).items():
        full = os.path.join(output_dir, rel)
        if not os.path.exists(full) or _sha256_file(full) != digest:
            return False
    return True


@dataclass
class ExperimentResult:
    output_dir: str
    summary: dict
    report_paths: dict = field(default_factory=dict)
    bound_table_path: str = None
    manifest_path: str = None
    resumed: bool = False


def _cell_dir(output_dir, variant, seed):
    return os.path.join(output_dir, "cells", f"{variant}_seed{seed}")


def _cell_complete(cell_dir) -> bool:
    marker = os.path.join(cell_dir, "cell.json")
    if not os.path.exists(marker):
        return False
    with open(marker) as f:
        info = json.load(f)
    for rel, digest in info.get("artifacts", {}).items():
        full = os.path.join(cell_dir, rel)
        if not os.path.exists(full) or _sha256_file(full) != digest:
            return False
    return True


def _student_spec(cfg: ExperimentConfig, input_shape, num_classes) -> ModelSpec:
    section = dict(cfg.student["model"])
    return ModelSpec(input_shape=input_shape, num_classes=num_classes, **section)


def _prepare_teacher(cfg: ExperimentConfig, splits, output_dir, log):
    path = os.path.join(output_dir, "teacher.ckpt")
    if "checkpoint" in cfg.teacher:
        teacher = load_checkpoint(cfg.teacher["checkpoint"])
        save_checkpoint(teacher, path)  # snapshot into the bundle
        return teacher, path
    if os.path.exists(path):
        log(f"resume: reusing trained teacher checkpoint {path}")
        return load_checkpoint(path), path
    recipe = cfg.teacher["adversarial_train"]
    seed = int(recipe.get("seed", 0))
    spec = ModelSpec(input_shape=splits.train.input_shape, num_classes=splits.num_classes,
                     **recipe["model"])
    model = build_model(spec, substream_seed(seed, "teacher-init"))
    attack = cfg.attack_spec(recipe["attack"])
    opt = cfg.optimizer_config(seed=substream_seed(seed, "teacher"), section=recipe["optimizer"])
    model, history = adversarial_train(model, splits.train, attack, opt, eval_set=splits.test)
    _atomic_write(os.path.join(output_dir, "teacher_history.jsonl"), history.to_jsonl())
    save_checkpoint(model, path)
    return model, path


def run_experiment(cfg: ExperimentConfig, force: bool = False, log=print) -> ExperimentResult:
    """Execute the full grid described by ``cfg``; see module docstring.

    Returns the summary and artifact paths. Re-running against an existing
    complete manifest is a no-op unless ``force``.
    """
    validate_paths(cfg)
    output_dir = cfg.output_dir
    os.makedirs(output_dir, exist_ok=True)

    if not force and verify_manifest(output_dir):
        with open(os.path.join(output_dir, "manifest.json")) as f:
            manifest = json.load(f)
        if manifest.get("config_sha256") == config_hash(cfg):
            log(f"experiment already complete at {output_dir}; re-run is a no-op (use force to redo)")
            with open(os.path.join(output_dir, "summary.json")) as f:
                summary = json.load(f)
            return ExperimentResult(output_dir=output_dir, summary=summary,
                                    manifest_path=os.path.join(output_dir, "manifest.json"),
                                    resumed=True)

    _atomic_write(os.path.join(output_dir, "config.yaml"), serialize_config(cfg))
    splits = load_dataset(cfg.dataset)
    teacher, teacher_path = _prepare_teacher(cfg, splits, output_dir, log)

    eval_attack = cfg.evaluation_attack()
    radii = [float(r) for r in cfg.evaluation["radii"]]
    subsample = cfg.evaluation.get("subsample")
    attack_name = cfg.evaluation.get("attack", "pgd")

    teacher_report = evaluate(teacher, splits.test, radii, attack=eval_attack,
                              attack_name=attack_name, subsample=subsample,
                              seed=substream_seed(0, "teacher-eval"), model_id="teacher")
    _atomic_write(os.path.join(output_dir, "teacher_report.json"), teacher_report.to_json())
    teacher_ref = {"clean_accuracy": teacher_report.clean_accuracy,
                   "robust": {f"{r:.10g}": v for r, v in teacher_report.robust.items()}}

    report_paths = {}
    students = {}
    cell_substreams = {}
    for variant in cfg.variants:
        for seed in cfg.seeds:
            cell = _cell_dir(output_dir, variant, seed)
            cell_id = f"{variant}_seed{seed}"
            cell_substreams[cell_id] = {
                "optimizer": int(seed),
                "init": substream_seed(seed, "student-init"),
                "evaluation": substream_seed(seed, "evaluation"),
            }
            if not force and _cell_complete(cell):
                log(f"resume: skipping completed cell {cell_id}")
                students[cell_id] = load_checkpoint(os.path.join(cell, "student.ckpt"))
                report_paths[cell_id] = os.path.join(cell, "report.json")
                continue
            os.makedirs(cell, exist_ok=True)
            if "checkpoint" in cfg.student:
                student = load_checkpoint(cfg.student["checkpoint"]).unfreeze()
            else:
                spec = _student_spec(cfg, splits.train.input_shape, splits.num_classes)
                student = build_model(spec, substream_seed(seed, "student-init"))
            loss_cfg = cfg.loss_config(variant)
            attack = cfg.attack_spec(cfg.train_attack) if loss_cfg.adversarial else None
            opt = cfg.optimizer_config(seed=seed)
            student, history = train_distill(teacher, student, splits.train, loss_cfg, opt,
                                             attack=attack, eval_set=splits.test, output_dir=cell)
            save_checkpoint(student, os.path.join(cell, "student.ckpt"))
            report = evaluate(student, splits.test, radii, attack=eval_attack,
                              attack_name=attack_name, subsample=subsample,
                              seed=substream_seed(seed, "evaluation"),
                              model_id=cell_id, teacher_reference=teacher_ref)
            _atomic_write(os.path.join(cell, "report.json"), report.to_json())
            artifacts = {rel: _sha256_file(os.path.join(cell, rel))
                         for rel in ("student.ckpt", "history.jsonl", "report.json")}
            _atomic_write(os.path.join(cell, "cell.json"), _json_dump({
                "cell": cell_id, "artifacts": artifacts,
                "substreams": cell_substreams[cell_id],
            }))
            students[cell_id] = student
            report_paths[cell_id] = os.path.join(cell, "report.json")

    # bound table across all trained students, teacher as the gradient reference
    bt_path = None
    if cfg.analysis is not None:
        ana = cfg.analysis
        table = bound_table(
            students, teacher, splits.test,
            radii=[float(r) for r in ana["radii"]],
            method=ana.get("method", "ascent"),
            budget=int(ana.get("budget", 10)),
            steps=int(ana.get("steps", 50)),
            resolution=int(ana.get("resolution", 101)),
            max_samples=int(ana.get("samples", 50)),
            seed=0,
        )
        bt_path = os.path.join(output_dir, "analysis.tsv")
        _atomic_write(bt_path, table.to_tsv())

    summary = _summarize(cfg, report_paths, teacher_report)
    _atomic_write(os.path.join(output_dir, "summary.json"), _json_dump(summary))

    mean_reports = _mean_reports(cfg, report_paths)
    plot_png = os.path.join(output_dir, "plot.png")
    plots.emit_plot(mean_reports, radii, plot_png)

    artifacts = {"config.yaml": None, "teacher.ckpt": None, "teacher_report.json": None,
                 "summary.json": None, "plot.tsv": None}
    if bt_path:
        artifacts["analysis.tsv"] = None
    if "adversarial_train" in cfg.teacher:
        artifacts["teacher_history.jsonl"] = None
    for cell_id, rp in report_paths.items():
        rel = os.path.relpath(rp, output_dir)
        artifacts[rel] = None
        cell_rel = os.path.dirname(rel)
        for name in ("student.ckpt", "history.jsonl", "cell.json"):
            artifacts[os.path.join(cell_rel, name)] = None
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "status": "complete",
        "config_sha256": config_hash(cfg),
        "seeds": list(cfg.seeds),
        "variants": list(cfg.variants),
        "substreams": {
            "teacher": int(cfg.teacher.get("adversarial_train", {}).get("seed", 0))
            if "adversarial_train" in cfg.teacher else None,
            "cells": cell_substreams,
        },
        "artifacts": {rel: _sha256_file(os.path.join(output_dir, rel)) for rel in artifacts},
    }
    _atomic_write(os.path.join(output_dir, "manifest.json"), _json_dump(manifest))
    return ExperimentResult(output_dir=output_dir, summary=summary, report_paths=report_paths,
                            bound_table_path=bt_path,
                            manifest_path=os.path.join(output_dir, "manifest.json"))


def _load_report(path) -> RobustnessReport:
    with open(path) as f:
        return RobustnessReport.from_json(f.read())


def _summarize(cfg, report_paths, teacher_report) -> dict:
    per_variant = {}
    for variant in cfg.variants:
        cleans, robusts = [], {}
        for seed in cfg.seeds:
            rep = _load_report(report_paths[f"{variant}_seed{seed}"])
            cleans.append(rep.clean_accuracy)
            for r, acc in rep.robust.items():
                robusts.setdefault(r, []).append(acc)
        per_variant[variant] = {
            "seeds": list(cfg.seeds),
            "clean_accuracy": {"mean": float(np.mean(cleans)), "std": float(np.std(cleans))},
            "robust": {f"{r:.10g}": {"mean": float(np.mean(v)), "std": float(np.std(v))}
                       for r, v in sorted(robusts.items())},
        }
    return {
        "schema": SUMMARY_SCHEMA,
        "variants": per_variant,
        "teacher": {"clean_accuracy": teacher_report.clean_accuracy,
                    "robust": {f"{r:.10g}": v for r, v in teacher_report.robust.items()}},
    }


def _mean_reports(cfg, report_paths) -> list:
    """Per-variant mean-over-seeds pseudo-reports for plotting."""
    out = []
    for variant in cfg.variants:
        reps = [_load_report(report_paths[f"{variant}_seed{seed}"]) for seed in cfg.seeds]
        robust = {r: float(np.mean([rep.robust[r] for rep in reps])) for r in reps[0].robust}
        out.append(RobustnessReport(
            model_id=variant,
            clean_accuracy=float(np.mean([rep.clean_accuracy for rep in reps])),
            robust=robust,
            attack=reps[0].attack,
            n_examples=reps[0].n_examples,
        ))
    return out
