"""Command-line surface.

Verbs: ``train`` (one distillation cell), ``attack`` (evaluate a checkpoint
over a radius ladder), ``analyze`` (bound table for a model set), ``verify``
(built-in self-check suites), ``experiment`` (full grid from a config file),
``plot``. Flags mirror config fields and always override the config file.
Exit code 0 on success; failures print a machine-readable JSON error record
to stderr (exit 2 for configuration problems, 1 otherwise).
"""

import argparse
import json
import os
import sys

import yaml

from . import selfcheck
from .analysis import bound_table
from .checkpoint import load_checkpoint, save_checkpoint
from .config import apply_overrides, parse_config
from .datasets import load_dataset
from .errors import InvalidCallError, InvalidConfigError, InvalidInputError
from .evaluation import RobustnessReport, evaluate
from .experiment import _atomic_write, run_experiment
from .models import build_model
from .plots import emit_plot
from .presets import PRESETS, preset
from .seeding import substream_seed
from .training import train_distill

CONFIG_ERRORS = (InvalidConfigError, InvalidInputError, InvalidCallError, FileNotFoundError)


def _parse_set(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise InvalidConfigError(f"--set expects key.path=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = yaml.safe_load(value)
    return out


def _load_config(args):
    if args.preset:
        raw = preset(args.preset)
    elif args.config:
        with open(args.config) as f:
            raw = yaml.safe_load(f.read())
    else:
        raise InvalidConfigError("give --config FILE or --preset NAME")
    overrides = _parse_set(getattr(args, "set", None))
    if getattr(args, "output_dir", None):
        overrides["output_dir"] = args.output_dir
    apply_overrides(raw, overrides)
    return parse_config(yaml.safe_dump(raw))


def _cmd_train(args):
    cfg = _load_config(args)
    from .experiment import _prepare_teacher, _student_spec

    splits = load_dataset(cfg.dataset)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    teacher, _ = _prepare_teacher(cfg, splits, out, print)
    variant = args.variant or cfg.variants[0]
    seed = cfg.seeds[0] if args.seed is None else args.seed
    if "checkpoint" in cfg.student:
        student = load_checkpoint(cfg.student["checkpoint"]).unfreeze()
    else:
        student = build_model(_student_spec(cfg, splits.train.input_shape, splits.num_classes),
                              substream_seed(seed, "student-init"))
    loss_cfg = cfg.loss_config(variant)
    attack = cfg.attack_spec(cfg.train_attack) if loss_cfg.adversarial else None
    cell = os.path.join(out, "cells", f"{variant}_seed{seed}")
    student, history = train_distill(teacher, student, splits.train, loss_cfg,
                                     cfg.optimizer_config(seed=seed), attack=attack,
                                     eval_set=splits.test, output_dir=cell)
    ckpt_path = os.path.join(cell, "student.ckpt")
    save_checkpoint(student, ckpt_path)
    print(f"trained {variant} seed={seed}: checkpoint {ckpt_path}, "
          f"final clean accuracy {history.final_record().clean_accuracy}")
    return 0


def _cmd_attack(args):
    cfg = _load_config(args)
    splits = load_dataset(cfg.dataset)
    model = load_checkpoint(args.checkpoint)
    radii = [float(r) for r in args.radii.split(",")] if args.radii else [float(r) for r in cfg.evaluation["radii"]]
    template = cfg.evaluation_attack()
    if args.steps is not None:
        from dataclasses import replace

        template = replace(template, steps=args.steps)
    report = evaluate(model, splits.test, radii, attack=template,
                      attack_name=cfg.evaluation.get("attack", "pgd"),
                      subsample=cfg.evaluation.get("subsample"),
                      seed=args.seed or 0, model_id=os.path.basename(args.checkpoint))
    text = report.to_json()
    if args.output:
        _atomic_write(args.output, text)
        print(f"wrote {args.output}")
    else:
        print(text, end="")
    return 0


def _model_labels(paths):
    """Unique table labels: file stem, disambiguated by the parent directory."""
    stems = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    labels = []
    for p, stem in zip(paths, stems):
        if stems.count(stem) > 1:
            stem = f"{os.path.basename(os.path.dirname(os.path.abspath(p)))}_{stem}"
        label = stem
        k = 2
        while label in labels:
            label = f"{stem}_{k}"
            k += 1
        labels.append(label)
    return labels


def _cmd_analyze(args):
    cfg = _load_config(args)
    splits = load_dataset(cfg.dataset)
    teacher = load_checkpoint(args.teacher)
    models = {}
    for item, name in zip(args.student, _model_labels(args.student)):
        models[name] = load_checkpoint(item)
    ana = cfg.analysis or {}
    radii = [float(r) for r in args.radii.split(",")] if args.radii else [float(r) for r in ana.get("radii", [4 / 255, 8 / 255])]
    table = bound_table(models, teacher, splits.test, radii,
                        method=args.method or ana.get("method", "ascent"),
                        budget=int(ana.get("budget", 10)), steps=int(ana.get("steps", 50)),
                        resolution=int(ana.get("resolution", 101)),
                        max_samples=args.samples or int(ana.get("samples", 50)), seed=args.seed or 0)
    text = table.to_tsv()
    if args.output:
        _atomic_write(args.output, text)
        print(f"wrote {args.output}")
    else:
        print(text, end="")
    return 0


def _cmd_verify(args):
    names = None if args.suite == "all" else [args.suite]
    results = selfcheck.run_suites(names, seed=args.seed or 0)
    failed = False
    for name, res in results.items():
        status = "PASS" if res.get("pass") else "FAIL"
        failed = failed or not res.get("pass")
        detail = {k: v for k, v in res.items() if k != "pass"}
        print(f"[{status}] {name}: {json.dumps(detail, sort_keys=True, default=str)}")
    return 1 if failed else 0


def _cmd_experiment(args):
    cfg = _load_config(args)
    result = run_experiment(cfg, force=args.force)
    print(f"experiment complete: {result.output_dir}")
    return 0


def _cmd_plot(args):
    reports = []
    for path in args.reports:
        with open(path) as f:
            reports.append(RobustnessReport.from_json(f.read()))
    radii = [float(r) for r in args.radii.split(",")]
    png, tsv = emit_plot(reports, radii, args.output)
    print(f"wrote {png} and {tsv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustdistill",
                                     description="Adversarially robust knowledge distillation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_opts(p, output_dir=True):
        p.add_argument("--config", help="experiment config YAML")
        p.add_argument("--preset", choices=sorted(PRESETS), help="named built-in config")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="override a config field (repeatable; overrides the file)")
        if output_dir:
            p.add_argument("--output-dir", help="override output directory")

    p = sub.add_parser("train", help="run one distillation cell")
    add_config_opts(p)
    p.add_argument("--variant", help="loss variant (default: first in config)")
    p.add_argument("--seed", type=int, help="training seed (default: first in config)")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("attack", help="evaluate a checkpoint over a radius ladder")
    add_config_opts(p, output_dir=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--radii", help="comma-separated radii (default: config ladder)")
    p.add_argument("--steps", type=int, help="attack steps override")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="write the report here instead of stdout")
    p.set_defaults(fn=_cmd_attack)

    p = sub.add_parser("analyze", help="bound table for student checkpoints against a teacher")
    add_config_opts(p, output_dir=False)
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", nargs="+", required=True)
    p.add_argument("--radii", help="comma-separated radii")
    p.add_argument("--method", choices=["grid", "ascent"])
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    p.set_defaults(fn=_cmd_analyze)

    p = sub.add_parser("verify", help="run built-in verification suites")
    p.add_argument("--suite", default="all", choices=["all"] + sorted(selfcheck.SUITES))
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("experiment", help="run the full grid from a config")
    add_config_opts(p)
    p.add_argument("--force", action="store_true", help="redo even if the manifest is complete")
    p.set_defaults(fn=_cmd_experiment)

    p = sub.add_parser("plot", help="grouped-bar accuracy plot from report files")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--radii", required=True, help="comma-separated radii")
    p.add_argument("--output", required=True)
    p.set_defaults(fn=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CONFIG_ERRORS as e:
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return 2
    except Exception as e:  # runtime failure: machine-readable record, nonzero exit
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
