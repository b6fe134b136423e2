"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The directional-reproduction
criteria (7 and 8) share one full experiment on the 8x8 digits preset via a
module-scoped fixture; everything else runs on freshly built desk-scale
models. Paper-scale numbers are not reproduction targets here -- the checks
are property-based plus the directional trends.
"""

import json
import os
from itertools import product

import numpy as np
import pytest
import torch
import yaml

import robustdistill as rd
from robustdistill.attacks import validate_feasibility
from robustdistill.cli import main as cli_main
from robustdistill.config import parse_config
from robustdistill.presets import DIGITS_EVAL_EPSILON, preset
from robustdistill.seeding import numpy_generator

from conftest import central_diff_input, zoo_triples


def _report(criterion, description, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {description}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def digits_run(tmp_path_factory):
    """One full digits experiment (teacher AT + {KD, KDIGA} x 3 seeds + analysis)."""
    out = str(tmp_path_factory.mktemp("digits") / "run")
    raw = preset("digits", output_dir=out)
    cfg = parse_config(yaml.safe_dump(raw))
    result = rd.run_experiment(cfg, log=lambda *a: None)
    return cfg, result


def test_criterion_1_gradient_identity(rng):
    worst = 0.0
    for model, x, y in zoo_triples(rng, 100):
        worst = max(worst, rd.gradient_identity_residual(model, x, y))
    _report(1, "gradient identity on 100 random zoo triples", worst < 1e-5,
            f"max relative residual {worst:.3e} < 1e-5")


def test_criterion_2_finite_difference_agreement(rng):
    # probe points sit away from ReLU kinks, where central differences are valid
    worst_in = 0.0
    for model, x, y in zoo_triples(rng, 30, fd_safe=True):
        g = rd.input_gradient_ce(model, x, y).numpy()
        fd = central_diff_input(model, x, y)
        worst_in = max(worst_in, np.abs(g - fd).max() / max(1e-8, np.abs(fd).max()))

    # parameter gradient of the alignment term, double backprop vs central differences
    teacher = rd.build_model(rd.ModelSpec("mlp-relu", (2,), 3, width=4, depth=1), seed=3)
    worst_theta = 0.0
    for trial in range(3):
        student = rd.build_model(rd.ModelSpec("mlp-relu", (2,), 3, width=4, depth=1), seed=40 + trial)
        from conftest import min_relu_preactivation

        while True:
            xb_np = rng.uniform(0.2, 0.8, size=(5, 2))
            if all(min(min_relu_preactivation(m, xi) for xi in xb_np) > 1e-3
                   for m in (student, teacher)):
                break
        xb = torch.as_tensor(xb_np)
        yb = torch.as_tensor(rng.integers(0, 3, size=5))

        def value():
            g_s = rd.input_gradient_ce(student, xb, yb, create_graph=True)
            g_t = rd.input_gradient_ce(teacher, xb, yb).detach()
            return rd.iga_term(g_s, g_t, "whole-batch-norm")

        grads = torch.autograd.grad(value(), list(student.parameters()))
        flat = torch.cat([g.reshape(-1) for g in grads]).numpy()
        vec = student.parameter_vector()
        fd = np.zeros_like(flat)
        for i in range(len(vec)):
            for sign, slot in ((1, 0), (-1, 1)):
                v = vec.clone()
                v[i] += sign * 1e-4
                student.set_parameter_vector(v)
                val = float(value().detach())
                fd[i] += val if slot == 0 else -val
            fd[i] /= 2e-4
        student.set_parameter_vector(vec)
        worst_theta = max(worst_theta, np.abs(flat - fd).max() / max(1e-8, np.abs(fd).max()))
    ok = worst_in < 1e-4 and worst_theta < 1e-3
    _report(2, "finite-difference agreement", ok,
            f"input-grad {worst_in:.3e} < 1e-4, alignment theta-grad {worst_theta:.3e} < 1e-3")


def test_criterion_3_pgd_corner_oracle(rng):
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(2, 11))
        model = rd.build_model(rd.ModelSpec("linear", (d,), 2), seed=int(rng.integers(0, 2**31)))
        x = rng.uniform(0.15, 0.85, size=(d,))
        y = int(rng.integers(0, 2))
        eps = float(rng.uniform(0.01, 0.1))
        spec = rd.AttackSpec(epsilon=eps, steps=1, alpha=eps)
        achieved = float(rd.pgd_attack(model, x[None], [y], spec).loss[0])
        x0 = torch.as_tensor(x)
        lower = torch.clamp(x0 - eps, min=0.0)
        upper = torch.clamp(x0 + eps, max=1.0)
        corners = torch.tensor(list(product(*[(float(lower[i]), float(upper[i])) for i in range(d)])),
                               dtype=torch.float64)
        with torch.no_grad():
            best = float(rd.cross_entropy(model.logits(corners),
                                          torch.full((len(corners),), y), reduction="none").max())
        worst = max(worst, abs(best - achieved))
    _report(3, "single-step PGD reaches the exhaustive corner maximum on 50 linear models",
            worst <= 1e-9, f"worst loss mismatch {worst:.3e} <= 1e-9")


def test_criterion_4_llm_oracle(rng):
    worst_rel = 0.0
    monotone = True
    zero_exact = True
    for trial in range(8):
        model = rd.build_model(rd.ModelSpec("mlp-relu", (2,), 3, width=int(rng.integers(4, 10)),
                                            depth=int(rng.integers(1, 3))),
                               seed=int(rng.integers(0, 2**31)))
        x = rng.uniform(0.2, 0.8, size=(2,))
        y = int(rng.integers(0, 3))
        for delta in (4 / 255, 8 / 255):
            grid = rd.estimate_llm(model, x, y, delta, method="grid", resolution=101)
            ascent = rd.estimate_llm(model, x, y, delta, method="ascent", budget=10, steps=50)
            worst_rel = max(worst_rel, abs(ascent.value - grid.value) / max(grid.value, 1e-15))
        zero_exact &= rd.estimate_llm(model, x, y, 0.0, method="grid").value == 0.0
        zero_exact &= rd.estimate_llm(model, x, y, 0.0, method="ascent").value == 0.0
        ladder = [e.value for e in rd.grid_llm_ladder(model, x, y,
                                                      [2 / 255, 4 / 255, 8 / 255, 16 / 255],
                                                      resolution=101)]
        monotone &= all(a <= b + 1e-15 for a, b in zip(ladder, ladder[1:]))
    ok = worst_rel <= 0.05 and zero_exact and monotone
    _report(4, "grid/ascent linearity-measure agreement, exact zero, monotone ladder", ok,
            f"worst relative gap {worst_rel:.4f} <= 0.05")


def test_criterion_5_bound_inequality(rng):
    total_violations = 0
    worst_margin = -np.inf
    for pair in range(20):
        student = rd.build_model(rd.ModelSpec("mlp-relu", (2,), 3, width=int(rng.integers(4, 10)),
                                              depth=int(rng.integers(1, 3))),
                                 seed=int(rng.integers(0, 2**31)))
        teacher = rd.build_model(rd.ModelSpec("mlp-relu", (2,), 3, width=int(rng.integers(4, 10)),
                                              depth=int(rng.integers(1, 3))),
                                 seed=int(rng.integers(0, 2**31)))
        x = rng.uniform(0.2, 0.8, size=(2,))
        y = int(rng.integers(0, 3))
        rep = rd.verify_bound(student, teacher, (x, y), 8 / 255, samples=1000,
                              llm_method="grid", resolution=201, seed=pair)
        total_violations += rep.total_violations
        worst_margin = max(worst_margin, rep.worst_margin)
    _report(5, "two-model bound inequality, 20 pairs x 1000 sampled perturbations",
            total_violations == 0,
            f"0 violations required, got {total_violations}; worst margin {worst_margin:.3e}")


def test_criterion_6_perfect_student_ideal_case(rng):
    splits = rd.load_dataset({"name": "synthetic-moons", "n": 240, "noise": 0.08, "seed": 1})
    teacher = rd.build_model(rd.ModelSpec("mlp-relu", (2,), 2, width=16, depth=2), seed=5)
    rd.standard_train(teacher, splits.train, rd.OptimizerConfig(learning_rate=0.2, epochs=15,
                                                                batch_size=32, seed=0))
    student = teacher.snapshot().unfreeze()
    cfg = rd.DistillLossConfig(variant="KDIGA", lambda_iga=0.1)
    all_zero = True
    x, y = splits.train.x, splits.train.y
    for i in range(0, len(y), 32):
        out = rd.compute_loss(student, teacher, (torch.as_tensor(x[i:i + 32]), y[i:i + 32]), cfg)
        all_zero &= out.kl_term == 0.0 and out.iga_term == 0.0
    radii = [0.01, 0.02, 0.05, 0.1]
    ladders_equal = True
    for i in range(6):
        ls = rd.check_delta_robust_ladder(student, x[i], radii, resolution=41)
        lt = rd.check_delta_robust_ladder(teacher, x[i], radii, resolution=41)
        ladders_equal &= [r.robust for r in ls] == [r.robust for r in lt]
    _report(6, "teacher-copy student: zero KL and alignment terms, identical robustness ladder",
            all_zero and ladders_equal)


def test_criterion_7_directional_reproduction(digits_run):
    cfg, result = digits_run
    key = f"{DIGITS_EVAL_EPSILON:.10g}"
    kd = result.summary["variants"]["KD"]
    kdiga = result.summary["variants"]["KDIGA"]
    gap = (kdiga["robust"][key]["mean"] - kd["robust"][key]["mean"]) * 100
    clean_diff = (kd["clean_accuracy"]["mean"] - kdiga["clean_accuracy"]["mean"]) * 100
    ok = gap >= 10.0 and clean_diff <= 3.0
    _report(7, "digits: gradient-aligned student beats plain distillation under PGD", ok,
            f"robust-accuracy gap {gap:.1f} points >= 10 at radius {key}, "
            f"clean within {clean_diff:.1f} <= 3 points, 3 seeds")


def test_criterion_8_bound_component_trend(digits_run):
    cfg, result = digits_run
    with open(result.bound_table_path) as f:
        header = f.readline().strip().split("\t")
        rows = [dict(zip(header, line.strip().split("\t"))) for line in f]
    llm_cols = [c for c in header if c.startswith("llm_")]
    by_cell = {r["model"]: r for r in rows}
    strictly_smaller = True
    details = []
    for seed in cfg.seeds:
        kd = by_cell[f"KD_seed{seed}"]
        ig = by_cell[f"KDIGA_seed{seed}"]
        for col in llm_cols + ["grad_gap_l2"]:
            strictly_smaller &= float(ig[col]) < float(kd[col])
        details.append(f"seed{seed}: gap {float(ig['grad_gap_l2']):.3f}<{float(kd['grad_gap_l2']):.3f}")
    _report(8, "bound components: aligned student has smaller gradient gap and linearity measure",
            strictly_smaller, "; ".join(details))


def test_criterion_9_degeneracy_and_cli_determinism(rng, tmp_path, capsys):
    splits = rd.load_dataset({"name": "synthetic-moons", "n": 160, "noise": 0.08, "seed": 2})
    teacher = rd.build_model(rd.ModelSpec("mlp-relu", (2,), 2, width=12, depth=1), seed=1)

    def run(variant):
        student = rd.build_model(rd.ModelSpec("mlp-relu", (2,), 2, width=8, depth=1), seed=2)
        rd.train_distill(teacher, student, splits.train,
                         rd.DistillLossConfig(variant=variant, lambda_iga=0.0),
                         rd.OptimizerConfig(learning_rate=0.2, epochs=4, batch_size=32, seed=0))
        return student.parameter_vector()

    bitwise = torch.equal(run("KD"), run("KDIGA"))

    raw = {
        "schema_version": 1,
        "dataset": {"name": "synthetic-moons", "n": 120, "noise": 0.08, "seed": 0},
        "teacher": {"adversarial_train": {
            "model": {"family": "mlp-relu", "width": 12, "depth": 1},
            "attack": {"epsilon": 0.03, "steps": 3, "random_start": True},
            "optimizer": {"learning_rate": 0.2, "momentum": 0.9, "epochs": 4, "batch_size": 32},
            "seed": 0,
        }},
        "student": {"model": {"family": "mlp-relu", "width": 8, "depth": 1}},
        "variants": ["KD"],
        "loss": {"lambda_ce": 0.5, "lambda_kl": 0.5},
        "optimizer": {"learning_rate": 0.2, "momentum": 0.9, "epochs": 4, "batch_size": 32},
        "evaluation": {"radii": [0.0, 0.03], "steps": 4},
        "analysis": {"radii": [0.02, 0.03], "method": "grid", "resolution": 41, "samples": 3},
        "seeds": [0],
        "output_dir": "placeholder",
    }
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(yaml.safe_dump(raw))

    outs = []
    for tag in ("a", "b"):
        out = str(tmp_path / tag)
        assert cli_main(["experiment", "--config", str(cfg_path), "--output-dir", out]) == 0
        ckpt = os.path.join(out, "cells", "KD_seed0", "student.ckpt")
        rep = str(tmp_path / f"rep_{tag}.json")
        assert cli_main(["attack", "--config", str(cfg_path), "--checkpoint", ckpt,
                         "--radii", "0.0,0.03", "--output", rep]) == 0
        tab = str(tmp_path / f"tab_{tag}.tsv")
        assert cli_main(["analyze", "--config", str(cfg_path),
                         "--teacher", os.path.join(out, "teacher.ckpt"), "--student", ckpt,
                         "--radii", "0.02,0.03", "--method", "grid", "--samples", "2",
                         "--output", tab]) == 0
        fig = str(tmp_path / f"fig_{tag}.png")
        assert cli_main(["plot", "--reports", rep, "--radii", "0.0,0.03", "--output", fig]) == 0
        outs.append((out, rep, tab, fig))

    (out_a, rep_a, tab_a, fig_a), (out_b, rep_b, tab_b, fig_b) = outs
    same = open(rep_a, "rb").read() == open(rep_b, "rb").read()
    same &= open(tab_a, "rb").read() == open(tab_b, "rb").read()
    same &= (open(os.path.splitext(fig_a)[0] + ".tsv", "rb").read()
             == open(os.path.splitext(fig_b)[0] + ".tsv", "rb").read())
    for rel in ("summary.json", "cells/KD_seed0/report.json", "cells/KD_seed0/student.ckpt",
                "teacher.ckpt", "plot.tsv"):
        same &= (open(os.path.join(out_a, rel), "rb").read()
                 == open(os.path.join(out_b, rel), "rb").read())
    hist = []
    for out in (out_a, out_b):
        with open(os.path.join(out, "cells", "KD_seed0", "history.jsonl")) as f:
            rows = [json.loads(line) for line in f]
        for row in rows:
            row.pop("wall_time_s", None)
        hist.append(rows)
    same &= hist[0] == hist[1]

    # train verb: reruns produce byte-identical checkpoints
    ckpts = []
    for tag in ("t1", "t2"):
        out = str(tmp_path / tag)
        assert cli_main(["train", "--config", str(cfg_path), "--output-dir", out]) == 0
        ckpts.append(open(os.path.join(out, "cells", "KD_seed0", "student.ckpt"), "rb").read())
    same &= ckpts[0] == ckpts[1]

    # verify verb: deterministic output and exit status
    capsys.readouterr()
    assert cli_main(["verify", "--suite", "gradient-identity"]) == 0
    first = capsys.readouterr().out
    assert cli_main(["verify", "--suite", "gradient-identity"]) == 0
    same &= capsys.readouterr().out == first

    _report(9, "zero-weight alignment degeneracy is bitwise; CLI verbs rerun byte-identical",
            bitwise and same)


def test_criterion_10_attack_feasibility(rng):
    rng2 = numpy_generator(99, "acceptance-feasibility")
    violations = 0
    worst_ball = 0.0
    worst_range = 0.0
    for trial in range(30):
        family = ("linear", "mlp-relu", "tiny-attention")[trial % 3]
        d = int(rng2.integers(2, 8))
        model = rd.build_model(rd.ModelSpec(family, (d,), 3, width=6, depth=1),
                               seed=int(rng2.integers(0, 2**31)))
        n = int(rng2.integers(1, 12))
        x = torch.as_tensor(np.clip(rng2.uniform(-0.05, 1.05, size=(n, d)), 0, 1))
        y = torch.as_tensor(rng2.integers(0, 3, size=n))
        spec = rd.AttackSpec(
            epsilon=float(rng2.choice([0.0, 0.01, 0.1, 0.5, 0.9])),
            steps=int(rng2.integers(0, 8)),
            random_start=bool(rng2.integers(0, 2)),
            restarts=int(rng2.integers(1, 4)),
            seed=int(rng2.integers(0, 2**31)),
        )
        batch = rd.pgd_attack(model, x, y, spec)
        ball_gap = float((batch.x_adv - x).abs().max()) - spec.epsilon
        range_gap = max(float(-batch.x_adv.min()), float(batch.x_adv.max()) - 1.0)
        worst_ball = max(worst_ball, ball_gap)
        worst_range = max(worst_range, range_gap)
        try:
            validate_feasibility(batch.x, batch.x_adv, spec)
        except Exception:
            violations += 1
    _report(10, "every adversarial example satisfies the ball and range constraints elementwise",
            violations == 0 and worst_ball <= 1e-9 and worst_range <= 1e-9,
            f"worst ball excess {worst_ball:.2e}, worst range excess {worst_range:.2e}")
