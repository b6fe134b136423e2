"""Ready-made experiment configurations.

The CIFAR-10 preset reproduces the reference training recipe verbatim
(200 epochs, batch 125, lr 0.1 with milestones [100, 150] and decay 0.1,
momentum 0.9, weight decay 2e-4, CE and KL weights both 0.5, temperature 1,
alignment coefficient 10/B, 20-step evaluation PGD).

The digits preset is the desk-scale stand-in on the 8x8 digits set. Teachers
are hardened at 4/16 (four steps of the 4-bit pixel grid). The headline
comparison radius is 2/16: an l-inf radius perturbs the loss through
``eps * sqrt(D)`` to first order, so the 64-dimensional equivalent of 4/255
on 3072-dimensional images is (4/255) * sqrt(3072/64) ~ 0.109, snapped up to
the pixel grid as 2/16 = 0.125.
"""

import copy

from .config import ExperimentConfig

CIFAR10_PRESET = {
    "schema_version": 1,
    "dataset": {"name": "cifar10-binary", "path": "data/cifar-10-batches-bin/data_batch_1.bin",
                "seed": 0, "test_fraction": 0.2, "subset_train": 4000},
    "teacher": {"checkpoint": "teachers/cifar10_teacher.ckpt"},
    "student": {"model": {"family": "cnn-relu", "width": 32, "depth": 2}},
    "variants": ["KD", "KDIGA"],
    "loss": {"lambda_ce": 0.5, "lambda_kl": 0.5, "iga_coefficient": 10.0,
             "temperature": 1.0, "iga_aggregation": "whole-batch-norm"},
    "optimizer": {"learning_rate": 0.1, "momentum": 0.9, "weight_decay": 0.0002,
                  "milestones": [100, 150], "decay_factor": 0.1, "epochs": 200,
                  "batch_size": 125, "precision": "float64"},
    "evaluation": {"radii": [1 / 255, 2 / 255, 3 / 255, 4 / 255, 5 / 255, 6 / 255, 7 / 255, 8 / 255],
                   "steps": 20},
    "analysis": {"radii": [4 / 255, 8 / 255], "method": "ascent", "budget": 10,
                 "steps": 50, "samples": 50},
    "seeds": [0],
    "output_dir": "runs/cifar10",
}

DIGITS_TRAIN_EPSILON = 4 / 16  # teacher hardening radius: four steps of the 4-bit grid
DIGITS_EVAL_EPSILON = 2 / 16  # dimension-scaled equivalent of 4/255 (see module docstring)

DIGITS_PRESET = {
    "schema_version": 1,
    "dataset": {"name": "digits-8x8", "seed": 0, "test_fraction": 0.2},
    "teacher": {
        "adversarial_train": {
            "model": {"family": "mlp-relu", "width": 128, "depth": 2},
            "attack": {"epsilon": DIGITS_TRAIN_EPSILON, "steps": 10, "random_start": True},
            "optimizer": {"learning_rate": 0.05, "momentum": 0.9, "weight_decay": 0.0002,
                          "milestones": [40, 55], "decay_factor": 0.1, "epochs": 64,
                          "batch_size": 125, "precision": "float64"},
            "seed": 0,
        }
    },
    "student": {"model": {"family": "mlp-relu", "width": 64, "depth": 2}},
    "variants": ["KD", "KDIGA"],
    "loss": {"lambda_ce": 0.5, "lambda_kl": 0.5, "iga_coefficient": 10.0,
             "temperature": 1.0, "iga_aggregation": "whole-batch-norm"},
    "optimizer": {"learning_rate": 0.05, "momentum": 0.9, "weight_decay": 0.0002,
                  "milestones": [40, 55], "decay_factor": 0.1, "epochs": 64,
                  "batch_size": 125, "precision": "float64"},
    "evaluation": {"radii": [DIGITS_EVAL_EPSILON, DIGITS_TRAIN_EPSILON], "steps": 20},
    "analysis": {"radii": [DIGITS_EVAL_EPSILON, DIGITS_TRAIN_EPSILON], "method": "ascent",
                 "budget": 10, "steps": 50, "samples": 40},
    "seeds": [0, 1, 2],
    "output_dir": "runs/digits",
}

MOONS_PRESET = {
    "schema_version": 1,
    "dataset": {"name": "synthetic-moons", "n": 600, "noise": 0.08, "seed": 0, "test_fraction": 0.25},
    "teacher": {
        "adversarial_train": {
            "model": {"family": "mlp-relu", "width": 32, "depth": 2},
            "attack": {"epsilon": 0.05, "steps": 10, "random_start": True},
            "optimizer": {"learning_rate": 0.1, "momentum": 0.9, "weight_decay": 0.0001,
                          "milestones": [30], "decay_factor": 0.1, "epochs": 40,
                          "batch_size": 64, "precision": "float64"},
            "seed": 0,
        }
    },
    "student": {"model": {"family": "mlp-relu", "width": 16, "depth": 2}},
    "variants": ["KD", "KDIGA"],
    "loss": {"lambda_ce": 0.5, "lambda_kl": 0.5, "iga_coefficient": 10.0,
             "temperature": 1.0, "iga_aggregation": "whole-batch-norm"},
    "optimizer": {"learning_rate": 0.1, "momentum": 0.9, "weight_decay": 0.0001,
                  "milestones": [30], "decay_factor": 0.1, "epochs": 40,
                  "batch_size": 64, "precision": "float64"},
    "evaluation": {"radii": [0.025, 0.05], "steps": 20},
    "analysis": {"radii": [4 / 255, 8 / 255], "method": "grid", "resolution": 101, "samples": 20},
    "seeds": [0],
    "output_dir": "runs/moons",
}

PRESETS = {"cifar10": CIFAR10_PRESET, "digits": DIGITS_PRESET, "moons": MOONS_PRESET}


def preset(name: str, **top_level_overrides) -> dict:
    """Deep copy of a named preset config mapping, optionally overridden."""
    d = copy.deepcopy(PRESETS[name])
    d.update(top_level_overrides)
    return d


def preset_config(name: str, **top_level_overrides) -> ExperimentConfig:
    return ExperimentConfig(**preset(name, **top_level_overrides))
