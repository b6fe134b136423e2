"""Desk-scale laboratory for adversarially robust knowledge distillation.

Students learn both logits and input-gradient knowledge from a frozen
teacher; PGD attacks, adversarial training, local-linearity measurement and
a two-model robustness bound round out the toolkit, wired into a
reproducible config-driven experiment harness.
"""

from .attacks import (
    AdversarialBatch,
    AttackSpec,
    clip_to_ball_and_range,
    get_attack,
    inner_max_delta,
    pgd_attack,
    register_attack,
)
from .analysis import (
    BoundCheckReport,
    LLMEstimate,
    RobustnessBound,
    bound_table,
    check_delta_robust,
    check_delta_robust_ladder,
    estimate_llm,
    gradient_identity_residual,
    grid_llm_ladder,
    perfect_student_check,
    robustness_bound,
    verify_bound,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config, parse_config, serialize_config
from .datasets import DatasetSplits, LabeledExamples, load_dataset
from .evaluation import RobustnessReport, evaluate
from .experiment import run_experiment
from .losses import (
    DistillLossConfig,
    LossBreakdown,
    compute_loss,
    iga_term,
    lambda_iga_from_batch,
)
from .models import (
    Classifier,
    ModelSpec,
    build_model,
    cross_entropy,
    input_gradient_ce,
    kl_with_temperature,
    softmax,
)
from .training import (
    OptimizerConfig,
    TrainingHistory,
    adversarial_train,
    sgd_momentum_step,
    standard_train,
    train_distill,
)

__version__ = "0.1.0"
