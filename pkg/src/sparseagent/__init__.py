"""Adaptive gradient correction (AGENT) for sparse and adversarial training.

Small float64 MLPs with exact gradients, dynamic sparse masks (SET, RigL),
SVRG / AGENT / MVR gradient estimators, PGD-based AT and TRADES objectives,
and the gradient variance / correlation diagnostics used to study them.
"""

__version__ = "0.1.0"

from .adversarial import AttackConfig, at_loss_and_grad, pgd_attack, robust_accuracy, trades_loss_and_grad
from .config import ConfigError, ExperimentConfig
from .data import Batch, Dataset, load_csv, make_blobs
from .nn import MLP, ModelSpec
from .optim import (
    AgentState,
    MvrState,
    SvrgState,
    agent_snapshot,
    corrected_gradient,
    estimate_c_hat,
    mvr_gradient,
    step,
    svrg_gradient,
)
from .sparsity import SparsitySchedule, apply_mask, init_mask, rigl_update, set_update
from .tensor import RngStream, matmul, topk_indices
from .train import MetricsRecord, run_experiment

__all__ = [
    "AgentState",
    "AttackConfig",
    "Batch",
    "ConfigError",
    "Dataset",
    "ExperimentConfig",
    "MLP",
    "MetricsRecord",
    "ModelSpec",
    "MvrState",
    "RngStream",
    "SparsitySchedule",
    "SvrgState",
    "agent_snapshot",
    "apply_mask",
    "at_loss_and_grad",
    "corrected_gradient",
    "estimate_c_hat",
    "init_mask",
    "load_csv",
    "make_blobs",
    "matmul",
    "mvr_gradient",
    "pgd_attack",
    "rigl_update",
    "robust_accuracy",
    "run_experiment",
    "set_update",
    "step",
    "svrg_gradient",
    "topk_indices",
    "trades_loss_and_grad",
]
