"""Low-rank informed sparse fine-tuning.

Select the largest-magnitude entries of a rank-r approximation of a weight
matrix, train only those entries with a masked Adam optimizer, and measure
what the update does to the matrix spectrum.
"""

from .analysis import (
    PerturbationSpec,
    alignment_score,
    perturb,
    perturbation_eval_toy,
    spectral_delta_study,
    update_rank,
)
from .exceptions import (
    ConfigError,
    ConvergenceError,
    GradientError,
    LiftError,
    PreconditionError,
)
from .linalg import RankSelection, low_rank_approx, numerical_rank, spectral_norm, svd
from .masking import BudgetSpec, Mask, SelectionStrategy, overlap_ratio, resolve_budget, select_mask
from .metrics import MetricsLog
from .optimizer import AdamHyperparams, SparseAdamState, refresh_mask, step, train_loop
from .rng import SplitMix64, derive_seed
from .toymodel import PipelineConfig, ToyNet, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "AdamHyperparams",
    "BudgetSpec",
    "ConfigError",
    "ConvergenceError",
    "GradientError",
    "LiftError",
    "Mask",
    "MetricsLog",
    "PerturbationSpec",
    "PipelineConfig",
    "PreconditionError",
    "RankSelection",
    "SelectionStrategy",
    "SparseAdamState",
    "SplitMix64",
    "ToyNet",
    "alignment_score",
    "derive_seed",
    "low_rank_approx",
    "numerical_rank",
    "overlap_ratio",
    "perturb",
    "perturbation_eval_toy",
    "refresh_mask",
    "resolve_budget",
    "run_pipeline",
    "select_mask",
    "spectral_delta_study",
    "spectral_norm",
    "step",
    "svd",
    "train_loop",
    "update_rank",
]
