"""Training loop, metrics, localization scoring, CLI and configuration."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, OptimConfig, RunConfig, load_run_config, parse_config_text, run_config_from_values
from .evaluate import EvalResult, evaluate, patch_indices_for_rect
from .metrics import (
    MetricsReport,
    binarize_top_k,
    classification_metrics,
    iou_localization,
    mean_pixel_baseline,
    pr_auc,
    roc_auc,
)
from .train import Adam, TrainResult, class_weights_from, params_to_tensors, predict_scores, train

__all__ = [
    "Adam",
    "ConfigError",
    "EvalResult",
    "MetricsReport",
    "OptimConfig",
    "RunConfig",
    "TrainResult",
    "binarize_top_k",
    "class_weights_from",
    "classification_metrics",
    "evaluate",
    "iou_localization",
    "load_checkpoint",
    "load_run_config",
    "mean_pixel_baseline",
    "params_to_tensors",
    "parse_config_text",
    "patch_indices_for_rect",
    "pr_auc",
    "predict_scores",
    "roc_auc",
    "run_config_from_values",
    "save_checkpoint",
    "train",
]
