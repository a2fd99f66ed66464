"""Pretraining, fine-tuning, evaluation and comparison experiments."""

from .config import Task, TrainConfig
from .evaluation import ensemble_scores, evaluate_pretext, evaluate_split, evaluate_video
from .experiments import (
    EXPERIMENTS,
    Benchmark,
    ablation_ladder,
    check_experiment,
    format_table,
    mean_accuracy,
    strategy_comparison,
    transfer_comparison,
)
from .metrics import MetricsRecord, MetricsWriter, read_metrics
from .trainer import finetune_run, pretrain_run, pretrain_step

__all__ = [
    'Task', 'TrainConfig', 'ensemble_scores', 'evaluate_pretext', 'evaluate_split', 'evaluate_video',
    'EXPERIMENTS', 'Benchmark', 'ablation_ladder', 'check_experiment', 'format_table', 'mean_accuracy',
    'strategy_comparison', 'transfer_comparison', 'MetricsRecord', 'MetricsWriter', 'read_metrics',
    'finetune_run', 'pretrain_run', 'pretrain_step',
]
