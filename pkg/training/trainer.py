"""
Puzzle pretraining and action fine-tuning loops.

Both loops are pure functions of (data, configs, seed): parameter
initialization and every sample draw are keyed on the run seed, so a run
resumed from a checkpoint continues exactly where the uninterrupted run
would have been.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from tqdm import tqdm

from engine import TRAIN, NetworkParams, sgd_step, softmax_cross_entropy
from models.backbone import BackboneConfig, backbone_minimum_extent
from models.checkpoint import (
    CheckpointError,
    check_header,
    load_backbone,
    load_checkpoint,
    load_into,
    save_checkpoint,
)
from models.networks import ActionNetwork, PuzzleNetwork, apply_stats
from puzzles.geometry import GeometryConfig
from puzzles.sampler import PuzzleSample, derive_rng

from .batches import Prefetcher, PuzzleBatch, clip_batch, collate_puzzles, puzzle_batch, puzzle_samples
from .config import TrainConfig
from .evaluation import evaluate_pretext, evaluate_split, top1_accuracy
from .metrics import MetricsRecord, MetricsWriter

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.stcp"
METRICS_NAME = "metrics.csv"


@dataclass
class PretrainResult:
    network: PuzzleNetwork
    params: NetworkParams
    step: int
    records: List[MetricsRecord] = field(default_factory=list)
    checkpoint: Optional[Path] = None


@dataclass
class FinetuneResult:
    network: ActionNetwork
    params: NetworkParams
    records: List[MetricsRecord] = field(default_factory=list)
    accuracy: Optional[float] = None
    checkpoint: Optional[Path] = None


def pretrain_header(network: PuzzleNetwork, step: int, geometry: Optional[GeometryConfig],
                    config: Optional[TrainConfig]) -> dict:
    header = {
        "kind": "puzzle",
        "step": step,
        "num_classes": network.num_classes,
        "backbone": network.config.to_dict(),
    }
    if geometry is not None:
        header["geometry"] = geometry.to_dict()
    if config is not None:
        header["task"] = config.task.value
        header["seed"] = config.seed
    return header


def _is_eval_step(step: int, total: int, every: int) -> bool:
    return (step + 1) % every == 0 or step + 1 == total


def pretrain_step(network: PuzzleNetwork, params: NetworkParams,
                  batch: Union[PuzzleBatch, Sequence[PuzzleSample]], config: TrainConfig,
                  lr: Optional[float] = None) -> Tuple[NetworkParams, float, float]:
    """
    One SGD step on a batch of puzzle tuples.

    Returns:
        (updated parameters, batch loss, batch top-1 accuracy)
    """
    if not isinstance(batch, PuzzleBatch):
        batch = collate_puzzles(batch)
    logits, cache, stats = network.forward(params, batch.crops, TRAIN)
    loss, grad_logits = softmax_cross_entropy(logits, batch.labels)
    grads = network.backward(params, cache, grad_logits)
    params = sgd_step(
        apply_stats(params, stats), grads, config.lr if lr is None else lr,
        momentum=config.momentum, weight_decay=config.weight_decay,
    )
    return params, loss, top1_accuracy(logits, batch.labels)


def pretrain_run(clips: Sequence, geometry: GeometryConfig, backbone_config: BackboneConfig,
                 config: TrainConfig, out_dir=None, eval_clips: Optional[Sequence] = None,
                 resume: bool = False, progress: bool = False) -> PretrainResult:
    """
    Pretrain a puzzle network on clips.

    Args:
        clips: Training clips at geometry resolution
        geometry: Clip and crop geometry
        backbone_config: Tower architecture
        config: Hyperparameters, task and ablation switches
        out_dir: Directory for the checkpoint and metrics CSV (nothing is written when None)
        eval_clips: Clips for a fixed pretext evaluation set logged as split "val"
        resume: Continue from out_dir's checkpoint if there is one
        progress: Show a progress bar

    Returns:
        PretrainResult with the final parameters and metric records
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    network = PuzzleNetwork(backbone_config, num_classes=config.num_classes)
    params = network.build(derive_rng(config.seed, "init"))
    checkpoint = out_dir / CHECKPOINT_NAME if out_dir is not None else None

    start = 0
    if resume and checkpoint is not None and checkpoint.exists():
        header, saved = load_checkpoint(checkpoint)
        expected = pretrain_header(network, header.get("step"), geometry, config)
        check_header(header, expected)
        params = load_into(params, saved, with_momentum=True)
        start = int(header["step"])
        logger.info(f"Resuming pretraining from step {start} ({checkpoint})")

    metrics = MetricsWriter(out_dir / METRICS_NAME if out_dir is not None else None,
                            deterministic=config.deterministic, append=start > 0)
    eval_batch = None
    if eval_clips and config.eval_samples:
        eval_batch = collate_puzzles(puzzle_samples(eval_clips, geometry, config, 0,
                                                    config.eval_samples, stream="eval"))

    window_loss, window_hits, window_count = 0.0, 0.0, 0
    batches = Prefetcher(lambda s: puzzle_batch(clips, geometry, config, s), start, config.steps,
                         workers=config.sampler_workers)
    bar = tqdm(batches, total=max(config.steps - start, 0), desc=f"Pretraining ({config.task.value})",
               disable=not progress)
    for step, batch in bar:
        params, loss, top1 = pretrain_step(network, params, batch, config)
        logger.debug(f"step {step}: loss={loss:.4f} top1={top1:.3f}")
        window_loss += loss * len(batch)
        window_hits += top1 * len(batch)
        window_count += len(batch)
        bar.set_postfix(loss=f"{loss:.3f}", top1=f"{top1:.2f}")

        if _is_eval_step(step, config.steps, config.eval_every):
            metrics.log(step + 1, "train", window_loss / window_count, window_hits / window_count)
            window_loss, window_hits, window_count = 0.0, 0.0, 0
            if eval_batch is not None:
                result = evaluate_pretext(network, params, eval_batch)
                metrics.log(step + 1, "val", result.loss, result.top1)
                modes = ", ".join(f"{mode}={acc:.3f}" for mode, acc in sorted(result.per_mode.items()))
                logger.info(f"step {step + 1} pretext accuracy by tuple mode: {modes}")
            if checkpoint is not None:
                save_checkpoint(params, checkpoint, pretrain_header(network, step + 1, geometry, config))

    return PretrainResult(network, params, max(config.steps, start), metrics.records, checkpoint)


def finetune_run(clips: Sequence, geometry: GeometryConfig, backbone_config: BackboneConfig,
                 config: TrainConfig, num_classes: int, pretrained: Optional[NetworkParams] = None,
                 pretrained_header: Optional[dict] = None, test_clips: Optional[Sequence] = None,
                 out_dir=None, progress: bool = False) -> FinetuneResult:
    """
    Train an action classifier, from a pretrained backbone or from scratch.

    The classifier layer is always freshly initialized. With config.linear_probe
    only the classifier is updated; otherwise every layer is.

    Raises:
        CheckpointError if pretrained_header describes a different backbone
        ValueError if the fine-tune input is smaller than the backbone allows
    """
    minimum = backbone_minimum_extent(backbone_config)
    if any(have < need for have, need in zip(geometry.finetune_input, minimum)):
        raise ValueError(f"fine-tune input {geometry.finetune_input} is smaller than the backbone minimum {minimum}")
    if pretrained_header is not None:
        check_header(pretrained_header, {"backbone": backbone_config.to_dict()})

    out_dir = Path(out_dir) if out_dir is not None else None
    network = ActionNetwork(backbone_config, num_classes)
    params = network.build(derive_rng(config.seed, "finetune", "init"))
    if pretrained is not None:
        params, loaded, skipped = load_backbone(params, pretrained)
        logger.info(f"Initialized {len(loaded)} backbone tensors from pretraining; {len(skipped)} left random")
    trainable = network.head_names if config.linear_probe else None

    metrics = MetricsWriter(out_dir / METRICS_NAME if out_dir is not None else None,
                            deterministic=config.deterministic)
    window_loss, window_hits, window_count = 0.0, 0.0, 0
    batches = Prefetcher(lambda s: clip_batch(clips, geometry, config, s), 0, config.finetune_steps,
                         workers=config.sampler_workers)
    desc = "Linear probe" if config.linear_probe else "Fine-tuning"
    for step, batch in tqdm(batches, total=config.finetune_steps, desc=desc, disable=not progress):
        logits, cache, stats = network.forward(params, batch.clips, TRAIN)
        loss, grad_logits = softmax_cross_entropy(logits, batch.labels)
        grads = network.backward(params, cache, grad_logits, head_only=config.linear_probe)
        params = sgd_step(
            apply_stats(params, stats), grads, config.finetune_lr_at(step),
            momentum=config.momentum, weight_decay=config.finetune_weight_decay, trainable=trainable,
        )
        window_loss += loss * len(batch.labels)
        window_hits += top1_accuracy(logits, batch.labels) * len(batch.labels)
        window_count += len(batch.labels)

        if _is_eval_step(step, config.finetune_steps, config.eval_every):
            metrics.log(step + 1, "train", window_loss / window_count, window_hits / window_count)
            window_loss, window_hits, window_count = 0.0, 0.0, 0
            if test_clips:
                result = evaluate_split(network, params, test_clips, geometry)
                metrics.log(step + 1, "test", result.loss, result.top1)

    accuracy = None
    if test_clips:
        accuracy = evaluate_split(network, params, test_clips, geometry).top1
        logger.info(f"{desc} test top-1: {accuracy:.3f}")

    checkpoint = None
    if out_dir is not None:
        header = {
            "kind": "action",
            "step": config.finetune_steps,
            "num_classes": num_classes,
            "backbone": backbone_config.to_dict(),
            "geometry": geometry.to_dict(),
            "linear_probe": config.linear_probe,
            "pretrained": pretrained is not None,
        }
        checkpoint = save_checkpoint(params, out_dir / CHECKPOINT_NAME, header)
    return FinetuneResult(network, params, metrics.records, accuracy, checkpoint)


def load_pretrained(path) -> Tuple[dict, NetworkParams]:
    """Read a pretraining checkpoint for fine-tuning."""
    header, params = load_checkpoint(path)
    check_header(header, {"kind": "puzzle"})
    return header, params


def backbone_from_header(header: dict) -> BackboneConfig:
    values = dict(header["backbone"])
    return BackboneConfig(**values)


def geometry_from_header(header: dict, fallback: Optional[GeometryConfig] = None) -> GeometryConfig:
    """Geometry a checkpoint was trained under; fallback only for headers written without one."""
    if "geometry" not in header:
        if fallback is None:
            raise CheckpointError("checkpoint header carries no geometry")
        logger.warning(f"checkpoint header has no geometry, using {fallback}")
        return fallback
    return GeometryConfig(**header["geometry"])
