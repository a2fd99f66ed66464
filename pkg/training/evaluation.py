"""Pretext accuracy, sliding-window video classification and score ensembling."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from data.augmentation import sliding_window_clips
from engine import EVAL, NetworkParams, softmax, softmax_cross_entropy
from models.networks import ActionNetwork, PuzzleNetwork
from puzzles.geometry import GeometryConfig

from .batches import PuzzleBatch

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-5


@dataclass
class PretextEval:
    loss: float
    top1: float
    per_mode: Dict[str, float] = field(default_factory=dict)


@dataclass
class SplitEval:
    top1: float
    loss: float
    scores: np.ndarray
    labels: np.ndarray

    @property
    def predictions(self) -> np.ndarray:
        return self.scores.argmax(axis=1)


def top1_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate_pretext(network: PuzzleNetwork, params: NetworkParams, batch: PuzzleBatch) -> PretextEval:
    logits, _, _ = network.forward(params, batch.crops, EVAL)
    loss, _ = softmax_cross_entropy(logits, batch.labels)
    hits = np.argmax(logits, axis=1) == batch.labels
    modes = np.array([mode.value for mode in batch.modes])
    per_mode = {mode: float(hits[modes == mode].mean()) for mode in np.unique(modes)}
    return PretextEval(loss, float(hits.mean()), per_mode)


def video_scores(network: ActionNetwork, params: NetworkParams, clip, geometry: GeometryConfig) -> np.ndarray:
    """Softmax scores averaged over every non-overlapping window of the clip."""
    windows = sliding_window_clips(clip, geometry)
    logits, _, _ = network.forward(params, np.stack(windows), EVAL)
    return softmax(logits).mean(axis=0)


def evaluate_video(network: ActionNetwork, params: NetworkParams, clip,
                   geometry: GeometryConfig) -> Tuple[int, np.ndarray]:
    """
    Classify a whole video.

    Returns:
        (predicted class, averaged score vector)
    """
    scores = video_scores(network, params, clip, geometry)
    return int(np.argmax(scores)), scores


def accuracy_from_scores(scores: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    """(top-1, mean negative log score of the true class)."""
    labels = np.asarray(labels)
    picked = scores[np.arange(len(labels)), labels]
    return float(np.mean(scores.argmax(axis=1) == labels)), float(-np.mean(np.log(np.clip(picked, 1e-12, None))))


def evaluate_split(network: ActionNetwork, params: NetworkParams, clips: Sequence,
                   geometry: GeometryConfig) -> SplitEval:
    if not clips:
        raise ValueError("cannot evaluate an empty split")
    scores = np.stack([video_scores(network, params, clip, geometry) for clip in clips])
    labels = np.array([clip.action_label for clip in clips], dtype=np.int64)
    top1, loss = accuracy_from_scores(scores, labels)
    return SplitEval(top1, loss, scores, labels)


def ensemble_scores(scores_a, scores_b, tolerance: Optional[float] = SUM_TOLERANCE) -> np.ndarray:
    """
    Elementwise mean of two probability vectors (or row-stacked batches of them).

    Raises:
        ValueError on shape mismatch or inputs that are not distributions
    """
    a, b = np.asarray(scores_a, dtype=np.float64), np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"score shapes differ: {a.shape} vs {b.shape}")
    if tolerance is not None:
        for name, scores in (("scores_a", a), ("scores_b", b)):
            sums = scores.sum(axis=-1)
            if np.any(np.abs(sums - 1.0) > tolerance):
                raise ValueError(f"{name} do not sum to 1 (max deviation {np.max(np.abs(sums - 1.0)):.2e})")
    return (a + b) / 2
