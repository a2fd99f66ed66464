"""
Siamese 4-tower puzzle classifier and single-tower action classifier.

The four towers are one backbone applied to the concatenated 4N crop
batch, so weights and batch-norm statistics are shared structurally. The
tower features are fused only in the two last fully-connected layers.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from engine import (
    TRAIN,
    NetworkParams,
    linear,
    linear_backward,
    relu,
    relu_backward,
)
from puzzles.permutations import PIECES

from .backbone import Backbone, BackboneCache, BackboneConfig

logger = logging.getLogger(__name__)

PUZZLE_HEAD = "puzzle_head."
ACTION_HEAD = "action_head."
CLASSIFIER_INIT_STD = 0.01


def _init_linear(params: NetworkParams, name: str, fan_in: int, fan_out: int,
                 rng: np.random.Generator, std: float = None):
    std = np.sqrt(2.0 / fan_in) if std is None else std
    params.add(f"{name}.weight", (rng.standard_normal((fan_in, fan_out)) * std).astype(np.float32))
    params.add(f"{name}.bias", np.zeros(fan_out, dtype=np.float32))


def build_backbone(config: BackboneConfig, rng: np.random.Generator) -> NetworkParams:
    """Backbone-only parameter set."""
    params = NetworkParams()
    Backbone(config).init_params(params, rng)
    return params


@dataclass
class PuzzleCache:
    backbone: BackboneCache
    batch: int
    fused: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray


class PuzzleNetwork:
    """
    4-tower late-fusion permutation classifier.

    Args:
        config: Backbone configuration (tower architecture)
        num_classes: 48 with rotation-with-classification, 24 without
    """

    kind = "puzzle"

    def __init__(self, config: BackboneConfig, num_classes: int = 48):
        self.config = config
        self.num_classes = int(num_classes)
        self.backbone = Backbone(config)
        self.hidden = config.head_hidden

    def build(self, rng: np.random.Generator) -> NetworkParams:
        params = NetworkParams()
        self.backbone.init_params(params, rng)
        d = self.backbone.feature_dim
        _init_linear(params, f"{PUZZLE_HEAD}fc1", PIECES * d, self.hidden, rng)
        _init_linear(params, f"{PUZZLE_HEAD}fc2", self.hidden, self.num_classes, rng,
                     std=CLASSIFIER_INIT_STD)
        logger.info(
            f"Built {self.config.variant} puzzle network: {parameter_count(params):,} parameters, "
            f"{self.num_classes} classes"
        )
        return params

    def tower_forward(self, params: NetworkParams, crop: np.ndarray, mode: str = TRAIN):
        """Per-crop features [N, D] (plus cache and running-stat updates)."""
        return self.backbone.forward(params, crop, mode)

    def head_forward(self, params: NetworkParams, features: Sequence[np.ndarray]):
        """Concatenate the 4 tower features in tuple order -> FC + ReLU -> FC."""
        if len(features) != PIECES:
            raise ValueError(f"puzzle head expects {PIECES} feature tensors, got {len(features)}")
        if len({f.shape for f in features}) != 1:
            raise ValueError(f"tower feature shapes differ: {[f.shape for f in features]}")
        fused = np.concatenate(features, axis=1)
        hidden_pre = linear(fused, params[f"{PUZZLE_HEAD}fc1.weight"], params[f"{PUZZLE_HEAD}fc1.bias"])
        hidden = relu(hidden_pre)
        logits = linear(hidden, params[f"{PUZZLE_HEAD}fc2.weight"], params[f"{PUZZLE_HEAD}fc2.bias"])
        return logits, (fused, hidden_pre, hidden)

    def forward(self, params: NetworkParams, crops: Sequence[np.ndarray], mode: str = TRAIN):
        """
        Classify a batch of puzzle tuples.

        Args:
            params: Network parameters
            crops: 4 tensors [N, C, t, h, w], crop i of every tuple at index i
            mode: "train" or "eval" (batch-norm behaviour)

        Returns:
            (logits [N, K], cache, running-stat updates)
        """
        if len(crops) != PIECES:
            raise ValueError(f"puzzle network expects {PIECES} crop tensors, got {len(crops)}")
        batch = crops[0].shape[0]
        stacked = np.concatenate(crops, axis=0)
        features, backbone_cache, stats = self.backbone.forward(params, stacked, mode)
        towers = list(split_towers(features, batch))
        logits, (fused, hidden_pre, hidden) = self.head_forward(params, towers)
        return logits, PuzzleCache(backbone_cache, batch, fused, hidden_pre, hidden), stats

    def head_backward(self, params: NetworkParams, cache: PuzzleCache, grad_logits: np.ndarray):
        """Returns (head grads, per-tower feature grads in tuple order)."""
        grads: Dict[str, np.ndarray] = {}
        grad_hidden, grads[f"{PUZZLE_HEAD}fc2.weight"], grads[f"{PUZZLE_HEAD}fc2.bias"] = linear_backward(
            grad_logits, cache.hidden, params[f"{PUZZLE_HEAD}fc2.weight"]
        )
        grad_hidden = relu_backward(grad_hidden, cache.hidden_pre)
        grad_fused, grads[f"{PUZZLE_HEAD}fc1.weight"], grads[f"{PUZZLE_HEAD}fc1.bias"] = linear_backward(
            grad_hidden, cache.fused, params[f"{PUZZLE_HEAD}fc1.weight"]
        )
        d = self.backbone.feature_dim
        towers = [grad_fused[:, i * d:(i + 1) * d] for i in range(PIECES)]
        return grads, towers

    def backward(self, params: NetworkParams, cache: PuzzleCache, grad_logits: np.ndarray) -> Dict[str, np.ndarray]:
        grads, towers = self.head_backward(params, cache, grad_logits)
        backbone_grads, _ = self.backbone.backward(params, cache.backbone, np.concatenate(towers, axis=0))
        grads.update(backbone_grads)
        return grads


@dataclass
class ActionCache:
    backbone: BackboneCache
    features: np.ndarray


class ActionNetwork:
    """Single tower + fresh linear classifier for action recognition."""

    kind = "action"

    def __init__(self, config: BackboneConfig, num_classes: int):
        if num_classes < 2:
            raise ValueError(f"action classifier needs at least 2 classes, got {num_classes}")
        self.config = config
        self.num_classes = int(num_classes)
        self.backbone = Backbone(config)

    @property
    def head_names(self) -> List[str]:
        return [f"{ACTION_HEAD}fc.weight", f"{ACTION_HEAD}fc.bias"]

    def build(self, rng: np.random.Generator) -> NetworkParams:
        params = NetworkParams()
        self.backbone.init_params(params, rng)
        self.init_head(params, rng)
        logger.info(
            f"Built {self.config.variant} action network: {parameter_count(params):,} parameters, "
            f"{self.num_classes} classes"
        )
        return params

    def init_head(self, params: NetworkParams, rng: np.random.Generator):
        _init_linear(params, f"{ACTION_HEAD}fc", self.backbone.feature_dim, self.num_classes, rng,
                     std=CLASSIFIER_INIT_STD)

    def forward(self, params: NetworkParams, clips: np.ndarray, mode: str = TRAIN):
        """Returns (logits [N, num_classes], cache, running-stat updates)."""
        features, backbone_cache, stats = self.backbone.forward(params, clips, mode)
        logits = linear(features, params[f"{ACTION_HEAD}fc.weight"], params[f"{ACTION_HEAD}fc.bias"])
        return logits, ActionCache(backbone_cache, features), stats

    def backward(self, params: NetworkParams, cache: ActionCache, grad_logits: np.ndarray,
                 head_only: bool = False) -> Dict[str, np.ndarray]:
        grads: Dict[str, np.ndarray] = {}
        grad_features, grads[f"{ACTION_HEAD}fc.weight"], grads[f"{ACTION_HEAD}fc.bias"] = linear_backward(
            grad_logits, cache.features, params[f"{ACTION_HEAD}fc.weight"]
        )
        if not head_only:
            backbone_grads, _ = self.backbone.backward(params, cache.backbone, grad_features)
            grads.update(backbone_grads)
        return grads


def parameter_count(params: NetworkParams, prefix: str = "") -> int:
    """Trainable scalars; running statistics are buffers and not counted."""
    return params.count(prefix)


def apply_stats(params: NetworkParams, stats) -> NetworkParams:
    """Fold running-stat updates from a train-mode forward into the parameter set."""
    return params.with_stats(stats) if stats else params


def split_towers(features: np.ndarray, batch: int) -> Tuple[np.ndarray, ...]:
    return tuple(features[i * batch:(i + 1) * batch] for i in range(PIECES))
