"""3D ResNet towers, the 4-tower puzzle classifier, the action classifier and checkpoints."""

from .backbone import Backbone, BackboneConfig, backbone_minimum_extent
from .checkpoint import (
    CheckpointError,
    check_header,
    load_backbone,
    load_checkpoint,
    load_into,
    save_checkpoint,
)
from .networks import ActionNetwork, PuzzleNetwork, apply_stats, build_backbone, parameter_count

__all__ = [
    'Backbone', 'BackboneConfig', 'backbone_minimum_extent', 'CheckpointError', 'check_header',
    'load_backbone', 'load_checkpoint', 'load_into', 'save_checkpoint', 'ActionNetwork',
    'PuzzleNetwork', 'apply_stats', 'build_backbone', 'parameter_count',
]
