"""Puzzle sampling: geometry, permutation labels and sample generation."""

from .geometry import GeometryConfig
from .permutations import (
    NUM_PERMUTATIONS,
    PuzzleLabel,
    label_from_class_id,
    num_classes,
    permutation_rank,
    permutation_unrank,
)
from .sampler import (
    AblationFlags,
    PuzzleSample,
    TupleMode,
    channel_replicate,
    decode_puzzle_sample,
    derive_rng,
    extract_crop_jittered,
    make_puzzle_sample,
    select_tuple_cells,
)

__all__ = [
    'GeometryConfig', 'NUM_PERMUTATIONS', 'PuzzleLabel', 'label_from_class_id', 'num_classes',
    'permutation_rank', 'permutation_unrank', 'AblationFlags', 'PuzzleSample', 'TupleMode',
    'channel_replicate', 'decode_puzzle_sample', 'derive_rng', 'extract_crop_jittered',
    'make_puzzle_sample', 'select_tuple_cells',
]
