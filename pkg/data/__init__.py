"""Clip storage, the synthetic moving-shapes benchmark and fine-tune augmentation."""

from .augmentation import SCALES, ClipAugmentation, finetune_sample, sliding_window_clips
from .clip_io import ClipFormatError, VideoClip, load_split, read_clip, read_header, write_clip
from .synthetic import (
    MOTIONS,
    SyntheticSpec,
    generate_synthetic_dataset,
    mean_frame_probe,
    mirror_class,
    render_clip,
)

__all__ = [
    'SCALES', 'ClipAugmentation', 'finetune_sample', 'sliding_window_clips', 'ClipFormatError',
    'VideoClip', 'load_split', 'read_clip', 'read_header', 'write_clip', 'MOTIONS', 'SyntheticSpec',
    'generate_synthetic_dataset', 'mean_frame_probe', 'mirror_class', 'render_clip',
]
