"""
Batch assembly and prefetching.

Every sample draws from its own generator keyed by (seed, stream, step,
slot), so a batch is the same whichever thread builds it and however many
threads run.
"""

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, List, Sequence, Tuple

import numpy as np

from data.augmentation import finetune_sample
from puzzles.geometry import GeometryConfig
from puzzles.sampler import PuzzleSample, TupleMode, derive_rng, make_puzzle_sample

from .config import TrainConfig

logger = logging.getLogger(__name__)


@dataclass
class PuzzleBatch:
    crops: List[np.ndarray]   # 4 x [N, C, t, h, w]
    labels: np.ndarray
    modes: List[TupleMode]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ClipBatch:
    clips: np.ndarray         # [N, C, F, S, S]
    labels: np.ndarray


def collate_puzzles(samples: Sequence[PuzzleSample]) -> PuzzleBatch:
    """Stack crop i of every sample into one tensor per tuple position."""
    if not samples:
        raise ValueError("cannot build a puzzle batch from zero samples")
    shapes = {crop.shape for sample in samples for crop in sample.crops}
    if len(shapes) != 1:
        raise ValueError(f"puzzle samples disagree on crop geometry: {sorted(shapes)}")
    crops = [np.stack([sample.crops[i] for sample in samples]) for i in range(4)]
    labels = np.array([sample.class_id for sample in samples], dtype=np.int64)
    return PuzzleBatch(crops, labels, [sample.mode for sample in samples])


def puzzle_samples(clips: Sequence, geometry: GeometryConfig, config: TrainConfig, step: int,
                   count: int, stream: str = "pretrain") -> List[PuzzleSample]:
    """The samples of one pretraining step: seeded clip choice, then one generator per slot."""
    if not clips:
        raise ValueError("no clips to sample puzzles from")
    picks = derive_rng(config.seed, stream, "clips", step).integers(len(clips), size=count)
    return [
        make_puzzle_sample(
            clips[int(pick)], geometry, derive_rng(config.seed, stream, step, slot),
            mode_prob_spatial=config.mode_prob_spatial, flip_prob=config.flip_prob,
            flags=config.ablation_flags,
        )
        for slot, pick in enumerate(picks)
    ]


def puzzle_batch(clips: Sequence, geometry: GeometryConfig, config: TrainConfig, step: int) -> PuzzleBatch:
    return collate_puzzles(puzzle_samples(clips, geometry, config, step, config.batch_size))


def clip_batch(clips: Sequence, geometry: GeometryConfig, config: TrainConfig, step: int) -> ClipBatch:
    """Augmented fine-tuning windows with their action labels."""
    if not clips:
        raise ValueError("no clips to fine-tune on")
    picks = derive_rng(config.seed, "finetune", "clips", step).integers(len(clips), size=config.batch_size)
    windows, labels = [], []
    for slot, pick in enumerate(picks):
        clip = clips[int(pick)]
        if clip.action_label is None:
            raise ValueError(f"clip {clip.clip_id!r} has no action label")
        windows.append(finetune_sample(clip, geometry, derive_rng(config.seed, "finetune", step, slot)))
        labels.append(clip.action_label)
    return ClipBatch(np.stack(windows), np.array(labels, dtype=np.int64))


class Prefetcher:
    """
    Builds batches for steps [start, stop) ahead of the consumer.

    Args:
        make_batch: step -> batch
        start, stop: Step range
        workers: Sampler threads; 1 builds batches inline in step order
        depth: Batches in flight
    """

    def __init__(self, make_batch: Callable[[int], object], start: int, stop: int,
                 workers: int = 1, depth: int = 4):
        self.make_batch = make_batch
        self.start = start
        self.stop = stop
        self.workers = max(1, int(workers))
        self.depth = max(1, int(depth))

    def __iter__(self) -> Iterator[Tuple[int, object]]:
        if self.workers == 1:
            for step in range(self.start, self.stop):
                yield step, self.make_batch(step)
            return

        pending: deque = deque()
        steps = iter(range(self.start, self.stop))
        with ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="sampler") as pool:
            for step in steps:
                pending.append((step, pool.submit(self.make_batch, step)))
                if len(pending) >= self.depth:
                    break
            while pending:
                step, future = pending.popleft()
                batch = future.result()
                next_step = next(steps, None)
                if next_step is not None:
                    pending.append((next_step, pool.submit(self.make_batch, next_step)))
                yield step, batch
