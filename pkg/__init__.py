"""
Space-Time Cubic Puzzles - self-supervised pretraining for 3D CNNs

A numpy 3D convolutional network learns video features by rearranging
four permuted space-time crops of a clip. The learned backbone is then
fine-tuned (or linearly probed) for action recognition.

Main Components:
- engine: 3D convolution, batch-norm, pooling, loss and SGD with explicit backward passes
- puzzles: clip geometry, permutation labels and the puzzle sampler
- models: 3D ResNet towers, the 4-tower puzzle network, checkpoints
- data: clip files, the synthetic moving-shapes benchmark, fine-tune augmentation
- training: pretraining, fine-tuning, evaluation and comparison experiments
- cli: the cubic-puzzles command line

Example Usage:
    $ python -m cli gen-data --out runs/data
    $ python -m cli pretrain --data runs/data --out runs/pretrain
    $ python -m cli finetune --data runs/data --checkpoint runs/pretrain/checkpoint.stcp

For more information, see README.md
"""

__version__ = "1.0.0"
__author__ = "Cubic Puzzles Team"
__description__ = "Space-time cubic puzzle pretraining for 3D CNNs in numpy"
