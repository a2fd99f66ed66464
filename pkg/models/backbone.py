"""
3D ResNet backbone built on the engine kernels.

Stem: conv1 (stride 1x2x2) -> batch-norm -> ReLU -> max-pool 3x3x3/2.
Stages of basic residual blocks; every stage after the first halves T, H
and W at its first block, whose shortcut is a 1x1x1 convolution with
batch-norm. Features are globally average pooled.
"""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from engine import (
    ConvSpec,
    NetworkParams,
    RunningStats,
    TRAIN,
    batchnorm3d,
    batchnorm3d_backward,
    conv3d_backward,
    conv3d_forward,
    global_avgpool,
    global_avgpool_backward,
    maxpool3d,
    maxpool3d_backward,
    relu,
    relu_backward,
)

logger = logging.getLogger(__name__)

VARIANTS = ("tiny", "resnet10", "resnet18")
STEM_STRIDE = (1, 2, 2)
POOL_WINDOW, POOL_STRIDE, POOL_PADDING = 3, 2, 1
PREFIX = "backbone."


@dataclass(frozen=True)
class BackboneConfig:
    variant: str = "tiny"
    in_channels: int = 3
    stem_kernel: int = 3
    stem_channels: int = 8
    stage_channels: Tuple[int, ...] = (8, 16)
    block_counts: Tuple[int, ...] = (1, 1)
    head_hidden: int = 64

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown backbone variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "block_counts", tuple(int(c) for c in self.block_counts))
        if len(self.stage_channels) != len(self.block_counts) or not self.stage_channels:
            raise ValueError(
                f"stage_channels {self.stage_channels} and block_counts {self.block_counts} must be non-empty and equal length"
            )
        if min(self.block_counts) < 1 or min(self.stage_channels) < 1:
            raise ValueError("every stage needs at least one block and one channel")

    @classmethod
    def for_variant(cls, variant: str, in_channels: int = 3) -> "BackboneConfig":
        if variant == "tiny":
            return cls("tiny", in_channels, 3, 8, (8, 16), (1, 1), 64)
        if variant == "resnet10":
            return cls("resnet10", in_channels, 7, 64, (64, 128, 256, 512), (1, 1, 1, 1), 512)
        if variant == "resnet18":
            return cls("resnet18", in_channels, 7, 64, (64, 128, 256, 512), (2, 2, 2, 2), 512)
        raise ValueError(f"unknown backbone variant {variant!r}; expected one of {VARIANTS}")

    @property
    def feature_dim(self) -> int:
        return self.stage_channels[-1]

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def backbone_minimum_extent(config: BackboneConfig) -> Tuple[int, int, int]:
    """Smallest (T, H, W) input: the product of every downsampling stride per axis."""
    stages_down = 2 ** (len(config.stage_channels) - 1)
    return tuple(s * POOL_STRIDE * stages_down for s in STEM_STRIDE)


@dataclass
class _Block:
    name: str
    conv1: ConvSpec
    conv2: ConvSpec
    downsample: Optional[ConvSpec]


@dataclass
class BackboneCache:
    input_shape: Tuple[int, ...]
    records: List[tuple] = field(default_factory=list)


def _he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class Backbone:
    """Fixed feed-forward 3D ResNet; parameters live in a NetworkParams under 'backbone.'."""

    def __init__(self, config: BackboneConfig):
        self.config = config
        k = config.stem_kernel
        self.stem = ConvSpec(config.in_channels, config.stem_channels, k, STEM_STRIDE, k // 2)
        self.blocks: List[_Block] = []
        channels = config.stem_channels
        for stage, (width, count) in enumerate(zip(config.stage_channels, config.block_counts)):
            for index in range(count):
                stride = 2 if stage > 0 and index == 0 else 1
                downsample = None
                if stride != 1 or channels != width:
                    downsample = ConvSpec(channels, width, 1, stride, 0)
                self.blocks.append(_Block(
                    name=f"{PREFIX}layer{stage + 1}.{index}",
                    conv1=ConvSpec(channels, width, 3, stride, 1),
                    conv2=ConvSpec(width, width, 3, 1, 1),
                    downsample=downsample,
                ))
                channels = width
        self.minimum_extent = backbone_minimum_extent(config)

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    def _conv_bn_names(self) -> List[Tuple[str, ConvSpec, str]]:
        units = [(f"{PREFIX}conv1", self.stem, f"{PREFIX}bn1")]
        for block in self.blocks:
            units.append((f"{block.name}.conv1", block.conv1, f"{block.name}.bn1"))
            units.append((f"{block.name}.conv2", block.conv2, f"{block.name}.bn2"))
            if block.downsample is not None:
                units.append((f"{block.name}.downsample.conv", block.downsample,
                              f"{block.name}.downsample.bn"))
        return units

    def init_params(self, params: NetworkParams, rng: np.random.Generator):
        """He fan-in initialization for convolutions; batch-norm gamma 1, beta 0."""
        for conv_name, spec, bn_name in self._conv_bn_names():
            fan_in = spec.in_channels * int(np.prod(spec.kernel))
            params.add(f"{conv_name}.weight", _he_normal(rng, spec.weight_shape, fan_in))
            params.add(f"{bn_name}.gamma", np.ones(spec.out_channels, dtype=np.float32))
            params.add(f"{bn_name}.beta", np.zeros(spec.out_channels, dtype=np.float32))
            params.add_stats(bn_name, spec.out_channels)

    def check_input(self, x: np.ndarray):
        if x.ndim != 5:
            raise ValueError(f"tower input must be [N, C, T, H, W], got shape {x.shape}")
        if x.shape[1] != self.config.in_channels:
            raise ValueError(f"tower input has C={x.shape[1]} channels, backbone expects {self.config.in_channels}")
        for axis, have, need in zip(("T", "H", "W"), x.shape[2:], self.minimum_extent):
            if have < need:
                raise ValueError(
                    f"input extent {have} along {axis} is too small for the stage strides; minimum is {need}"
                )

    # -- forward ---------------------------------------------------------

    def _conv_bn(self, params: NetworkParams, conv_name: str, bn_name: str, spec: ConvSpec,
                 x: np.ndarray, mode: str, stats: Dict[str, RunningStats]):
        y = conv3d_forward(x, params[f"{conv_name}.weight"], None, spec)
        out, bn_cache, new_stats = batchnorm3d(
            y, params[f"{bn_name}.gamma"], params[f"{bn_name}.beta"], params.stats[bn_name], mode
        )
        stats[bn_name] = new_stats
        return out, (conv_name, bn_name, spec, x, bn_cache)

    def forward(self, params: NetworkParams, x: np.ndarray, mode: str = TRAIN):
        """
        Run the convolutional stages and the global average pool.

        Returns:
            (features [N, D], cache, updated running statistics by layer name)
        """
        x = np.ascontiguousarray(x)
        self.check_input(x)
        stats: Dict[str, RunningStats] = OrderedDict()
        cache = BackboneCache(input_shape=x.shape)

        y, unit = self._conv_bn(params, f"{PREFIX}conv1", f"{PREFIX}bn1", self.stem, x, mode, stats)
        pre = y
        y = relu(pre)
        cache.records.append(("stem", unit, pre))
        y, pool_cache = maxpool3d(y, POOL_WINDOW, POOL_STRIDE, POOL_PADDING)
        cache.records.append(("pool", pool_cache))

        for block in self.blocks:
            h, unit1 = self._conv_bn(params, f"{block.name}.conv1", f"{block.name}.bn1",
                                     block.conv1, y, mode, stats)
            h_pre = h
            h = relu(h_pre)
            h, unit2 = self._conv_bn(params, f"{block.name}.conv2", f"{block.name}.bn2",
                                     block.conv2, h, mode, stats)
            shortcut, unit_down = y, None
            if block.downsample is not None:
                shortcut, unit_down = self._conv_bn(
                    params, f"{block.name}.downsample.conv", f"{block.name}.downsample.bn",
                    block.downsample, y, mode, stats,
                )
            summed = h + shortcut
            y = relu(summed)
            cache.records.append(("block", unit1, h_pre, unit2, unit_down, summed))

        cache.records.append(("avgpool", y.shape))
        return global_avgpool(y), cache, stats

    # -- backward --------------------------------------------------------

    @staticmethod
    def _conv_bn_backward(params: NetworkParams, unit, grad: np.ndarray, grads: Dict[str, np.ndarray]):
        conv_name, bn_name, spec, x, bn_cache = unit
        grad_y, grad_gamma, grad_beta = batchnorm3d_backward(grad, bn_cache)
        grads[f"{bn_name}.gamma"] = grad_gamma
        grads[f"{bn_name}.beta"] = grad_beta
        grad_x, grad_w, _ = conv3d_backward(grad_y, x, params[f"{conv_name}.weight"], spec)
        grads[f"{conv_name}.weight"] = grad_w
        return grad_x

    def backward(self, params: NetworkParams, cache: BackboneCache, grad_features: np.ndarray):
        """
        Gradients of every backbone parameter.

        Returns:
            (grads by parameter name, grad of the input)
        """
        grads: Dict[str, np.ndarray] = OrderedDict()
        records = cache.records
        _, pooled_shape = records[-1]
        grad = global_avgpool_backward(grad_features, pooled_shape)

        for record in reversed(records[:-1]):
            kind = record[0]
            if kind == "block":
                _, unit1, h_pre, unit2, unit_down, summed = record
                grad = relu_backward(grad, summed)
                grad_shortcut = grad
                if unit_down is not None:
                    grad_shortcut = self._conv_bn_backward(params, unit_down, grad, grads)
                grad_h = self._conv_bn_backward(params, unit2, grad, grads)
                grad_h = relu_backward(grad_h, h_pre)
                grad = self._conv_bn_backward(params, unit1, grad_h, grads) + grad_shortcut
            elif kind == "pool":
                grad = maxpool3d_backward(grad, record[1])
            elif kind == "stem":
                _, unit, pre = record
                grad = relu_backward(grad, pre)
                grad = self._conv_bn_backward(params, unit, grad, grads)
        return grads, grad
