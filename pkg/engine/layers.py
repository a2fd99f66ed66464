"""
Layer kernels with paired backward functions.

Every forward returns what its backward needs; nothing here mutates its
inputs. Batch-norm returns an updated copy of the running statistics.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .tensor import (
    AXIS_NAMES,
    Tensor,
    Triple,
    as_tensor,
    pad_spatiotemporal,
    result_dtype,
    triple,
    unpad_spatiotemporal,
    window_output_extent,
    window_slices,
)

logger = logging.getLogger(__name__)

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1

TRAIN = "train"
EVAL = "eval"


@dataclass(frozen=True)
class RunningStats:
    """Per-channel running mean/variance of a batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray
    num_batches_tracked: int = 0

    @classmethod
    def initial(cls, channels: int, dtype=np.float32) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), 0)


@dataclass
class BatchNormCache:
    mode: str
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    dtype: np.dtype


def batchnorm3d(x, gamma, beta, running_stats: RunningStats, mode: str = TRAIN,
                momentum: float = BN_MOMENTUM, eps: float = BN_EPSILON
                ) -> Tuple[Tensor, BatchNormCache, RunningStats]:
    """
    Batch normalization over (N, T, H, W) for each channel.

    Args:
        x: Input [N, C, T, H, W]
        gamma, beta: Per-channel scale and shift
        running_stats: Current running statistics
        mode: "train" normalizes with batch statistics and updates the running
            statistics; "eval" normalizes with the running statistics

    Returns:
        (output, cache for the backward pass, updated running statistics)
    """
    x = as_tensor(x, 5, "batchnorm input")
    channels = x.shape[1]
    gamma = as_tensor(gamma, 1, "gamma")
    beta = as_tensor(beta, 1, "beta")
    if gamma.shape[0] != channels or beta.shape[0] != channels:
        raise ValueError(
            f"gamma/beta length ({gamma.shape[0]}/{beta.shape[0]}) must equal channel extent C={channels}"
        )
    dtype = result_dtype(x, gamma, beta)
    x64 = x.astype(np.float64, copy=False)
    axes = (0, 2, 3, 4)
    shape = (1, channels, 1, 1, 1)

    if mode == TRAIN:
        count = x.size // channels
        mean = x64.mean(axis=axes)
        var = x64.var(axis=axes)
        unbiased = var * count / (count - 1) if count > 1 else var
        stats_dtype = running_stats.mean.dtype
        new_stats = RunningStats(
            mean=((1 - momentum) * running_stats.mean + momentum * mean).astype(stats_dtype),
            var=((1 - momentum) * running_stats.var + momentum * unbiased).astype(stats_dtype),
            num_batches_tracked=running_stats.num_batches_tracked + 1,
        )
    elif mode == EVAL:
        if running_stats.num_batches_tracked == 0:
            raise ValueError("batchnorm eval mode requested before any running-stat update")
        mean = running_stats.mean.astype(np.float64)
        var = running_stats.var.astype(np.float64)
        new_stats = running_stats
    else:
        raise ValueError(f"unknown batchnorm mode: {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x64 - mean.reshape(shape)) * inv_std.reshape(shape)
    out = x_hat * gamma.astype(np.float64).reshape(shape) + beta.astype(np.float64).reshape(shape)
    cache = BatchNormCache(mode=mode, x_hat=x_hat, inv_std=inv_std,
                           gamma=gamma.astype(np.float64), dtype=dtype)
    return out.astype(dtype, copy=False), cache, new_stats


def batchnorm3d_backward(grad_out, cache: BatchNormCache) -> Tuple[Tensor, Tensor, Tensor]:
    """Returns (grad_input, grad_gamma, grad_beta)."""
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != cache.x_hat.shape:
        raise ValueError(f"grad_out shape {g.shape} does not match forward output {cache.x_hat.shape}")
    axes = (0, 2, 3, 4)
    shape = (1, -1, 1, 1, 1)
    grad_beta = g.sum(axis=axes)
    grad_gamma = (g * cache.x_hat).sum(axis=axes)
    scale = (cache.gamma * cache.inv_std).reshape(shape)

    if cache.mode == EVAL:
        grad_x = g * scale
    else:
        count = g.size // g.shape[1]
        grad_x = scale / count * (
            count * g
            - grad_beta.reshape(shape)
            - cache.x_hat * grad_gamma.reshape(shape)
        )
    dtype = cache.dtype
    return grad_x.astype(dtype), grad_gamma.astype(dtype), grad_beta.astype(dtype)


def relu(x) -> Tensor:
    x = as_tensor(x, name="relu input")
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(grad_out, x) -> Tensor:
    x = np.asarray(x)
    return np.where(x > 0, grad_out, 0).astype(x.dtype, copy=False)


@dataclass
class MaxPoolCache:
    input_shape: Tuple[int, ...]
    argmax: np.ndarray
    window: Triple
    stride: Triple
    padding: Triple


def maxpool3d(x, window, stride, padding=0) -> Tuple[Tensor, MaxPoolCache]:
    """
    3D max pooling with implicit -inf padding.

    The argmax of every output cell is recorded as the flat kernel offset;
    ties go to the first (lowest linear index) element of the window.
    """
    x = as_tensor(x, 5, "maxpool input")
    window = triple(window, "window")
    stride = triple(stride, "stride")
    padding = triple(padding, "padding")
    for axis, n, k in zip(AXIS_NAMES, x.shape[2:], window):
        if k > n:
            raise ValueError(f"pooling window extent {k} along {axis} exceeds input extent {n}")
    out_extent = window_output_extent(x.shape[2:], window, stride, padding)
    xp = pad_spatiotemporal(x, padding, value=-np.inf)

    out = np.full(x.shape[:2] + out_extent, -np.inf, dtype=x.dtype)
    argmax = np.zeros(out.shape, dtype=np.int32)
    for flat, offset in enumerate(np.ndindex(*window)):
        patch = xp[(slice(None), slice(None)) + window_slices(offset, stride, out_extent)]
        better = patch > out
        out = np.where(better, patch, out)
        argmax[better] = flat
    return out, MaxPoolCache(x.shape, argmax, window, stride, padding)


def maxpool3d_backward(grad_out, cache: MaxPoolCache) -> Tensor:
    g = np.asarray(grad_out)
    if g.shape != cache.argmax.shape:
        raise ValueError(f"grad_out shape {g.shape} does not match pooled shape {cache.argmax.shape}")
    n, c, t, h, w = cache.input_shape
    pt, ph, pw = cache.padding
    grad_xp = np.zeros((n, c, t + 2 * pt, h + 2 * ph, w + 2 * pw), dtype=g.dtype)
    out_extent = g.shape[2:]
    for flat, offset in enumerate(np.ndindex(*cache.window)):
        region = (slice(None), slice(None)) + window_slices(offset, cache.stride, out_extent)
        grad_xp[region] += np.where(cache.argmax == flat, g, 0)
    return np.ascontiguousarray(unpad_spatiotemporal(grad_xp, cache.padding))


def global_avgpool(x) -> Tensor:
    """[N, C, T, H, W] -> [N, C]"""
    x = as_tensor(x, 5, "avgpool input")
    return x.mean(axis=(2, 3, 4), dtype=np.float64).astype(x.dtype)


def global_avgpool_backward(grad_out, input_shape) -> Tensor:
    g = np.asarray(grad_out)
    volume = int(np.prod(input_shape[2:]))
    grad = np.broadcast_to((g / volume)[:, :, None, None, None], tuple(input_shape))
    return np.ascontiguousarray(grad)


def linear(x, weights, bias: Optional[np.ndarray] = None) -> Tensor:
    """x [N, D] @ W [D, K] + b [K]"""
    x = as_tensor(x, 2, "linear input")
    weights = as_tensor(weights, 2, "linear weights")
    if x.shape[1] != weights.shape[0]:
        raise ValueError(f"linear input dimension D={x.shape[1]} does not match weights D={weights.shape[0]}")
    out = x.astype(np.float64) @ weights.astype(np.float64)
    if bias is not None:
        if bias.shape != (weights.shape[1],):
            raise ValueError(f"bias shape {bias.shape} does not match K={weights.shape[1]}")
        out += bias
    return out.astype(result_dtype(x, weights, bias))


def linear_backward(grad_out, x, weights) -> Tuple[Tensor, Tensor, Tensor]:
    """Returns (grad_input, grad_weights, grad_bias)."""
    g = np.asarray(grad_out, dtype=np.float64)
    x64 = np.asarray(x, dtype=np.float64)
    w64 = np.asarray(weights, dtype=np.float64)
    if g.shape != (x64.shape[0], w64.shape[1]):
        raise ValueError(f"grad_out shape {g.shape} does not match linear output {(x64.shape[0], w64.shape[1])}")
    dtype = result_dtype(np.asarray(x), np.asarray(weights))
    return (
        (g @ w64.T).astype(dtype),
        (x64.T @ g).astype(dtype),
        g.sum(axis=0).astype(dtype),
    )
