"""
3D convolution kernels.

The forward pass walks the kT*kH*kW kernel offsets; for each offset the
strided input view under every output position is contracted against the
[Cout, Cin] weight slice. The backward pass walks the same offsets, which
gives exact gradients and scatters grad_input without overlap bookkeeping.
Accumulation is done in float64 and cast back to the input dtype.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from .tensor import (
    AXIS_NAMES,
    ConvSpec,
    Tensor,
    as_tensor,
    pad_spatiotemporal,
    result_dtype,
    unpad_spatiotemporal,
    window_slices,
)

logger = logging.getLogger(__name__)


def _check_conv_inputs(x: Tensor, weights: Tensor, bias: Optional[Tensor], spec: ConvSpec):
    if x.shape[1] != spec.in_channels:
        raise ValueError(
            f"input channel dimension C={x.shape[1]} does not match spec.in_channels={spec.in_channels}"
        )
    if weights.shape != spec.weight_shape:
        labels = ("Cout", "Cin", "kT", "kH", "kW")
        for label, got, want in zip(labels, weights.shape, spec.weight_shape):
            if got != want:
                raise ValueError(f"weight dimension {label}={got} does not match spec ({want})")
        raise ValueError(f"weight shape {weights.shape} does not match spec {spec.weight_shape}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ValueError(f"bias shape {bias.shape} does not match Cout={spec.out_channels}")


def conv3d_forward(x, weights, bias, spec: ConvSpec) -> Tensor:
    """
    Cross-correlate an [N, Cin, T, H, W] input with [Cout, Cin, kT, kH, kW] weights.

    Args:
        x: Input tensor
        weights: Filter bank
        bias: Per-output-channel bias, or None
        spec: Convolution geometry

    Returns:
        Output tensor [N, Cout, T', H', W'] in the input dtype
    """
    x = as_tensor(x, 5, "conv3d input")
    weights = as_tensor(weights, 5, "conv3d weights")
    if bias is not None:
        bias = as_tensor(bias, 1, "conv3d bias")
    _check_conv_inputs(x, weights, bias, spec)
    dtype = result_dtype(x, weights, bias)

    out_extent = spec.output_extent(x.shape[2:])
    xp = pad_spatiotemporal(x.astype(np.float64, copy=False), spec.padding)
    w64 = weights.astype(np.float64, copy=False)

    # accumulated as [Cout, N, T', H', W']
    acc = np.zeros((spec.out_channels, x.shape[0]) + out_extent, dtype=np.float64)
    for offset in np.ndindex(*spec.kernel):
        patch = xp[(slice(None), slice(None)) + window_slices(offset, spec.stride, out_extent)]
        acc += np.tensordot(w64[(slice(None), slice(None)) + offset], patch, axes=([1], [1]))

    if bias is not None:
        acc += bias.astype(np.float64)[:, None, None, None, None]
    return np.ascontiguousarray(acc.transpose(1, 0, 2, 3, 4)).astype(dtype, copy=False)


def conv3d_backward(grad_out, x, weights, spec: ConvSpec) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Exact gradients of conv3d_forward.

    Returns:
        (grad_input, grad_weights, grad_bias)
    """
    x = as_tensor(x, 5, "conv3d input")
    weights = as_tensor(weights, 5, "conv3d weights")
    grad_out = as_tensor(grad_out, 5, "conv3d grad_out")
    _check_conv_inputs(x, weights, None, spec)
    out_extent = spec.output_extent(x.shape[2:])
    expected = (x.shape[0], spec.out_channels) + out_extent
    if grad_out.shape != expected:
        for label, got, want in zip(("N", "Cout") + AXIS_NAMES, grad_out.shape, expected):
            if got != want:
                raise ValueError(f"grad_out dimension {label}={got}, expected {want}")
    dtype = result_dtype(x, weights, grad_out)

    xp = pad_spatiotemporal(x.astype(np.float64, copy=False), spec.padding)
    w64 = weights.astype(np.float64, copy=False)
    g64 = grad_out.astype(np.float64, copy=False)

    grad_xp = np.zeros_like(xp)
    grad_w = np.zeros(spec.weight_shape, dtype=np.float64)
    for offset in np.ndindex(*spec.kernel):
        region = (slice(None), slice(None)) + window_slices(offset, spec.stride, out_extent)
        patch = xp[region]
        grad_w[(slice(None), slice(None)) + offset] = np.tensordot(
            g64, patch, axes=([0, 2, 3, 4], [0, 2, 3, 4])
        )
        # [N, T', H', W', Cin] -> [N, Cin, T', H', W']
        contrib = np.tensordot(g64, w64[(slice(None), slice(None)) + offset], axes=([1], [0]))
        grad_xp[region] += contrib.transpose(0, 4, 1, 2, 3)

    grad_x = unpad_spatiotemporal(grad_xp, spec.padding)
    grad_b = g64.sum(axis=(0, 2, 3, 4))
    return (
        np.ascontiguousarray(grad_x).astype(dtype, copy=False),
        grad_w.astype(dtype, copy=False),
        grad_b.astype(dtype, copy=False),
    )
