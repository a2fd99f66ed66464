"""Minimal dense-tensor engine: 3D convolution, normalization, pooling, loss and SGD."""

from .conv import conv3d_backward, conv3d_forward
from .layers import (
    EVAL,
    TRAIN,
    RunningStats,
    batchnorm3d,
    batchnorm3d_backward,
    global_avgpool,
    global_avgpool_backward,
    linear,
    linear_backward,
    maxpool3d,
    maxpool3d_backward,
    relu,
    relu_backward,
)
from .losses import softmax, softmax_cross_entropy
from .optim import sgd_step
from .params import NetworkParams
from .tensor import ConvSpec, Tensor, as_tensor

__all__ = [
    'ConvSpec', 'Tensor', 'as_tensor', 'NetworkParams', 'RunningStats', 'TRAIN', 'EVAL',
    'conv3d_forward', 'conv3d_backward', 'batchnorm3d', 'batchnorm3d_backward',
    'relu', 'relu_backward', 'maxpool3d', 'maxpool3d_backward',
    'global_avgpool', 'global_avgpool_backward', 'linear', 'linear_backward',
    'softmax', 'softmax_cross_entropy', 'sgd_step',
]
