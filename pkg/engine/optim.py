"""SGD with momentum and decoupled-from-normalization weight decay."""

import logging
from collections import OrderedDict
from typing import Dict, Iterable, Optional

import numpy as np

from .params import NetworkParams, is_decayed

logger = logging.getLogger(__name__)


def sgd_step(params: NetworkParams, grads: Dict[str, np.ndarray], lr: float,
             momentum: float = 0.9, weight_decay: float = 0.0,
             trainable: Optional[Iterable[str]] = None) -> NetworkParams:
    """
    One momentum-SGD update.

        v <- momentum * v + grad + weight_decay * param
        param <- param - lr * v

    Batch-norm gamma/beta and biases get no weight decay.

    Args:
        params: Current parameters and momentum buffers (left untouched)
        grads: Gradient per parameter name
        lr: Learning rate
        momentum: Momentum coefficient
        weight_decay: L2 coefficient for decayed tensors
        trainable: Names to update; defaults to every parameter. Others are
            carried over unchanged.

    Returns:
        A new NetworkParams with the updated tensors
    """
    names = list(params.params) if trainable is None else list(trainable)
    missing = [name for name in names if name not in grads]
    if missing:
        raise KeyError(f"missing gradient for parameters: {', '.join(missing)}")
    unknown = [name for name in grads if name not in params.params]
    if unknown:
        raise KeyError(f"gradients for unknown parameters: {', '.join(unknown)}")

    new_params = OrderedDict(params.params)
    new_momentum = OrderedDict(params.momentum)
    for name in names:
        p = params.params[name]
        g = np.asarray(grads[name])
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        step = g.astype(p.dtype)
        if weight_decay and is_decayed(name):
            step = step + p.dtype.type(weight_decay) * p
        v = p.dtype.type(momentum) * params.momentum[name] + step
        new_momentum[name] = v
        new_params[name] = p - p.dtype.type(lr) * v
    return NetworkParams(new_params, new_momentum, params.stats)
