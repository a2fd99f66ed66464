"""
Finite-difference gradient checks for every layer kernel.

Checks run in float64: central differences with step 1e-3 on a random
linear functional of the layer output, compared against the analytical
backward with the norm-relative error ||a - n|| / max(||a||, ||n||).
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from .conv import conv3d_backward, conv3d_forward
from .layers import (
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
from .losses import softmax_cross_entropy
from .tensor import ConvSpec

logger = logging.getLogger(__name__)

LAYER_TOLERANCE = 1e-3
FD_STEP = 1e-3


@dataclass
class GradcheckResult:
    name: str
    seed: int
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float = FD_STEP,
                     indices: Sequence = None) -> np.ndarray:
    """
    Central differences of a scalar function with respect to x, perturbed in place.

    Args:
        f: Closure evaluating the scalar loss from the current contents of x
        x: Array perturbed element by element (restored afterwards)
        step: Finite-difference step
        indices: Flat indices to probe; all elements when None

    Returns:
        Gradient estimates at the probed indices (full array shape when indices is None)
    """
    flat = x.reshape(-1)
    probe = range(flat.size) if indices is None else indices
    grads = []
    for i in probe:
        original = flat[i]
        flat[i] = original + step
        plus = f()
        flat[i] = original - step
        minus = f()
        flat[i] = original
        grads.append((plus - minus) / (2 * step))
    grads = np.asarray(grads, dtype=np.float64)
    return grads.reshape(x.shape) if indices is None else grads


def _extents(rng, low=2, high=5, count=3):
    return tuple(int(v) for v in rng.integers(low, high + 1, size=count))


def check_conv3d(seed: int) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    n, cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
    extent = _extents(rng, 3, 4)
    kernel = tuple(int(v) for v in rng.integers(1, 4, size=3))
    stride = tuple(int(v) for v in rng.integers(1, 3, size=3))
    padding = tuple(int(rng.integers(0, k // 2 + 1)) for k in kernel)
    spec = ConvSpec(cin, cout, kernel, stride, padding)

    x = rng.standard_normal((n, cin) + extent)
    w = rng.standard_normal(spec.weight_shape)
    b = rng.standard_normal(cout)
    probe = rng.standard_normal((n, cout) + spec.output_extent(extent))

    def loss():
        return float(np.sum(conv3d_forward(x, w, b, spec) * probe))

    gx, gw, gb = conv3d_backward(probe, x, w, spec)
    analytic = np.concatenate([gx.ravel(), gw.ravel(), gb.ravel()])
    numeric = np.concatenate([
        numeric_gradient(loss, x).ravel(),
        numeric_gradient(loss, w).ravel(),
        numeric_gradient(loss, b).ravel(),
    ])
    return GradcheckResult("conv3d", seed, relative_error(analytic, numeric), LAYER_TOLERANCE)


def check_batchnorm3d(seed: int) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    c = int(rng.integers(1, 4))
    x = rng.standard_normal((2, c) + _extents(rng, 2, 3)) * 2.0 + 0.5
    gamma = rng.uniform(0.5, 1.5, size=c)
    beta = rng.standard_normal(c)
    stats = RunningStats.initial(c, dtype=np.float64)
    out, _, _ = batchnorm3d(x, gamma, beta, stats)
    probe = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(batchnorm3d(x, gamma, beta, stats)[0] * probe))

    _, cache, _ = batchnorm3d(x, gamma, beta, stats)
    gx, gg, gb = batchnorm3d_backward(probe, cache)
    analytic = np.concatenate([gx.ravel(), gg.ravel(), gb.ravel()])
    numeric = np.concatenate([
        numeric_gradient(loss, x).ravel(),
        numeric_gradient(loss, gamma).ravel(),
        numeric_gradient(loss, beta).ravel(),
    ])
    return GradcheckResult("batchnorm3d", seed, relative_error(analytic, numeric), LAYER_TOLERANCE)


def check_relu(seed: int) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2) + _extents(rng))
    # keep every element well away from the kink
    x = np.sign(x) * (np.abs(x) + 10 * FD_STEP)
    probe = rng.standard_normal(x.shape)

    def loss():
        return float(np.sum(relu(x) * probe))

    analytic = relu_backward(probe, x)
    return GradcheckResult("relu", seed, relative_error(analytic, numeric_gradient(loss, x)),
                           LAYER_TOLERANCE)


def check_maxpool3d(seed: int) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    shape = (2, 2) + _extents(rng, 3, 5)
    # distinct values spaced far beyond the step so no window has a near-tie
    x = rng.permutation(np.arange(np.prod(shape), dtype=np.float64)).reshape(shape) * 0.01
    window, stride, padding = 3, 2, 1
    out, cache = maxpool3d(x, window, stride, padding)
    probe = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(maxpool3d(x, window, stride, padding)[0] * probe))

    analytic = maxpool3d_backward(probe, cache)
    return GradcheckResult("maxpool3d", seed, relative_error(analytic, numeric_gradient(loss, x)),
                           LAYER_TOLERANCE)


def check_global_avgpool(seed: int) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3) + _extents(rng))
    probe = rng.standard_normal((2, 3))

    def loss():
        return float(np.sum(global_avgpool(x) * probe))

    analytic = global_avgpool_backward(probe, x.shape)
    return GradcheckResult("global_avgpool", seed,
                           relative_error(analytic, numeric_gradient(loss, x)), LAYER_TOLERANCE)


def check_linear(seed: int) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    n, d, k = _extents(rng, 1, 5)
    x = rng.standard_normal((n, d))
    w = rng.standard_normal((d, k))
    b = rng.standard_normal(k)
    probe = rng.standard_normal((n, k))

    def loss():
        return float(np.sum(linear(x, w, b) * probe))

    gx, gw, gb = linear_backward(probe, x, w)
    analytic = np.concatenate([gx.ravel(), gw.ravel(), gb.ravel()])
    numeric = np.concatenate([
        numeric_gradient(loss, x).ravel(),
        numeric_gradient(loss, w).ravel(),
        numeric_gradient(loss, b).ravel(),
    ])
    return GradcheckResult("linear", seed, relative_error(analytic, numeric), LAYER_TOLERANCE)


def check_softmax_cross_entropy(seed: int) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((2, 5)) * 3.0
    labels = rng.integers(0, 5, size=2)

    def loss():
        return softmax_cross_entropy(logits, labels)[0]

    _, analytic = softmax_cross_entropy(logits, labels)
    numeric = numeric_gradient(loss, logits, step=1e-4)
    return GradcheckResult("softmax_cross_entropy", seed, relative_error(analytic, numeric), 1e-4)


LAYER_CHECKS = {
    "conv3d": check_conv3d,
    "batchnorm3d": check_batchnorm3d,
    "relu": check_relu,
    "maxpool3d": check_maxpool3d,
    "global_avgpool": check_global_avgpool,
    "linear": check_linear,
    "softmax_cross_entropy": check_softmax_cross_entropy,
}


def run_layer_checks(seeds: Sequence[int]) -> List[GradcheckResult]:
    results = []
    for name, check in LAYER_CHECKS.items():
        for seed in seeds:
            result = check(seed)
            level = logging.DEBUG if result.passed else logging.WARNING
            logger.log(level, f"gradcheck {name} seed={seed}: error={result.error:.2e}")
            results.append(result)
    return results
