"""Whole-network gradient checks on the tiny variant."""

import logging
from typing import List, Sequence

import numpy as np

from engine import EVAL, TRAIN, softmax_cross_entropy
from engine.gradcheck import GradcheckResult, numeric_gradient, relative_error, run_layer_checks

from .backbone import BackboneConfig
from .networks import PuzzleNetwork, apply_stats

logger = logging.getLogger(__name__)

NETWORK_TOLERANCE = 1e-2
SHARING_TOLERANCE = 1e-5
TINY_INPUT = (3, 4, 20, 20)


def _tiny_setup(seed: int, batch: int = 2):
    rng = np.random.default_rng(seed)
    net = PuzzleNetwork(BackboneConfig.for_variant("tiny"), num_classes=48)
    params = net.build(rng)
    crops = [rng.standard_normal((batch,) + TINY_INPUT) for _ in range(4)]
    labels = rng.integers(0, net.num_classes, size=batch)
    return rng, net, params, crops, labels


def check_network(seed: int, num_samples: int = 50, step: float = 1e-4) -> GradcheckResult:
    """
    Finite differences on randomly sampled parameters of the tiny 4-tower network.

    Args:
        seed: Seed for parameters, inputs and the sampled coordinates
        num_samples: Number of scalar parameters probed
        step: Finite-difference step (float64)
    """
    rng, net, params, crops, labels = _tiny_setup(seed)
    params = params.astype(np.float64)

    def loss():
        logits, _, _ = net.forward(params, crops, TRAIN)
        return softmax_cross_entropy(logits, labels)[0]

    logits, cache, _ = net.forward(params, crops, TRAIN)
    _, grad_logits = softmax_cross_entropy(logits, labels)
    grads = net.backward(params, cache, grad_logits)

    names = params.names()
    sizes = np.array([params[name].size for name in names], dtype=np.float64)
    picks = rng.choice(len(names), size=num_samples, p=np.sqrt(sizes) / np.sqrt(sizes).sum())
    analytic, numeric = [], []
    for pick in picks:
        name = names[pick]
        index = int(rng.integers(params[name].size))
        analytic.append(grads[name].reshape(-1)[index])
        numeric.append(numeric_gradient(loss, params[name], step, indices=[index])[0])
    error = relative_error(analytic, numeric)
    return GradcheckResult("network", seed, error, NETWORK_TOLERANCE)


def check_weight_sharing(seed: int) -> GradcheckResult:
    """
    Shared-tower gradient vs. the sum of four independent per-tower gradients.

    Runs in eval mode so the towers are independent functions of their crops.
    """
    _, net, params, crops, labels = _tiny_setup(seed)
    _, _, stats = net.forward(params, [c.astype(np.float32) for c in crops], TRAIN)
    params = apply_stats(params, stats).astype(np.float64)

    logits, cache, _ = net.forward(params, crops, EVAL)
    _, grad_logits = softmax_cross_entropy(logits, labels)
    joint = net.backward(params, cache, grad_logits)
    _, tower_grads = net.head_backward(params, cache, grad_logits)

    summed = {}
    for crop, grad_features in zip(crops, tower_grads):
        _, tower_cache, _ = net.tower_forward(params, crop, EVAL)
        grads, _ = net.backbone.backward(params, tower_cache, grad_features)
        for name, value in grads.items():
            summed[name] = summed.get(name, 0.0) + value

    error = max(relative_error(joint[name], summed[name]) for name in summed)
    return GradcheckResult("weight_sharing", seed, error, SHARING_TOLERANCE)


def run_all_checks(seeds: Sequence[int], network_seeds: Sequence[int] = None) -> List[GradcheckResult]:
    """Layer suites over seeds, then the whole-network and weight-sharing checks."""
    results = run_layer_checks(seeds)
    for seed in (seeds if network_seeds is None else network_seeds):
        for check in (check_network, check_weight_sharing):
            result = check(seed)
            level = logging.INFO if result.passed else logging.WARNING
            logger.log(level, f"gradcheck {result.name} seed={seed}: error={result.error:.2e}")
            results.append(result)
    return results
