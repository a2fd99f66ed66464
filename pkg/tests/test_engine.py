"""
Tests for the tensor engine: convolution, normalization, pooling, loss and SGD.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from engine import (
    EVAL,
    TRAIN,
    ConvSpec,
    NetworkParams,
    RunningStats,
    batchnorm3d,
    conv3d_backward,
    conv3d_forward,
    global_avgpool,
    linear,
    maxpool3d,
    maxpool3d_backward,
    relu,
    sgd_step,
    softmax,
    softmax_cross_entropy,
)
from engine.params import is_decayed

try:
    import torch
    import torch.nn.functional as F
except Exception:
    torch = None

requires_torch = pytest.mark.skipif(torch is None, reason="torch not installed")


def naive_conv3d(x, w, b, stride, padding):
    n, cin, t, h, wd = x.shape
    cout, _, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    ot = (t + 2 * pt - kt) // st + 1
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((n, cout, ot, oh, ow))
    for i in range(ot):
        for j in range(oh):
            for k in range(ow):
                patch = xp[:, :, i * st:i * st + kt, j * sh:j * sh + kh, k * sw:k * sw + kw]
                out[:, :, i, j, k] = np.tensordot(patch, w, axes=([1, 2, 3, 4], [1, 2, 3, 4]))
    if b is not None:
        out += b[None, :, None, None, None]
    return out


class TestConv3d:
    """Tests for the 3D convolution kernels."""

    @pytest.mark.parametrize("stride,padding", [((1, 1, 1), (0, 0, 0)), ((1, 2, 2), (1, 1, 1)), ((2, 1, 3), (0, 2, 1))])
    def test_forward_matches_direct_loop(self, rng, stride, padding):
        """Test the offset-accumulation forward against a direct sliding-window loop."""
        spec = ConvSpec(2, 3, (2, 3, 3), stride, padding)
        x = rng.standard_normal((2, 2, 5, 6, 7))
        w = rng.standard_normal(spec.weight_shape)
        b = rng.standard_normal(3)
        expected = naive_conv3d(x, w, b, stride, padding)
        np.testing.assert_allclose(conv3d_forward(x, w, b, spec), expected, rtol=1e-10, atol=1e-10)

    def test_output_extent(self):
        """Test the output extent formula floor((D + 2P - K) / S) + 1."""
        spec = ConvSpec(3, 8, (7, 7, 7), (1, 2, 2), (3, 3, 3))
        assert spec.output_extent((16, 112, 112)) == (16, 56, 56)

    def test_dtype_preserved(self, rng):
        """Test that float32 inputs produce float32 outputs."""
        spec = ConvSpec(1, 2)
        x = rng.standard_normal((1, 1, 3, 3, 3)).astype(np.float32)
        w = rng.standard_normal(spec.weight_shape).astype(np.float32)
        assert conv3d_forward(x, w, None, spec).dtype == np.float32

    def test_channel_mismatch_names_dimension(self, rng):
        """Test that a channel mismatch error names the offending dimension."""
        spec = ConvSpec(3, 2)
        x = rng.standard_normal((1, 2, 4, 4, 4))
        w = rng.standard_normal((2, 2, 3, 3, 3))
        with pytest.raises(ValueError, match="C="):
            conv3d_forward(x, w, None, spec)

    def test_identity_kernel_reproduces_input(self, rng):
        """Test that a single 1.0 in a 1x1x1 kernel copies the input exactly."""
        spec = ConvSpec(1, 1, (1, 1, 1))
        x = rng.standard_normal((2, 1, 3, 4, 5))
        np.testing.assert_array_equal(conv3d_forward(x, np.ones(spec.weight_shape), None, spec), x)

    def test_ones_kernel_sums_cube(self):
        """Test that a 3x3x3 ones kernel over a ones input gives 27."""
        spec = ConvSpec(1, 1, (3, 3, 3))
        out = conv3d_forward(np.ones((1, 1, 3, 3, 3)), np.ones(spec.weight_shape), None, spec)
        assert out.shape == (1, 1, 1, 1, 1)
        assert out.item() == 27

    def test_kernel_larger_than_input(self, rng):
        """Test that a kernel exceeding the padded input is rejected."""
        spec = ConvSpec(1, 1, (5, 5, 5))
        x = rng.standard_normal((1, 1, 3, 3, 3))
        w = rng.standard_normal(spec.weight_shape)
        with pytest.raises(ValueError, match="exceeds"):
            conv3d_forward(x, w, None, spec)

    def test_backward_shapes(self, rng):
        """Test gradient shapes and the bias gradient as a plain sum."""
        spec = ConvSpec(2, 4, (3, 3, 3), (1, 2, 2), (1, 1, 1))
        x = rng.standard_normal((2, 2, 4, 6, 6))
        w = rng.standard_normal(spec.weight_shape)
        out = conv3d_forward(x, w, None, spec)
        g = rng.standard_normal(out.shape)
        gx, gw, gb = conv3d_backward(g, x, w, spec)
        assert gx.shape == x.shape
        assert gw.shape == w.shape
        np.testing.assert_allclose(gb, g.sum(axis=(0, 2, 3, 4)))

    @requires_torch
    def test_against_torch(self, rng):
        """Test forward and backward against torch.nn.functional.conv3d."""
        spec = ConvSpec(3, 4, (3, 3, 3), (1, 2, 2), (1, 1, 1))
        x = rng.standard_normal((2, 3, 4, 8, 8))
        w = rng.standard_normal(spec.weight_shape)
        g = rng.standard_normal((2, 4) + spec.output_extent(x.shape[2:]))

        tx = torch.tensor(x, requires_grad=True)
        tw = torch.tensor(w, requires_grad=True)
        ty = F.conv3d(tx, tw, stride=spec.stride, padding=spec.padding)
        ty.backward(torch.tensor(g))

        np.testing.assert_allclose(conv3d_forward(x, w, None, spec), ty.detach().numpy(), atol=1e-10)
        gx, gw, _ = conv3d_backward(g, x, w, spec)
        np.testing.assert_allclose(gx, tx.grad.numpy(), atol=1e-10)
        np.testing.assert_allclose(gw, tw.grad.numpy(), atol=1e-10)


class TestBatchNorm:
    """Tests for 3D batch normalization."""

    def test_train_output_is_normalized(self, rng):
        """Test zero mean / unit variance per channel with gamma 1, beta 0."""
        x = rng.standard_normal((4, 3, 2, 3, 3)) * 5 + 2
        out, _, _ = batchnorm3d(x, np.ones(3), np.zeros(3), RunningStats.initial(3, np.float64), TRAIN)
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3, 4)), 0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3, 4)), 1, atol=1e-3)

    def test_running_stats_update(self, rng):
        """Test momentum 0.1 with the unbiased batch variance."""
        x = rng.standard_normal((2, 2, 2, 2, 2))
        stats = RunningStats.initial(2, np.float64)
        _, _, new = batchnorm3d(x, np.ones(2), np.zeros(2), stats, TRAIN)
        axes = (0, 2, 3, 4)
        np.testing.assert_allclose(new.mean, 0.1 * x.mean(axis=axes))
        np.testing.assert_allclose(new.var, 0.9 + 0.1 * x.var(axis=axes, ddof=1))
        assert new.num_batches_tracked == 1
        assert stats.num_batches_tracked == 0

    def test_eval_before_update_raises(self, rng):
        """Test that eval mode needs at least one running-stat update."""
        x = rng.standard_normal((1, 2, 2, 2, 2))
        with pytest.raises(ValueError, match="before any running-stat update"):
            batchnorm3d(x, np.ones(2), np.zeros(2), RunningStats.initial(2), EVAL)

    def test_eval_uses_running_stats(self, rng):
        """Test that eval mode normalizes with the stored statistics."""
        x = rng.standard_normal((1, 1, 2, 2, 2))
        stats = RunningStats(np.array([1.0]), np.array([4.0]), 3)
        out, _, new = batchnorm3d(x, np.array([2.0]), np.array([0.5]), stats, EVAL)
        np.testing.assert_allclose(out, 2.0 * (x - 1.0) / np.sqrt(4.0 + 1e-5) + 0.5)
        assert new is stats

    @requires_torch
    def test_against_torch(self, rng):
        """Test train-mode output against torch.nn.functional.batch_norm."""
        x = rng.standard_normal((3, 4, 2, 3, 3))
        gamma, beta = rng.standard_normal(4), rng.standard_normal(4)
        out, _, new = batchnorm3d(x, gamma, beta, RunningStats.initial(4, np.float64), TRAIN)
        rm, rv = torch.zeros(4, dtype=torch.float64), torch.ones(4, dtype=torch.float64)
        expected = F.batch_norm(torch.tensor(x), rm, rv, torch.tensor(gamma), torch.tensor(beta),
                                training=True, momentum=0.1, eps=1e-5)
        np.testing.assert_allclose(out, expected.numpy(), atol=1e-10)
        np.testing.assert_allclose(new.var, rv.numpy(), atol=1e-12)


class TestPoolingAndActivations:
    """Tests for max-pooling, global average pooling, ReLU and linear layers."""

    def test_maxpool_tie_goes_to_first(self):
        """Test that the gradient of a tied window flows to the first element only."""
        x = np.ones((1, 1, 2, 2, 2))
        out, cache = maxpool3d(x, 2, 2)
        grad = maxpool3d_backward(np.ones_like(out), cache)
        assert grad.reshape(-1)[0] == 1 and grad.sum() == 1

    def test_maxpool_padding_never_wins(self):
        """Test that implicit padding behaves as -inf."""
        x = -np.ones((1, 1, 3, 3, 3))
        out, _ = maxpool3d(x, 3, 2, padding=1)
        assert out.shape == (1, 1, 2, 2, 2)
        assert np.all(out == -1)

    def test_maxpool_window_larger_than_input(self):
        """Test that a window exceeding the unpadded input is rejected even when padding would fit it."""
        x = np.zeros((1, 1, 2, 4, 4))
        with pytest.raises(ValueError, match="pooling window extent 3 along T"):
            maxpool3d(x, 3, 1, padding=1)

    @requires_torch
    def test_maxpool_against_torch(self, rng):
        """Test padded max-pooling against torch.nn.functional.max_pool3d."""
        x = rng.standard_normal((2, 3, 5, 6, 6))
        out, _ = maxpool3d(x, 3, 2, padding=1)
        expected = F.max_pool3d(torch.tensor(x), 3, 2, padding=1)
        np.testing.assert_allclose(out, expected.numpy())

    def test_global_avgpool(self, rng):
        """Test that global average pooling averages over T, H and W."""
        x = rng.standard_normal((2, 3, 2, 4, 4))
        np.testing.assert_allclose(global_avgpool(x), x.mean(axis=(2, 3, 4)))

    def test_relu_and_linear(self, rng):
        """Test ReLU clipping and the [D, K] linear layout."""
        x = rng.standard_normal((3, 4))
        assert np.all(relu(x) >= 0)
        w, b = rng.standard_normal((4, 2)), rng.standard_normal(2)
        np.testing.assert_allclose(linear(x, w, b), x @ w + b)


class TestLoss:
    """Tests for softmax and cross-entropy."""

    def test_uniform_logits(self):
        """Test that zero logits give loss ln K."""
        loss, grad = softmax_cross_entropy(np.zeros((4, 48)), np.array([0, 5, 47, 3]))
        assert loss == pytest.approx(math.log(48))
        np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-12)

    def test_large_logits_are_stable(self):
        """Test max-subtraction with huge logits."""
        logits = np.array([[1000.0, 0.0, -1000.0]])
        loss, _ = softmax_cross_entropy(logits, np.array([0]))
        assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(softmax(logits).sum(), 1.0)

    def test_shift_invariance(self, rng):
        """Test that adding a constant to every logit of a row changes neither softmax nor loss."""
        logits = rng.standard_normal((3, 7))
        labels = np.array([0, 4, 6])
        shifted = logits + np.array([[5.0], [-12.0], [300.0]])
        np.testing.assert_allclose(softmax(shifted), softmax(logits), atol=1e-12)
        assert softmax_cross_entropy(shifted, labels)[0] == pytest.approx(
            softmax_cross_entropy(logits, labels)[0], abs=1e-5)

    def test_label_out_of_range(self):
        """Test that labels outside [0, K) are rejected."""
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.zeros((1, 3)), np.array([3]))


class TestSgd:
    """Tests for momentum SGD and weight-decay exclusions."""

    @pytest.fixture
    def params(self):
        params = NetworkParams()
        params.add("layer.weight", np.array([1.0, -2.0]))
        params.add("layer.bias", np.array([0.5]))
        params.add("layer.bn.gamma", np.array([1.0]))
        return params

    def test_decay_exclusions(self):
        """Test that gamma, beta and biases are not decayed."""
        assert is_decayed("backbone.conv1.weight")
        assert not is_decayed("backbone.bn1.gamma")
        assert not is_decayed("backbone.bn1.beta")
        assert not is_decayed("puzzle_head.fc1.bias")

    def test_update_rule(self, params):
        """Test v = m v + g + wd p and p = p - lr v over two steps."""
        grads = {"layer.weight": np.array([0.1, 0.1]), "layer.bias": np.array([1.0]),
                 "layer.bn.gamma": np.array([0.0])}
        step1 = sgd_step(params, grads, lr=0.1, momentum=0.9, weight_decay=0.01)
        v1 = np.array([0.1, 0.1]) + 0.01 * np.array([1.0, -2.0])
        np.testing.assert_allclose(step1["layer.weight"], np.array([1.0, -2.0]) - 0.1 * v1, rtol=1e-5)
        np.testing.assert_allclose(step1["layer.bias"], [0.4], rtol=1e-5)
        np.testing.assert_allclose(step1["layer.bn.gamma"], [1.0])

        step2 = sgd_step(step1, grads, lr=0.1, momentum=0.9, weight_decay=0.01)
        v2 = 0.9 * v1 + np.array([0.1, 0.1]) + 0.01 * step1["layer.weight"]
        np.testing.assert_allclose(step2["layer.weight"], step1["layer.weight"] - 0.1 * v2, rtol=1e-5)
        np.testing.assert_array_equal(params["layer.weight"], np.array([1.0, -2.0], dtype=np.float32))

    def test_zero_lr_keeps_params(self, params):
        """Test that lr 0 leaves every parameter bit-equal."""
        grads = {name: np.ones_like(value) for name, value in params.params.items()}
        assert sgd_step(params, grads, lr=0.0).equal(params)

    def test_missing_gradient(self, params):
        """Test that a missing gradient is reported by name."""
        with pytest.raises(KeyError, match="layer.bias"):
            sgd_step(params, {"layer.weight": np.zeros(2)}, lr=0.1)

    def test_trainable_subset(self, params):
        """Test that names outside trainable are carried over unchanged."""
        new = sgd_step(params, {"layer.bias": np.array([1.0])}, lr=0.1, trainable=["layer.bias"])
        assert new.equal(params, ["layer.weight", "layer.bn.gamma"])
        assert not new.equal(params, ["layer.bias"])
