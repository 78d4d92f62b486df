"""Tests for the recurrent acoustic model, its backward pass, and Adam."""

import numpy as np
import pytest

from catdesk.am import (
    ModelParams,
    OptimState,
    am_backward,
    am_forward,
    expected_shapes,
    global_norm,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
    tensor_names,
)
from catdesk.loss import FrameLogits, ctc_crf_loss, uniform_denominator

from test_loss import assert_grad_close, finite_difference

A, B = 2, 3


def tiny_params(seed=0, d_in=2, d_h=4, n_out=3):
    return ModelParams.init(d_in, d_h, n_out, seed=seed)


def flatten(tensors):
    return np.concatenate([tensors[n].ravel() for n in tensor_names()])


def unflatten(vec, d_in, d_h, n_out):
    shapes = expected_shapes(d_in, d_h, n_out)
    out = {}
    pos = 0
    for name in tensor_names():
        size = int(np.prod(shapes[name]))
        out[name] = vec[pos:pos + size].reshape(shapes[name]).copy()
        pos += size
    return out


class TestForward:
    def test_zero_params_give_bias_logits(self):
        p = tiny_params()
        for name in p.tensors:
            p.tensors[name][:] = 0.0
        p.tensors["b_out"][:] = np.array([0.5, -1.0, 2.0])
        logits, trace, _ = am_forward(p, np.ones((4, 2)))
        assert np.allclose(logits.scores, np.array([0.5, -1.0, 2.0]))
        assert np.allclose(trace, 0.0)

    def test_single_frame_directions_agree(self):
        p = tiny_params(seed=3)
        x = np.random.default_rng(0).normal(size=(1, 2))
        _, trace, _ = am_forward(p, x)
        assert trace.shape == (1, 2, 4)

    def test_deterministic(self):
        p1 = tiny_params(seed=7)
        p2 = tiny_params(seed=7)
        x = np.random.default_rng(1).normal(size=(5, 2))
        l1, _, _ = am_forward(p1, x)
        l2, _, _ = am_forward(p2, x)
        assert np.array_equal(l1.scores, l2.scores)

    def test_width_mismatch_rejected(self):
        with pytest.raises(ValueError, match="features must be"):
            am_forward(tiny_params(), np.zeros((3, 5)))


class TestBackward:
    def test_parameter_gradients_match_finite_differences(self):
        p = tiny_params(seed=11)
        rng = np.random.default_rng(2)
        x = rng.normal(size=(5, 2))
        g_logits = rng.normal(size=(5, 3))
        g_hidden = rng.normal(size=(5, 2, 4))

        def value(vec):
            q = ModelParams(2, 4, 3, unflatten(vec, 2, 4, 3))
            logits, trace, _ = am_forward(q, x)
            return float((logits.scores * g_logits).sum() + (trace * g_hidden).sum())

        _, _, cache = am_forward(p, x)
        grads = am_backward(cache, g_logits, g_hidden)
        numeric = finite_difference(value, flatten(p.tensors))
        assert_grad_close(flatten(grads), numeric)

    def test_zero_grads_give_zero(self):
        p = tiny_params()
        _, _, cache = am_forward(p, np.ones((3, 2)))
        grads = am_backward(cache, np.zeros((3, 3)), np.zeros((3, 2, 4)))
        assert all(np.all(g == 0) for g in grads.values())

    def test_hidden_grad_reaches_recurrent_weights(self):
        p = tiny_params(seed=5)
        x = np.random.default_rng(3).normal(size=(4, 2))
        _, _, cache = am_forward(p, x)
        grads = am_backward(cache, np.zeros((4, 3)), np.ones((4, 2, 4)))
        assert np.abs(grads["fw_un"]).max() > 0
        assert np.abs(grads["bw_un"]).max() > 0
        assert np.all(grads["w_out"] == 0)

    def test_stale_cache_rejected(self):
        p = tiny_params()
        _, _, cache = am_forward(p, np.ones((2, 2)))
        optimizer_step(p, p.zeros_like(), OptimState())
        with pytest.raises(ValueError, match="stale"):
            am_backward(cache, np.zeros((2, 3)))


class TestEndToEndGradient:
    def test_loss_through_network_matches_finite_differences(self):
        den = uniform_denominator([A, B])
        p = tiny_params(seed=13)
        x = np.random.default_rng(4).normal(size=(5, 2))
        labels = [A, B]

        def value(vec):
            q = ModelParams(2, 4, 3, unflatten(vec, 2, 4, 3))
            logits, _, _ = am_forward(q, x)
            return ctc_crf_loss(logits, labels, den, lm=None, alpha=0.01).total

        logits, _, cache = am_forward(p, x)
        report = ctc_crf_loss(logits, labels, den, lm=None, alpha=0.01)
        grads = am_backward(cache, report.grad_logits)
        numeric = finite_difference(value, flatten(p.tensors))
        assert_grad_close(flatten(grads), numeric)


class TestOptimizer:
    def test_zero_gradient_only_bumps_step(self):
        p = tiny_params(seed=1)
        before = {k: v.copy() for k, v in p.tensors.items()}
        opt = OptimState()
        optimizer_step(p, p.zeros_like(), opt)
        assert opt.step == 1
        assert all(np.array_equal(before[k], p.tensors[k]) for k in before)

    def test_identical_runs_identical_trajectories(self):
        def run():
            p = tiny_params(seed=2)
            opt = OptimState(lr=0.01)
            rng = np.random.default_rng(9)
            for _ in range(5):
                grads = {k: rng.normal(size=v.shape) for k, v in p.tensors.items()}
                optimizer_step(p, grads, opt)
            return flatten(p.tensors)

        assert np.array_equal(run(), run())

    def test_clipping_scales_before_moments(self):
        p = tiny_params(seed=4)
        grads = p.zeros_like()
        grads["b_out"][:] = np.array([10.0, 0.0, 0.0])  # global norm 10
        opt = OptimState(lr=1.0, clip_norm=1.0)
        optimizer_step(p, grads, opt)
        # after clipping the first moment holds 0.1 * grad
        assert opt.m["b_out"][0] == pytest.approx((1 - opt.beta1) * 1.0)
        assert global_norm({"g": grads["b_out"] * 0.1}) == pytest.approx(1.0)

    def test_non_finite_gradient_aborts(self):
        p = tiny_params()
        grads = p.zeros_like()
        grads["w_in"][0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite gradient"):
            optimizer_step(p, grads, OptimState())


class TestTrainingShrinksLoss:
    def test_fifty_steps_halve_the_loss(self):
        den = uniform_denominator([A, B])
        rng = np.random.default_rng(21)
        x = rng.normal(size=(8, 2))
        labels = [A, B, A]
        p = tiny_params(seed=8)
        opt = OptimState(lr=0.05)
        losses = []
        for _ in range(50):
            logits, _, cache = am_forward(p, x)
            report = ctc_crf_loss(logits, labels, den, lm=None, alpha=0.01)
            losses.append(report.total)
            grads = am_backward(cache, report.grad_logits)
            optimizer_step(p, grads, opt)
        assert losses[-1] < 0.5 * losses[0]
        # monotone after the early transient
        for i in range(5, len(losses) - 1):
            assert losses[i + 1] <= losses[i] + 1e-9, i


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        p = tiny_params(seed=17)
        path = tmp_path / "model.bin"
        save_checkpoint(path, p)
        q = load_checkpoint(path)
        assert (q.d_in, q.d_h, q.n_out) == (p.d_in, p.d_h, p.n_out)
        for name in tensor_names():
            assert np.array_equal(p.tensors[name], q.tensors[name])

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        p = tiny_params(seed=17)
        path = tmp_path / "model.bin"
        save_checkpoint(path, p)
        data = path.read_bytes()
        path.write_bytes(data[:-9])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)
