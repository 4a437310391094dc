"""Tests for the feedforward encoder: context stacking, initialization,
forward determinism and dropout, and the backward pass against finite
differences."""

import numpy as np
import pytest

from fullsum.encoder import (
    EncoderConfig,
    encoder_backward,
    encoder_forward,
    init_encoder,
    l2_penalty,
    stack_context,
    zero_encoder,
)


def tiny_config(**kwargs):
    defaults = dict(
        input_dim=3,
        output_dim=4,
        hidden_layers=(5, 4),
        activation="tanh",
        context_window=1,
        dropout_rate=0.0,
    )
    defaults.update(kwargs)
    return EncoderConfig(**defaults)


def central_diff(f, array, index, h=1e-6):
    """Two-point central difference of a scalar function at one entry."""
    orig = array[index]
    array[index] = orig + h
    up = f()
    array[index] = orig - h
    down = f()
    array[index] = orig
    return (up - down) / (2.0 * h)


class TestConfig:
    def test_layer_dims_include_context_stacking(self):
        """The first layer consumes (2c+1) stacked frames; the last emits
        the output classes."""
        cfg = tiny_config()
        assert cfg.stacked_dim == 9
        assert cfg.layer_dims == [(9, 5), (5, 4), (4, 4)]
        assert cfg.hidden_dim == 4

    def test_no_hidden_layers_degenerates_to_linear_softmax(self):
        cfg = tiny_config(hidden_layers=())
        assert cfg.layer_dims == [(9, 4)]
        assert cfg.hidden_dim == 9

    def test_validation(self):
        with pytest.raises(ValueError):
            tiny_config(input_dim=0)
        with pytest.raises(ValueError):
            tiny_config(hidden_layers=(8, 0))
        with pytest.raises(ValueError):
            tiny_config(activation="sigmoid")
        with pytest.raises(ValueError):
            tiny_config(context_window=-1)
        with pytest.raises(ValueError):
            tiny_config(dropout_rate=1.0)


class TestStackContext:
    def test_zero_window_is_identity(self):
        x = np.arange(8.0).reshape(4, 2)
        np.testing.assert_array_equal(stack_context(x, 0), x)

    def test_window_one_concatenates_neighbours(self):
        """Row t holds frames t-1, t, t+1; edges replicate themselves."""
        x = np.arange(8.0).reshape(4, 2)
        stacked = stack_context(x, 1)
        assert stacked.shape == (4, 6)
        np.testing.assert_array_equal(stacked[0], np.concatenate([x[0], x[0], x[1]]))
        np.testing.assert_array_equal(stacked[2], np.concatenate([x[1], x[2], x[3]]))
        np.testing.assert_array_equal(stacked[3], np.concatenate([x[2], x[3], x[3]]))

    def test_wide_window_replicates_edges(self):
        x = np.arange(6.0).reshape(3, 2)
        stacked = stack_context(x, 2)
        np.testing.assert_array_equal(
            stacked[0], np.concatenate([x[0], x[0], x[0], x[1], x[2]])
        )


class TestInit:
    def test_glorot_bounds_and_zero_biases(self):
        """Weights stay inside +-sqrt(6 / (fan_in + fan_out)); biases are 0."""
        cfg = tiny_config()
        weights = init_encoder(cfg, seed=3)
        for (W, b), (fan_in, fan_out) in zip(weights.layers, cfg.layer_dims):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            assert np.all(np.abs(W) <= limit)
            assert np.ptp(W) > limit  # actually spread out, not collapsed
            np.testing.assert_array_equal(b, np.zeros(fan_out))

    def test_seed_reproducibility(self):
        cfg = tiny_config()
        a = init_encoder(cfg, seed=7)
        b = init_encoder(cfg, seed=7)
        c = init_encoder(cfg, seed=8)
        for (Wa, _), (Wb, _), (Wc, _) in zip(a.layers, b.layers, c.layers):
            np.testing.assert_array_equal(Wa, Wb)
            assert not np.array_equal(Wa, Wc)

    def test_zero_encoder_shapes(self):
        cfg = tiny_config()
        zeros = zero_encoder(cfg)
        for (W, b), (fi, fo) in zip(zeros.layers, cfg.layer_dims):
            assert W.shape == (fi, fo) and b.shape == (fo,)
            assert not W.any() and not b.any()


class TestForward:
    def test_rows_are_normalized_log_probabilities(self):
        cfg = tiny_config()
        weights = init_encoder(cfg, seed=0)
        rng = np.random.default_rng(1)
        log_probs, _ = encoder_forward(cfg, weights, rng.standard_normal((6, 3)))
        assert log_probs.shape == (6, 4)
        np.testing.assert_allclose(np.exp(log_probs).sum(axis=1), 1.0, atol=1e-12)

    def test_inference_is_deterministic(self):
        """Eval mode ignores the dropout seed entirely."""
        cfg = tiny_config(dropout_rate=0.4)
        weights = init_encoder(cfg, seed=0)
        x = np.random.default_rng(2).standard_normal((5, 3))
        a, _ = encoder_forward(cfg, weights, x, train_mode=False, seed=1)
        b, _ = encoder_forward(cfg, weights, x, train_mode=False, seed=99)
        np.testing.assert_array_equal(a, b)

    def test_dropout_seed_controls_masks(self):
        """Same seed gives identical training outputs; a different seed
        changes them; zero dropout makes train and eval agree."""
        cfg = tiny_config(dropout_rate=0.4)
        weights = init_encoder(cfg, seed=0)
        x = np.random.default_rng(3).standard_normal((5, 3))
        a, _ = encoder_forward(cfg, weights, x, train_mode=True, seed=5)
        b, _ = encoder_forward(cfg, weights, x, train_mode=True, seed=5)
        c, _ = encoder_forward(cfg, weights, x, train_mode=True, seed=6)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

        plain = tiny_config(dropout_rate=0.0)
        w2 = init_encoder(plain, seed=0)
        train, _ = encoder_forward(plain, w2, x, train_mode=True, seed=5)
        infer, _ = encoder_forward(plain, w2, x, train_mode=False)
        np.testing.assert_array_equal(train, infer)

    def test_dropout_masks_are_inverted(self):
        """Kept units are scaled by 1/keep so the expected activation is
        unchanged; dropped units are exactly zero."""
        cfg = tiny_config(hidden_layers=(16,), dropout_rate=0.5)
        weights = init_encoder(cfg, seed=0)
        x = np.random.default_rng(4).standard_normal((8, 3))
        _, cache = encoder_forward(cfg, weights, x, train_mode=True, seed=7)
        mask = cache.dropout_masks[0]
        assert set(np.unique(mask)) == {0.0, 2.0}

    def test_relu_matches_manual_computation(self):
        cfg = tiny_config(hidden_layers=(5,), activation="relu", context_window=0)
        weights = init_encoder(cfg, seed=1)
        x = np.random.default_rng(5).standard_normal((4, 3))
        _, cache = encoder_forward(cfg, weights, x)
        W0, b0 = weights.layers[0]
        np.testing.assert_allclose(cache.hidden, np.maximum(x @ W0 + b0, 0.0))

    def test_input_validation(self):
        cfg = tiny_config()
        weights = init_encoder(cfg, seed=0)
        with pytest.raises(ValueError):
            encoder_forward(cfg, weights, np.zeros((4, 2)))
        bad = np.zeros((4, 3))
        bad[1][2] = np.nan
        with pytest.raises(ValueError):
            encoder_forward(cfg, weights, bad)


class TestBackward:
    def finite_difference_check(self, cfg, seed, train_mode=False, with_extra=False,
                               l2=0.0, atol=2e-7):
        """Compare every weight and bias gradient against a central
        difference of the scalar loss sum(c * log_probs) (+ optional hidden
        term and L2 penalty)."""
        rng = np.random.default_rng(seed)
        weights = init_encoder(cfg, seed=seed)
        x = rng.standard_normal((6, cfg.input_dim))
        coef = rng.standard_normal((6, cfg.output_dim))
        hcoef = rng.standard_normal((6, cfg.hidden_dim)) if with_extra else None

        def loss():
            log_probs, cache = encoder_forward(
                cfg, weights, x, train_mode=train_mode, seed=11
            )
            value = float((coef * log_probs).sum())
            if hcoef is not None:
                value += float((hcoef * cache.hidden).sum())
            return value + l2_penalty(weights, l2)

        log_probs, cache = encoder_forward(cfg, weights, x, train_mode=train_mode, seed=11)
        grads = encoder_backward(
            cfg, cache, weights, coef, d_hidden_extra=hcoef, l2=l2
        )
        worst = 0.0
        for param, grad in zip(weights.flat(), grads.flat()):
            for index in np.ndindex(param.shape):
                numeric = central_diff(loss, param, index)
                worst = max(worst, abs(numeric - grad[index]))
        assert worst < atol

    def test_gradients_match_finite_differences(self):
        self.finite_difference_check(tiny_config(), seed=0)

    def test_gradients_with_dropout_masks_replayed(self):
        """With a fixed seed the perturbed forward draws the same masks, so
        the analytic gradient matches through active dropout."""
        self.finite_difference_check(
            tiny_config(dropout_rate=0.3), seed=1, train_mode=True
        )

    def test_gradients_with_hidden_tap(self):
        """An extra gradient injected on the last hidden layer flows through
        the same backward pass."""
        self.finite_difference_check(tiny_config(), seed=2, with_extra=True)

    def test_gradients_with_weight_decay(self):
        """The analytic gradient includes l2 * W exactly when the loss
        includes the matching quadratic penalty."""
        self.finite_difference_check(tiny_config(), seed=3, l2=0.05)

    def test_gradients_without_hidden_layers(self):
        self.finite_difference_check(tiny_config(hidden_layers=()), seed=4)

    def test_relu_blocks_gradient_through_inactive_units(self):
        """A unit held below zero contributes no gradient to its weights."""
        cfg = EncoderConfig(
            input_dim=1, output_dim=2, hidden_layers=(1,), activation="relu",
            context_window=0, dropout_rate=0.0,
        )
        weights = zero_encoder(cfg)
        weights.layers[0] = (np.asarray([[1.0]]), np.asarray([-2.0]))
        weights.layers[1] = (np.asarray([[1.0, -1.0]]), np.zeros(2))
        d_log_probs = np.asarray([[1.0, 0.0]])

        _, cache = encoder_forward(cfg, weights, np.asarray([[1.0]]))  # z = -1
        grads = encoder_backward(cfg, cache, weights, d_log_probs)
        np.testing.assert_array_equal(grads.layers[0][0], [[0.0]])
        np.testing.assert_array_equal(grads.layers[0][1], [0.0])

        _, cache = encoder_forward(cfg, weights, np.asarray([[3.0]]))  # z = +1
        grads = encoder_backward(cfg, cache, weights, d_log_probs)
        assert grads.layers[0][0][0][0] != 0.0

    def test_stale_cache_rejected(self):
        """Backward refuses a cache built from different weight objects."""
        cfg = tiny_config()
        weights = init_encoder(cfg, seed=0)
        x = np.zeros((3, 3))
        _, cache = encoder_forward(cfg, weights, x)
        with pytest.raises(ValueError):
            encoder_backward(cfg, cache, weights.copy(), np.zeros((3, 4)))

    def test_l2_penalty_counts_weight_matrices_only(self):
        """Biases never enter the penalty; the value is 0.5 * l2 * sum W^2."""
        cfg = tiny_config(hidden_layers=(2,))
        weights = zero_encoder(cfg)
        weights.layers[0][0][:] = 2.0
        weights.layers[0][1][:] = 100.0  # bias, must not count
        expected = 0.5 * 0.1 * (2.0 ** 2) * weights.layers[0][0].size
        np.testing.assert_allclose(l2_penalty(weights, 0.1), expected)
        assert l2_penalty(weights, 0.0) == 0.0
