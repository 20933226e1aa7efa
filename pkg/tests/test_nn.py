import math

import numpy as np
import pytest
from helpers import (hinge_safe_bias, make_loss_fn, max_relative_error,
                     numeric_gradients, params_equal, random_params, tiny_dataset)

from fedransom import nn
from fedransom.data import one_hot
from fedransom.errors import EmptyDataset, InvalidRate, ShapeMismatch


def test_relu_by_cases():
    out = nn.relu(np.array([-1.0, 0.0, 2.5], dtype=np.float32))
    assert out.tolist() == [0.0, 0.0, 2.5]


def test_relu_all_negative_and_all_nonnegative():
    assert (nn.relu(np.full((3, 3), -2.0)) == 0.0).all()
    x = np.array([[0.0, 1.0], [3.5, 0.25]])
    assert (nn.relu(x) == x).all()


def test_relu_is_idempotent():
    x = np.random.default_rng(0).standard_normal((4, 5))
    once = nn.relu(x)
    assert (nn.relu(once) == once).all()


def test_softmax_symmetry():
    assert nn.softmax_output(np.zeros(2, dtype=np.float32)).tolist() == [0.5, 0.5]


def test_softmax_closed_form():
    z = nn.softmax_output(np.array([math.log(2.0), 0.0]))
    assert z == pytest.approx([2 / 3, 1 / 3])


def test_softmax_large_logits_do_not_overflow():
    z = nn.softmax_output(np.array([1000.0, 0.0], dtype=np.float32))
    assert np.isfinite(z).all()
    assert z[0] == pytest.approx(1.0)
    assert z[1] == pytest.approx(0.0, abs=1e-6)


def test_softmax_rows_sum_to_one():
    h = np.random.default_rng(3).standard_normal((40, 2)).astype(np.float32)
    sums = nn.softmax_output(h).sum(axis=1)
    assert np.abs(sums - 1.0).max() < 1e-6


def test_conv_hand_computed_all_ones():
    x = np.ones((1, 3, 3), dtype=np.float32)
    k = np.ones((1, 1, 3, 3), dtype=np.float32)
    out = nn.conv2d_same(x, k, np.zeros(1, dtype=np.float32))
    expected = [[4.0, 6.0, 4.0], [6.0, 9.0, 6.0], [4.0, 6.0, 4.0]]
    assert out[0].tolist() == expected


def test_conv_center_delta_kernel_is_identity():
    rng = np.random.default_rng(1)
    x = rng.random((2, 1, 6, 7), dtype=np.float32)
    k = np.zeros((1, 1, 3, 3), dtype=np.float32)
    k[0, 0, 1, 1] = 1.0
    out = nn.conv2d_same(x, k, np.zeros(1, dtype=np.float32))
    assert (out[:, 0] == x[:, 0]).all()


def test_conv_zero_input_yields_bias_planes():
    x = np.zeros((1, 5, 5), dtype=np.float32)
    k = np.random.default_rng(2).standard_normal((4, 1, 3, 3)).astype(np.float32)
    bias = np.array([0.5, -1.0, 0.0, 3.0], dtype=np.float32)
    out = nn.conv2d_same(x, k, bias)
    for f, b in enumerate(bias):
        assert (out[f] == b).all()


def test_conv_shape_validation():
    ones = np.ones((1, 4, 4), dtype=np.float32)
    with pytest.raises(ShapeMismatch):
        nn.conv2d_same(ones, np.ones((2, 3, 3, 3), dtype=np.float32), np.zeros(2, dtype=np.float32))
    with pytest.raises(ShapeMismatch):
        nn.conv2d_same(np.ones((1, 2, 2), dtype=np.float32),
                       np.ones((1, 1, 3, 3), dtype=np.float32), np.zeros(1, dtype=np.float32))


def test_dropout_rate_zero_is_identity():
    x = np.random.default_rng(0).random((5, 5), dtype=np.float32)
    out, mask = nn.dropout(x, 0.0, np.random.default_rng(1), training=True)
    assert (out == x).all()
    assert (mask == 1.0).all()


def test_dropout_eval_mode_is_identity():
    x = np.random.default_rng(0).random((5, 5), dtype=np.float32)
    out, mask = nn.dropout(x, 0.9, None, training=False)
    assert (out == x).all()
    assert (mask == 1.0).all()


def test_dropout_survival_fraction_and_mean():
    x = np.random.default_rng(7).random(1_000_000, dtype=np.float32) + 0.5
    out, mask = nn.dropout(x, 0.5, np.random.default_rng(11), training=True)
    surviving = (mask > 0).mean()
    assert 0.497 <= surviving <= 0.503
    assert abs(out.mean() / x.mean() - 1.0) < 0.01


def test_dropout_invalid_rate():
    x = np.zeros(3, dtype=np.float32)
    for rate in (-0.1, 1.0, 1.5):
        with pytest.raises(InvalidRate):
            nn.dropout(x, rate, np.random.default_rng(0), training=True)


def test_zero_params_predict_half_half():
    params = random_params(side=8, seed=0)
    zeros = nn.ModelParams(*(np.zeros_like(a) for a in params.named().values()))
    batch = np.random.default_rng(5).random((3, 1, 8, 8), dtype=np.float32)
    trace = nn.forward(zeros, batch, nn.TrainConfig(side=8))
    assert (trace.probs == 0.5).all()


def test_forward_is_batch_independent_in_eval():
    params = random_params(side=10, seed=4)
    batch = np.random.default_rng(9).random((4, 1, 10, 10), dtype=np.float32)
    cfg = nn.TrainConfig(side=10)
    alone = nn.forward(params, batch[2:3], cfg).probs
    together = nn.forward(params, batch, cfg).probs
    assert np.abs(alone[0] - together[2]).max() < 1e-6


def test_flatten_width_follows_shape_law():
    params = random_params(side=64, seed=1)
    batch = np.zeros((1, 1, 64, 64), dtype=np.float32)
    trace = nn.forward(params, batch, nn.TrainConfig(side=64))
    assert trace.flat.shape == (1, 32 * 64 * 64)
    assert trace.flat.shape[1] == 131_072


def test_forward_rejects_wrong_side():
    params = random_params(side=8, seed=0)
    with pytest.raises(ShapeMismatch):
        nn.forward(params, np.zeros((1, 1, 10, 10), dtype=np.float32), nn.TrainConfig(side=10))


def test_loss_at_even_probabilities_is_log_two():
    params = random_params(side=8, seed=0)
    zeros = nn.ModelParams(*(np.zeros_like(a) for a in params.named().values()))
    batch = np.random.default_rng(0).random((6, 1, 8, 8), dtype=np.float32)
    trace = nn.forward(zeros, batch, nn.TrainConfig(side=8))
    labels = one_hot(np.array([0, 1, 0, 1, 1, 0]))
    loss, grads = nn.loss_and_grad(trace, labels, zeros)
    assert loss == pytest.approx(math.log(2.0), rel=1e-6)
    for name, g in grads.named().items():
        assert g.shape == zeros.named()[name].shape


def test_loss_of_confident_correct_prediction_is_near_zero():
    params = random_params(side=8, seed=2)
    batch = np.random.default_rng(1).random((1, 1, 8, 8), dtype=np.float32)
    cfg = nn.TrainConfig(side=8)
    trace = nn.forward(params, batch, cfg)
    # force near-certainty on class 0 via the dense bias
    boosted = nn.ModelParams(params.conv_kernels, params.conv_bias, params.dense_weights,
                             params.dense_bias + np.array([30.0, -30.0], dtype=np.float32))
    trace = nn.forward(boosted, batch, cfg)
    loss, _ = nn.loss_and_grad(trace, one_hot(np.array([0])), boosted)
    assert 0.0 <= loss < 1e-6


def test_gradients_match_finite_differences_small_model():
    # float64 end to end, frozen dropout mask, hinge-safe bias placement
    side, batch_size = 8, 2
    cfg = nn.TrainConfig(side=side, dropout_rate=0.25)
    rng = np.random.default_rng(101)
    batch = rng.random((batch_size, 1, side, side))
    labels = one_hot(rng.integers(0, 2, batch_size)).astype(np.float64)
    params = nn.init_params(side, 11).astype(np.float64)
    params = hinge_safe_bias(params, batch)
    loss_at = make_loss_fn(params, batch, labels, cfg, mask_seed=55)

    trace = nn.forward(params, batch, cfg, np.random.default_rng(55), training=True)
    _, analytic = nn.loss_and_grad(trace, labels, params)
    numeric = numeric_gradients(loss_at, params)
    assert max_relative_error(analytic, numeric) < 1e-3


def test_sgd_zero_gradient_leaves_params_unchanged():
    params = random_params(side=8, seed=3)
    zeros = nn.ModelParams(*(np.zeros_like(a) for a in params.named().values()))
    assert params_equal(nn.sgd_step(params, zeros, 0.5), params)


def test_sgd_arithmetic():
    params = nn.ModelParams(*(np.full_like(a, 1.0) for a in random_params(8, 0).named().values()))
    grads = nn.ModelParams(*(np.full_like(a, 0.5) for a in params.named().values()))
    stepped = nn.sgd_step(params, grads, 0.006)
    assert stepped.conv_bias[0] == pytest.approx(0.997)


def test_sgd_two_steps_equal_one_with_doubled_rate():
    params = random_params(side=8, seed=6)
    grads = random_params(side=8, seed=7)
    twice = nn.sgd_step(nn.sgd_step(params, grads, 0.01), grads, 0.01)
    once = nn.sgd_step(params, grads, 0.02)
    for a, b in zip(twice.named().values(), once.named().values()):
        assert np.abs(a - b).max() < 1e-6


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        nn.sgd_step(random_params(side=8, seed=0), random_params(side=10, seed=0), 0.1)


def test_fit_with_zero_learning_rate_changes_nothing():
    train = tiny_dataset(n=20, side=8, seed=1)
    cfg = nn.TrainConfig(side=8, learning_rate=0.0, epochs=2, batch_size=8)
    params = nn.init_params(8, 5)
    fitted, history = nn.fit(params, train, cfg, np.random.default_rng(5))
    assert params_equal(fitted, params)
    assert len(history) == 2


def test_fit_is_deterministic_for_a_seed():
    train = tiny_dataset(n=20, side=8, seed=2)
    cfg = nn.TrainConfig(side=8, epochs=2, batch_size=8, seed=9)
    runs = []
    for _ in range(2):
        params = nn.init_params(8, cfg.seed)
        runs.append(nn.fit(params, train, cfg, np.random.default_rng(cfg.seed)))
    assert params_equal(runs[0][0], runs[1][0])
    assert runs[0][1] == runs[1][1]


def test_fit_reaches_full_accuracy_on_separable_images():
    train = tiny_dataset(n=200, side=32, seed=4)
    cfg = nn.TrainConfig(side=32, epochs=10, batch_size=16, seed=3)
    params = nn.init_params(32, cfg.seed)
    params, history = nn.fit(params, train, cfg, np.random.default_rng(cfg.seed))
    assert history[-1].train_accuracy == 1.0


def test_fit_rejects_empty_dataset():
    empty = tiny_dataset(n=20, side=8, seed=0).subset([])
    with pytest.raises(EmptyDataset):
        nn.fit(nn.init_params(8, 0), empty, nn.TrainConfig(side=8), np.random.default_rng(0))


def test_fit_keeps_short_final_batch():
    # replicate one epoch by hand: 10 samples at batch 8 must take two steps
    train = tiny_dataset(n=10, side=8, seed=3)
    cfg = nn.TrainConfig(side=8, epochs=1, batch_size=8, seed=0, learning_rate=0.1,
                         dropout_rate=0.0)
    params, _ = nn.fit(nn.init_params(8, 0), train, cfg, np.random.default_rng(0))

    manual = nn.init_params(8, 0)
    labels = one_hot(train.labels)
    order = np.random.default_rng(0).permutation(10)
    for idx in (order[:8], order[8:]):
        trace = nn.forward(manual, train.images[idx], cfg, training=True)
        _, grads = nn.loss_and_grad(trace, labels[idx], manual)
        manual = nn.sgd_step(manual, grads, cfg.learning_rate)
    assert params_equal(params, manual)


def test_predict_simple_cases_and_tie_break():
    params = random_params(side=8, seed=0)
    zeros = nn.ModelParams(*(np.zeros_like(a) for a in params.named().values()))
    batch = np.random.default_rng(2).random((3, 1, 8, 8), dtype=np.float32)
    labels, probs = nn.predict(zeros, batch)
    assert (probs == 0.5).all()
    assert (labels == 0).all()  # exact tie resolves to class 0


def test_predict_is_deterministic():
    params = random_params(side=8, seed=8)
    batch = np.random.default_rng(3).random((5, 1, 8, 8), dtype=np.float32)
    l1, p1 = nn.predict(params, batch)
    l2, p2 = nn.predict(params, batch)
    assert (l1 == l2).all()
    assert (p1 == p2).all()


def test_predict_follows_probabilities():
    params = random_params(side=8, seed=0)
    boosted = nn.ModelParams(params.conv_kernels, params.conv_bias, params.dense_weights,
                             np.array([5.0, -5.0], dtype=np.float32))
    batch = np.zeros((1, 1, 8, 8), dtype=np.float32)
    labels, probs = nn.predict(boosted, batch)
    assert probs[0, 0] > 0.9
    assert labels[0] == 0


def test_parameter_counts_at_reference_side():
    params = nn.init_params(300, 0)
    assert params.conv_kernels.size + params.conv_bias.size == 320
    assert params.dense_weights.shape == (2, 2_880_000)
    assert params.count() == 320 + 5_760_002
