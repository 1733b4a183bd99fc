import numpy as np
import pytest

from calibkit.tinynn import (
    MlpParams,
    adam_init,
    adam_step,
    backward,
    backward_batch,
    forward,
    forward_batch,
    grad_check,
    init_mlp,
    zeros_like_params,
)


def hand_net():
    """2 -> 2 -> 1 network with fixed weights, small enough to trace by hand."""
    return MlpParams(
        weights=[np.array([[1.0, -1.0], [0.5, 2.0]]), np.array([[1.0], [-0.5]])],
        biases=[np.array([0.0, 1.0]), np.array([0.25])],
    )


def test_forward_hand_value():
    # x = [1, 2]: pre-act [2.0, 4.0], relu keeps both, out = 2.0 - 2.0 + 0.25
    out, _ = forward(hand_net(), np.array([1.0, 2.0]))
    assert out == pytest.approx(0.25)


def test_forward_relu_clips_negative_preactivation():
    # x = [-1, 0]: pre-act [-1.0, 2.0] -> [0, 2.0], out = -1.0 + 0.25
    out, _ = forward(hand_net(), np.array([-1.0, 0.0]))
    assert out == pytest.approx(-0.75)


def test_forward_batch_matches_single():
    rng = np.random.default_rng(0)
    params = init_mlp([4, 3, 3, 1], seed=1)
    xs = rng.normal(size=(20, 4))
    outs, _ = forward_batch(params, xs)
    for i in range(20):
        single, _ = forward(params, xs[i])
        assert outs[i] == pytest.approx(single, abs=1e-12)


def test_forward_rejects_wrong_width():
    with pytest.raises(ValueError):
        forward_batch(init_mlp([4, 2, 1], seed=0), np.zeros((3, 5)))


def test_init_mlp_shapes_and_determinism():
    a = init_mlp([10, 5, 5, 1], seed=7)
    b = init_mlp([10, 5, 5, 1], seed=7)
    assert a.widths == [10, 5, 5, 1]
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert all(np.all(bias == 0) for bias in a.biases)


def test_copy_is_independent():
    a = init_mlp([3, 2, 1], seed=2)
    c = a.copy()
    c.weights[0][0, 0] += 1.0
    assert a.weights[0][0, 0] != c.weights[0][0, 0]


def test_check_finite():
    a = init_mlp([3, 2, 1], seed=3)
    assert a.check_finite()
    a.weights[1][0, 0] = np.nan
    assert not a.check_finite()


def sum_squared_loss(params, xs):
    """loss = mean(out^2); gradient via the batched backward pass."""
    outs, cache = forward_batch(params, xs)
    grads, _ = backward_batch(params, cache, 2.0 * outs / xs.shape[0])
    return float((outs**2).mean()), grads


def test_gradcheck_random_networks():
    rng = np.random.default_rng(4)
    for widths in ([3, 1], [3, 4, 1], [5, 3, 2, 1], [2, 1, 1]):
        params = init_mlp(widths, rng=rng)
        for b in params.biases:
            b += rng.normal(scale=0.3, size=b.shape)
        xs = rng.normal(size=(16, widths[0]))
        report = grad_check(params, lambda p: sum_squared_loss(p, xs))
        assert report.max_rel_error < 1e-5
        assert report.num_checked == sum(w.size for w in params.weights) + sum(
            b.size for b in params.biases
        )


def test_gradcheck_flags_corrupted_gradient():
    """Negative control: a deliberately wrong gradient must not pass."""
    rng = np.random.default_rng(5)
    params = init_mlp([3, 3, 1], rng=rng)
    xs = rng.normal(size=(8, 3))

    def corrupted(p):
        loss, grads = sum_squared_loss(p, xs)
        grads.weights[0] = grads.weights[0] * 1.5 + 0.1
        return loss, grads

    assert grad_check(params, corrupted).max_rel_error > 1e-2


def test_backward_input_gradient_finite_difference():
    rng = np.random.default_rng(6)
    params = init_mlp([4, 3, 1], rng=rng)
    for b in params.biases:
        b += rng.normal(scale=0.2, size=b.shape)
    x = rng.normal(size=4)
    out, cache = forward(params, x)
    _, dx = backward(params, cache, 1.0)
    h = 1e-6
    for j in range(4):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        fd = (forward(params, xp)[0] - forward(params, xm)[0]) / (2 * h)
        assert dx[j] == pytest.approx(fd, abs=1e-6)


def test_adam_first_step_hand_value():
    # after one step the update reduces to lr * g / (|g| + eps)
    params = MlpParams(weights=[np.array([[1.0]])], biases=[np.array([0.5])])
    grads = MlpParams(weights=[np.array([[2.0]])], biases=[np.array([-3.0])])
    state = adam_init(params)
    lr = 0.1
    adam_step(params, grads, state, lr)
    eps = state.eps
    assert params.weights[0][0, 0] == pytest.approx(1.0 - lr * 2.0 / (2.0 + eps))
    assert params.biases[0][0] == pytest.approx(0.5 + lr * 3.0 / (3.0 + eps))
    assert state.step == 1


def test_adam_two_steps_match_reference():
    """Second step against a direct transcription of the update equations."""
    params = MlpParams(weights=[np.array([[0.0]])], biases=[np.array([0.0])])
    state = adam_init(params)
    g1, g2 = 1.0, -2.0
    lr = 0.01
    adam_step(params, MlpParams([np.array([[g1]])], [np.array([0.0])]), state, lr)
    adam_step(params, MlpParams([np.array([[g2]])], [np.array([0.0])]), state, lr)

    m = v = 0.0
    p = 0.0
    for t, g in ((1, g1), (2, g2)):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p -= lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert params.weights[0][0, 0] == pytest.approx(p, abs=1e-15)


def test_adam_descends_on_quadratic():
    rng = np.random.default_rng(8)
    params = init_mlp([2, 4, 1], rng=rng)
    xs = rng.normal(size=(32, 2))
    state = adam_init(params)
    first, _ = sum_squared_loss(params, xs)
    for _ in range(200):
        _, grads = sum_squared_loss(params, xs)
        adam_step(params, grads, state, 0.01)
    last, _ = sum_squared_loss(params, xs)
    assert last < first * 0.1


def test_zeros_like_params():
    params = init_mlp([3, 2, 1], seed=9)
    z = zeros_like_params(params)
    assert all(np.all(w == 0) for w in z.weights)
    assert [w.shape for w in z.weights] == [w.shape for w in params.weights]
