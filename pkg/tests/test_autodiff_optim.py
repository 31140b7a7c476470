import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthlab import autodiff as ad
from depthlab.optim import DEFAULT_MILESTONES, AdamHyper, MultiStepSchedule, OptimizerState, adam_step


def _fd(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def test_log1p_abs_derivative():
    x = ad.Variable(1.0)
    (g,) = ad.grad(ad.log1p_abs(x), [x])
    assert g == pytest.approx(0.5, abs=1e-15)
    y = ad.Variable(-3.0)
    (g,) = ad.grad(ad.log1p_abs(y), [y])
    assert g == pytest.approx(-0.25, abs=1e-15)


def test_stop_gradient_blocks():
    x = ad.Variable([1.0, 2.0])
    loss = ad.sum_(ad.stop_gradient(x) * x)
    (g,) = ad.grad(loss, [x])
    np.testing.assert_array_equal(g, [1.0, 2.0])
    (g,) = ad.grad(ad.sum_(ad.stop_gradient(x) * 3.0), [x])
    np.testing.assert_array_equal(g, [0.0, 0.0])


def test_shared_subexpression_accumulates():
    x = ad.Variable(3.0)
    y = x * x
    (g,) = ad.grad(y + y, [x])
    assert g == pytest.approx(12.0)


@pytest.mark.parametrize("op", ["exp", "log", "sqrt", "sigmoid", "box", "pool", "div", "minimum", "mean"])
def test_op_gradients_match_differences(op, rng):
    x0 = rng.uniform(0.5, 2.0, (4, 6))
    w = rng.normal(size=(4, 6))
    other = rng.uniform(0.5, 2.0, (4, 6))

    def build(x):
        if op == "exp":
            return ad.exp(x)
        if op == "log":
            return ad.log(x)
        if op == "sqrt":
            return ad.sqrt(x)
        if op == "sigmoid":
            return ad.sigmoid(x)
        if op == "box":
            return ad.box_filter3(x)
        if op == "pool":
            return ad.avg_pool2(x)
        if op == "div":
            return ad.div(other, x)
        if op == "minimum":
            return ad.minimum([x, other])[0]
        return ad.mean(x, axis=1, keepdims=True) * x

    def f(x):
        out = ad.value_of(build(x))
        return float(np.sum(out * w[: out.shape[0], : out.shape[1]]))

    v = ad.Variable(x0)
    out = build(v)
    (g,) = ad.grad(ad.sum_(out * w[: out.shape[0], : out.shape[1]]), [v])
    np.testing.assert_allclose(g, _fd(f, x0), rtol=1e-6, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_broadcast_add_gradient(xs):
    a = ad.Variable(np.array(xs)[:, None])
    b = ad.Variable(np.ones((1, 3)))
    ga, gb = ad.grad(ad.sum_(a + b), [a, b])
    np.testing.assert_array_equal(ga, np.full((len(xs), 1), 3.0))
    np.testing.assert_array_equal(gb, np.full((1, 3), float(len(xs))))


def test_routing_replays_recorded_decisions():
    routing = ad.Routing()
    x = np.array([-1.0, 2.0])
    with ad.recording(routing):
        first = ad.route(lambda: np.sign(x))
    routing.start_replay()
    with ad.recording(routing):
        replayed = ad.route(lambda: np.sign(-x))
    np.testing.assert_array_equal(first, replayed)


# -- optimiser ------------------------------------------------------------------------


def test_adam_first_step():
    state = OptimizerState.zeros_like([np.zeros(3)])
    (x,) = adam_step([np.zeros(3)], [np.ones(3)], state, AdamHyper(lr=1e-4))
    np.testing.assert_allclose(x, -1e-4 / (1 + 1e-8), rtol=0, atol=1e-20)
    assert state.step == 1 and state.lr_log == [1e-4]


def test_adam_zero_gradient_keeps_values():
    vals = [np.array([1.5, -2.0]), np.array([[3.0]])]
    state = OptimizerState.zeros_like(vals)
    out = vals
    for _ in range(5):
        out = adam_step(out, [np.zeros(2), np.zeros((1, 1))], state)
    for a, b in zip(out, vals):
        np.testing.assert_array_equal(a, b)


def test_adam_matches_reference_loop(rng):
    # independent scalar transcription of the bias-corrected update
    g_seq = rng.normal(size=(6, 4))
    x, m, v = np.zeros(4), np.zeros(4), np.zeros(4)
    state = OptimizerState.zeros_like([x])
    y = x.copy()
    for t, g in enumerate(g_seq, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 1e-3 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        (y,) = adam_step([y], [g], state, AdamHyper(lr=1e-3))
    np.testing.assert_allclose(y, x, rtol=1e-14, atol=1e-18)


def test_lr_scales_per_slot():
    state = OptimizerState.zeros_like([np.zeros(2), np.zeros(2)])
    a, b = adam_step([np.zeros(2), np.zeros(2)], [np.ones(2), np.ones(2)], state, AdamHyper(lr=1e-2),
                     lr_scales=[1.0, np.array([0.5, 0.1])])
    np.testing.assert_allclose(b / a, [0.5, 0.1])


def test_schedule_milestones():
    sched = MultiStepSchedule.proportional(1e-4, 30)
    assert sched.milestones == (20, 25, 29)
    assert sched.lr_at(19) == pytest.approx(1e-4)
    assert sched.lr_at(20) == pytest.approx(1e-5)
    assert sched.lr_at(25) == pytest.approx(1e-6)
    assert sched.lr_at(29) == pytest.approx(1e-7)
    assert DEFAULT_MILESTONES == (20 / 30, 25 / 30, 29 / 30)


def test_schedule_drives_adam_lr():
    sched = MultiStepSchedule(1.0, (2,))
    state = OptimizerState.zeros_like([np.zeros(1)], sched)
    x = [np.zeros(1)]
    for _ in range(4):
        x = adam_step(x, [np.ones(1)], state)
    assert state.lr_log == pytest.approx([1.0, 1.0, 0.1, 0.1])


def test_adam_hyper_validation():
    with pytest.raises(ValueError):
        AdamHyper(lr=0.0)
    with pytest.raises(ValueError):
        AdamHyper(beta1=1.0)


def test_abs_subgradient_at_zero_and_backward_without_forward():
    x = ad.Variable([0.0, -2.0, 3.0])
    (g,) = ad.grad(ad.sum_(ad.absolute(x)), [x])
    np.testing.assert_array_equal(g, [0.0, -1.0, 1.0])
    with pytest.raises(RuntimeError):
        ad.backward(1.5)
    with pytest.raises(ValueError):
        ad.backward(ad.Variable([1.0, 2.0]))


def test_adam_shape_mismatch():
    state = OptimizerState.zeros_like([np.zeros(2)])
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(3)], state)
