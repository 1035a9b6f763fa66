"""Explicit-backprop networks: gradients, optimizer, target blending."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftcorner.nets import (
    Adam,
    Mlp,
    clip_gradients,
    mlp_backward,
    mlp_forward,
    mlp_init,
    soft_update,
)


def _loss_and_grad(net, x, target):
    out, cache = mlp_forward(net, x)
    diff = np.atleast_2d(out) - target
    loss = float(np.sum(diff * diff))
    gw, gb, gin = mlp_backward(net, cache, 2.0 * diff)
    return loss, gw + gb, gin


def _loss_only(net, x, target):
    out, _ = mlp_forward(net, x)
    diff = np.atleast_2d(out) - target
    return float(np.sum(diff * diff))


@pytest.mark.parametrize("head", ["linear", "bounded"])
def test_backprop_matches_finite_differences(head):
    rng = np.random.default_rng(0)
    kw = {}
    if head == "bounded":
        kw = {"low": np.array([-1.0, 0.0]), "high": np.array([2.0, 5.0])}
    net = mlp_init([4, 8, 6, 2], rng, head, **kw)
    x = rng.normal(size=(5, 4))
    target = rng.normal(size=(5, 2))
    _, grads, _ = _loss_and_grad(net, x, target)

    eps = 1e-6
    params = net.parameters()
    worst = 0.0
    for p, g in zip(params, grads):
        flat_idx = [(0, 0), (p.shape[0] - 1, p.shape[-1] - 1)] if p.ndim == 2 else [0, p.shape[0] - 1]
        for idx in flat_idx:
            orig = p[idx]
            p[idx] = orig + eps
            lp = _loss_only(net, x, target)
            p[idx] = orig - eps
            lm = _loss_only(net, x, target)
            p[idx] = orig
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, abs(fd - g[idx]) / max(1.0, abs(fd)))
    assert worst < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    net = mlp_init([3, 10, 1], rng)
    x = rng.normal(size=(1, 3))
    target = np.zeros((1, 1))
    _, _, gin = _loss_and_grad(net, x, target)
    eps = 1e-6
    for j in range(3):
        xp, xm = x.copy(), x.copy()
        xp[0, j] += eps
        xm[0, j] -= eps
        fd = (_loss_only(net, xp, target) - _loss_only(net, xm, target)) / (2 * eps)
        assert abs(fd - gin[0, j]) < 1e-4 * max(1.0, abs(fd))


def test_bounded_head_respects_box():
    rng = np.random.default_rng(2)
    low, high = np.array([-0.5, 0.0]), np.array([0.5, 10.0])
    net = mlp_init([6, 32, 2], rng, "bounded", low, high)
    out, _ = mlp_forward(net, rng.normal(0, 10, size=(200, 6)))
    assert np.all(out >= low - 1e-12) and np.all(out <= high + 1e-12)


def test_bounded_head_requires_bounds():
    with pytest.raises(ValueError):
        mlp_init([3, 4, 2], np.random.default_rng(0), "bounded")


def test_forward_single_and_batch_agree():
    rng = np.random.default_rng(3)
    net = mlp_init([4, 8, 2], rng)
    x = rng.normal(size=4)
    single, _ = mlp_forward(net, x)
    batch, _ = mlp_forward(net, x[None, :])
    np.testing.assert_array_equal(single, batch[0])
    assert single.shape == (2,)


def test_gradient_clipping():
    grads = [np.full(4, 3.0), np.full(3, -4.0)]
    norm0 = np.sqrt(4 * 9.0 + 3 * 16.0)
    clipped, norm = clip_gradients(grads, 1.0)
    assert norm == pytest.approx(norm0)
    total = np.sqrt(sum(np.sum(g * g) for g in clipped))
    assert total == pytest.approx(1.0)
    same, _ = clip_gradients(grads, 1e9)
    assert same is grads or np.allclose(same[0], grads[0])


def test_adam_first_step_is_signed_lr():
    # with fresh moments the first update is -lr * sign(g) (eps aside)
    p = np.array([1.0, -2.0, 0.5])
    g = np.array([0.3, -0.7, 0.0])
    opt = Adam(lr=1e-2)
    opt.step([p], [g])
    assert p[0] == pytest.approx(1.0 - 1e-2, rel=1e-5)
    assert p[1] == pytest.approx(-2.0 + 1e-2, rel=1e-5)
    assert p[2] == pytest.approx(0.5)


def test_adam_converges_on_quadratic():
    rng = np.random.default_rng(4)
    p = rng.normal(size=5)
    opt = Adam(lr=0.05)
    for _ in range(500):
        opt.step([p], [2.0 * (p - 3.0)])
    np.testing.assert_allclose(p, 3.0, atol=1e-3)


@settings(max_examples=30, deadline=None)
@given(tau=st.floats(0.0, 1.0))
def test_soft_update_blends_linearly(tau):
    rng = np.random.default_rng(5)
    online = mlp_init([3, 4, 2], rng)
    target = mlp_init([3, 4, 2], rng)
    before = [p.copy() for p in target.parameters()]
    soft_update(target, online, tau)
    for b, t, o in zip(before, target.parameters(), online.parameters()):
        np.testing.assert_allclose(t, tau * o + (1 - tau) * b, atol=1e-12)


def test_soft_update_limits():
    rng = np.random.default_rng(6)
    online = mlp_init([3, 4, 2], rng)
    target = online.copy()
    frozen = [p.copy() for p in target.parameters()]
    other = mlp_init([3, 4, 2], rng)
    soft_update(target, other, 0.0)  # tau=0: no movement
    for t, f in zip(target.parameters(), frozen):
        np.testing.assert_array_equal(t, f)
    soft_update(target, other, 1.0)  # tau=1: hard copy
    for t, o in zip(target.parameters(), other.parameters()):
        np.testing.assert_array_equal(t, o)


def test_copy_is_deep():
    rng = np.random.default_rng(7)
    net = mlp_init([3, 4, 2], rng)
    dup = net.copy()
    dup.weights[0][0, 0] += 1.0
    assert net.weights[0][0, 0] != dup.weights[0][0, 0]
    assert net.sizes == [3, 4, 2]
