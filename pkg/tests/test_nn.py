import numpy as np
import pytest

from cadp import autodiff as ad
from cadp.autodiff import Tensor, backward, finite_diff_check
from cadp.nn import Adam, Linear, Mlp, Sgd, all_finite, cross_entropy, zero_grads


def test_linear_shapes_and_zero_bias():
    rng = np.random.default_rng(0)
    layer = Linear(rng, 4, 7)
    assert layer.weight.shape == (4, 7)
    assert layer.bias.shape == (7,)
    np.testing.assert_array_equal(layer.bias.values, np.zeros(7))
    out = layer(Tensor(np.ones((3, 4))))
    assert out.shape == (3, 7)


def test_linear_zero_init_maps_to_zero():
    layer = Linear(np.random.default_rng(1), 5, 2, zero_init=True)
    out = layer(Tensor(np.random.default_rng(2).normal(size=(4, 5))))
    np.testing.assert_array_equal(out.values, np.zeros((4, 2)))


def test_mlp_forward_shape_and_param_count():
    net = Mlp(np.random.default_rng(3), 6, [16, 16], 4)
    out = net(Tensor(np.zeros((2, 6))))
    assert out.shape == (2, 4)
    # two hidden layers plus output, each with weight and bias
    assert len(net.parameters()) == 6


def test_mlp_zero_init_last_outputs_zero():
    net = Mlp(np.random.default_rng(4), 3, [8], 5, zero_init_last=True)
    out = net(Tensor(np.random.default_rng(5).normal(size=(7, 3))))
    np.testing.assert_array_equal(out.values, np.zeros((7, 5)))


def test_cross_entropy_matches_manual_log_softmax():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(5, 3))
    labels = np.array([0, 2, 1, 2, 0])
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    expected = -np.mean(logp[np.arange(5), labels])
    got = cross_entropy(Tensor(logits), labels, 3).item()
    assert got == pytest.approx(expected, rel=0, abs=1e-12)


def test_cross_entropy_uniform_logits():
    loss = cross_entropy(Tensor(np.zeros((4, 10))), np.zeros(4, dtype=int), 10)
    assert loss.item() == pytest.approx(np.log(10.0), rel=0, abs=1e-12)


def test_cross_entropy_gradcheck():
    rng = np.random.default_rng(7)
    net = Mlp(rng, 4, [6], 3)
    x = Tensor(rng.normal(size=(5, 4)))
    labels = np.array([0, 1, 2, 1, 0])

    def f():
        return cross_entropy(net(x), labels, 3)

    assert finite_diff_check(f, net.parameters()) < 1e-4


def test_sgd_step_is_plain_descent():
    w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Sgd([w], lr=0.1)
    backward(ad.tsum(ad.mul(ad.mul(w, w), 0.5)))
    opt.step()
    np.testing.assert_allclose(w.values, [0.9, -1.8], rtol=0, atol=1e-15)


def test_adam_converges_on_quadratic():
    w = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    for _ in range(400):
        zero_grads([w])
        backward(ad.tsum(ad.mul(ad.mul(w, w), 0.5)))
        opt.step()
    assert np.max(np.abs(w.values)) < 1e-3


def test_adam_first_step_size_is_lr():
    # bias correction makes the very first update lr-sized regardless of
    # gradient magnitude
    for scale in (1e-3, 1.0, 1e3):
        w = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam([w], lr=0.01)
        backward(ad.tsum(ad.mul(w, scale)))
        opt.step()
        assert abs(w.values[0] - 1.0) == pytest.approx(0.01, rel=1e-4)


def test_zero_grads_clears():
    w = Tensor(np.ones(3), requires_grad=True)
    backward(ad.tsum(w))
    assert w.grad is not None
    zero_grads([w])
    assert w.grad is None


def test_all_finite():
    good = Tensor(np.ones(3), requires_grad=True)
    assert all_finite([good])
    bad = Tensor(np.array([1.0, np.nan]), requires_grad=True)
    assert not all_finite([bad])


def test_mlp_init_is_seeded():
    a = Mlp(np.random.default_rng(42), 4, [8], 2)
    b = Mlp(np.random.default_rng(42), 4, [8], 2)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.values, pb.values)
