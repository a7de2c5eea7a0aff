import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _fd import fd_gradient, rel_err
from nncores.autodiff import (
    JetBundle,
    MeanNetwork,
    backprop,
    forward_jet,
    forward_tape,
    init_network,
    load_checkpoint,
    n_channels,
    param_gradient,
    parameter_count,
    save_checkpoint,
)
from nncores.errors import InvalidWidths, ShapeMismatch


def random_net(widths, seed):
    net = init_network(widths, seed)
    # nonzero biases so every code path is exercised
    rng = np.random.default_rng(seed + 1000)
    theta = net.theta + 0.3 * rng.standard_normal(net.n_params)
    return net.with_theta(theta)


class TestInit:
    def test_deterministic(self):
        a = init_network([2, 10, 10, 1], 7)
        b = init_network([2, 10, 10, 1], 7)
        assert a.theta.tobytes() == b.theta.tobytes()

    def test_seed_matters(self):
        assert not np.array_equal(init_network([2, 10, 1], 1).theta, init_network([2, 10, 1], 2).theta)

    def test_parameter_count_4x20(self):
        terms = [60, 420, 420, 420, 21]
        assert parameter_count([2, 20, 20, 20, 20, 1]) == sum(terms) == 1341
        assert init_network([2, 20, 20, 20, 20, 1], 0).n_params == 1341

    @pytest.mark.parametrize("widths", [[3], [], [2, 0, 1]])
    def test_invalid_widths(self, widths):
        with pytest.raises(InvalidWidths):
            init_network(widths, 0)

    def test_glorot_bounds_and_zero_bias(self):
        net = init_network([3, 7, 5, 2], 11)
        for W, b in net.layers():
            bound = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
            assert np.all(np.abs(W) <= bound)
            assert np.all(b == 0)


class TestForwardJet:
    def test_linear_layer(self):
        W = np.array([[1.5, -2.0]])
        net = MeanNetwork((2, 1), np.concatenate([W.ravel(), [0.25]]))
        jet = forward_jet(net, np.array([0.3, 0.4]), 2)
        assert jet.value[0] == pytest.approx(1.5 * 0.3 - 2.0 * 0.4 + 0.25)
        np.testing.assert_array_equal(jet.grad[0], W[0])
        np.testing.assert_array_equal(jet.hess[0], np.zeros((2, 2)))

    def test_constant_network(self):
        net = init_network([2, 5, 5, 1], 3)
        theta = np.zeros(net.n_params)
        theta[-1] = 0.7
        jet = forward_jet(net.with_theta(theta), np.array([[0.1, 0.2], [-3.0, 4.0]]), 2)
        np.testing.assert_array_equal(jet.value[:, 0], [0.7, 0.7])
        assert not np.any(jet.grad) and not np.any(jet.hess)

    def test_order_controls_entries(self):
        net = init_network([2, 4, 1], 0)
        assert forward_jet(net, np.zeros(2), 0).grad is None
        j1 = forward_jet(net, np.zeros(2), 1)
        assert j1.grad is not None and j1.hess is None

    def test_dimension_checked(self):
        with pytest.raises(ShapeMismatch):
            forward_tape(init_network([2, 4, 1], 0), np.zeros((3, 3)), 1)

    def test_small_net_against_finite_differences(self):
        net = random_net([2, 8, 1], 5)
        x = np.array([0.3, -0.7])
        jet = forward_jet(net, x, 2)
        value = lambda p: forward_jet(net, p, 0).value
        grad = lambda p: forward_jet(net, p, 1).grad
        assert rel_err(jet.grad, fd_gradient(value, x, 1e-4)) <= 1e-6
        assert rel_err(jet.hess, fd_gradient(grad, x, 1e-4)) <= 1e-6

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), d=st.integers(1, 3), q=st.integers(1, 3),
           width=st.integers(1, 12), depth=st.integers(1, 3))
    def test_jets_match_finite_differences(self, seed, d, q, width, depth):
        net = random_net([d, *([width] * depth), q], seed)
        x = np.random.default_rng(seed).uniform(-1, 1, d)
        jet = forward_jet(net, x, 2)
        value = lambda p: forward_jet(net, p, 0).value
        grad = lambda p: forward_jet(net, p, 1).grad
        assert rel_err(jet.grad, fd_gradient(value, x, 1e-4)) <= 1e-6
        assert rel_err(jet.hess, fd_gradient(grad, x, 1e-4)) <= 1e-6

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), d=st.integers(1, 3))
    def test_hessian_symmetric(self, seed, d):
        net = random_net([d, 9, 9, 2], seed)
        x = np.random.default_rng(seed).uniform(-2, 2, (20, d))
        h = forward_jet(net, x, 2).hess
        assert np.max(np.abs(h - np.swapaxes(h, -1, -2))) <= 1e-12

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), d=st.integers(1, 3))
    def test_value_independent_of_order(self, seed, d):
        net = random_net([d, 6, 6, 1], seed)
        x = np.random.default_rng(seed).uniform(-1, 1, (15, d))
        v0 = forward_jet(net, x, 0).value
        v2 = forward_jet(net, x, 2).value
        assert v0.tobytes() == v2.tobytes()

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), shift=st.floats(-2, 2))
    def test_translation_with_bias_compensation(self, seed, shift):
        net = random_net([2, 7, 7, 1], seed)
        x = np.random.default_rng(seed).uniform(-1, 1, (10, 2))
        c = np.array([shift, -0.5 * shift])
        theta = net.theta.copy()
        W1 = theta[:14].reshape(7, 2)
        theta[14:21] -= W1 @ c
        a = forward_jet(net, x, 2)
        b = forward_jet(net.with_theta(theta), x + c, 2)
        for u, v in ((a.value, b.value), (a.grad, b.grad), (a.hess, b.hess)):
            np.testing.assert_allclose(u, v, rtol=0, atol=1e-12)


class TestParamGradient:
    def test_zero_seed(self):
        net = random_net([2, 6, 1], 0)
        x = np.random.default_rng(0).uniform(size=(4, 2))
        jets = forward_jet(net, x, 2)
        assert not np.any(param_gradient(net, x, jets.zeros_like()))

    def test_linear_layer_chain_rule(self):
        net = MeanNetwork((2, 1), np.array([0.4, -0.1, 0.0]))
        x = np.array([0.3, -0.2])
        g = param_gradient(net, x, JetBundle(np.array([1.0])))
        np.testing.assert_allclose(g, [0.3, -0.2, 1.0])

    def test_shape_mismatch(self):
        net = random_net([2, 6, 1], 0)
        with pytest.raises(ShapeMismatch):
            param_gradient(net, np.zeros((3, 2)), JetBundle(np.ones((2, 1))))

    @staticmethod
    def _check(net, x, seeds, h=1e-5):
        ch = seeds.to_channels()
        order = seeds.order

        def loss(theta):
            out, _ = forward_tape(net, x, order, theta)
            return np.sum(out * ch)

        g = param_gradient(net, x, seeds)
        return rel_err(g, fd_gradient(loss, net.theta, h))

    def test_hessian_seeds_small_net(self):
        net = random_net([2, 6, 6, 1], 2)
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, (5, 2))
        seeds = JetBundle(rng.standard_normal((5, 1)), rng.standard_normal((5, 1, 2)),
                          rng.standard_normal((5, 1, 2, 2)))
        assert self._check(net, x, seeds) <= 1e-5

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), d=st.integers(1, 3), q=st.integers(1, 3),
           order=st.integers(0, 2))
    def test_matches_finite_differences(self, seed, d, q, order):
        net = random_net([d, 5, 4, q], seed)
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, (3, d))
        parts = [rng.standard_normal((3, q)), rng.standard_normal((3, q, d)), rng.standard_normal((3, q, d, d))]
        seeds = JetBundle(parts[0], parts[1] if order >= 1 else None, parts[2] if order >= 2 else None)
        assert self._check(net, x, seeds) <= 1e-5

    def test_backprop_is_linear_in_seed(self):
        net = random_net([2, 5, 1], 4)
        x = np.random.default_rng(4).uniform(size=(6, 2))
        _, tape = forward_tape(net, x, 2)
        s1 = np.random.default_rng(5).standard_normal((6, n_channels(2, 2), 1))
        s2 = np.random.default_rng(6).standard_normal((6, n_channels(2, 2), 1))
        g = backprop(net, tape, 2.0 * s1 - s2)
        np.testing.assert_allclose(g, 2.0 * backprop(net, tape, s1) - backprop(net, tape, s2), atol=1e-12)


class TestChannels:
    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 1000), d=st.integers(1, 3), q=st.integers(1, 3), order=st.integers(0, 2))
    def test_channel_round_trip(self, seed, d, q, order):
        rng = np.random.default_rng(seed)
        ch = rng.standard_normal((4, n_channels(d, order), q))
        back = JetBundle.from_channels(ch, d, order).to_channels()
        np.testing.assert_array_equal(back, ch)


def test_checkpoint_round_trip(tmp_path):
    net = random_net([2, 20, 20, 1], 9)
    path = tmp_path / "net.txt"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.widths == net.widths
    assert back.theta.tobytes() == net.theta.tobytes()
    assert path.read_text().startswith("widths 2 20 20 1\n")


def test_checkpoint_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("layers 2 1\n0.0\n")
    with pytest.raises(ValueError):
        load_checkpoint(path)
