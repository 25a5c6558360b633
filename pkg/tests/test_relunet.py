import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relucert.relunet import (ActivationBounds, NetworkError, ReluNetwork,
                              TrainOptions, forward, forward_batch, jacobian,
                              load_dataset, load_weights, propagate_bounds,
                              save_dataset, save_weights, train)


def random_net(rng, n_in=3, hidden=(8, 6), n_out=2, scale=1.0):
    sizes = [n_in] + list(hidden) + [n_out]
    weights = [rng.normal(size=(b, a)) * scale
               for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [rng.normal(size=b) * 0.3 for b in sizes[1:]]
    return ReluNetwork(weights, biases)


def loop_forward(net, x):
    """Independent straight-loop evaluator (oracle)."""
    a = list(map(float, x))
    for layer in range(len(net.weights) - 1):
        W, b = net.weights[layer], net.biases[layer]
        nxt = []
        for i in range(W.shape[0]):
            s = b[i]
            for j in range(W.shape[1]):
                s += W[i, j] * a[j]
            nxt.append(s if s > 0 else 0.0)
        a = nxt
    W, b = net.weights[-1], net.biases[-1]
    return np.array([b[i] + sum(W[i, j] * a[j] for j in range(len(a)))
                     for i in range(W.shape[0])])


class TestForward:
    def test_zero_net_tie_rule(self):
        net = ReluNetwork([np.zeros((4, 2)), np.zeros((1, 4))],
                          [np.zeros(4), np.zeros(1)])
        out, pattern = forward(net, [0.3, -0.7])
        assert out == pytest.approx(0.0)
        assert np.all(pattern[0])          # pre-activations are 0 -> delta 1

    def test_identity_net_on_positive_input(self):
        net = ReluNetwork([np.eye(3), np.eye(3)], [np.zeros(3), np.zeros(3)])
        x = np.array([0.5, 1.0, 2.0])
        out, _ = forward(net, x)
        assert np.allclose(out, x)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            net = random_net(rng)
            x = rng.normal(size=3)
            out, _ = forward(net, x)
            assert np.allclose(out, loop_forward(net, x), atol=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        net = random_net(rng)
        X = rng.normal(size=(7, 3))
        batch = forward_batch(net, X)
        single = np.array([forward(net, x)[0] for x in X])
        assert np.allclose(batch, single)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 0.99))
    def test_pwa_interpolation_within_pattern(self, seed, alpha):
        rng = np.random.default_rng(seed)
        net = random_net(rng)
        x = rng.normal(size=3)
        y = x + rng.normal(size=3) * 1e-4       # nearby: same pattern likely
        fx, px = forward(net, x)
        fy, py = forward(net, y)
        if all(np.array_equal(a, b) for a, b in zip(px, py)):
            fz, _ = forward(net, alpha * x + (1 - alpha) * y)
            assert np.allclose(fz, alpha * fx + (1 - alpha) * fy, atol=1e-9)


class TestJacobian:
    def test_linear_regime_product(self):
        rng = np.random.default_rng(3)
        base = random_net(rng)
        # positive weights and biases keep every ReLU active at positive inputs
        net = ReluNetwork([np.abs(W) + 0.1 for W in base.weights],
                          [np.abs(b) + 0.1 for b in base.biases])
        J, on_kernel = jacobian(net, np.array([0.2, 0.4, 0.1]))
        expect = net.weights[-1]
        for W in reversed(net.weights[:-1]):
            expect = expect @ W
        assert np.allclose(J, expect)
        assert not on_kernel

    def test_finite_differences(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            net = random_net(rng)
            x = rng.normal(size=3)
            J, _ = jacobian(net, x)
            h = 1e-5
            Jfd = np.zeros_like(J)
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                Jfd[:, j] = (forward(net, x + e)[0] -
                             forward(net, x - e)[0]) / (2 * h)
            assert np.abs(J - Jfd).max() < 1e-4

    def test_constant_within_region(self):
        rng = np.random.default_rng(5)
        net = random_net(rng)
        x = rng.normal(size=3)
        _, p0 = forward(net, x)
        for s in (1.0, 1.0001, 1.001):
            _, ps = forward(net, s * x)
            if not all(np.array_equal(a, b) for a, b in zip(p0, ps)):
                pytest.skip("scaling crossed a kernel for this draw")
        J1, _ = jacobian(net, x)
        J2, _ = jacobian(net, 1.001 * x)
        assert np.allclose(J1, J2)


class TestBounds:
    def test_zero_net_bounds_are_biases(self):
        b0 = np.array([0.5, -1.5])
        net = ReluNetwork([np.zeros((2, 1)), np.zeros((1, 2))],
                          [b0, np.zeros(1)])
        bounds = propagate_bounds(net, [-1.0], [1.0])
        assert np.allclose(bounds.lower[0], b0)
        assert np.allclose(bounds.upper[0], b0)

    def test_single_neuron_passthrough(self):
        net = ReluNetwork([np.array([[1.0]]), np.array([[1.0]])],
                          [np.zeros(1), np.zeros(1)])
        bounds = propagate_bounds(net, [-2.0], [3.0])
        assert bounds.lower[0][0] == pytest.approx(-2.0)
        assert bounds.upper[0][0] == pytest.approx(3.0)

    def test_sampled_preactivations_inside(self):
        rng = np.random.default_rng(6)
        net = random_net(rng)
        lo, hi = -np.ones(3) * 2, np.ones(3) * 2
        bounds = propagate_bounds(net, lo, hi)
        for _ in range(10_000 // 50):
            X = rng.uniform(lo, hi, size=(50, 3))
            for x in X:
                a = x
                for j, (W, b) in enumerate(zip(net.weights[:-1],
                                               net.biases[:-1])):
                    pre = W @ a + b
                    assert np.all(pre >= bounds.lower[j] - 1e-9)
                    assert np.all(pre <= bounds.upper[j] + 1e-9)
                    a = np.maximum(pre, 0.0)

    def test_unbounded_box_rejected(self):
        rng = np.random.default_rng(7)
        net = random_net(rng)
        with pytest.raises(NetworkError):
            propagate_bounds(net, [-np.inf, 0, 0], [1, 1, 1])


class TestTrain:
    def test_linear_law_exactly_representable(self):
        rng = np.random.default_rng(8)
        K = np.array([[0.6, -0.4]])
        X = rng.uniform(-1, 1, size=(300, 2))
        Y = X @ K.T
        net, report = train((X, Y), hidden=[8, 8],
                            opts=TrainOptions(seed=1, max_iters=300))
        assert report.mse < 1e-6
        pred = forward_batch(net, X)
        assert np.mean((pred - Y) ** 2) < 1e-6

    def test_single_sample(self):
        net, report = train((np.zeros((1, 2)), np.zeros((1, 1))), hidden=[3])
        assert report.mse < 1e-12
        out, _ = forward(net, [0.0, 0.0])
        assert abs(out[0]) < 1e-5

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(9)
        X = rng.uniform(-1, 1, size=(50, 2))
        Y = np.tanh(X[:, :1])
        opts = TrainOptions(seed=3, max_iters=40)
        n1, _ = train((X, Y), hidden=[5], opts=opts)
        n2, _ = train((X, Y), hidden=[5], opts=opts)
        for W1, W2 in zip(n1.weights, n2.weights):
            assert W1.tobytes() == W2.tobytes()


class TestIo:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(10)
        net = random_net(rng)
        path = tmp_path / "w.bin"
        save_weights(net, path)
        loaded = load_weights(path)
        for W1, W2 in zip(net.weights, loaded.weights):
            assert W1.tobytes() == W2.tobytes()
        for b1, b2 in zip(net.biases, loaded.biases):
            assert b1.tobytes() == b2.tobytes()

    def test_truncated_file_rejected(self, tmp_path):
        rng = np.random.default_rng(11)
        net = random_net(rng)
        path = tmp_path / "w.bin"
        save_weights(net, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(NetworkError):
            load_weights(path)

    def test_corrupted_payload_rejected(self, tmp_path):
        rng = np.random.default_rng(12)
        net = random_net(rng)
        path = tmp_path / "w.bin"
        save_weights(net, path)
        blob = bytearray(path.read_bytes())
        blob[60] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(NetworkError):
            load_weights(path)

    def test_fixed_fixture_loads_identically(self, tmp_path):
        # byte-level fixture: format is pinned little-endian, so the file
        # loads to the same weights on any host
        import base64

        fixture = (
            b"UkxORVR2MQADAAAAAQAAAAIAAAABAAAAAAAAAAAA8D8AAAAAAAAAwAAAAAAAAOA/"
            b"AAAAAAAA4L8AAAAAAAAIQAAAAAAAABDAAAAAAAAA+D9K6rFaO04L75FKRUGjHImv"
            b"SCDbzWsZgeLn6VUJLuMVHA==")
        path = tmp_path / "fixture.bin"
        path.write_bytes(base64.b64decode(fixture))
        net = load_weights(path)
        assert np.allclose(net.weights[0], [[1.0], [-2.0]])
        assert np.allclose(net.biases[0], [0.5, -0.5])
        assert np.allclose(net.weights[1], [[3.0, -4.0]])
        assert np.allclose(net.biases[1], [1.5])

    def test_dataset_round_trip(self, tmp_path):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(20, 3))
        Y = rng.normal(size=(20, 2))
        path = tmp_path / "d.txt"
        save_dataset(X, Y, path)
        X2, Y2 = load_dataset(path)
        assert np.array_equal(X, X2) and np.array_equal(Y, Y2)
