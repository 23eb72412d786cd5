import numpy as np
import pytest

from matdnn.granularity import LayerSet
from matdnn.mdnn import (Mdnn, MdnnConfig, extract_bnf, forward, frame_targets, gradients, init_mdnn, loss,
                         reference_config, train)
from matdnn.tokenizer import HyperParams, TokenLabeling

from conftest import make_seq


def tiny_net(seed=0, activation="logistic"):
    cfg = MdnnConfig([4, 3, 2], [2, 3], activation=activation, seed=seed)
    net = init_mdnn(cfg)
    rng = np.random.default_rng(seed + 50)
    for b in net.biases + net.head_biases:
        b[:] = rng.normal(size=b.shape) * 0.3
    return net


def oracle_loss(net, X, Y):
    """Per-head cross-entropy averaged over heads, written with explicit loops."""
    acts = (X - net.input_mean) / net.input_scale
    for W, b in zip(net.weights, net.biases):
        z = acts @ W + b
        acts = 1 / (1 + np.exp(-z)) if net.config.activation == "logistic" else np.tanh(z)
    per_head = []
    for h, (W, b) in enumerate(zip(net.head_weights, net.head_biases)):
        total = 0.0
        for t in range(len(X)):
            logits = acts[t] @ W + b
            total -= logits[Y[t, h]] - np.log(np.sum(np.exp(logits)))
        per_head.append(total / len(X))
    return sum(per_head) / len(per_head)


class TestConfig:
    def test_default_bottleneck_dims(self):
        assert reference_config([50] * 16).layer_dims == [429, 256, 256, 39]
        assert reference_config([50], wide=True).layer_dims[-1] == 256

    @pytest.mark.parametrize("kw", [dict(layer_dims=[4]), dict(layer_dims=[4, 3], heads=[]),
                                    dict(layer_dims=[4, 3], bottleneck_index=0),
                                    dict(layer_dims=[4, 3], activation="relu")])
    def test_invalid(self, kw):
        kw.setdefault("heads", [2])
        with pytest.raises(ValueError):
            MdnnConfig(**kw)


class TestForward:
    def test_zero_net(self):
        net = init_mdnn(MdnnConfig([4, 3, 5], [2, 7]), zero=True)
        posts, bn = forward(net, np.random.default_rng(0).normal(size=(6, 4)))
        assert np.all(bn == 0.5)
        assert np.allclose(posts[0], 0.5) and np.allclose(posts[1], 1 / 7)

    def test_zero_net_loss(self):
        heads = [2, 3, 50]
        net = init_mdnn(MdnnConfig([4, 3], heads), zero=True)
        Y = np.zeros((5, 3), dtype=int)
        want = np.mean(np.log(heads))
        assert abs(loss(net, np.ones((5, 4)), Y) - want) < 1e-10

    def test_posteriors_normalized(self):
        net = tiny_net()
        posts, _ = forward(net, np.random.default_rng(1).normal(size=(9, 4)))
        for p in posts:
            assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-6)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            forward(tiny_net(), np.zeros((3, 5)))

    @pytest.mark.parametrize("activation", ["logistic", "tanh"])
    def test_loss_matches_oracle(self, activation):
        rng = np.random.default_rng(2)
        net = tiny_net(activation=activation)
        X, Y = rng.normal(size=(8, 4)), np.stack([rng.integers(2, size=8), rng.integers(3, size=8)], 1)
        assert abs(loss(net, X, Y) - oracle_loss(net, X, Y)) < 1e-10

    def test_identical_head_losses_average(self):
        cfg = MdnnConfig([4, 3], [3, 3])
        net = init_mdnn(cfg)
        net.head_weights[1] = net.head_weights[0].copy()
        X = np.random.default_rng(3).normal(size=(5, 4))
        Y = np.tile(np.array([[0], [1], [2], [1], [0]]), (1, 2))
        single = init_mdnn(MdnnConfig([4, 3], [3]))
        single.weights, single.biases = net.weights, net.biases
        single.head_weights, single.head_biases = net.head_weights[:1], net.head_biases[:1]
        assert loss(net, X, Y) == pytest.approx(loss(single, X, Y[:, :1]), abs=1e-12)

    def test_head_order_invariance(self):
        net = tiny_net()
        rng = np.random.default_rng(4)
        X, Y = rng.normal(size=(6, 4)), np.stack([rng.integers(2, size=6), rng.integers(3, size=6)], 1)
        swapped = net.copy()
        swapped.config = MdnnConfig([4, 3, 2], [3, 2])
        swapped.head_weights = net.head_weights[::-1]
        swapped.head_biases = net.head_biases[::-1]
        assert loss(net, X, Y) == pytest.approx(loss(swapped, X, Y[:, ::-1]), abs=1e-12)


class TestGradients:
    @pytest.mark.parametrize("activation", ["logistic", "tanh"])
    def test_central_differences(self, activation):
        rng = np.random.default_rng(5)
        net = tiny_net(activation=activation)
        X = rng.normal(size=(5, 4))
        Y = np.stack([rng.integers(2, size=5), rng.integers(3, size=5)], 1)
        _, grads = gradients(net, X, Y)
        eps = 1e-3
        worst = 0.0
        for p, g in zip(net.params(), grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + eps
                up = loss(net, X, Y)
                p[idx] = old - eps
                down = loss(net, X, Y)
                p[idx] = old
                num = (up - down) / (2 * eps)
                worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-8))
        assert worst < 1e-4


class TestTrain:
    def make_task(self, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(300, 6))
        Y = np.stack([(X[:, 0] > 0).astype(int), np.digitize(X[:, 1], [-0.5, 0.5])], 1)
        return X, Y

    def test_loss_decreases(self):
        X, Y = self.make_task()
        net = train(X, Y, MdnnConfig([6, 16, 4], [2, 3], epochs=5, batch_size=32, seed=1))
        assert len(net.loss_trace) == 6
        assert net.loss_trace[5] < net.loss_trace[0]

    def test_zero_epochs_keeps_initialization(self):
        X, Y = self.make_task()
        cfg = MdnnConfig([6, 4], [2, 3], epochs=0, seed=3, normalize_inputs=False)
        net = train(X, Y, cfg)
        ref = init_mdnn(cfg, np.random.default_rng(3))
        assert all(np.array_equal(a, b) for a, b in zip(net.params(), ref.params()))

    def test_bit_reproducible(self):
        X, Y = self.make_task()
        cfg = MdnnConfig([6, 8, 4], [2, 3], epochs=2, seed=7)
        a, b = train(X, Y, cfg), train(X, Y, cfg)
        assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))

    @pytest.mark.parametrize("Y, msg", [(np.zeros((300, 1), int), "shape"), (np.full((300, 2), 5), "outside")])
    def test_bad_targets(self, Y, msg):
        X, _ = self.make_task()
        with pytest.raises(ValueError, match=msg):
            train(X, Y, MdnnConfig([6, 4], [2, 3]))

    @pytest.mark.filterwarnings("ignore:invalid value encountered:RuntimeWarning")
    def test_divergence_reported(self):
        X, Y = self.make_task()
        X[0, 0] = np.inf
        with pytest.raises((FloatingPointError, ValueError)):
            train(X, Y, MdnnConfig([6, 4], [2, 3], normalize_inputs=False))


class TestTargets:
    def test_frame_streams(self):
        labs = {HyperParams(3, 8): TokenLabeling({"u": [(2, 0, 10), (7, 10, 20)]}),
                HyperParams(5, 4): TokenLabeling({"u": [(1, 0, 20)]})}
        ls = LayerSet({p: (None, l) for p, l in labs.items()}, "")
        ft = frame_targets(ls)
        assert ft.heads == [8, 4]
        assert ft.targets["u"][10:20, 0].tolist() == [7] * 10
        assert np.all(ft.targets["u"][:, 1] == 1)


class TestBnf:
    def test_extract(self):
        net = init_mdnn(MdnnConfig([4, 6, 3, 5], [2], bottleneck_index=2))
        f = make_seq(np.random.default_rng(0).normal(size=(7, 4)))
        a, b = extract_bnf(net, f), extract_bnf(net, f)
        assert a.frames.shape == (7, 3) and a.feature_kind == "bottleneck"
        assert np.array_equal(a.frames, b.frames)
