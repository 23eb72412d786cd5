"""Multi-target feedforward network with a bottleneck layer, trained by minibatch SGD.

One softmax head per tokenizer layer sits on top of a shared trunk; the loss
is the mean over heads of each head's per-frame cross-entropy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .features import FeatureSequence

log = logging.getLogger(__name__)

ACTIVATIONS = ("logistic", "tanh")


@dataclass
class MdnnConfig:
    layer_dims: list  # input, hidden..., bottleneck[, post-bottleneck hidden...]
    heads: list  # class count per target stream
    bottleneck_index: int | None = None  # index into layer_dims; default: last
    activation: str = "logistic"
    learn_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0
    normalize_inputs: bool = True

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        self.heads = [int(h) for h in self.heads]
        if self.bottleneck_index is None:
            self.bottleneck_index = len(self.layer_dims) - 1
        if len(self.layer_dims) < 2 or not 1 <= self.bottleneck_index < len(self.layer_dims):
            raise ValueError("bottleneck_index must point at a trunk layer after the input")
        if not self.heads or min(self.heads) < 1:
            raise ValueError("at least one head with >= 1 class is required")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def reference_config(heads, input_dim=429, wide=False, **kw) -> MdnnConfig:
    """input-256-256-39 trunk (256-wide bottleneck when ``wide``)."""
    return MdnnConfig([input_dim, 256, 256, 256 if wide else 39], list(heads), **kw)


@dataclass
class FrameTargets:
    targets: dict  # uid -> (T, H) int64
    heads: list

    def stacked(self, uids):
        return np.vstack([self.targets[u] for u in uids])


def frame_targets(layer_set) -> FrameTargets:
    """Frame-level token ids, one stream per layer in (m, n) order."""
    psis = sorted(layer_set.layers)
    labelings = [layer_set.layers[psi][1] for psi in psis]
    out = {}
    for uid in labelings[0]:
        out[uid] = np.stack([lab.frame_tokens(uid) for lab in labelings], axis=1)
    return FrameTargets(out, [psi.n for psi in psis])


def _act(z, kind):
    if kind == "logistic":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.tanh(z)


def _act_grad(a, kind):
    if kind == "logistic":
        return a * (1.0 - a)
    return 1.0 - a * a


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class Mdnn:
    config: MdnnConfig
    weights: list  # (d_in, d_out) per trunk transition
    biases: list
    head_weights: list
    head_biases: list
    input_mean: np.ndarray
    input_scale: np.ndarray
    loss_trace: list = field(default_factory=list)

    def params(self) -> list:
        return [*self.weights, *self.biases, *self.head_weights, *self.head_biases]

    def copy(self) -> "Mdnn":
        return replace(
            self,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            head_weights=[w.copy() for w in self.head_weights],
            head_biases=[b.copy() for b in self.head_biases],
            loss_trace=list(self.loss_trace),
        )


def init_mdnn(cfg: MdnnConfig, rng=None, zero: bool = False) -> Mdnn:
    """Glorot-uniform weights, zero biases (all zeros when ``zero``)."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng

    def mat(a, b):
        if zero:
            return np.zeros((a, b))
        r = np.sqrt(6.0 / (a + b))
        return rng.uniform(-r, r, size=(a, b))

    dims = cfg.layer_dims
    weights = [mat(a, b) for a, b in zip(dims, dims[1:])]
    head_w = [mat(dims[-1], h) for h in cfg.heads]
    return Mdnn(
        cfg,
        weights,
        [np.zeros(b) for b in dims[1:]],
        head_w,
        [np.zeros(h) for h in cfg.heads],
        np.zeros(dims[0]),
        np.ones(dims[0]),
    )


def _trunk(net: Mdnn, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.config.layer_dims[0]:
        raise ValueError(f"input dim {X.shape[-1]} does not match network input {net.config.layer_dims[0]}")
    acts = [(X - net.input_mean) / net.input_scale]
    for W, b in zip(net.weights, net.biases):
        acts.append(_act(acts[-1] @ W + b, net.config.activation))
    return acts


def forward(net: Mdnn, frames):
    """(per-head posteriors, bottleneck activations)."""
    acts = _trunk(net, frames)
    posts = [_softmax(acts[-1] @ W + b) for W, b in zip(net.head_weights, net.head_biases)]
    return posts, acts[net.config.bottleneck_index]


def _head_ce(post, y):
    return float(-np.mean(np.log(np.maximum(post[np.arange(len(y)), y], 1e-300))))


def loss(net: Mdnn, frames, targets) -> float:
    """Mean over heads of the per-frame cross-entropy of each head."""
    targets = np.asarray(targets)
    posts, _ = forward(net, frames)
    return float(np.mean([_head_ce(p, targets[:, h]) for h, p in enumerate(posts)]))


def gradients(net: Mdnn, frames, targets):
    """(loss, gradients in ``net.params()`` order)."""
    targets = np.asarray(targets)
    acts = _trunk(net, frames)
    top = acts[-1]
    B, H = top.shape[0], len(net.head_weights)
    total = 0.0
    d_top = np.zeros_like(top)
    gw_head, gb_head = [], []
    rows = np.arange(B)
    for h, (W, b) in enumerate(zip(net.head_weights, net.head_biases)):
        post = _softmax(top @ W + b)
        y = targets[:, h]
        total += _head_ce(post, y)
        d = post
        d[rows, y] -= 1.0
        d /= B * H
        gw_head.append(top.T @ d)
        gb_head.append(d.sum(axis=0))
        d_top += d @ W.T
    gw, gb = [None] * len(net.weights), [None] * len(net.weights)
    d_act = d_top
    for i in range(len(net.weights) - 1, -1, -1):
        dz = d_act * _act_grad(acts[i + 1], net.config.activation)
        gw[i] = acts[i].T @ dz
        gb[i] = dz.sum(axis=0)
        if i:
            d_act = dz @ net.weights[i].T
    return total / H, [*gw, *gb, *gw_head, *gb_head]


def train(frames, targets, cfg: MdnnConfig, net: Mdnn | None = None) -> Mdnn:
    """Minibatch SGD on the uniformly weighted multi-head cross-entropy.

    ``loss_trace[0]`` is the loss before training and ``loss_trace[e]`` the
    full-set loss after epoch e.
    """
    X = np.asarray(frames, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("empty training set")
    if Y.shape != (len(X), len(cfg.heads)):
        raise ValueError(f"targets shape {Y.shape} != ({len(X)}, {len(cfg.heads)})")
    for h, n in enumerate(cfg.heads):
        if Y[:, h].min() < 0 or Y[:, h].max() >= n:
            raise ValueError(f"head {h}: targets outside [0, {n})")
    rng = np.random.default_rng(cfg.seed)
    if net is None:
        net = init_mdnn(cfg, rng)
        if cfg.normalize_inputs:
            net.input_mean = X.mean(axis=0)
            net.input_scale = np.maximum(X.std(axis=0), 1e-8)
    net.loss_trace = [loss(net, X, Y)]
    params = net.params()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(X))
        for bi, start in enumerate(range(0, len(X), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            value, grads = gradients(net, X[idx], Y[idx])
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {bi}")
            for p, g in zip(params, grads):
                p -= cfg.learn_rate * g
        net.loss_trace.append(loss(net, X, Y))
        log.debug("epoch %d loss %.5f", epoch, net.loss_trace[-1])
    return net


def extract_bnf(net: Mdnn, features: FeatureSequence) -> FeatureSequence:
    """Bottleneck activations as a new feature sequence."""
    _, bn = forward(net, features.frames)
    return replace(features, frames=bn, feature_kind="bottleneck")
