"""MATM (token set model) and MATN (network) binary formats."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .formats import FORMAT_VERSION, MATM_MAGIC, MATN_MAGIC, FormatError, _Reader, atomic_write_bytes
from .mdnn import ACTIVATIONS, Mdnn, MdnnConfig
from .tokenizer import HyperParams, TokenSetModel


def dumps_matm(model: TokenSetModel) -> bytes:
    """Header m, n, D; then per token: means, variances, self-loops; then LM and lm_weight (float64)."""
    n, m, D = model.means.shape
    out = [MATM_MAGIC, struct.pack("<4I", FORMAT_VERSION, m, n, D)]
    for k in range(n):
        for arr in (model.means[k], model.variances[k], model.self_loop[k]):
            out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    out.append(np.ascontiguousarray(model.token_lm, dtype="<f8").tobytes())
    out.append(struct.pack("<d", model.lm_weight))
    return b"".join(out)


def loads_matm(data: bytes, name: str = "<matm>") -> TokenSetModel:
    r = _Reader(data, name)
    r.magic(MATM_MAGIC)
    m, n, D = r.u32(3)
    means, variances, self_loop = np.empty((n, m, D)), np.empty((n, m, D)), np.empty((n, m))
    for k in range(n):
        means[k] = r.array(m * D, "<f8").reshape(m, D)
        variances[k] = r.array(m * D, "<f8").reshape(m, D)
        self_loop[k] = r.array(m, "<f8")
    token_lm = r.array(n, "<f8")
    (lm_weight,) = struct.unpack("<d", r.take(8))
    r.done()
    if abs(token_lm.sum() - 1.0) > 1e-9:
        raise FormatError(f"{name}: token LM does not sum to one")
    return TokenSetModel(HyperParams(m, n), means, variances, self_loop, token_lm, lm_weight)


def write_matm(path, model: TokenSetModel):
    atomic_write_bytes(path, dumps_matm(model))


def read_matm(path) -> TokenSetModel:
    return loads_matm(Path(path).read_bytes(), str(path))


def dumps_matn(net: Mdnn) -> bytes:
    """Header: layer_dims, bottleneck index, heads, activation; then float32 parameters.

    Parameter order: input shift, input scale, trunk (W, b) per layer, head (W, b) per head.
    """
    cfg = net.config
    head = [MATN_MAGIC, struct.pack("<2I", FORMAT_VERSION, len(cfg.layer_dims))]
    head.append(struct.pack(f"<{len(cfg.layer_dims)}I", *cfg.layer_dims))
    head.append(struct.pack("<2I", cfg.bottleneck_index, len(cfg.heads)))
    head.append(struct.pack(f"<{len(cfg.heads)}I", *cfg.heads))
    head.append(struct.pack("<I", ACTIVATIONS.index(cfg.activation)))
    body = [net.input_mean, net.input_scale]
    for W, b in zip(net.weights, net.biases):
        body += [W, b]
    for W, b in zip(net.head_weights, net.head_biases):
        body += [W, b]
    return b"".join(head) + b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in body)


def loads_matn(data: bytes, name: str = "<matn>") -> Mdnn:
    r = _Reader(data, name)
    r.magic(MATN_MAGIC)
    dims = r.u32(r.u32())
    dims = dims if isinstance(dims, list) else [dims]
    bn, nheads = r.u32(2)
    heads = r.u32(nheads)
    heads = heads if isinstance(heads, list) else [heads]
    act = r.u32()
    if act >= len(ACTIVATIONS):
        raise FormatError(f"{name}: unknown activation code {act}")
    cfg = MdnnConfig(dims, heads, bottleneck_index=bn, activation=ACTIVATIONS[act])
    mean = r.array(dims[0], "<f4")
    scale = r.array(dims[0], "<f4")
    weights, biases = [], []
    for a, b in zip(dims, dims[1:]):
        weights.append(r.array(a * b, "<f4").reshape(a, b))
        biases.append(r.array(b, "<f4"))
    hw, hb = [], []
    for h in heads:
        hw.append(r.array(dims[-1] * h, "<f4").reshape(dims[-1], h))
        hb.append(r.array(h, "<f4"))
    r.done()
    return Mdnn(cfg, weights, biases, hw, hb, mean, scale)


def write_matn(path, net: Mdnn):
    atomic_write_bytes(path, dumps_matn(net))


def read_matn(path) -> Mdnn:
    return loads_matn(Path(path).read_bytes(), str(path))
