"""Forward and reverse passes over a :class:`NetworkSpec`.

Tensors are batch-first NHWC float64 arrays. Parameters are a list with one
dict per layer: ``{"W": ..., "b": ...}`` for conv/dense layers and ``{}``
for everything else. Conv weights are ``(filters, r, r, C_in)`` and dense
weights ``(D_in, units)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .spec import NetworkSpec, ShapeError, propagate, same_padding, pool_geometry

Params = list[dict[str, np.ndarray]]


class NonFiniteError(FloatingPointError):
    def __init__(self, message: str, layer_index: int | None = None):
        self.layer_index = layer_index
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)


def build_network(spec: NetworkSpec, seed: int) -> Params:
    """Glorot-uniform weights, zero biases, drawn layer by layer from ``seed``."""
    shapes = propagate(spec)
    rng = np.random.default_rng(seed)
    params: Params = []
    for sh in shapes:
        if sh.weight_shape is None:
            params.append({})
            continue
        fan_in, fan_out = sh.fan
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append({
            "W": rng.uniform(-limit, limit, size=sh.weight_shape),
            "b": np.zeros(sh.bias_shape),
        })
    return params


def copy_params(params: Params) -> Params:
    return [{k: v.copy() for k, v in p.items()} for p in params]


def zeros_like_params(params: Params) -> Params:
    return [{k: np.zeros_like(v) for k, v in p.items()} for p in params]


def count_params(params: Params) -> int:
    return sum(v.size for p in params for v in p.values())


def _activate(z, name):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _activation_grad(out, name, g):
    if name == "relu":
        return g * (out > 0)
    if name == "tanh":
        return g * (1.0 - out * out)
    if name == "sigmoid":
        return g * out * (1.0 - out)
    return g


@dataclass
class Trace:
    """Activations of one forward pass plus what backward needs."""
    inputs: np.ndarray
    outputs: list = field(default_factory=list)
    caches: list = field(default_factory=list)
    mode: str = "infer"


def _conv_forward(x, W, b, stride):
    N, H, Wd, C = x.shape
    n, r = W.shape[0], W.shape[1]
    pt, pb = same_padding(H, r, stride)
    pl, pr = same_padding(Wd, r, stride)
    Ho, Wo = -(-H // stride), -(-Wd // stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt or pb or pl or pr else x
    win = sliding_window_view(xp, (r, r), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(N * Ho * Wo, r * r * C)
    z = cols @ W.reshape(n, -1).T + b
    return z.reshape(N, Ho, Wo, n), (cols, xp.shape, (pt, pl))


def _conv_backward(dz, W, cache, in_shape, stride, need_dx=True):
    cols, padded_shape, (pt, pl) = cache
    N, Ho, Wo, n = dz.shape
    r, C = W.shape[1], W.shape[3]
    dz2 = dz.reshape(-1, n)
    dW = (dz2.T @ cols).reshape(W.shape)
    db = dz2.sum(axis=0)
    if not need_dx:
        return None, dW, db
    dxp = np.zeros(padded_shape)
    # col2im one kernel offset at a time keeps every operand contiguous
    for i in range(r):
        for j in range(r):
            dxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += \
                (dz2 @ W[:, i, j, :]).reshape(N, Ho, Wo, C)
    H, Wd = in_shape[1], in_shape[2]
    return dxp[:, pt:pt + H, pl:pl + Wd, :], dW, db


def _pool_forward(x, size, stride, center, use_min):
    N, H, Wd, C = x.shape
    oh, offh = pool_geometry(H, size, stride, center)
    ow, offw = pool_geometry(Wd, size, stride, center)
    win = sliding_window_view(x[:, offh:, offw:], (size, size), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :oh, :ow]
    flat = win.reshape(N, oh, ow, C, size * size)
    # argmax/argmin return the first extremum: row-major tie-break
    idx = flat.argmin(axis=-1) if use_min else flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, (idx, offh, offw, oh, ow)


def _pool_backward(g, cache, in_shape, size, stride):
    idx, offh, offw, oh, ow = cache
    dx = np.zeros(in_shape)
    if stride == size:
        # non-overlapping windows: scatter through a one-hot block layout
        N, C = g.shape[0], g.shape[-1]
        hot = (idx[..., None] == np.arange(size * size)) * g[..., None]
        block = hot.reshape(N, oh, ow, C, size, size).transpose(0, 1, 4, 2, 5, 3)
        dx[:, offh:offh + oh * size, offw:offw + ow * size, :] = block.reshape(N, oh * size, ow * size, C)
        return dx
    for k in range(size * size):
        hit = idx == k
        if not hit.any():
            continue
        i, j = divmod(k, size)
        r0, c0 = offh + i, offw + j
        dx[:, r0:r0 + stride * oh:stride, c0:c0 + stride * ow:stride, :] += g * hit
    return dx


def forward(spec: NetworkSpec, params: Params, x: np.ndarray, mode: str = "infer",
            rng: np.random.Generator | None = None, upto: int | None = None) -> Trace:
    """Run the network on a batch; ``upto`` stops after that layer index."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != spec.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} does not match {spec.input_shape}")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    train = mode == "train"
    if train and rng is None and any(l.kind == "dropout" for l in spec.layers):
        raise ValueError("train mode with dropout needs an rng")
    srcs = spec.sources()
    last = len(spec.layers) - 1 if upto is None else upto
    trace = Trace(inputs=x, mode=mode)
    outs = trace.outputs
    for i, layer in enumerate(spec.layers[:last + 1]):
        ins = [x if s < 0 else outs[s] for s in srcs[i]]
        h = ins[0]
        cache = None
        kind = layer.kind
        if kind == "conv-same":
            z, cache = _conv_forward(h, params[i]["W"], params[i]["b"], layer.stride)
            out = _activate(z, layer.activation)
        elif kind in ("max-pool", "min-pool"):
            out, cache = _pool_forward(h, layer.size, layer.stride or layer.size, layer.center,
                                       kind == "min-pool")
        elif kind == "dense":
            z = h.reshape(h.shape[0], -1) @ params[i]["W"] + params[i]["b"]
            out = _activate(z, layer.activation)
        elif kind == "dropout":
            if train:
                keep = rng.random(h.shape) >= layer.rate
                cache = keep / (1.0 - layer.rate)
                out = h * cache
            else:
                out = h
        elif kind == "concat":
            out = np.concatenate(ins, axis=-1)
        else:
            raise ShapeError(f"unknown layer kind {kind!r}", i)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError("non-finite activation", i)
        outs.append(out)
        trace.caches.append(cache)
    return trace


def backward(spec: NetworkSpec, params: Params, trace: Trace, loss_gradient: np.ndarray,
             need_input_grad: bool = False):
    """Reverse pass. Returns ``(grads, dx)``; ``dx`` is None unless requested."""
    L = len(spec.layers)
    if len(trace.outputs) != L or len(trace.caches) != L:
        raise ValueError("trace does not hold cached activations for every layer")
    srcs = spec.sources()
    gout: list = [None] * L
    gout[-1] = np.asarray(loss_gradient, dtype=np.float64).reshape(trace.outputs[-1].shape)
    grads: Params = [{} for _ in range(L)]
    dinput = np.zeros_like(trace.inputs) if need_input_grad else None

    def send(src, g):
        nonlocal dinput
        if src < 0:
            if dinput is not None:
                dinput += g
        elif gout[src] is None:
            gout[src] = g
        else:
            gout[src] = gout[src] + g

    for i in range(L - 1, -1, -1):
        layer = spec.layers[i]
        g = gout[i]
        ins_idx = srcs[i]
        ins = [trace.inputs if s < 0 else trace.outputs[s] for s in ins_idx]
        if g is None:
            if layer.kind in ("conv-same", "dense"):
                grads[i] = {k: np.zeros_like(v) for k, v in params[i].items()}
            continue
        out, cache, h = trace.outputs[i], trace.caches[i], ins[0]
        kind = layer.kind
        if kind == "conv-same":
            dz = _activation_grad(out, layer.activation, g)
            need_dx = ins_idx[0] >= 0 or dinput is not None
            dx, dW, db = _conv_backward(dz, params[i]["W"], cache, h.shape, layer.stride, need_dx)
            grads[i] = {"W": dW, "b": db}
            if need_dx:
                send(ins_idx[0], dx)
        elif kind in ("max-pool", "min-pool"):
            send(ins_idx[0], _pool_backward(g, cache, h.shape, layer.size, layer.stride or layer.size))
        elif kind == "dense":
            dz = _activation_grad(out, layer.activation, g)
            h2 = h.reshape(h.shape[0], -1)
            grads[i] = {"W": h2.T @ dz, "b": dz.sum(axis=0)}
            send(ins_idx[0], (dz @ params[i]["W"].T).reshape(h.shape))
        elif kind == "dropout":
            if trace.mode == "train":
                if cache is None:
                    raise ValueError(f"layer {i}: missing dropout mask")
                send(ins_idx[0], g * cache)
            else:
                send(ins_idx[0], g)
        elif kind == "concat":
            start = 0
            for s, xin in zip(ins_idx, ins):
                c = xin.shape[-1]
                send(s, g[..., start:start + c])
                start += c
    return grads, dinput


def penultimate_features(spec: NetworkSpec, params: Params, patches: np.ndarray) -> np.ndarray:
    """ReLU of the last-but-one layer's activation, flattened to (N, D)."""
    if len(spec.layers) < 2:
        raise ShapeError("penultimate features need at least two layers")
    trace = forward(spec, params, patches, mode="infer", upto=len(spec.layers) - 2)
    h = trace.outputs[-1]
    return np.maximum(h.reshape(h.shape[0], -1), 0.0)


@dataclass
class Model:
    """A spec with its weights and small bits of persisted preprocessing."""
    spec: NetworkSpec
    params: Params
    meta: dict = field(default_factory=dict)

    def _prepare(self, x):
        x = np.asarray(x, dtype=np.float64)
        mean = self.meta.get("input_mean")
        return x - mean if mean is not None else x

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        x = self._prepare(x)
        chunks = [forward(self.spec, self.params, x[i:i + batch_size]).outputs[-1]
                  for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks) if chunks else np.zeros((0,) + propagate(self.spec)[-1].out_shape)

    def features(self, x, batch_size: int = 256) -> np.ndarray:
        x = self._prepare(x)
        chunks = [penultimate_features(self.spec, self.params, x[i:i + batch_size])
                  for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks)

    @property
    def feature_dim(self) -> int:
        return int(np.prod(propagate(self.spec)[-2].out_shape))
