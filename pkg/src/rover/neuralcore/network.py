"""Sequential networks over a flat parameter vector.

A network is described by a :class:`NetSpec`.  Layers before an ``lstm``
entry run frame-wise on ``batch * time`` frames, the LSTM unrolls over time,
and the remaining layers run frame-wise again.  Networks without an LSTM take
plain ``(batch, *input_shape)`` inputs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import RejectedInput
from .layers import LSTM, Activation, BatchNorm, Concat, Conv2D, Dense, Flatten


@dataclass(frozen=True)
class NetSpec:
    input_shape: tuple
    layers: tuple
    side_dim: int = 0

    def to_text(self) -> str:
        return json.dumps({"input_shape": list(self.input_shape), "side_dim": self.side_dim,
                           "layers": [dict(l) for l in self.layers]}, sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "NetSpec":
        d = json.loads(text)
        return cls(tuple(d["input_shape"]), tuple(d["layers"]), d.get("side_dim", 0))


def _build(spec: NetSpec):
    shape = tuple(spec.input_shape)
    layers = []
    n_lstm = 0
    for idx, desc in enumerate(spec.layers):
        kind = desc["type"]
        try:
            if kind == "conv2d":
                layer = Conv2D(shape, desc["out"], desc.get("kernel", 3), desc.get("stride", 1))
            elif kind == "batchnorm":
                layer = BatchNorm(shape)
            elif kind == "dense":
                layer = Dense(shape, desc["out"])
            elif kind == "lstm":
                n_lstm += 1
                layer = LSTM(shape, desc["hidden"])
            elif kind == "flatten":
                layer = Flatten(shape)
            elif kind == "concat":
                layer = Concat(shape, spec.side_dim)
            elif kind in Activation.FUNCS:
                layer = Activation(shape, kind)
            else:
                raise RejectedInput(f"layer {idx}: unknown type {kind!r}")
        except (ValueError, TypeError) as exc:
            raise RejectedInput(f"layer {idx} ({kind}): incompatible with input shape {shape}: {exc}") from None
        if kind in ("dense", "lstm") and len(shape) != 1:
            raise RejectedInput(f"layer {idx} ({kind}) needs flat input, got shape {shape}")
        layers.append(layer)
        shape = layer.out_shape
    if n_lstm > 1:
        raise RejectedInput("at most one lstm layer is supported")
    return layers, shape


class Network:
    def __init__(self, spec: NetSpec):
        self.spec = spec
        self.layers, self.out_shape = _build(spec)
        self.lstm_index = next((i for i, l in enumerate(self.layers) if isinstance(l, LSTM)), None)
        self._p_slices, self._b_slices = [], []
        p = b = 0
        for layer in self.layers:
            ps, bs = [], []
            for s in layer.param_shapes:
                n = int(np.prod(s))
                ps.append((p, p + n, s))
                p += n
            for s in layer.buffer_shapes:
                n = int(np.prod(s))
                bs.append((b, b + n, s))
                b += n
            self._p_slices.append(ps)
            self._b_slices.append(bs)
        self.n_params, self.n_buffers = p, b

    @property
    def recurrent(self) -> bool:
        return self.lstm_index is not None

    @property
    def hidden_size(self) -> int:
        return self.layers[self.lstm_index].h if self.recurrent else 0

    def init_params(self, rng):
        params = np.concatenate([a.ravel() for l in self.layers for a in l.init(rng)] or [np.zeros(0)])
        return params, self.default_buffers()

    def default_buffers(self):
        return np.concatenate([a.ravel() for l in self.layers for a in l.init_buffers()] or [np.zeros(0)])

    def zero_state(self, n):
        return self.layers[self.lstm_index].zero_state(n) if self.recurrent else None

    def _views(self, flat, slices):
        return [flat[a:b].reshape(s) for a, b, s in slices]

    def _check(self, x, side):
        lead = 2 if self.recurrent else 1
        if tuple(x.shape[lead:]) != tuple(self.spec.input_shape):
            raise RejectedInput(f"layer 0: input shape {x.shape[lead:]} does not match {self.spec.input_shape}")
        if self.spec.side_dim and (side is None or side.shape[-1] != self.spec.side_dim):
            raise RejectedInput(f"concat layer: side input must have width {self.spec.side_dim}")

    def forward(self, params, x, side=None, hidden=None, train=False, buffers=None):
        """Returns ``(output, new_hidden, new_buffers, cache)``."""
        x = np.asarray(x, dtype=float)
        self._check(x, side)
        if buffers is None:
            buffers = self.default_buffers()
        new_buffers = buffers.copy()
        if self.recurrent:
            N, T = x.shape[:2]
            h = x.reshape(N * T, *x.shape[2:])
            side2 = None if side is None else np.asarray(side, dtype=float).reshape(N * T, -1)
        else:
            N, T = x.shape[0], None
            h = x
            side2 = None if side is None else np.asarray(side, dtype=float)
        caches = []
        new_hidden = None
        for li, layer in enumerate(self.layers):
            p = self._views(params, self._p_slices[li])
            if isinstance(layer, LSTM):
                seq, new_hidden, cache = layer.forward(p, h.reshape(N, T, -1), hidden)
                h = seq.reshape(N * T, -1)
            elif isinstance(layer, Concat):
                h, cache = layer.forward(p, h, side=side2)
            else:
                b = self._views(buffers, self._b_slices[li])
                h, cache = layer.forward(p, h, train=train, buffers=b)
                if isinstance(layer, BatchNorm) and train:
                    for (a, e, _), v in zip(self._b_slices[li], cache[3]):
                        new_buffers[a:e] = v.ravel()
            caches.append(cache)
        out = h.reshape(N, T, -1) if self.recurrent else h
        return out, new_hidden, new_buffers, (caches, N, T)

    def backward(self, params, cache, dout, dhidden=None):
        """Returns ``(d_params, d_side, d_input)``."""
        caches, N, T = cache
        grad = np.zeros(self.n_params)
        dh = dout.reshape(N * T, -1) if self.recurrent else dout
        dside = None
        for li in reversed(range(len(self.layers))):
            layer = self.layers[li]
            p = self._views(params, self._p_slices[li])
            if isinstance(layer, LSTM):
                dseq, dps, _ = layer.backward(p, caches[li], dh.reshape(N, T, -1), dhidden)
                dh = dseq.reshape(N * T, -1)
            elif isinstance(layer, Concat):
                (dh, ds), dps = layer.backward(p, caches[li], dh)
                dside = ds.reshape(N, T, -1) if self.recurrent else ds
            else:
                dh, dps = layer.backward(p, caches[li], dh)
            for (a, e, _), g in zip(self._p_slices[li], dps):
                grad[a:e] = g.ravel()
        dx = dh.reshape(N, T, *self.spec.input_shape) if self.recurrent else dh
        return grad, dside, dx

    def value_and_grad(self, params, x, loss_head: Callable, side=None, hidden=None, train=False,
                       buffers=None):
        out, _, new_buffers, cache = self.forward(params, x, side, hidden, train, buffers)
        loss, dout = loss_head(out)
        grad, dside, dx = self.backward(params, cache, dout)
        return loss, grad, dside, new_buffers


_NET_CACHE: dict = {}


def network(spec: NetSpec) -> Network:
    key = spec.to_text()
    if key not in _NET_CACHE:
        _NET_CACHE[key] = Network(spec)
    return _NET_CACHE[key]


def forward(spec: NetSpec, params, x, hidden=None, side=None, train=False, buffers=None):
    """Inference-style forward pass: ``(output, new_hidden)``."""
    out, new_hidden, _, _ = network(spec).forward(params, x, side, hidden, train, buffers)
    return out, new_hidden


def gradient(spec: NetSpec, params, x, loss_head: Callable, side=None, hidden=None, train=False,
             buffers=None) -> np.ndarray:
    """Reverse-mode gradient of ``loss_head(output)[0]`` with respect to the parameters.

    ``loss_head`` maps the network output to ``(loss, d_loss/d_output)``.
    """
    _, grad, _, _ = network(spec).value_and_grad(params, x, loss_head, side, hidden, train, buffers)
    return grad


# Default architectures.  Widths are declared choices, not published values.

def angle_net_spec(n: int = 15) -> NetSpec:
    return NetSpec((1, n, n), (
        {"type": "conv2d", "out": 8, "kernel": 3, "stride": 1}, {"type": "batchnorm"}, {"type": "relu"},
        {"type": "conv2d", "out": 16, "kernel": 3, "stride": 2}, {"type": "batchnorm"}, {"type": "relu"},
        {"type": "flatten"},
        {"type": "dense", "out": 64}, {"type": "relu"},
        {"type": "dense", "out": 2},
    ))


def recurrent_spec(n: int = 15, side_dim: int = 0, out: int = 2, head: str = "identity",
                   hidden: int = 64) -> NetSpec:
    layers = [
        {"type": "conv2d", "out": 8, "kernel": 3, "stride": 1}, {"type": "relu"},
        {"type": "conv2d", "out": 16, "kernel": 3, "stride": 2}, {"type": "relu"},
        {"type": "flatten"},
    ]
    if side_dim:
        layers.append({"type": "concat"})
    layers += [
        {"type": "lstm", "hidden": hidden},
        {"type": "dense", "out": 64}, {"type": "relu"},
        {"type": "dense", "out": out},
    ]
    if head != "identity":
        layers.append({"type": head})
    return NetSpec((1, n, n), tuple(layers), side_dim)
