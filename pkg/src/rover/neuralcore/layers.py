"""Layer primitives with explicit forward and backward passes.

Each layer owns a slice of the flat parameter vector (``param_shapes``) and,
for batch normalization, a slice of the flat buffer vector.  ``forward``
returns ``(output, cache)``; ``backward`` consumes the cache and returns
``(d_input, [d_param, ...])``.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_MOMENTUM = 0.9
BN_EPS = 1e-7


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Layer:
    kind = "layer"
    param_shapes: tuple = ()
    buffer_shapes: tuple = ()

    def __init__(self, in_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape = self.in_shape

    def init(self, rng):
        return [np.zeros(s) for s in self.param_shapes]

    def init_buffers(self):
        return [np.zeros(s) for s in self.buffer_shapes]

    def forward(self, params, x, train=False, buffers=None):
        raise NotImplementedError

    def backward(self, params, cache, dy):
        raise NotImplementedError


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, in_shape, out_channels, kernel=3, stride=1):
        super().__init__(in_shape)
        c, h, w = self.in_shape
        if h < kernel or w < kernel:
            raise ValueError(f"conv2d: input {self.in_shape} smaller than kernel {kernel}")
        self.c, self.o, self.k, self.s = c, out_channels, kernel, stride
        self.ho = (h - kernel) // stride + 1
        self.wo = (w - kernel) // stride + 1
        self.out_shape = (out_channels, self.ho, self.wo)
        self.param_shapes = ((out_channels, c, kernel, kernel), (out_channels,))

    def init(self, rng):
        fan_in = self.c * self.k * self.k
        W = rng.standard_normal(self.param_shapes[0]) * math.sqrt(2.0 / fan_in)
        return [W, np.zeros(self.o)]

    def forward(self, params, x, train=False, buffers=None):
        W, b = params
        k, s = self.k, self.s
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        n = x.shape[0]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * self.ho * self.wo, -1)
        y = cols @ W.reshape(self.o, -1).T + b
        y = y.reshape(n, self.ho, self.wo, self.o).transpose(0, 3, 1, 2)
        return y, (cols, x.shape)

    def backward(self, params, cache, dy):
        W, _ = params
        cols, xshape = cache
        k, s = self.k, self.s
        n = xshape[0]
        dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, self.o)
        dW = (dy2.T @ cols).reshape(W.shape)
        db = dy2.sum(axis=0)
        dcols = (dy2 @ W.reshape(self.o, -1)).reshape(n, self.ho, self.wo, self.c, k, k)
        dx = np.zeros(xshape)
        for a in range(k):
            for c in range(k):
                dx[:, :, a:a + s * self.ho:s, c:c + s * self.wo:s] += dcols[..., a, c].transpose(0, 3, 1, 2)
        return dx, [dW, db]


class BatchNorm(Layer):
    """Per-channel (4D input) or per-feature (2D input) normalization."""

    kind = "batchnorm"

    def __init__(self, in_shape):
        super().__init__(in_shape)
        ch = self.in_shape[0]
        self.ch = ch
        self.param_shapes = ((ch,), (ch,))
        self.buffer_shapes = ((ch,), (ch,))

    def init(self, rng):
        return [np.ones(self.ch), np.zeros(self.ch)]

    def init_buffers(self):
        return [np.zeros(self.ch), np.ones(self.ch)]

    def _axes(self, x):
        return (0, 2, 3) if x.ndim == 4 else (0,)

    def _bcast(self, v, x):
        return v.reshape(1, -1, 1, 1) if x.ndim == 4 else v.reshape(1, -1)

    def forward(self, params, x, train=False, buffers=None):
        gamma, beta = params
        axes = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
        else:
            mean, var = buffers
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv, x)
        y = self._bcast(gamma, x) * xhat + self._bcast(beta, x)
        new_buffers = None
        if train:
            rm, rv = buffers
            new_buffers = [BN_MOMENTUM * rm + (1 - BN_MOMENTUM) * mean,
                           BN_MOMENTUM * rv + (1 - BN_MOMENTUM) * var]
        return y, (xhat, inv, train, new_buffers)

    def backward(self, params, cache, dy):
        gamma, _ = params
        xhat, inv, train, _ = cache
        axes = self._axes(dy)
        dgamma = np.sum(dy * xhat, axis=axes)
        dbeta = np.sum(dy, axis=axes)
        dxhat = dy * self._bcast(gamma, dy)
        if train:
            m = dy.size // self.ch
            dx = (self._bcast(inv, dy) / m) * (
                m * dxhat
                - self._bcast(dxhat.sum(axis=axes), dy)
                - xhat * self._bcast(np.sum(dxhat * xhat, axis=axes), dy)
            )
        else:
            dx = dxhat * self._bcast(inv, dy)
        return dx, [dgamma, dbeta]


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_shape, width):
        super().__init__(in_shape)
        (n_in,) = self.in_shape
        self.n_in, self.n_out = n_in, width
        self.out_shape = (width,)
        self.param_shapes = ((n_in, width), (width,))

    def init(self, rng, scale=None):
        scale = math.sqrt(2.0 / self.n_in) if scale is None else scale
        return [rng.standard_normal((self.n_in, self.n_out)) * scale, np.zeros(self.n_out)]

    def forward(self, params, x, train=False, buffers=None):
        W, b = params
        return x @ W + b, x

    def backward(self, params, cache, dy):
        W, _ = params
        x = cache
        return dy @ W.T, [x.T @ dy, dy.sum(axis=0)]


class Activation(Layer):
    """relu, tanh, sigmoid, identity, or ``box``: affine tanh onto [-0.5, 1]."""

    kind = "activation"
    FUNCS = ("relu", "tanh", "sigmoid", "identity", "box")

    def __init__(self, in_shape, fn):
        super().__init__(in_shape)
        if fn not in self.FUNCS:
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn

    def forward(self, params, x, train=False, buffers=None):
        fn = self.fn
        if fn == "relu":
            y = np.maximum(x, 0.0)
        elif fn == "tanh":
            y = np.tanh(x)
        elif fn == "sigmoid":
            y = sigmoid(x)
        elif fn == "box":
            y = 0.75 * np.tanh(x) + 0.25
        else:
            y = x
        return y, (x, y)

    def backward(self, params, cache, dy):
        x, y = cache
        fn = self.fn
        if fn == "relu":
            return dy * (x > 0), []
        if fn == "tanh":
            return dy * (1 - y * y), []
        if fn == "sigmoid":
            return dy * y * (1 - y), []
        if fn == "box":
            t = (y - 0.25) / 0.75
            return dy * 0.75 * (1 - t * t), []
        return dy, []


class Flatten(Layer):
    kind = "flatten"

    def __init__(self, in_shape):
        super().__init__(in_shape)
        self.out_shape = (int(np.prod(self.in_shape)),)

    def forward(self, params, x, train=False, buffers=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, dy):
        return dy.reshape(cache), []


class Concat(Layer):
    """Appends the network's side input to a flat feature vector."""

    kind = "concat"

    def __init__(self, in_shape, side_dim):
        super().__init__(in_shape)
        self.side_dim = side_dim
        self.out_shape = (self.in_shape[0] + side_dim,)

    def forward(self, params, x, train=False, buffers=None, side=None):
        return np.concatenate([x, side], axis=1), x.shape[1]

    def backward(self, params, cache, dy):
        n = cache
        return (dy[:, :n], dy[:, n:]), []


class LSTM(Layer):
    """Single LSTM cell unrolled over ``(batch, time, features)`` input."""

    kind = "lstm"

    def __init__(self, in_shape, hidden):
        super().__init__(in_shape)
        (n_in,) = self.in_shape
        self.n_in, self.h = n_in, hidden
        self.out_shape = (hidden,)
        self.param_shapes = ((n_in, 4 * hidden), (hidden, 4 * hidden), (4 * hidden,))

    def init(self, rng):
        H = self.h
        Wx = rng.standard_normal((self.n_in, 4 * H)) / math.sqrt(self.n_in)
        Wh = rng.standard_normal((H, 4 * H)) / math.sqrt(H)
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget gate
        return [Wx, Wh, b]

    def zero_state(self, n):
        return np.zeros((n, self.h)), np.zeros((n, self.h))

    def forward(self, params, x, hidden=None):
        Wx, Wh, b = params
        N, T, _ = x.shape
        H = self.h
        h, c = self.zero_state(N) if hidden is None else hidden
        xw = (x.reshape(N * T, -1) @ Wx).reshape(N, T, 4 * H) + b
        hs = np.empty((N, T, H))
        steps = []
        for t in range(T):
            z = xw[:, t] + h @ Wh
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            o = sigmoid(z[:, 2 * H:3 * H])
            g = np.tanh(z[:, 3 * H:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[:, t] = h
            steps.append((i, f, o, g, c_prev, h_prev, tc))
        return hs, (h, c), (x, steps)

    def backward(self, params, cache, dhs, dstate=None):
        Wx, Wh, _ = params
        x, steps = cache
        N, T, _ = x.shape
        H = self.h
        dh_next = np.zeros((N, H)) if dstate is None else dstate[0].copy()
        dc_next = np.zeros((N, H)) if dstate is None else dstate[1].copy()
        dz_all = np.empty((N, T, 4 * H))
        dWh = np.zeros_like(Wh)
        for t in reversed(range(T)):
            i, f, o, g, c_prev, h_prev, tc = steps[t]
            dh = dhs[:, t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=1)
            dz_all[:, t] = dz
            dWh += h_prev.T @ dz
            dh_next = dz @ Wh.T
            dc_next = dc * f
        dz2 = dz_all.reshape(N * T, -1)
        dWx = x.reshape(N * T, -1).T @ dz2
        db = dz2.sum(axis=0)
        dx = (dz2 @ Wx.T).reshape(x.shape)
        return dx, [dWx, dWh, db], (dh_next, dc_next)
