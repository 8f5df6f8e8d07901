"""Differentiable layers on NHWC numpy arrays.

Each layer caches what its backward pass needs during ``forward`` and writes
parameter gradients into ``self.grads`` during ``backward``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatch(ValueError):
    pass


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout, need_input_grad=True):
        raise NotImplementedError

    def output_shape(self, in_shape):
        return in_shape

    def config(self) -> dict:
        return {"kind": self.kind}

    def astype(self, dtype):
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        return self


class Conv2D(Layer):
    """k x k convolution, stride 1, valid padding."""

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, k=3, dtype=np.float32):
        super().__init__()
        self.in_channels, self.out_channels, self.k = in_channels, out_channels, k
        self.params["W"] = np.zeros((k, k, in_channels, out_channels), dtype=dtype)
        self.params["b"] = np.zeros(out_channels, dtype=dtype)

    def config(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "k": self.k}

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.in_channels:
            raise ShapeMismatch(f"conv expects {self.in_channels} channels, got {c}")
        if h < self.k or w < self.k:
            raise ShapeMismatch(f"input {h}x{w} smaller than {self.k}x{self.k} kernel")
        return (h - self.k + 1, w - self.k + 1, self.out_channels)

    def forward(self, x, train=False, rng=None):
        n, h, w, c = x.shape
        k = self.k
        oh, ow = h - k + 1, w - k + 1
        # (n, oh, ow, c, k, k) -> (n, oh, ow, k, k, c) to match W's (k, k, c, f) layout
        win = sliding_window_view(x, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
        cols = np.ascontiguousarray(win).reshape(n * oh * ow, k * k * c)
        self._cache = (x.shape, cols)
        out = cols @ self.params["W"].reshape(k * k * c, self.out_channels)
        out += self.params["b"]
        return out.reshape(n, oh, ow, self.out_channels)

    def backward(self, dout, need_input_grad=True):
        x_shape, cols = self._cache
        n, h, w, c = x_shape
        k, f = self.k, self.out_channels
        oh, ow = h - k + 1, w - k + 1
        d2 = dout.reshape(-1, f)
        W = self.params["W"]
        self.grads["W"] = (cols.T @ d2).reshape(k, k, c, f)
        self.grads["b"] = d2.sum(axis=0)
        self._cache = None
        if not need_input_grad:
            return None
        # one small GEMM per kernel tap, accumulated straight into the input window
        dx = np.zeros(x_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, i:i + oh, j:j + ow, :] += (d2 @ W[i, j].T).reshape(n, oh, ow, c)
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dout, need_input_grad=True):
        return dout * self._mask


class MaxPool2D(Layer):
    """Non-overlapping 2x2 max pooling; odd trailing rows/columns are dropped."""

    kind = "maxpool"

    def __init__(self, size=2):
        super().__init__()
        self.size = size

    def config(self):
        return {"kind": self.kind, "size": self.size}

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if h < self.size or w < self.size:
            raise ShapeMismatch(f"input {h}x{w} too small to pool")
        return (h // self.size, w // self.size, c)

    def _windows(self, x):
        n, h, w, c = x.shape
        p = self.size
        oh, ow = h // p, w // p
        return x[:, :oh * p, :ow * p, :].reshape(n, oh, p, ow, p, c)

    def forward(self, x, train=False, rng=None):
        xs = self._windows(x)
        p = self.size
        out = xs[:, :, 0, :, 0, :].copy()
        arg = np.zeros(out.shape, dtype=np.int8)
        # strict comparison keeps the first maximum on ties
        for t in range(1, p * p):
            cand = xs[:, :, t // p, :, t % p, :]
            better = cand > out
            np.copyto(out, cand, where=better)
            arg[better] = t
        self._cache = (x.shape, arg)
        return out

    def backward(self, dout, need_input_grad=True):
        x_shape, arg = self._cache
        p = self.size
        n, h, w, c = x_shape
        oh, ow = h // p, w // p
        d = np.zeros((n, oh * p, ow * p, c), dtype=dout.dtype)
        ds = self._windows(d)  # a view: d is contiguous with even extent
        for t in range(p * p):
            ds[:, :, t // p, :, t % p, :] = dout * (arg == t)
        if (oh * p, ow * p) == (h, w):
            return d
        dx = np.zeros(x_shape, dtype=dout.dtype)
        dx[:, :oh * p, :ow * p, :] = d
        return dx


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/(1 - rate) in train mode only."""

    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def config(self):
        return {"kind": self.kind, "rate": self.rate}

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        keep = rng.random(x.shape, dtype=np.float32) >= self.rate
        self._mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - self.rate))
        return x * self._mask

    def backward(self, dout, need_input_grad=True):
        return dout if self._mask is None else dout * self._mask


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(len(x), -1)

    def backward(self, dout, need_input_grad=True):
        return dout.reshape(self._shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_units, out_units, dtype=np.float32):
        super().__init__()
        self.in_units, self.out_units = in_units, out_units
        self.params["W"] = np.zeros((in_units, out_units), dtype=dtype)
        self.params["b"] = np.zeros(out_units, dtype=dtype)

    def config(self):
        return {"kind": self.kind, "in_units": self.in_units, "out_units": self.out_units}

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_units,):
            raise ShapeMismatch(f"dense expects ({self.in_units},), got {tuple(in_shape)}")
        return (self.out_units,)

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout, need_input_grad=True):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        self._x = None
        return dout @ self.params["W"].T if need_input_grad else None


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, train=False, rng=None):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        self._p = p
        return p

    def backward(self, dout, need_input_grad=True):
        p = self._p
        return p * (dout - (dout * p).sum(axis=-1, keepdims=True))


LAYER_KINDS = {cls.kind: cls for cls in (Conv2D, ReLU, MaxPool2D, Dropout, Flatten, Dense, Softmax)}


def layer_from_config(cfg: dict, dtype=np.float32) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    cls = LAYER_KINDS[kind]
    if cls in (Conv2D, Dense):
        return cls(**cfg, dtype=dtype)
    return cls(**cfg)
