"""Layer implementations with explicit forward and backward passes.

Images enter the model as NCHW but every spatial layer here works on NHWC
arrays (the model transposes once at the boundary) so that per-channel
reductions and im2col matrices are contiguous.  Conv weights are still
stored as ``(out, in, k, k)``.

Each layer caches what its backward pass needs during ``forward`` and
writes parameter gradients into ``self.grads`` during ``backward``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def infer(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode forward that keeps no cache; may overwrite ``x``."""
        return self.forward(x, False)


class Conv2D(Layer):
    def __init__(self, in_channels, out_channels, kernel, stride, padding, rng, dtype):
        super().__init__()
        self.k, self.s, self.p = kernel, stride, padding
        fan_in = in_channels * kernel * kernel
        bound = np.sqrt(6.0 / fan_in)
        self.params["W"] = rng.uniform(-bound, bound,
                                       (out_channels, in_channels, kernel, kernel)).astype(dtype)
        self.params["b"] = np.zeros(out_channels, dtype=dtype)

    @staticmethod
    def output_hw(h, w, k, s, p):
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def _wmat(self):
        # (F, C, k, k) -> (k*k*C, F), matching the (kh, kw, C) column order
        W = self.params["W"]
        return W.transpose(2, 3, 1, 0).reshape(-1, W.shape[0])

    def _convolve(self, x):
        n, h, w, c = x.shape
        k, s, p = self.k, self.s, self.p
        if p:
            x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        ho, wo = self.output_hw(h, w, k, s, p)
        win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s][:, :ho, :wo]
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)
        out = cols @ self._wmat()
        out += self.params["b"]
        return out.reshape(n, ho, wo, -1), (cols, x.shape, (n, h, w, c), ho, wo)

    def forward(self, x, training):
        out, self._cache = self._convolve(x)
        return out

    def infer(self, x):
        return self._convolve(x)[0]

    def backward(self, dout):
        cols, padded_shape, (n, h, w, c), ho, wo = self._cache
        k, s, p = self.k, self.s, self.p
        W = self.params["W"]
        f = W.shape[0]
        d2 = dout.reshape(-1, f)
        self.grads["W"] = (cols.T @ d2).reshape(k, k, c, f).transpose(3, 2, 0, 1)
        self.grads["b"] = _colsum(d2)
        dcols = (d2 @ self._wmat().T).reshape(n, ho, wo, k, k, c)
        dcols = np.ascontiguousarray(dcols.transpose(3, 4, 0, 1, 2, 5))
        dx = np.zeros(padded_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, i:i + s * ho:s, j:j + s * wo:s] += dcols[i, j]
        if p:
            dx = dx[:, p:p + h, p:p + w]
        return dx


def _colsum(x2: np.ndarray) -> np.ndarray:
    # BLAS matvec is several times faster than sum(axis=0) on tall arrays
    return np.ones(len(x2), dtype=x2.dtype) @ x2


class BatchNorm(Layer):
    """Batch normalisation over the last (channel/feature) axis."""

    def __init__(self, channels, dtype, momentum=0.9, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, training):
        shape = x.shape
        x2 = x.reshape(-1, shape[-1])
        if training:
            m = len(x2)
            mean = _colsum(x2) / m
            centered = x2 - mean
            var = _colsum(centered * centered) / m
            mom = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= mom
            rm += (1 - mom) * mean
            rv *= mom
            rv += (1 - mom) * var
        else:
            centered = x2 - self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        self._cache = (centered, inv_std, training)
        out = centered * (inv_std * self.params["gamma"])
        out += self.params["beta"]
        return out.reshape(shape)

    def infer(self, x):
        inv_std = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
        scale = (self.params["gamma"] * inv_std).astype(x.dtype)
        shift = (self.params["beta"] - self.buffers["running_mean"] * scale).astype(x.dtype)
        x *= scale
        x += shift
        return x

    def backward(self, dout):
        centered, inv_std, training = self._cache
        shape = dout.shape
        d2 = dout.reshape(-1, shape[-1])
        sum_d = _colsum(d2)
        sum_dc = _colsum(d2 * centered)
        self.grads["gamma"] = sum_dc * inv_std
        self.grads["beta"] = sum_d
        scale = self.params["gamma"] * inv_std
        if not training:
            return (d2 * scale).reshape(shape)
        m = len(d2)
        # dx = scale * (d - mean(d) - centered * inv_std^2 * mean(d * centered))
        dx = d2 * scale
        dx -= centered * (scale * inv_std * inv_std * sum_dc / m)
        dx -= scale * sum_d / m
        return dx.reshape(shape)


class ReLU(Layer):
    def forward(self, x, training):
        mask = (x > 0).astype(x.dtype)
        self._cache = mask
        return x * mask

    def infer(self, x):
        return np.maximum(x, 0, out=x)

    def backward(self, dout):
        return dout * self._cache


class MaxPool(Layer):
    """Max pooling; gradient is routed to the first maximal element of each window."""

    def __init__(self, kernel, stride):
        super().__init__()
        self.k, self.s = kernel, stride

    def _offsets(self):
        return [(i, j) for i in range(self.k) for j in range(self.k)]

    def forward(self, x, training):
        k, s = self.k, self.s
        n, h, w, c = x.shape
        ho, wo = (h - k) // s + 1, (w - k) // s + 1
        views = [x[:, i:i + s * ho:s, j:j + s * wo:s] for i, j in self._offsets()]
        out = views[0].copy()
        for v in views[1:]:
            np.maximum(out, v, out=out)
        masks = []
        taken = np.zeros(out.shape, dtype=bool)
        for v in views:
            hit = (v == out) & ~taken
            taken |= hit
            masks.append(hit.astype(x.dtype))
        self._cache = (masks, x.shape, ho, wo)
        return out

    def infer(self, x):
        k, s = self.k, self.s
        _, h, w, _ = x.shape
        ho, wo = (h - k) // s + 1, (w - k) // s + 1
        out = x[:, 0:s * ho:s, 0:s * wo:s].copy()
        for i, j in self._offsets()[1:]:
            np.maximum(out, x[:, i:i + s * ho:s, j:j + s * wo:s], out=out)
        return out

    def backward(self, dout):
        masks, shape, ho, wo = self._cache
        s = self.s
        dx = np.zeros(shape, dtype=dout.dtype)
        for (i, j), mask in zip(self._offsets(), masks):
            dx[:, i:i + s * ho:s, j:j + s * wo:s] += dout * mask
        return dx


class Flatten(Layer):
    """Flattens NHWC feature maps in channel-major (C, H, W) order."""

    def forward(self, x, training):
        self._cache = x.shape
        return x.transpose(0, 3, 1, 2).reshape(x.shape[0], -1)

    def infer(self, x):
        return x.transpose(0, 3, 1, 2).reshape(x.shape[0], -1)

    def backward(self, dout):
        n, h, w, c = self._cache
        return dout.reshape(n, c, h, w).transpose(0, 2, 3, 1)


class Dense(Layer):
    def __init__(self, in_features, out_features, rng, dtype):
        super().__init__()
        bound = np.sqrt(6.0 / in_features)
        self.params["W"] = rng.uniform(-bound, bound, (in_features, out_features)).astype(dtype)
        self.params["b"] = np.zeros(out_features, dtype=dtype)

    def forward(self, x, training):
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def infer(self, x):
        out = x @ self.params["W"]
        out += self.params["b"]
        return out

    def backward(self, dout):
        x = self._cache
        self.grads["W"] = x.T @ dout
        self.grads["b"] = _colsum(dout)
        return dout @ self.params["W"].T


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
