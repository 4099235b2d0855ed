"""Network layers with forward and analytic backward passes.

Everything runs on plain numpy arrays in channels-last layout (B, H, W, C),
which keeps the convolution inner loops as dense GEMMs. Each layer caches
what its backward pass needs on forward; backward returns the input
gradient and *accumulates* parameter gradients (so shared parameters, e.g.
the channel-attention bottleneck, add contributions from every use).

Gradient checks run these layers in float64; training uses float32.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Param:
    """A learnable tensor and its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def __repr__(self):
        return f"Param({self.name}, shape={self.value.shape})"


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    def parameters(self):
        return []


class Conv2d(Layer):
    """2-D cross-correlation, NHWC, weight (k, k, c_in, c_out)."""

    def __init__(self, c_in, c_out, kernel, pad, stride=1, bias=True,
                 rng=None, dtype=np.float64, name="conv"):
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out = c_in, c_out
        self.k, self.pad, self.stride = kernel, pad, stride
        self.weight = Param(f"{name}.weight",
                            _kaiming_uniform(rng, (kernel, kernel, c_in, c_out),
                                             c_in * kernel * kernel, dtype))
        self.bias = Param(f"{name}.bias", np.zeros(c_out, dtype=dtype)) if bias else None
        self._cache = None

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def out_size(self, h, w):
        k, p, s = self.k, self.pad, self.stride
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x):
        if x.shape[3] != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {x.shape[3]}")
        b, h, w, _ = x.shape
        k, p, s = self.k, self.pad, self.stride
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        ho, wo = self.out_size(h, w)
        out = np.zeros((b, ho, wo, self.c_out), dtype=x.dtype)
        for dy in range(k):
            for dx in range(k):
                win = xp[:, dy:dy + s * (ho - 1) + 1:s, dx:dx + s * (wo - 1) + 1:s, :]
                out += win @ self.weight.value[dy, dx]
        if self.bias is not None:
            out += self.bias.value
        self._cache = (xp, x.shape)
        return out

    def backward(self, g):
        xp, x_shape = self._cache
        b, h, w, _ = x_shape
        k, p, s = self.k, self.pad, self.stride
        ho, wo = g.shape[1], g.shape[2]
        dxp = np.zeros_like(xp)
        for dy in range(k):
            for dx in range(k):
                ys = slice(dy, dy + s * (ho - 1) + 1, s)
                xs = slice(dx, dx + s * (wo - 1) + 1, s)
                self.weight.grad[dy, dx] += np.tensordot(
                    xp[:, ys, xs, :], g, axes=([0, 1, 2], [0, 1, 2]))
                dxp[:, ys, xs, :] += g @ self.weight.value[dy, dx].T
        if self.bias is not None:
            self.bias.grad += g.sum(axis=(0, 1, 2))
        return dxp[:, p:p + h, p:p + w, :] if p else dxp


class ConvTranspose2d(Layer):
    """Stride-s transpose convolution with kernel == stride (no overlap)."""

    def __init__(self, c_in, c_out, kernel=2, stride=2, bias=True,
                 rng=None, dtype=np.float64, name="tconv"):
        if kernel != stride:
            raise ValueError("only kernel == stride transpose convolutions supported")
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.k = c_in, c_out, kernel
        self.weight = Param(f"{name}.weight",
                            _kaiming_uniform(rng, (kernel, kernel, c_in, c_out),
                                             c_in * kernel * kernel, dtype))
        self.bias = Param(f"{name}.bias", np.zeros(c_out, dtype=dtype)) if bias else None
        self._cache = None

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def forward(self, x):
        if x.shape[3] != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {x.shape[3]}")
        b, h, w, _ = x.shape
        k = self.k
        out = np.zeros((b, h * k, w * k, self.c_out), dtype=x.dtype)
        for dy in range(k):
            for dx in range(k):
                out[:, dy::k, dx::k, :] = x @ self.weight.value[dy, dx]
        if self.bias is not None:
            out += self.bias.value
        self._cache = x
        return out

    def backward(self, g):
        x = self._cache
        k = self.k
        dx = np.zeros_like(x)
        for dy in range(k):
            for dx_ in range(k):
                sub = g[:, dy::k, dx_::k, :]
                self.weight.grad[dy, dx_] += np.tensordot(
                    x, sub, axes=([0, 1, 2], [0, 1, 2]))
                dx += sub @ self.weight.value[dy, dx_].T
        if self.bias is not None:
            self.bias.grad += g.sum(axis=(0, 1, 2))
        return dx


class InstanceNorm2d(Layer):
    """Per-sample, per-channel standardization with learnable affine."""

    def __init__(self, channels, eps=1e-5, dtype=np.float64, name="inorm"):
        self.eps = eps
        self.gamma = Param(f"{name}.scale", np.ones(channels, dtype=dtype))
        self.beta = Param(f"{name}.shift", np.zeros(channels, dtype=dtype))
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, x):
        if x.shape[1] * x.shape[2] < 2:
            raise ValueError("instance norm needs at least 2 spatial positions")
        mean = x.mean(axis=(1, 2), keepdims=True)
        var = x.var(axis=(1, 2), keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        self._cache = (xhat, inv)
        return xhat * self.gamma.value + self.beta.value

    def backward(self, g):
        xhat, inv = self._cache
        self.gamma.grad += (g * xhat).sum(axis=(0, 1, 2))
        self.beta.grad += g.sum(axis=(0, 1, 2))
        dxh = g * self.gamma.value
        m1 = dxh.mean(axis=(1, 2), keepdims=True)
        m2 = (dxh * xhat).mean(axis=(1, 2), keepdims=True)
        return inv * (dxh - m1 - xhat * m2)


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, g):
        return g * self._mask


class AvgPool2d(Layer):
    """2x2 average pooling, stride 2 (extents must be even)."""

    def forward(self, x):
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError("avg pool needs even spatial extents")
        self._in_shape = x.shape
        return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def backward(self, g):
        b, h, w, c = self._in_shape
        out = np.broadcast_to(g[:, :, None, :, None, :] * 0.25,
                              (b, h // 2, 2, w // 2, 2, c))
        return out.reshape(b, h, w, c)


class SpatialAttention(Layer):
    """Gate each spatial position from channel-wise max+mean statistics.

    max/mean maps -> k x k conv -> sigmoid -> multiply with the input.
    """

    def __init__(self, kernel=7, rng=None, dtype=np.float64, name="satt"):
        self.conv = Conv2d(2, 1, kernel, pad=(kernel - 1) // 2, bias=True,
                           rng=rng, dtype=dtype, name=f"{name}.conv")
        self._cache = None

    def parameters(self):
        return self.conv.parameters()

    def forward(self, x):
        mx = x.max(axis=3)
        am = x.argmax(axis=3)
        mean = x.mean(axis=3)
        feat = np.stack([mx, mean], axis=3)
        gate = sigmoid(self.conv.forward(feat))
        self._cache = (x, am, gate)
        return x * gate

    def backward(self, g):
        x, am, gate = self._cache
        c = x.shape[3]
        dx = g * gate
        dgate = (g * x).sum(axis=3, keepdims=True)
        dlogit = dgate * gate * (1.0 - gate)
        dfeat = self.conv.backward(dlogit)
        scat = np.zeros_like(x)
        np.put_along_axis(scat, am[..., None], dfeat[..., 0:1], axis=3)
        dx += scat
        dx += dfeat[..., 1:2] / c
        return dx


class ChannelAttention(Layer):
    """Per-channel gate from global avg+max pooling through a shared
    two-layer bottleneck (channels / reduction wide)."""

    def __init__(self, channels, reduction=4, rng=None, dtype=np.float64, name="catt"):
        if channels % reduction:
            raise ValueError(f"channels {channels} not divisible by reduction {reduction}")
        rng = rng or np.random.default_rng(0)
        hidden = channels // reduction
        self.w1 = Param(f"{name}.w1", _kaiming_uniform(rng, (channels, hidden), channels, dtype))
        self.w2 = Param(f"{name}.w2", _kaiming_uniform(rng, (hidden, channels), hidden, dtype))
        self._cache = None

    def parameters(self):
        return [self.w1, self.w2]

    def forward(self, x):
        b, h, w, c = x.shape
        avg = x.mean(axis=(1, 2))
        flat = x.reshape(b, h * w, c)
        amx = flat.argmax(axis=1)
        mx = np.take_along_axis(flat, amx[:, None, :], axis=1)[:, 0, :]
        h_avg = np.maximum(avg @ self.w1.value, 0.0)
        h_max = np.maximum(mx @ self.w1.value, 0.0)
        gate = sigmoid(h_avg @ self.w2.value + h_max @ self.w2.value)
        self._cache = (x, avg, mx, amx, h_avg, h_max, gate)
        return x * gate[:, None, None, :]

    def backward(self, g):
        x, avg, mx, amx, h_avg, h_max, gate = self._cache
        b, h, w, c = x.shape
        dx = g * gate[:, None, None, :]
        dgate = (g * x).sum(axis=(1, 2))
        ds = dgate * gate * (1.0 - gate)
        dpooled = {}
        for key, hid, pooled in (("avg", h_avg, avg), ("max", h_max, mx)):
            dh = ds @ self.w2.value.T
            dh *= hid > 0
            self.w2.grad += hid.T @ ds
            self.w1.grad += pooled.T @ dh
            dpooled[key] = dh @ self.w1.value.T
        dx += dpooled["avg"][:, None, None, :] / (h * w)
        dxf = dx.reshape(b, h * w, c)
        bi = np.arange(b)[:, None]
        ci = np.arange(c)[None, :]
        dxf[bi, amx, ci] += dpooled["max"]
        return dxf.reshape(b, h, w, c)
