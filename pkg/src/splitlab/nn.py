"""Small numpy layer framework: forward/backward passes and Adam.

Everything here is deterministic given a seeded Generator. Batches are
channels-last float32 arrays, (B, H, W, C) for feature maps and (B, D)
after flattening. Backward passes store parameter gradients on the layer
so an optimizer can walk the layer list.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, float32."""
    bound = np.float32(1.0 / np.sqrt(fan_in))
    return (rng.random(shape, dtype=np.float32) * 2.0 - 1.0) * bound


class Layer:
    """Base layer: subclasses fill params/grads and the two passes."""

    kind = "base"

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def copy(self) -> "Layer":
        import copy as _copy

        clone = _copy.copy(self)
        clone.params = {k: v.copy() for k, v in self.params.items()}
        clone.grads = {}
        clone._cache = None
        return clone


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, name, in_channels, out_channels, kernel=3, stride=1,
                 pad=1, rng=None):
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        fan_in = kernel * kernel * in_channels
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w"] = uniform_fan_in(
            rng, (kernel, kernel, in_channels, out_channels), fan_in)
        self.params["b"] = uniform_fan_in(rng, (out_channels,), fan_in)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if c != self.in_channels:
            raise ShapeError(
                f"{self.name}: expected {self.in_channels} input channels, got {c}")
        oh = (h + 2 * self.pad - self.kernel) // self.stride + 1
        ow = (w + 2 * self.pad - self.kernel) // self.stride + 1
        return (oh, ow, self.out_channels)

    def _im2col(self, x):
        k, s = self.kernel, self.stride
        xp = _pad_hw(x, self.pad)
        # (B, OH, OW, C, k, k) -> (B, OH, OW, k, k, C)
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
        win = win.transpose(0, 1, 2, 4, 5, 3)
        b, oh, ow = win.shape[:3]
        cols = win.reshape(b * oh * ow, k * k * self.in_channels)
        return np.ascontiguousarray(cols), (b, oh, ow), xp.shape

    def forward(self, x, train=False):
        cols, (b, oh, ow), xp_shape = self._im2col(x)
        w2 = self.params["w"].reshape(-1, self.out_channels)
        out = cols @ w2 + self.params["b"]
        if train:
            self._cache = (cols, x.shape, xp_shape, (b, oh, ow))
        return out.reshape(b, oh, ow, self.out_channels)

    def backward(self, grad_out):
        cols, x_shape, xp_shape, (b, oh, ow) = self._cache
        k, s = self.kernel, self.stride
        g2 = grad_out.reshape(b * oh * ow, self.out_channels)
        self.grads["w"] = (cols.T @ g2).reshape(self.params["w"].shape)
        self.grads["b"] = g2.sum(axis=0)
        dcols = (g2 @ self.params["w"].reshape(-1, self.out_channels).T)
        dcols = dcols.reshape(b, oh, ow, k, k, self.in_channels)
        dxp = np.zeros(xp_shape, dtype=grad_out.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * oh:s, j:j + s * ow:s, :] += dcols[:, :, :, i, j, :]
        p = self.pad
        if p:
            return dxp[:, p:-p, p:-p, :]
        return dxp


class DepthwiseConv2D(Layer):
    kind = "depthwise-conv"

    def __init__(self, name, channels, kernel=3, stride=1, pad=1, rng=None):
        super().__init__(name)
        self.channels = channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        fan_in = kernel * kernel
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w"] = uniform_fan_in(rng, (kernel, kernel, channels), fan_in)
        self.params["b"] = uniform_fan_in(rng, (channels,), fan_in)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if c != self.channels:
            raise ShapeError(
                f"{self.name}: expected {self.channels} channels, got {c}")
        oh = (h + 2 * self.pad - self.kernel) // self.stride + 1
        ow = (w + 2 * self.pad - self.kernel) // self.stride + 1
        return (oh, ow, c)

    def forward(self, x, train=False):
        k, s = self.kernel, self.stride
        xp = _pad_hw(x, self.pad)
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
        # win: (B, OH, OW, C, k, k); w: (k, k, C)
        out = np.einsum("bxycij,ijc->bxyc", win, self.params["w"],
                        optimize=True) + self.params["b"]
        if train:
            self._cache = (win, xp.shape, x.shape)
        return out.astype(x.dtype, copy=False)

    def backward(self, grad_out):
        win, xp_shape, x_shape = self._cache
        k, s = self.kernel, self.stride
        b, oh, ow = grad_out.shape[:3]
        self.grads["w"] = np.einsum("bxycij,bxyc->ijc", win, grad_out,
                                    optimize=True)
        self.grads["b"] = grad_out.sum(axis=(0, 1, 2))
        dxp = np.zeros(xp_shape, dtype=grad_out.dtype)
        w = self.params["w"]
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * oh:s, j:j + s * ow:s, :] += grad_out * w[i, j, :]
        p = self.pad
        if p:
            return dxp[:, p:-p, p:-p, :]
        return dxp


class MaxPool2D(Layer):
    kind = "pool"

    def __init__(self, name, size=2):
        super().__init__(name)
        self.size = size

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if h % self.size or w % self.size:
            raise ShapeError(
                f"{self.name}: spatial dims {h}x{w} not divisible by {self.size}")
        return (h // self.size, w // self.size, c)

    def forward(self, x, train=False):
        b, h, w, c = x.shape
        s = self.size
        oh, ow = h // s, w // s
        # (B, OH, s, OW, s, C) -> (B, OH, OW, s*s, C)
        r = x.reshape(b, oh, s, ow, s, c).transpose(0, 1, 3, 2, 4, 5)
        r = r.reshape(b, oh, ow, s * s, c)
        idx = r.argmax(axis=3)
        out = np.take_along_axis(r, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        if train:
            self._cache = (idx, x.shape)
        return out

    def backward(self, grad_out):
        idx, x_shape = self._cache
        b, h, w, c = x_shape
        s = self.size
        oh, ow = h // s, w // s
        dr = np.zeros((b, oh, ow, s * s, c), dtype=grad_out.dtype)
        np.put_along_axis(dr, idx[:, :, :, None, :],
                          grad_out[:, :, :, None, :], axis=3)
        dr = dr.reshape(b, oh, ow, s, s, c).transpose(0, 1, 3, 2, 4, 5)
        return dr.reshape(x_shape)


class ReLU(Layer):
    kind = "relu"

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x, train=False):
        out = np.maximum(x, 0)
        if train:
            self._cache = x > 0
        return out

    def backward(self, grad_out):
        return grad_out * self._cache


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, train=False):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._cache)


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, in_features, out_features, rng=None):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w"] = uniform_fan_in(rng, (in_features, out_features),
                                          in_features)
        self.params["b"] = uniform_fan_in(rng, (out_features,), in_features)

    def output_shape(self, input_shape):
        (d,) = input_shape
        if d != self.in_features:
            raise ShapeError(
                f"{self.name}: expected {self.in_features} features, got {d}")
        return (self.out_features,)

    def forward(self, x, train=False):
        if train:
            self._cache = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, grad_out):
        x = self._cache
        self.grads["w"] = x.T @ grad_out
        self.grads["b"] = grad_out.sum(axis=0)
        return grad_out @ self.params["w"].T


class Softmax(Layer):
    kind = "softmax"

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x, train=False):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        if train:
            self._cache = p
        return p

    def backward(self, grad_out):
        p = self._cache
        inner = (grad_out * p).sum(axis=1, keepdims=True)
        return p * (grad_out - inner)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient w.r.t. logits."""
    n = logits.shape[0]
    p = softmax(logits.astype(np.float64))
    eps = 1e-12
    loss = -np.log(p[np.arange(n), labels] + eps).mean()
    grad = p
    grad[np.arange(n), labels] -= 1.0
    return float(loss), (grad / n).astype(logits.dtype)


class Adam:
    """Adam over the parameters of a list of layers, updating in place."""

    def __init__(self, layers, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.layers = [l for l in layers if l.params]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [{k: np.zeros_like(v) for k, v in l.params.items()}
                   for l in self.layers]
        self._v = [{k: np.zeros_like(v) for k, v in l.params.items()}
                   for l in self.layers]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for layer, m, v in zip(self.layers, self._m, self._v):
            for key, param in layer.params.items():
                g = layer.grads[key]
                m[key] = b1 * m[key] + (1 - b1) * g
                v[key] = b2 * v[key] + (1 - b2) * (g * g)
                mhat = m[key] / bias1
                vhat = v[key] / bias2
                param -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(
                    param.dtype)


def run_layers(layers, batch: np.ndarray, train: bool = False) -> np.ndarray:
    out = batch
    for layer in layers:
        out = layer.forward(out, train=train)
    return out
