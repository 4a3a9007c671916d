"""Minimal float64 neural-net core with explicit forward/backward passes.

Every layer exposes ``forward(x, ...) -> (out, cache)`` and
``backward(dout, cache) -> dx``; parameter gradients accumulate in place on
``Param.grad``. No autograd: the backward passes are hand-derived, which is
what lets the loss-gradient acceptance checks compare them against finite
differences.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from . import kernels

DTYPE = np.float64

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Param:
    """A trainable array with an accumulated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)


class Module:
    """Base class holding named parameters and child modules."""

    def __init__(self):
        self._params: dict[str, Param] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name, value) -> Param:
        p = Param(value)
        self._params[name] = p
        return p

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def named_params(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_params(prefix + name + ".")

    def zero_grad(self):
        for _, p in self.named_params():
            p.grad[...] = 0.0

    def state_dict(self):
        return {name: p.value.copy() for name, p in self.named_params()}

    def load_state_dict(self, state):
        own = dict(self.named_params())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in own.items():
            if p.value.shape != state[name].shape:
                raise ValueError(f"shape mismatch for {name}")
            p.value[...] = state[name]


# ---------------------------------------------------------------------------
# functional pieces
# ---------------------------------------------------------------------------


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x, dout):
    phi = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return dout * (cdf + x * phi)


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_grad(probs, dprobs, axis=-1):
    inner = np.sum(dprobs * probs, axis=axis, keepdims=True)
    return probs * (dprobs - inner)


def normalize_rows(x, eps=0.0):
    """Scale each row of a 2-D array to unit L2 norm."""
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / (n + eps)


def normalize_rows_grad(x, dout):
    """Backward of row normalization y = x / ||x||."""
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    y = x / n
    return (dout - y * np.sum(dout * y, axis=-1, keepdims=True)) / n


def dropout(x, rate, rng):
    """Inverted dropout; returns (out, mask). Mask is None when rate == 0."""
    if rate <= 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_grad(dout, mask):
    if mask is None:
        return dout
    return dout * mask


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Linear(Module):
    def __init__(self, d_in, d_out, rng, scale=None):
        super().__init__()
        if scale is None:
            scale = 1.0 / math.sqrt(d_in)
        self.w = self.add_param("w", rng.normal(0.0, scale, size=(d_in, d_out)))
        self.b = self.add_param("b", np.zeros(d_out))

    def forward(self, x):
        return x @ self.w.value + self.b.value, x

    def backward(self, dout, cache):
        x = cache
        x2 = x.reshape(-1, x.shape[-1])
        d2 = dout.reshape(-1, dout.shape[-1])
        self.w.grad += x2.T @ d2
        self.b.grad += d2.sum(axis=0)
        return dout @ self.w.value.T


class LayerNorm(Module):
    """Normalization over the trailing axis with learned scale and shift."""

    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.g = self.add_param("g", np.ones(dim))
        self.b = self.add_param("b", np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = np.mean(xc * xc, axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        return xhat * self.g.value + self.b.value, (xhat, inv)

    def backward(self, dout, cache):
        xhat, inv = cache
        g = self.g.value
        d2 = dout.reshape(-1, dout.shape[-1])
        x2 = xhat.reshape(-1, xhat.shape[-1])
        self.g.grad += (d2 * x2).sum(axis=0)
        self.b.grad += d2.sum(axis=0)
        dxhat = dout * g
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - m1 - xhat * m2)


class Embedding(Module):
    def __init__(self, n, dim, rng, scale=0.02):
        super().__init__()
        self.w = self.add_param("w", rng.normal(0.0, scale, size=(n, dim)))

    def forward(self, ids):
        return self.w.value[ids], ids

    def backward(self, dout, cache):
        ids = cache
        np.add.at(self.w.grad, ids.reshape(-1), dout.reshape(-1, dout.shape[-1]))
        return None


class Mlp(Module):
    """Two linear layers around a GELU."""

    def __init__(self, d_in, d_hidden, d_out, rng):
        super().__init__()
        self.fc1 = self.add_child("fc1", Linear(d_in, d_hidden, rng))
        self.fc2 = self.add_child("fc2", Linear(d_hidden, d_out, rng))

    def forward(self, x):
        h, c1 = self.fc1.forward(x)
        a = gelu(h)
        out, c2 = self.fc2.forward(a)
        return out, (h, c1, c2)

    def backward(self, dout, cache):
        h, c1, c2 = cache
        da = self.fc2.backward(dout, c2)
        dh = gelu_grad(h, da)
        return self.fc1.backward(dh, c1)


class Conv2d(Module):
    """3x3-style convolution over NHWC tensors, same padding."""

    def __init__(self, c_in, c_out, rng, kernel=3, stride=1, dilation=1):
        super().__init__()
        scale = 1.0 / math.sqrt(kernel * kernel * c_in)
        self.w = self.add_param("w", rng.normal(0.0, scale, size=(kernel, kernel, c_in, c_out)))
        self.b = self.add_param("b", np.zeros(c_out))
        self.kernel = kernel
        self.stride = stride
        self.dilation = dilation

    def forward(self, x):
        out = kernels.conv2d(x, self.w.value, self.stride, self.dilation)
        return out + self.b.value, x

    def backward(self, dout, cache):
        x = cache
        self.b.grad += dout.sum(axis=(0, 1, 2))
        self.w.grad += kernels.conv2d_grad_weights(
            dout, x, self.kernel, self.kernel, self.stride, self.dilation
        )
        return kernels.conv2d_grad_input(dout, x.shape, self.w.value, self.stride, self.dilation)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class AdamW:
    """AdamW with an optional linear warmup/decay schedule."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0,
                 total_steps=None, warmup_frac=0.0):
        self.params = list(params)
        self.base_lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.total_steps = total_steps
        self.warmup_frac = warmup_frac
        self.t = 0
        self.m = [np.zeros_like(p.value) for _, p in self.params]
        self.v = [np.zeros_like(p.value) for _, p in self.params]

    def current_lr(self):
        if self.total_steps is None:
            return self.base_lr
        warm = max(1, int(round(self.warmup_frac * self.total_steps)))
        step = self.t + 1
        if step <= warm and self.warmup_frac > 0.0:
            return self.base_lr * step / warm
        remain = max(1, self.total_steps - warm)
        return self.base_lr * max(0.0, (self.total_steps - step) / remain)

    def step(self):
        lr = self.current_lr()
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for i, (_, p) in enumerate(self.params):
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            mhat = self.m[i] / bc1
            vhat = self.v[i] / bc2
            if self.weight_decay:
                p.value -= lr * self.weight_decay * p.value
            p.value -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self):
        return {
            "t": self.t,
            "m": [a.copy() for a in self.m],
            "v": [a.copy() for a in self.v],
        }

    def load_state_dict(self, state):
        self.t = state["t"]
        self.m = [np.asarray(a, dtype=DTYPE) for a in state["m"]]
        self.v = [np.asarray(a, dtype=DTYPE) for a in state["v"]]
