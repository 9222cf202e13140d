"""Small differentiable primitives shared by the model and the retrieval
encoders.  Everything is float64 numpy; backward functions take the
upstream gradient and the cached forward inputs."""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x):
    phi = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi


def tanh_act(x):
    return np.tanh(x)


def tanh_grad(x):
    t = np.tanh(x)
    return 1.0 - t * t


ACTIVATIONS = {"gelu": (gelu, gelu_grad), "tanh": (tanh_act, tanh_grad)}


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def layernorm(x, g, b, eps=1e-5):
    """Returns (y, cache). Normalizes the last axis."""
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = (x - mu) / sigma
    return xhat * g + b, (xhat, sigma, g)


def layernorm_backward(dy, cache):
    """Returns (dx, dg, db)."""
    xhat, sigma, g = cache
    ghat = dy * g
    m1 = ghat.mean(axis=-1, keepdims=True)
    m2 = (ghat * xhat).mean(axis=-1, keepdims=True)
    dx = (ghat - m1 - xhat * m2) / sigma
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def l2_normalize(u, axis=-1, eps=1e-12):
    """Returns (z, cache)."""
    norm = np.sqrt((u * u).sum(axis=axis, keepdims=True)) + eps
    z = u / norm
    return z, (z, norm)


def l2_normalize_backward(dz, cache):
    z, norm = cache
    return (dz - (z * dz).sum(axis=-1, keepdims=True) * z) / norm
