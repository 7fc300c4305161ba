"""Dense layers with hand-derived backward passes.

Activations are ``float64`` arrays laid out ``(N, C, H, W)``; every forward
returns ``(out, cache)`` and the matching backward consumes the cache.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from aurk.errors import NumericError, ShapeError

DEBUG_FINITE = False


@dataclass
class Param:
    """A trainable array with its gradient slot."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if DEBUG_FINITE and not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1, pad: int = 0):
    """Cross-correlation. ``x (N,C,H,W)``, ``w (F,C,kh,kw)``, ``b (F,)``."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and weights")
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"conv2d: input has {c} channels, weights expect {cw}")
    xp = _pad(x, pad)
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # win: (N, C, Ho, Wo, kh, kw) -> columns (N*Ho*Wo, C*kh*kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ w.reshape(f, -1).T
    if b is not None:
        out = out + b
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    return check_finite(np.ascontiguousarray(out), "conv2d output"), (x.shape, cols, w, stride, pad, b is not None)


def conv2d_backward(dout: np.ndarray, cache):
    """Returns ``(dx, dw, db)``; ``db`` is None for bias-free convolutions."""
    x_shape, cols, w, stride, pad, has_bias = cache
    n, c, h, wd = x_shape
    f, _, kh, kw = w.shape
    _, _, ho, wo = dout.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0) if has_bias else None
    dcols = (d2 @ w.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return dx, dw, db


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None):
    """``x (N, D) @ w (D, M) + b``."""
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weights {w.shape}")
    out = x @ w
    if b is not None:
        out = out + b
    return check_finite(out, "linear output"), (x, w, b is not None)


def linear_backward(dout: np.ndarray, cache):
    x, w, has_bias = cache
    return dout @ w.T, x.T @ dout, (dout.sum(axis=0) if has_bias else None)


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def sigmoid(x):
    """Overflow-free logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def he_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
