"""Layer specifications and float forward/backward kernels (channels-last, batched)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Optional, Union

import numpy as np

ACTIVATIONS = (None, "relu")


def _check_activation(act):
    if act not in ACTIVATIONS:
        raise ValueError(f"unknown activation {act!r}")


@dataclass(frozen=True)
class Conv2D:
    kh: int
    kw: int
    c_in: int
    c_out: int
    stride: int = 1
    padding: str = "same"
    activation: Optional[str] = "relu"
    kind: ClassVar[str] = "conv2d"

    def __post_init__(self):
        _check_activation(self.activation)
        if self.padding not in ("same", "valid"):
            raise ValueError(f"unknown padding {self.padding!r}")
        if min(self.kh, self.kw, self.c_in, self.c_out, self.stride) < 1:
            raise ValueError("conv dimensions must be >= 1")

    def output_shape(self, shape):
        h, w, c = shape
        if c != self.c_in:
            raise ValueError(f"conv expects {self.c_in} channels, got {c}")
        (ho, _), (wo, _) = _pad_amounts(h, self.kh, self.stride, self.padding), _pad_amounts(w, self.kw, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ValueError(f"conv kernel does not fit input {shape}")
        return (ho, wo, self.c_out)

    def param_shapes(self):
        return {"w": (self.kh, self.kw, self.c_in, self.c_out), "b": (self.c_out,)}

    @property
    def fan_in(self) -> int:
        return self.kh * self.kw * self.c_in


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int
    activation: Optional[str] = None
    kind: ClassVar[str] = "dense"

    def __post_init__(self):
        _check_activation(self.activation)

    def output_shape(self, shape):
        if tuple(shape) != (self.n_in,):
            raise ValueError(f"dense expects ({self.n_in},), got {tuple(shape)}")
        return (self.n_out,)

    def param_shapes(self):
        return {"w": (self.n_in, self.n_out), "b": (self.n_out,)}

    @property
    def fan_in(self) -> int:
        return self.n_in


@dataclass(frozen=True)
class _Pool2D:
    ph: int
    pw: int

    def output_shape(self, shape):
        h, w, c = shape
        if h < self.ph or w < self.pw:
            raise ValueError(f"pool {self.ph}x{self.pw} larger than input {shape}")
        return (h // self.ph, w // self.pw, c)

    def param_shapes(self):
        return {}


@dataclass(frozen=True)
class AvgPool2D(_Pool2D):
    kind: ClassVar[str] = "avgpool2d"


@dataclass(frozen=True)
class MaxPool2D(_Pool2D):
    kind: ClassVar[str] = "maxpool2d"


@dataclass(frozen=True)
class Flatten:
    kind: ClassVar[str] = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def param_shapes(self):
        return {}


@dataclass(frozen=True)
class Softmax:
    kind: ClassVar[str] = "softmax"

    def output_shape(self, shape):
        if len(shape) != 1:
            raise ValueError("softmax expects a flat input")
        return tuple(shape)

    def param_shapes(self):
        return {}


LayerSpec = Union[Conv2D, Dense, AvgPool2D, MaxPool2D, Flatten, Softmax]
LAYER_TYPES = {cls.kind: cls for cls in (Conv2D, Dense, AvgPool2D, MaxPool2D, Flatten, Softmax)}


def infer_shapes(layers, input_shape) -> list[tuple[int, ...]]:
    """Activation shapes ``[input, after layer 0, after layer 1, ...]``; raises on incompatible stacks."""
    shapes = [tuple(input_shape)]
    for layer in layers:
        shapes.append(tuple(layer.output_shape(shapes[-1])))
    return shapes


# --- kernels ---------------------------------------------------------------


def _pad_amounts(size: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    """Output length and leading pad for one spatial axis."""
    if padding == "valid":
        return (size - k) // stride + 1, 0
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2


def _pad(x, layer: Conv2D):
    h, w = x.shape[1:3]
    ho, top = _pad_amounts(h, layer.kh, layer.stride, layer.padding)
    wo, left = _pad_amounts(w, layer.kw, layer.stride, layer.padding)
    bottom = max((ho - 1) * layer.stride + layer.kh - h - top, 0)
    right = max((wo - 1) * layer.stride + layer.kw - w - left, 0)
    return np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0))), (top, left), (ho, wo)


def im2col(xp, kh: int, kw: int, stride: int, out_hw) -> np.ndarray:
    """Patches ``(N, Ho, Wo, kh*kw*C)`` ordered (kh, kw, C) to match the weight layout."""
    ho, wo = out_hw
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    view = view[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    n, c = xp.shape[0], xp.shape[3]
    return view.transpose(0, 1, 2, 4, 5, 3).reshape(n, ho, wo, kh * kw * c)


def conv2d_forward(x, w, b, layer: Conv2D):
    xp, offset, out_hw = _pad(x, layer)
    cols = im2col(xp, layer.kh, layer.kw, layer.stride, out_hw)
    z = cols @ w.reshape(-1, layer.c_out) + b
    return z, (x.shape, xp.shape, offset, cols)


def conv2d_backward(dz, w, layer: Conv2D, cache):
    x_shape, xp_shape, (top, left), cols = cache
    c_out = layer.c_out
    dw = (cols.reshape(-1, cols.shape[-1]).T @ dz.reshape(-1, c_out)).reshape(w.shape)
    db = dz.reshape(-1, c_out).sum(axis=0)
    dcols = (dz @ w.reshape(-1, c_out).T).reshape(*dz.shape[:3], layer.kh, layer.kw, layer.c_in)
    dxp = np.zeros(xp_shape)
    ho, wo = dz.shape[1:3]
    s = layer.stride
    for i in range(layer.kh):
        for j in range(layer.kw):
            dxp[:, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s, :] += dcols[:, :, :, i, j, :]
    h, wd = x_shape[1:3]
    return dxp[:, top : top + h, left : left + wd, :], dw, db


def dense_forward(x, w, b):
    return x @ w + b, x


def dense_backward(dz, w, x):
    return dz @ w.T, x.T @ dz, dz.sum(axis=0)


def _blocks(x, ph, pw):
    n, h, w, c = x.shape
    ho, wo = h // ph, w // pw
    return x[:, : ho * ph, : wo * pw].reshape(n, ho, ph, wo, pw, c)


def avgpool_forward(x, ph, pw):
    return _blocks(x, ph, pw).mean(axis=(2, 4))


def avgpool_backward(dy, x_shape, ph, pw):
    n, h, w, c = x_shape
    ho, wo = dy.shape[1:3]
    dx = np.zeros(x_shape)
    spread = np.repeat(np.repeat(dy, ph, axis=1), pw, axis=2) / (ph * pw)
    dx[:, : ho * ph, : wo * pw] = spread
    return dx


def maxpool_forward(x, ph, pw):
    return _blocks(x, ph, pw).max(axis=(2, 4))


def maxpool_backward(dy, x, ph, pw):
    blocks = _blocks(x, ph, pw)
    mask = blocks == blocks.max(axis=(2, 4), keepdims=True)
    mask = mask / mask.sum(axis=(2, 4), keepdims=True)
    grad = mask * dy[:, :, None, :, None, :]
    dx = np.zeros(x.shape)
    n, ho, _, wo, _, c = blocks.shape
    dx[:, : ho * ph, : wo * pw] = grad.reshape(n, ho * ph, wo * pw, c)
    return dx


def relu(z):
    return np.maximum(z, 0.0)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy over integer labels and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
