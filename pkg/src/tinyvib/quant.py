"""Affine signed 8-bit quantization and fixed-point requantization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QMIN = -128
QMAX = 127
SCALE_FLOOR = 1e-8


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        if not QMIN <= int(self.zero_point) <= QMAX:
            raise ValueError(f"zero_point {self.zero_point} outside [{QMIN}, {QMAX}]")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "zero_point", int(self.zero_point))

    @property
    def range(self) -> tuple[float, float]:
        """Real interval covered by the int8 grid."""
        return self.scale * (QMIN - self.zero_point), self.scale * (QMAX - self.zero_point)


@dataclass(frozen=True, eq=False)
class QuantTensor:
    values: np.ndarray
    params: QuantParams

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.dtype != np.int8:
            if v.size and (v.min() < QMIN or v.max() > QMAX):
                raise ValueError("values outside the int8 range")
            v = v.astype(np.int8)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantTensor):
            return NotImplemented
        return self.params == other.params and np.array_equal(self.values, other.values)


def round_half_away(x):
    """Round to nearest, ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def calibrate(values, symmetric: bool = False) -> QuantParams:
    """Quantization parameters covering ``values``.

    Symmetric: ``scale = max|v| / 127`` and zero point 0. Asymmetric: the
    range is first widened to include 0 (so real zero is exactly
    representable), then ``scale = (max - min) / 255`` with ``min -> -128``.
    All-equal input falls back to a ``1e-8`` scale.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("cannot calibrate on an empty collection")
    if not np.all(np.isfinite(v)):
        raise ValueError("calibration values must be finite")
    lo = min(float(v.min()), 0.0)
    hi = max(float(v.max()), 0.0)
    if symmetric:
        scale = max(abs(lo), abs(hi)) / QMAX
        return QuantParams(max(scale, SCALE_FLOOR), 0)
    scale = (hi - lo) / (QMAX - QMIN)
    if scale < SCALE_FLOOR:
        return QuantParams(SCALE_FLOOR, 0)
    zp = int(np.clip(QMIN - round_half_away(lo / scale), QMIN, QMAX))
    return QuantParams(scale, zp)


def quantize(x, qp: QuantParams) -> QuantTensor:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    q = round_half_away(x / qp.scale) + qp.zero_point
    return QuantTensor(np.clip(q, QMIN, QMAX).astype(np.int8), qp)


def dequantize(q: QuantTensor) -> np.ndarray:
    return q.params.scale * (q.values.astype(np.float64) - q.params.zero_point)


# --- integer-only rescaling ------------------------------------------------


def quantize_multiplier(real: float) -> tuple[int, int]:
    """Express ``real`` as ``multiplier * 2**(shift - 31)`` with a Q31 multiplier in ``[2**30, 2**31)``."""
    if real <= 0 or not np.isfinite(real):
        raise ValueError("multiplier must be positive and finite")
    mantissa, shift = np.frexp(real)
    m = int(round_half_away(mantissa * (1 << 31)))
    if m == 1 << 31:
        m //= 2
        shift += 1
    return m, int(shift)


def multiply_by_quantized(acc, multiplier: int, shift: int) -> np.ndarray:
    """``round(acc * multiplier / 2**(31 - shift))`` in int64, ties away from zero."""
    acc = np.asarray(acc, dtype=np.int64)
    right = 31 - shift
    if right <= 0:
        return acc * multiplier << (-right)
    if right > 62:
        # |acc * multiplier| < 2**62, so the rounded result is 0
        return np.zeros_like(acc)
    prod = acc * np.int64(multiplier)
    half = np.int64(1) << (right - 1)
    mag = (np.abs(prod) + half) >> right
    return np.where(prod < 0, -mag, mag)


def requantize(acc, multiplier: int, shift: int, zero_point: int, relu: bool = False) -> np.ndarray:
    """Scale an int32 accumulator onto an int8 activation grid."""
    out = multiply_by_quantized(acc, multiplier, shift) + zero_point
    lo = zero_point if relu else QMIN
    return np.clip(out, lo, QMAX).astype(np.int8)


def quantize_bias(bias, input_scale: float, weight_scale: float) -> np.ndarray:
    """Int32 bias at scale ``input_scale * weight_scale``."""
    q = round_half_away(np.asarray(bias, dtype=np.float64) / (input_scale * weight_scale))
    info = np.iinfo(np.int32)
    return np.clip(q, info.min, info.max).astype(np.int32)
