"""Feature extraction: instance normalization, Tukey-windowed STFT, pooling, log scaling.

A 1 s, 3-axis sample of 8000 points becomes a ``(3, 32, 129)`` magnitude
spectrogram, is average-pooled to ``(3, 4, 65)`` and then log10-scaled.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signals import TimeSeriesSample

NFFT = 256
OVERLAP = 8
HOP = NFFT - OVERLAP
N_SAMPLES = 8000
N_FRAMES = (N_SAMPLES - NFFT) // HOP + 1
N_BINS = NFFT // 2 + 1
POOL = (8, 2)
EPS = 1e-12
TUKEY_ALPHA = 0.5

SPEC_SHAPE = (3, N_FRAMES, N_BINS)
FEATURE_SHAPE = (3, -(-N_FRAMES // POOL[0]), -(-N_BINS // POOL[1]))


class DegenerateInputError(ValueError):
    """Raised when a sample has no spread to normalize."""


# --- FFT -------------------------------------------------------------------


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x: np.ndarray, sign: int = -1) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis.

    ``sign`` selects the exponent convention, ``exp(sign * 2j*pi*k*m/N)``.
    Leading axes are batched.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    x = x[..., _bit_reverse(n)]
    lead = x.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = x.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        x = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return x


# --- stages ----------------------------------------------------------------


def minmax_scale(data: np.ndarray, per_axis: bool = False) -> np.ndarray:
    """Affine map of ``data`` onto ``[-1, 1]`` using one min/max (or one per row)."""
    data = np.asarray(data, dtype=np.float64)
    if per_axis:
        lo = data.min(axis=-1, keepdims=True)
        hi = data.max(axis=-1, keepdims=True)
    else:
        lo = data.min()
        hi = data.max()
    span = hi - lo
    if np.any(span <= 0):
        raise DegenerateInputError("constant sample: max equals min, cannot normalize")
    return 2.0 * (data - lo) / span - 1.0


def instance_normalize(sample: TimeSeriesSample, per_axis: bool = False) -> TimeSeriesSample:
    """Rescale a sample to ``[-1, 1]`` with a single min/max taken over all axes."""
    series = dataclasses.replace(sample.series, data=minmax_scale(sample.data, per_axis))
    return dataclasses.replace(sample, series=series)


@dataclass(frozen=True, eq=False)
class WindowFn:
    kind: str
    length: int
    alpha: float
    coefficients: np.ndarray


def tukey(length: int = NFFT, alpha: float = TUKEY_ALPHA) -> WindowFn:
    """Symmetric Tukey (tapered cosine) window.

    ``alpha=0`` gives a rectangular window and ``alpha=1`` a Hann window.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if length < 1:
        raise ValueError("length must be >= 1")
    w = np.ones(length)
    if alpha > 0 and length > 1:
        n = np.arange(length)
        width = int(np.floor(alpha * (length - 1) / 2.0))
        head = n[: width + 1]
        w[: width + 1] = 0.5 * (1 + np.cos(np.pi * (-1 + 2.0 * head / alpha / (length - 1))))
        # mirror the rising ramp so w[n] == w[L-1-n] holds exactly
        w[length - width - 1 :] = w[: width + 1][::-1]
    return WindowFn("tukey", length, float(alpha), w)


def frames(x: np.ndarray, nfft: int = NFFT, hop: int = HOP) -> np.ndarray:
    """Strided view of the analysis frames along the last axis: ``(..., n_frames, nfft)``."""
    view = np.lib.stride_tricks.sliding_window_view(x, nfft, axis=-1)
    return view[..., ::hop, :]


def spectrogram(
    x: np.ndarray,
    win: WindowFn | None = None,
    nfft: int = NFFT,
    overlap: int = OVERLAP,
    length: int = N_SAMPLES,
) -> np.ndarray:
    """Magnitude STFT of the last axis.

    Frame ``n`` covers samples ``[n*hop, n*hop + nfft)`` with ``hop = nfft - overlap``;
    bins ``0..nfft/2`` are kept. An ``(8000,)`` input yields ``(32, 129)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != length:
        raise ValueError(f"expected {length} samples on the last axis, got {x.shape[-1]}")
    win = win if win is not None else tukey(nfft)
    if win.length != nfft:
        raise ValueError("window length must equal nfft")
    hop = nfft - overlap
    if hop < 1:
        raise ValueError("overlap must be smaller than nfft")
    spec = fft(frames(x, nfft, hop) * win.coefficients)
    return np.abs(spec[..., : nfft // 2 + 1])


def avg_pool(spec: np.ndarray, pool: tuple[int, int] = POOL) -> np.ndarray:
    """Mean over ``pool`` blocks of the last two axes; trailing partial blocks are averaged too."""
    spec = np.asarray(spec, dtype=np.float64)
    pt, pf = pool
    if pt < 1 or pf < 1:
        raise ValueError("pool sizes must be >= 1")
    t, f = spec.shape[-2:]
    t_starts = np.arange(0, t, pt)
    f_starts = np.arange(0, f, pf)
    sums = np.add.reduceat(np.add.reduceat(spec, t_starts, axis=-2), f_starts, axis=-1)
    counts = np.outer(np.minimum(pt, t - t_starts), np.minimum(pf, f - f_starts))
    return sums / counts


def log_scale(pooled: np.ndarray, eps: float = EPS) -> np.ndarray:
    return np.log10(np.maximum(pooled, eps))


def to_cnn_layout(features: np.ndarray) -> np.ndarray:
    """``(..., axes, time, freq)`` to channels-last ``(..., time, freq, axes)``."""
    return np.moveaxis(features, -3, -1)


@dataclass(frozen=True)
class PrepConfig:
    alpha: float = TUKEY_ALPHA
    eps: float = EPS
    pool: tuple[int, int] = POOL
    per_axis: bool = False

    def window(self) -> WindowFn:
        return tukey(NFFT, self.alpha)


def preprocess(sample, win: WindowFn | None = None, eps: float = EPS, pool=POOL, per_axis: bool = False) -> np.ndarray:
    """Full float feature chain for one sample (a ``TimeSeriesSample`` or ``(3, 8000)`` array)."""
    data = sample.data if isinstance(sample, TimeSeriesSample) else np.asarray(sample, dtype=np.float64)
    if data.shape != (3, N_SAMPLES):
        raise ValueError(f"expected a (3, {N_SAMPLES}) sample, got {data.shape}")
    spec = spectrogram(minmax_scale(data, per_axis), win)
    return log_scale(avg_pool(spec, pool), eps)


def preprocess_many(samples, prep: PrepConfig = PrepConfig()) -> np.ndarray:
    win = prep.window()
    return np.stack([preprocess(s, win, prep.eps, prep.pool, prep.per_axis) for s in samples])


# --- feature files ---------------------------------------------------------


def write_features(path: str | Path, features: np.ndarray, stage: str = "log", alpha: float = TUKEY_ALPHA, eps: float = EPS) -> None:
    """Flat float32-LE tensor preceded by a one-line text header."""
    features = np.asarray(features)
    header = f"shape={','.join(map(str, features.shape))} stage={stage} alpha={alpha!r} eps={eps!r} dtype=float32-le\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_features(path: str | Path) -> tuple[np.ndarray, dict[str, str]]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = dict(item.split("=", 1) for item in raw[:nl].decode("ascii").split())
    shape = tuple(int(s) for s in header["shape"].split(",") if s)
    data = np.frombuffer(raw[nl + 1 :], dtype="<f4").reshape(shape)
    return data.astype(np.float64), header
