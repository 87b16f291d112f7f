"""Slow, definition-level reference implementations used only by the tests.

Nothing here imports the code under test.
"""

import numpy as np


def naive_dft(x, sign=-1):
    """Direct O(N^2) summation X[k] = sum_m x[m] exp(sign * 2j*pi*k*m/N)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    out = np.zeros(x.shape, dtype=np.complex128)
    for k in range(n):
        for m in range(n):
            out[..., k] += x[..., m] * np.exp(sign * 2j * np.pi * k * m / n)
    return out


def naive_dft_matrix(x, sign=-1):
    """Same definition, vectorized as an explicit DFT matrix (for larger batches)."""
    n = np.asarray(x).shape[-1]
    k = np.arange(n)
    mat = np.exp(sign * 2j * np.pi * np.outer(k, k) / n)
    return np.asarray(x, dtype=np.complex128) @ mat.T


def stft_reference(x, window, nfft=256, hop=248):
    """Frame loop straight from the STFT definition; returns magnitudes of bins 0..nfft/2."""
    n_frames = (len(x) - nfft) // hop + 1
    out = np.zeros((n_frames, nfft // 2 + 1))
    for n in range(n_frames):
        frame = np.asarray(x[n * hop : n * hop + nfft]) * window
        out[n] = np.abs(naive_dft_matrix(frame))[: nfft // 2 + 1]
    return out


def minmax_reference(x):
    lo, hi = np.min(x), np.max(x)
    return 2 * (np.asarray(x) - lo) / (hi - lo) - 1


def pool_reference(a, pt, pf):
    t, f = a.shape[-2:]
    rows = []
    for i in range(0, t, pt):
        row = []
        for j in range(0, f, pf):
            row.append(np.mean(a[..., i : i + pt, j : j + pf], axis=(-2, -1)))
        rows.append(np.stack(row, axis=-1))
    return np.stack(rows, axis=-2)


def conv2d_reference(x, w, b, stride=1, padding="same"):
    """Nested-loop NHWC convolution (cross-correlation, as in Keras)."""
    n, h, wd, c = x.shape
    kh, kw, _, co = w.shape
    if padding == "same":
        ho, wo = -(-h // stride), -(-wd // stride)
        ph = max((ho - 1) * stride + kh - h, 0)
        pw = max((wo - 1) * stride + kw - wd, 0)
        top, left = ph // 2, pw // 2
    else:
        ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
        top = left = 0
    out = np.zeros((n, ho, wo, co))
    for b_ in range(n):
        for i in range(ho):
            for j in range(wo):
                for o in range(co):
                    acc = b[o]
                    for di in range(kh):
                        for dj in range(kw):
                            r = i * stride + di - top
                            s = j * stride + dj - left
                            if 0 <= r < h and 0 <= s < wd:
                                for ci in range(c):
                                    acc += x[b_, r, s, ci] * w[di, dj, ci, o]
                    out[b_, i, j, o] = acc
    return out


def dense_reference(x, w, b):
    n, k = x.shape
    out = np.zeros((n, w.shape[1]))
    for r in range(n):
        for o in range(w.shape[1]):
            out[r, o] = b[o] + sum(x[r, i] * w[i, o] for i in range(k))
    return out


def finite_difference(f, x, h=1e-4):
    """Central differences of scalar ``f`` with respect to every entry of ``x`` (modified in place, then restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def band_energy(x, fs, low, high):
    spec = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1 / fs)
    inside = (freqs >= low) & (freqs <= high)
    return spec[inside].sum(), spec[~inside].sum()
