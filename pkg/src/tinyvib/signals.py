"""Synthetic milling-vibration data, movement segmentation, windowing and splits.

A recording is a 3-axis acceleration array of shape ``(3, n)``. Samples handed
to the rest of the pipeline are exactly one second long.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SAMPLE_RATE = 8000
WINDOW_SECONDS = 1


class Label(str, enum.Enum):
    GOOD = "good"
    BAD = "bad"

    @property
    def index(self) -> int:
        return 0 if self is Label.GOOD else 1

    @classmethod
    def from_index(cls, i: int) -> "Label":
        return (cls.GOOD, cls.BAD)[int(i)]


@dataclass(frozen=True)
class Origin:
    """Where a 1 s window came from."""

    source: str
    segment: int = 0
    window: int = 0

    def key(self) -> tuple[str, int, int]:
        return (self.source, self.segment, self.window)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    data: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != 3:
            raise ValueError(f"expected a (3, n) array, got shape {data.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "data", data)

    def __len__(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class TimeSeriesSample:
    series: TimeSeries
    label: Label
    origin: Origin

    def __post_init__(self):
        expected = self.series.sample_rate * WINDOW_SECONDS
        if len(self.series) != expected:
            raise ValueError(f"sample must hold exactly {expected} samples per axis, got {len(self.series)}")
        object.__setattr__(self, "label", Label(self.label))

    @property
    def data(self) -> np.ndarray:
        return self.series.data

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeriesSample):
            return NotImplemented
        return self.label == other.label and self.origin == other.origin and self.series == other.series


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings for the synthetic good/bad classes.

    Good samples carry harmonics of the tooth-pass frequency
    ``base_freq * n_inserts`` on top of a white noise floor. Bad samples add
    band-limited noise inside ``chatter_band = (low_hz, high_hz, amplitude)``.
    """

    base_freq: float = 50.0
    n_inserts: int = 2
    harmonic_amps: tuple[float, ...] = (1.0, 0.5, 0.3, 0.15)
    chatter_band: tuple[float, float, float] = (1400.0, 2200.0, 0.3)
    noise_floor: float = 0.1
    seed: int = 0
    sample_rate: int = SAMPLE_RATE
    axis_gains: tuple[float, float, float] = (1.0, 0.7, 0.45)
    amp_jitter: float = 0.2

    def validate(self) -> list[str]:
        errors = []
        nyquist = self.sample_rate / 2
        if self.sample_rate <= 0:
            errors.append("sample_rate: must be positive")
        if not 0 < self.base_freq < nyquist:
            errors.append(f"base_freq: must lie in (0, {nyquist})")
        if self.n_inserts < 1:
            errors.append("n_inserts: must be >= 1")
        if any(a < 0 for a in self.harmonic_amps):
            errors.append("harmonic_amps: amplitudes must be >= 0")
        top = self.base_freq * self.n_inserts * len(self.harmonic_amps)
        if self.harmonic_amps and top >= nyquist:
            errors.append(f"harmonic_amps: highest harmonic {top} Hz is not below Nyquist {nyquist} Hz")
        low, high, amp = self.chatter_band
        if not 0 <= low < high < nyquist:
            errors.append(f"chatter_band: need 0 <= low < high < {nyquist}")
        if amp < 0:
            errors.append("chatter_band: amplitude must be >= 0")
        if self.noise_floor < 0:
            errors.append("noise_floor: must be >= 0")
        if any(g < 0 for g in self.axis_gains) or len(self.axis_gains) != 3:
            errors.append("axis_gains: need three non-negative gains")
        if not 0 <= self.amp_jitter < 1:
            errors.append("amp_jitter: must lie in [0, 1)")
        return errors


class InvalidConfigError(ValueError):
    pass


def _check(cfg: SynthConfig) -> None:
    errors = cfg.validate()
    if errors:
        raise InvalidConfigError("; ".join(errors))


def _stream(cfg: SynthConfig, label: Label, index: int, salt: int = 0) -> np.random.Generator:
    if index < 0:
        raise ValueError("index must be >= 0")
    return np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, label.index, index, salt])


def band_noise(rng: np.random.Generator, n: int, sample_rate: float, low: float, high: float) -> np.ndarray:
    """Unit-RMS white noise restricted to ``[low, high]`` Hz."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(freqs < low) | (freqs > high)] = 0.0
    out = np.fft.irfft(spec, n)
    rms = np.sqrt(np.mean(out**2))
    return out / rms if rms > 0 else out


def _synth_axes(label: Label, cfg: SynthConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    t = np.arange(n) / cfg.sample_rate
    tooth = cfg.base_freq * cfg.n_inserts
    out = np.zeros((3, n))
    for axis, gain in enumerate(cfg.axis_gains):
        for k, amp in enumerate(cfg.harmonic_amps, start=1):
            jitter = 1.0 + cfg.amp_jitter * rng.uniform(-1, 1)
            phase = rng.uniform(0, 2 * np.pi)
            out[axis] += gain * amp * jitter * np.sin(2 * np.pi * tooth * k * t + phase)
        if cfg.noise_floor > 0:
            out[axis] += cfg.noise_floor * rng.standard_normal(n)
        if label is Label.BAD:
            low, high, amp = cfg.chatter_band
            level = amp * (1.0 + cfg.amp_jitter * rng.uniform(-1, 1))
            out[axis] += gain * level * band_noise(rng, n, cfg.sample_rate, low, high)
    return out


def synth_sample(label: Label | str, cfg: SynthConfig, index: int) -> TimeSeriesSample:
    """Deterministic 1 s sample keyed by ``(label, cfg.seed, index)``."""
    label = Label(label)
    _check(cfg)
    rng = _stream(cfg, label, index)
    n = cfg.sample_rate * WINDOW_SECONDS
    series = TimeSeries(_synth_axes(label, cfg, rng, n), cfg.sample_rate)
    return TimeSeriesSample(series, label, Origin(f"synth-{label.value}-{index}", 0, 0))


def synth_dataset(n_good: int, n_bad: int, cfg: SynthConfig) -> list[TimeSeriesSample]:
    return [synth_sample(Label.GOOD, cfg, i) for i in range(n_good)] + [
        synth_sample(Label.BAD, cfg, i) for i in range(n_bad)
    ]


def synth_recording(
    label: Label | str,
    cfg: SynthConfig,
    bursts: Sequence[float],
    gap: float = 1.0,
    index: int = 0,
    gap_noise: float = 0.0,
) -> TimeSeries:
    """Continuous recording of machining bursts (seconds) separated by idle gaps."""
    label = Label(label)
    _check(cfg)
    rng = _stream(cfg, label, index, salt=1)
    fs = cfg.sample_rate
    pieces = []
    for i, seconds in enumerate(bursts):
        if i:
            pieces.append(gap_noise * rng.standard_normal((3, int(round(gap * fs)))))
        pieces.append(_synth_axes(label, cfg, rng, int(round(seconds * fs))))
    data = np.concatenate(pieces, axis=1) if pieces else np.zeros((3, 0))
    return TimeSeries(data, fs)


def sliding_rms(data: np.ndarray, rms_window: int) -> np.ndarray:
    """Centred moving RMS over all three axes, averaging only in-range samples at the edges."""
    power = np.mean(np.asarray(data, dtype=np.float64) ** 2, axis=0)
    n = power.shape[0]
    if n == 0:
        return power
    csum = np.concatenate([[0.0], np.cumsum(power)])
    idx = np.arange(n)
    lo = np.clip(idx - rms_window // 2, 0, n)
    hi = np.clip(idx - rms_window // 2 + rms_window, 0, n)
    mean = (csum[hi] - csum[lo]) / (hi - lo)
    return np.sqrt(np.maximum(mean, 0.0))


def active_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open ``(start, stop)`` bounds of every maximal run of True."""
    padded = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def segment_movements(raw: TimeSeries, rms_window: int, threshold: float) -> list[TimeSeries]:
    """Split a recording into the contiguous stretches where the moving RMS reaches ``threshold``."""
    if rms_window < 1:
        raise ValueError("rms_window must be >= 1")
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    if len(raw) == 0:
        return []
    rms = sliding_rms(raw.data, rms_window)
    return [TimeSeries(raw.data[:, a:b].copy(), raw.sample_rate) for a, b in active_runs(rms >= threshold)]


def window_segment(
    segment: TimeSeries, label: Label | str, source: str = "segment", segment_index: int = 0
) -> list[TimeSeriesSample]:
    """Cut a segment into consecutive, start-aligned 1 s windows; the remainder is dropped."""
    label = Label(label)
    step = segment.sample_rate * WINDOW_SECONDS
    out = []
    for w in range(len(segment) // step):
        chunk = TimeSeries(segment.data[:, w * step : (w + 1) * step].copy(), segment.sample_rate)
        out.append(TimeSeriesSample(chunk, label, Origin(source, segment_index, w)))
    return out


@dataclass
class DatasetSplit:
    train: list[TimeSeriesSample]
    test: list[TimeSeriesSample]
    seed: int

    def counts(self) -> dict[str, int]:
        c = {"train": len(self.train), "test": len(self.test)}
        for name, part in (("train", self.train), ("test", self.test)):
            for lab in Label:
                c[f"{name}_{lab.value}"] = sum(s.label is lab for s in part)
        return c


def n_train_for(n: int, ratio: float) -> int:
    # ceil, so 0.783 of 1113 gives 872; the epsilon absorbs float noise like 0.7 * 10
    return min(n, max(0, math.ceil(ratio * n - 1e-9)))


def split_indices(labels: Sequence[int], train_ratio: float, seed: int, stratified: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Index-level train/test split; see :func:`split_dataset`."""
    if not 0 < train_ratio < 1:
        raise ValueError("train_ratio must lie in (0, 1)")
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n == 0:
        raise ValueError("cannot split an empty collection")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = n_train_for(n, train_ratio)
    if not stratified:
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])

    classes = sorted(set(labels.tolist()))
    groups = {c: perm[labels[perm] == c] for c in classes}
    exact = {c: train_ratio * len(groups[c]) for c in classes}
    quota = {c: math.floor(exact[c]) for c in classes}
    # largest remainder so the class quotas add up to the global train count
    order = sorted(classes, key=lambda c: (-(exact[c] - quota[c]), c))
    for c in order[: n_train - sum(quota.values())]:
        quota[c] += 1
    train = np.concatenate([groups[c][: quota[c]] for c in classes])
    test = np.concatenate([groups[c][quota[c] :] for c in classes])
    return np.sort(train), np.sort(test)


def split_dataset(
    samples: Sequence[TimeSeriesSample], train_ratio: float, seed: int, stratified: bool = False
) -> DatasetSplit:
    """Seeded random split into disjoint train and test sets.

    The train count is ``ceil(train_ratio * n)``. With ``stratified`` each class
    is split separately and quotas are balanced by largest remainder, so every
    class share stays within one sample of the requested ratio.
    """
    samples = list(samples)
    keys = [s.origin.key() for s in samples]
    if len(set(keys)) != len(keys):
        raise ValueError("sample origins must be unique")
    train_idx, test_idx = split_indices([s.label.index for s in samples], train_ratio, seed, stratified)
    return DatasetSplit([samples[i] for i in train_idx], [samples[i] for i in test_idx], seed)


# --- on-disk formats -------------------------------------------------------

AXES = ("x", "y", "z")


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta")


def write_raw(path: str | Path, series: TimeSeries) -> None:
    """Interleaved little-endian float32 triplets plus a ``.meta`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(series.data.T, dtype="<f4").tobytes())
    _meta_path(path).write_text(f"sample_rate={series.sample_rate}\naxes={','.join(AXES)}\n")


def read_meta(path: str | Path) -> dict[str, str]:
    meta = {}
    for line in _meta_path(Path(path)).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def read_raw(path: str | Path) -> TimeSeries:
    path = Path(path)
    meta = read_meta(path)
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size % 3:
        raise ValueError(f"{path}: size is not a multiple of three float32 values")
    data = raw.reshape(-1, 3).T.astype(np.float64)
    order = meta.get("axes", "x,y,z").split(",")
    if sorted(order) != sorted(AXES):
        raise ValueError(f"{path}: bad axes record {order!r}")
    data = data[[order.index(a) for a in AXES]]
    return TimeSeries(data, int(float(meta.get("sample_rate", SAMPLE_RATE))))


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: Label
    origin: Origin = field(default_factory=lambda: Origin("unknown"))

    def to_line(self) -> str:
        return "\t".join([self.path, self.label.value, self.origin.source, str(self.origin.segment), str(self.origin.window)])

    @classmethod
    def from_line(cls, line: str) -> "ManifestEntry":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 5:
            raise ValueError(f"malformed manifest line: {line!r}")
        path, label, source, seg, win = parts
        return cls(path, Label(label), Origin(source, int(seg), int(win)))


def write_manifest(path: str | Path, entries: Iterable[ManifestEntry]) -> None:
    lines = ["# path\tlabel\tsource\tsegment\twindow"] + [e.to_line() for e in entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            out.append(ManifestEntry.from_line(line))
    return out


def save_samples(directory: str | Path, samples: Sequence[TimeSeriesSample], manifest_name: str = "manifest.txt") -> Path:
    """Write every sample as a raw file and list them in a manifest; returns the manifest path."""
    directory = Path(directory)
    entries = []
    for s in samples:
        o = s.origin
        rel = f"samples/{o.source}_s{o.segment}_w{o.window}.f32"
        write_raw(directory / rel, s.series)
        entries.append(ManifestEntry(rel, s.label, o))
    manifest = directory / manifest_name
    write_manifest(manifest, entries)
    return manifest


def load_samples(manifest: str | Path) -> list[TimeSeriesSample]:
    manifest = Path(manifest)
    out = []
    for e in read_manifest(manifest):
        series = read_raw(manifest.parent / e.path)
        out.append(TimeSeriesSample(series, e.label, e.origin))
    return out

