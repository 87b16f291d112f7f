"""Per-stage latency breakdown and shunt-resistor energy accounting.

Host timings describe this machine only; they are never meant to be compared
with microcontroller milliseconds.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import dsp
from .nn.int8 import MissingQuantError, forward_i8
from .nn.model import ModelArtifact, activation_bytes, param_budget
from .nn.train import prep_from_metadata
from .quant import quantize

STAGES = (
    "normalize",
    "spectrogram",
    "avg_pool",
    "log_scale",
    "transpose",
    "int8_quantize",
    "cnn_inference",
)
STAGE_TITLES = {
    "normalize": "min/max scaling",
    "spectrogram": "STFT magnitudes, all axes",
    "avg_pool": "average pooling",
    "log_scale": "log10",
    "transpose": "channels-last layout",
    "int8_quantize": "input int8 quantization",
    "cnn_inference": "integer CNN forward pass",
}


@dataclass
class StageTimings:
    stages: dict[str, int]
    reps: int
    statistic: str = "median"
    end_to_end: int = 0

    @property
    def total(self) -> int:
        return sum(self.stages.values())


def _run_stages(data, model: ModelArtifact, prep: dsp.PrepConfig, win: dsp.WindowFn):
    """One pass through the pipeline; returns per-stage nanoseconds and the predicted class."""
    clock = time.perf_counter_ns
    ns = {}
    t0 = clock()
    x = dsp.minmax_scale(data, prep.per_axis)
    t1 = clock()
    spec = dsp.spectrogram(x, win)
    t2 = clock()
    pooled = dsp.avg_pool(spec, prep.pool)
    t3 = clock()
    logged = dsp.log_scale(pooled, prep.eps)
    t4 = clock()
    nhwc = np.ascontiguousarray(dsp.to_cnn_layout(logged))
    t5 = clock()
    qx = quantize(nhwc, model.quant.input)
    t6 = clock()
    label = forward_i8(model, qx).label
    t7 = clock()
    marks = (t0, t1, t2, t3, t4, t5, t6, t7)
    for name, a, b in zip(STAGES, marks, marks[1:]):
        ns[name] = b - a
    return ns, t7 - t0, int(label)


def time_stages(sample, model: ModelArtifact, reps: int = 20, statistic: str = "median") -> StageTimings:
    """Time every pipeline stage ``reps`` times on the same sample, sequentially."""
    if reps < 3:
        raise ValueError("reps must be >= 3")
    if model.quant is None:
        raise MissingQuantError("benchmarking needs a quantized model")
    if statistic not in ("median", "mean"):
        raise ValueError("statistic must be 'median' or 'mean'")
    data = sample.data if hasattr(sample, "data") else np.asarray(sample, dtype=np.float64)
    prep = prep_from_metadata(model)
    win = prep.window()
    agg = statistics.median if statistic == "median" else statistics.mean
    runs = [_run_stages(data, model, prep, win) for _ in range(reps)]
    stages = {name: int(agg([r[0][name] for r in runs])) for name in STAGES}
    return StageTimings(stages, reps, statistic, int(agg([r[1] for r in runs])))


# --- energy ----------------------------------------------------------------


@dataclass(eq=False)
class PowerTrace:
    v1: np.ndarray
    v2: np.ndarray
    sample_rate: float = 10_000.0
    r_shunt: float = 10.0

    def __post_init__(self):
        self.v1 = np.asarray(self.v1, dtype=np.float64)
        self.v2 = np.asarray(self.v2, dtype=np.float64)
        if self.v1.shape != self.v2.shape or self.v1.ndim != 1:
            raise ValueError("v1 and v2 must be 1-d series of equal length")
        if self.v1.size == 0:
            raise ValueError("empty trace")
        if not self.r_shunt > 0:
            raise ValueError("r_shunt must be > 0")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be > 0")

    @property
    def duration(self) -> float:
        return self.v1.size / self.sample_rate


@dataclass(frozen=True)
class EnergyReport:
    vdd_avg: float
    idd_avg: float
    p_avg: float
    epi: float
    t_infer: float


def energy_from_trace(trace: PowerTrace, t_infer: float) -> EnergyReport:
    """Supply voltage is the low-side probe, current the shunt drop over ``r_shunt``.

    ``p_avg = mean(V_DD) * mean(I_DD)`` and ``epi = p_avg * t_infer`` (seconds, joules).
    """
    if not t_infer > 0:
        raise ValueError("t_infer must be > 0")
    vdd = float(np.mean(trace.v2))
    idd = float(np.mean((trace.v1 - trace.v2) / trace.r_shunt))
    p_avg = vdd * idd
    return EnergyReport(vdd, idd, p_avg, p_avg * t_infer, float(t_infer))


def write_trace(path: str | Path, trace: PowerTrace) -> None:
    """Two-column CSV preceded by a ``# sample_rate=..., r_shunt=...`` line."""
    out = io.StringIO()
    out.write(f"# sample_rate={trace.sample_rate!r},r_shunt={trace.r_shunt!r}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["v1", "v2"])
    w.writerows(zip(map(repr, trace.v1.tolist()), map(repr, trace.v2.tolist())))
    Path(path).write_text(out.getvalue())


def read_trace(path: str | Path) -> PowerTrace:
    lines = Path(path).read_text().splitlines()
    meta = {}
    if lines and lines[0].startswith("#"):
        for item in lines[0].lstrip("#").split(","):
            key, _, value = item.partition("=")
            meta[key.strip()] = float(value)
        lines = lines[1:]
    rows = list(csv.reader(lines))
    if rows and rows[0] == ["v1", "v2"]:
        rows = rows[1:]
    arr = np.array(rows, dtype=np.float64).reshape(-1, 2)
    return PowerTrace(arr[:, 0], arr[:, 1], meta.get("sample_rate", 10_000.0), meta.get("r_shunt", 10.0))


# --- report ----------------------------------------------------------------


@dataclass
class Report:
    timings: dict[str, int] = field(default_factory=dict)
    memory: dict[str, int] = field(default_factory=dict)
    energy: Optional[EnergyReport] = None
    info: dict[str, str] = field(default_factory=dict)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["section", "key", "value"])
        for k, v in self.timings.items():
            w.writerow(["runtime_ns", k, v])
        for k, v in self.memory.items():
            w.writerow(["memory_bytes", k, v])
        if self.energy is not None:
            for k in ("vdd_avg", "idd_avg", "p_avg", "epi", "t_infer"):
                w.writerow(["energy", k, repr(getattr(self.energy, k))])
        for k, v in self.info.items():
            w.writerow(["info", k, v])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Report":
        rep = cls()
        energy = {}
        rows = list(csv.reader(io.StringIO(text)))
        for section, key, value in rows[1:]:
            if section == "runtime_ns":
                rep.timings[key] = int(value)
            elif section == "memory_bytes":
                rep.memory[key] = int(value)
            elif section == "energy":
                energy[key] = float(value)
            elif section == "info":
                rep.info[key] = value
            else:
                raise ValueError(f"unknown report section {section!r}")
        if energy:
            rep.energy = EnergyReport(**energy)
        return rep

    def to_text(self) -> str:
        lines = []
        if self.timings:
            lines.append("Preprocessing and inference runtime (host, median)")
            width = max(len(t) for t in STAGE_TITLES.values())
            for k, v in self.timings.items():
                lines.append(f"  {STAGE_TITLES.get(k, k):<{width}}  {v / 1e6:10.3f} ms")
        if self.memory:
            lines.append("Memory")
            for k, v in self.memory.items():
                lines.append(f"  {k:<24} {v:8d} B  ({v / 1024:.2f} kiB)")
        if self.energy is not None:
            e = self.energy
            lines.append("Energy")
            lines.append(f"  V_DD,avg   {e.vdd_avg:.4f} V")
            lines.append(f"  I_DD,avg   {e.idd_avg * 1e3:.4f} mA")
            lines.append(f"  P_avg      {e.p_avg * 1e3:.4f} mW")
            lines.append(f"  t_infer    {e.t_infer * 1e3:.4f} ms")
            lines.append(f"  EPI        {e.epi * 1e3:.4f} mJ")
        if self.info:
            lines.append("Info")
            lines.extend(f"  {k}: {v}" for k, v in self.info.items())
        return "\n".join(lines) + "\n"


def report(timings: Optional[StageTimings], energy: Optional[EnergyReport], model: Optional[ModelArtifact], info=None) -> Report:
    rep = Report(info=dict(info or {}))
    if timings is not None:
        rep.timings = {name: timings.stages[name] for name in STAGES}
    if model is not None:
        rep.memory = {
            "param_bytes": param_budget(model),
            "activation_bytes": activation_bytes(model.layers, model.input_shape),
        }
    rep.energy = energy
    return rep
