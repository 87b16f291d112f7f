"""Run configuration: one INI-style text file, overridable from the command line."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from typing import Any, Callable

from .dsp import PrepConfig
from .nn.train import TrainConfig
from .signals import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    n_good: int = 698
    n_bad: int = 415
    synth: SynthConfig = field(default_factory=SynthConfig)
    split_ratio: float = 0.783
    stratified: bool = True
    prep: PrepConfig = field(default_factory=PrepConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    calib_samples: int = 128
    bench_reps: int = 20
    trace: str = ""
    out_dir: str = "run"
    dataset_dir: str = ""

    def resolved(self) -> "RunConfig":
        """Copy with the run seed pushed into the synthesizer and trainer."""
        return dataclasses.replace(
            self,
            synth=dataclasses.replace(self.synth, seed=self.seed),
            train=dataclasses.replace(self.train, seed=self.seed),
        )


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class _Field:
    section: str
    key: str
    parse: Callable[[str], Any]
    get: Callable[[RunConfig], Any]
    set: Callable[[RunConfig, Any], RunConfig]

    @property
    def path(self) -> str:
        return f"{self.section}.{self.key}"


def _top(section, key, parse, attr):
    return _Field(section, key, parse, lambda c: getattr(c, attr), lambda c, v: dataclasses.replace(c, **{attr: v}))


def _nested(section, key, parse, group, attr=None):
    attr = attr or key
    return _Field(
        section,
        key,
        parse,
        lambda c: getattr(getattr(c, group), attr),
        lambda c, v: dataclasses.replace(c, **{group: dataclasses.replace(getattr(c, group), **{attr: v})}),
    )


def _chatter(index):
    def get(c):
        return c.synth.chatter_band[index]

    def set_(c, v):
        band = list(c.synth.chatter_band)
        band[index] = v
        return dataclasses.replace(c, synth=dataclasses.replace(c.synth, chatter_band=tuple(band)))

    return get, set_


FIELDS = [
    _top("run", "seed", int, "seed"),
    _top("synth", "n_good", int, "n_good"),
    _top("synth", "n_bad", int, "n_bad"),
    _nested("synth", "base_freq", float, "synth"),
    _nested("synth", "n_inserts", int, "synth"),
    _nested("synth", "harmonic_amps", _floats, "synth"),
    _Field("synth", "chatter_low", float, *_chatter(0)),
    _Field("synth", "chatter_high", float, *_chatter(1)),
    _Field("synth", "chatter_amp", float, *_chatter(2)),
    _nested("synth", "noise_floor", float, "synth"),
    _nested("synth", "axis_gains", _floats, "synth"),
    _nested("synth", "amp_jitter", float, "synth"),
    _top("split", "ratio", float, "split_ratio"),
    _top("split", "stratified", _bool, "stratified"),
    _nested("prep", "alpha", float, "prep"),
    _nested("prep", "eps", float, "prep"),
    _nested("prep", "pool", _ints, "prep"),
    _nested("prep", "per_axis", _bool, "prep"),
    *[
        _nested("train", f.name, float if f.type in ("float", float) else int, "train")
        for f in dataclasses.fields(TrainConfig)
        if f.name != "seed"
    ],
    _top("quant", "calib_samples", int, "calib_samples"),
    _top("bench", "reps", int, "bench_reps"),
    _top("bench", "trace", str, "trace"),
    _top("paths", "out_dir", str, "out_dir"),
    _top("paths", "dataset_dir", str, "dataset_dir"),
]
_BY_PATH = {f.path: f for f in FIELDS}


def set_value(cfg: RunConfig, path: str, text: str) -> RunConfig:
    """Apply a ``section.key=value`` style override."""
    f = _BY_PATH.get(path)
    if f is None:
        raise ConfigError(f"unknown config field {path!r}")
    try:
        return f.set(cfg, f.parse(text.strip()))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    cfg = base or RunConfig()
    for section in parser.sections():
        for key, value in parser.items(section):
            cfg = set_value(cfg, f"{section}.{key}", value)
    return cfg


def emit_config(cfg: RunConfig) -> str:
    lines, section = [], None
    for f in FIELDS:
        if f.section != section:
            if section is not None:
                lines.append("")
            lines.append(f"[{f.section}]")
            section = f.section
        lines.append(f"{f.key} = {_fmt(f.get(cfg))}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    """Hash of everything that affects results; output locations are excluded."""
    neutral = dataclasses.replace(cfg, out_dir="", dataset_dir="", trace="")
    return hashlib.sha256(emit_config(neutral).encode("utf-8")).hexdigest()[:16]


def validate_config(cfg: RunConfig | str) -> list[str]:
    """Every invariant breach as ``section.key: reason``; an empty list means ok."""
    if isinstance(cfg, str):
        cfg = parse_config(cfg)
    errors = []
    if cfg.seed < 0:
        errors.append("run.seed: must be >= 0")
    if cfg.n_good < 0:
        errors.append("synth.n_good: must be >= 0")
    if cfg.n_bad < 0:
        errors.append("synth.n_bad: must be >= 0")
    if cfg.n_good + cfg.n_bad < 2:
        errors.append("synth.n_good: need at least two samples in total")
    for msg in cfg.synth.validate():
        key = msg.split(":", 1)[0]
        if key == "chatter_band":
            msg = msg.replace("chatter_band", "chatter_low/chatter_high/chatter_amp", 1)
        errors.append(f"synth.{msg}")
    if not 0 < cfg.split_ratio < 1:
        errors.append("split.ratio: must lie in (0, 1)")
    if not 0 <= cfg.prep.alpha <= 1:
        errors.append("prep.alpha: must lie in [0, 1]")
    if not cfg.prep.eps > 0:
        errors.append("prep.eps: must be > 0")
    if len(cfg.prep.pool) != 2 or min(cfg.prep.pool, default=0) < 1:
        errors.append("prep.pool: need two pool sizes >= 1")
    errors.extend(f"train.{msg}" for msg in cfg.train.validate())
    if cfg.calib_samples < 1:
        errors.append("quant.calib_samples: must be >= 1")
    if cfg.bench_reps < 3:
        errors.append("bench.reps: must be >= 3")
    if not cfg.out_dir:
        errors.append("paths.out_dir: must not be empty")
    return errors
