"""End-to-end run: synth -> split -> preprocess -> train -> quantize -> evaluate -> bench."""

from __future__ import annotations

import hashlib
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bench, dsp, signals
from .config import RunConfig, config_hash, emit_config, validate_config
from .nn import default_architecture, quantize_model, save_model, train
from .nn.int8 import predict_i8
from .nn.model import predict_f32, to_bytes

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


@contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


@dataclass
class PipelineResult:
    out_dir: Path
    counts: dict[str, int] = field(default_factory=dict)
    float_accuracy: float = 0.0
    int8_accuracy: float = 0.0
    parity: float = 0.0
    model_sha256: str = ""
    config_hash: str = ""
    artifacts: dict[str, Path] = field(default_factory=dict)


def run_pipeline(cfg: RunConfig) -> PipelineResult:
    """Execute every stage and write the model container, history and report into ``cfg.out_dir``.

    The model container depends only on the configuration (output paths excluded),
    so identical configurations give byte-identical files.
    """
    with stage("validate"):
        errors = validate_config(cfg)
        if errors:
            raise ValueError("; ".join(errors))
    cfg = cfg.resolved()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    result = PipelineResult(out, config_hash=chash)

    with stage("synth"):
        samples = signals.synth_dataset(cfg.n_good, cfg.n_bad, cfg.synth)
        if cfg.dataset_dir:
            signals.save_samples(cfg.dataset_dir, samples)

    with stage("split"):
        split = signals.split_dataset(samples, cfg.split_ratio, cfg.seed, cfg.stratified)
        result.counts = split.counts()

    with stage("preprocess"):
        f_train = dsp.preprocess_many(split.train, cfg.prep)
        f_test = dsp.preprocess_many(split.test, cfg.prep)
        y_test = np.array([s.label.index for s in split.test])

    with stage("train"):
        input_shape = f_train.shape[2:] + f_train.shape[1:2]
        model, history = train(default_architecture(input_shape), split, cfg.train, cfg.prep, features=f_train)
        model.metadata["config_hash"] = chash

    with stage("quantize"):
        rng = np.random.default_rng(cfg.seed)
        pick = np.sort(rng.choice(len(f_train), size=min(cfg.calib_samples, len(f_train)), replace=False))
        qmodel = quantize_model(model, f_train[pick])

    with stage("evaluate"):
        pred_f = predict_f32(qmodel, f_test)
        pred_q = predict_i8(qmodel, f_test)
        if len(y_test):
            result.float_accuracy = float(np.mean(pred_f == y_test))
            result.int8_accuracy = float(np.mean(pred_q == y_test))
            result.parity = float(np.mean(pred_f == pred_q))

    with stage("write"):
        blob = to_bytes(qmodel)
        result.model_sha256 = hashlib.sha256(blob).hexdigest()
        paths = {
            "model": out / "model.bin",
            "history": out / "history.csv",
            "config": out / "config.ini",
            "report_csv": out / "report.csv",
            "report_txt": out / "report.txt",
            "summary": out / "summary.json",
        }
        save_model(paths["model"], qmodel)
        paths["history"].write_text(history.to_csv())
        paths["config"].write_text(emit_config(cfg))
        result.artifacts = paths

    with stage("bench"):
        sample = split.test[0] if split.test else split.train[0]
        timings = bench.time_stages(sample, qmodel, cfg.bench_reps)
        energy = None
        if cfg.trace:
            energy = bench.energy_from_trace(bench.read_trace(cfg.trace), timings.end_to_end * 1e-9)
        info = {
            "config_hash": chash,
            "model_sha256": result.model_sha256,
            **{f"count_{k}": str(v) for k, v in result.counts.items()},
            "float_accuracy": repr(result.float_accuracy),
            "int8_accuracy": repr(result.int8_accuracy),
            "stop_epoch": str(history.stop_epoch),
            "stop_reason": history.stop_reason,
            "end_to_end_ns": str(timings.end_to_end),
        }
        rep = bench.report(timings, energy, qmodel, info)
        paths["report_csv"].write_text(rep.to_csv())
        paths["report_txt"].write_text(rep.to_text())
        summary = {
            "config_hash": chash,
            "counts": result.counts,
            "float_accuracy": result.float_accuracy,
            "int8_accuracy": result.int8_accuracy,
            "parity": result.parity,
            "param_bytes": qmodel.metadata["param_bytes"],
            "model_sha256": result.model_sha256,
        }
        paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return result
