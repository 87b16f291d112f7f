"""Command-line entry point: ``tinyvib <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, dsp, signals
from .config import ConfigError, RunConfig, config_hash, emit_config, parse_config, set_value, validate_config

log = logging.getLogger("tinyvib")


class CommandError(RuntimeError):
    pass


def _load_config(path: str | None, overrides=()) -> RunConfig:
    cfg = parse_config(Path(path).read_text()) if path else RunConfig()
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        cfg = set_value(cfg, key.strip(), value)
    return cfg


def _rewrite(entries, src_dir: Path, dst_dir: Path):
    out = []
    for e in entries:
        rel = os.path.relpath((src_dir / e.path).resolve(), dst_dir.resolve())
        out.append(signals.ManifestEntry(rel, e.label, e.origin))
    return out


# --- subcommands -----------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_config(args.config).resolved() if args.config else RunConfig()
    synth = cfg.synth if args.seed is None else signals.SynthConfig(**{**cfg.synth.__dict__, "seed": args.seed})
    out = Path(args.out)
    if args.recording:
        bursts = [float(b) for b in args.recording.split(",")]
        rec = signals.synth_recording(args.label, synth, bursts, gap=args.gap, index=args.index)
        signals.write_raw(out, rec)
        print(f"wrote {out} ({rec.duration:.2f} s, {len(bursts)} bursts)")
        return 0
    n_good = cfg.n_good if args.n_good is None else args.n_good
    n_bad = cfg.n_bad if args.n_bad is None else args.n_bad
    samples = signals.synth_dataset(n_good, n_bad, synth)
    manifest = signals.save_samples(out, samples)
    print(f"wrote {len(samples)} samples ({n_good} good, {n_bad} bad) to {manifest}")
    return 0


def cmd_segment(args) -> int:
    raw = signals.read_raw(args.input)
    segments = signals.segment_movements(raw, args.rms_window, args.threshold)
    source = Path(args.input).stem
    samples = []
    for i, seg in enumerate(segments):
        windows = signals.window_segment(seg, args.label, source=source, segment_index=i)
        print(f"segment {i}: {seg.duration:.3f} s -> {len(windows)} windows")
        samples.extend(windows)
    if args.out:
        manifest = signals.save_samples(args.out, samples, args.manifest_name)
        print(f"wrote {len(samples)} samples to {manifest}")
    return 0


def cmd_split(args) -> int:
    manifest = Path(args.manifest)
    entries = signals.read_manifest(manifest)
    keys = [e.origin.key() for e in entries]
    if len(set(keys)) != len(keys):
        raise CommandError("manifest origins are not unique")
    train_idx, test_idx = signals.split_indices([e.label.index for e in entries], args.ratio, args.seed, args.stratified)
    out = Path(args.out) if args.out else manifest.parent
    out.mkdir(parents=True, exist_ok=True)
    entries = _rewrite(entries, manifest.parent, out)
    signals.write_manifest(out / "train.txt", [entries[i] for i in train_idx])
    signals.write_manifest(out / "test.txt", [entries[i] for i in test_idx])
    print(f"train {len(train_idx)} / test {len(test_idx)}")
    return 0


def cmd_prep(args) -> int:
    samples = signals.load_samples(args.manifest)
    prep = dsp.PrepConfig(alpha=args.alpha, eps=args.eps, per_axis=args.per_axis)
    features = dsp.preprocess_many(samples, prep)
    dsp.write_features(args.out, features, alpha=prep.alpha, eps=prep.eps)
    print(f"wrote features {features.shape} to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .nn import default_architecture, save_model, train

    cfg = _load_config(args.config, args.set).resolved()
    samples = signals.load_samples(args.train_manifest)
    split = signals.DatasetSplit(samples, [], cfg.seed)
    features = dsp.preprocess_many(samples, cfg.prep)
    arch = default_architecture(features.shape[2:] + features.shape[1:2])
    model, history = train(arch, split, cfg.train, cfg.prep, features=features)
    model.metadata["config_hash"] = config_hash(cfg)
    save_model(args.model, model)
    if args.history:
        Path(args.history).write_text(history.to_csv())
    print(f"trained {history.stop_epoch} epochs ({history.stop_reason}), best val_acc {max(history.val_acc):.4f}")
    return 0


def cmd_quantize(args) -> int:
    from .nn import load_model, quantize_model, save_model, select_calibration

    model = load_model(args.model)
    pool = signals.load_samples(args.calib_manifest)
    qmodel = quantize_model(model, select_calibration(pool, args.n, args.seed))
    save_model(args.out, qmodel)
    print(f"quantized model: {qmodel.metadata['param_bytes']} parameter bytes -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .nn import evaluate, load_model

    model = load_model(args.model)
    samples = signals.load_samples(args.manifest)
    acc = evaluate(model, samples, int8=args.int8)
    print(f"{'int8' if args.int8 else 'float'} accuracy {acc:.4f} on {len(samples)} samples")
    return 0


def cmd_bench(args) -> int:
    from .nn import load_model

    model = load_model(args.model)
    raw = signals.read_raw(args.sample)
    if len(raw) < raw.sample_rate:
        raise CommandError("benchmark sample must hold at least one second")
    timings = bench.time_stages(raw.data[:, : raw.sample_rate], model, args.reps)
    energy = None
    if args.trace:
        t_infer = args.t_infer if args.t_infer else timings.end_to_end * 1e-9
        energy = bench.energy_from_trace(bench.read_trace(args.trace), t_infer)
    rep = bench.report(timings, energy, model, {"reps": str(args.reps), "end_to_end_ns": str(timings.end_to_end)})
    print(rep.to_text(), end="")
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())
    return 0


def cmd_energy(args) -> int:
    trace = bench.read_trace(args.trace)
    if args.r_shunt is not None:
        trace.r_shunt = args.r_shunt
    rep = bench.report(None, bench.energy_from_trace(trace, args.t_infer), None)
    print(rep.to_text(), end="")
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())
    return 0


def cmd_run(args) -> int:
    from .pipeline import run_pipeline

    cfg = _load_config(args.config, args.set)
    if args.out_dir:
        cfg = set_value(cfg, "paths.out_dir", args.out_dir)
    res = run_pipeline(cfg)
    c = res.counts
    print(f"split: train {c['train']} / test {c['test']}")
    print(f"float accuracy {res.float_accuracy:.4f}, int8 accuracy {res.int8_accuracy:.4f}, parity {res.parity:.4f}")
    print(f"model sha256 {res.model_sha256}")
    print(f"artifacts in {res.out_dir}")
    return 0


def cmd_validate(args) -> int:
    text = Path(args.config).read_text() if args.config else emit_config(RunConfig())
    violations = validate_config(text)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        return 1
    print("ok")
    return 0


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tinyvib", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a labeled synthetic dataset or a continuous recording")
    s.add_argument("--n-good", type=int)
    s.add_argument("--n-bad", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="dataset directory, or raw file with --recording")
    s.add_argument("--recording", help="comma-separated burst lengths in seconds")
    s.add_argument("--gap", type=float, default=1.0)
    s.add_argument("--label", default="good", choices=[l.value for l in signals.Label])
    s.add_argument("--index", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("segment", help="cut a raw recording into movement segments and 1 s windows")
    s.add_argument("--input", required=True)
    s.add_argument("--rms-window", type=int, default=400)
    s.add_argument("--threshold", type=float, required=True)
    s.add_argument("--label", default="good", choices=[l.value for l in signals.Label])
    s.add_argument("--out")
    s.add_argument("--manifest-name", default="manifest.txt")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("split", help="seeded train/test split of a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ratio", type=float, default=0.783)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stratified", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("prep", help="compute float feature maps for a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alpha", type=float, default=dsp.TUKEY_ALPHA)
    s.add_argument("--eps", type=float, default=dsp.EPS)
    s.add_argument("--per-axis", action="store_true")
    s.set_defaults(func=cmd_prep)

    s = sub.add_parser("train", help="train the float CNN")
    s.add_argument("--train-manifest", required=True)
    s.add_argument("--config")
    s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    s.add_argument("--model", required=True)
    s.add_argument("--history")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("quantize", help="post-training INT8 quantization")
    s.add_argument("--model", required=True)
    s.add_argument("--calib-manifest", required=True)
    s.add_argument("-n", type=int, default=128)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("eval", help="accuracy on a manifest")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--int8", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="per-stage host runtime breakdown")
    s.add_argument("--sample", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--reps", type=int, default=20)
    s.add_argument("--trace")
    s.add_argument("--t-infer", type=float, help="seconds; defaults to the measured end-to-end time")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("energy", help="average power and energy per inference from a shunt trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--t-infer", type=float, required=True, help="seconds per inference")
    s.add_argument("--r-shunt", type=float)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_energy)

    s = sub.add_parser("run", help="full pipeline")
    s.add_argument("--config")
    s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("validate", help="check a run configuration")
    s.add_argument("--config")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        stage = getattr(exc, "stage", args.command)
        print(f"error: [{stage}] {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
