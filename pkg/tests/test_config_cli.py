import json

import numpy as np
import pytest

from tinyvib import bench, cli, signals
from tinyvib.config import ConfigError, RunConfig, config_hash, emit_config, parse_config, set_value, validate_config
from tinyvib.nn import load_model


class TestConfig:
    def test_default_is_valid(self):
        assert validate_config(RunConfig()) == []
        assert validate_config(emit_config(RunConfig())) == []

    @pytest.mark.parametrize(
        "override,field",
        [
            ("split.ratio=1.2", "split.ratio"),
            ("prep.alpha=-0.1", "prep.alpha"),
            ("train.batch_size=0", "train.batch_size"),
            ("bench.reps=2", "bench.reps"),
            ("synth.chatter_high=9000", "synth.chatter"),
        ],
    )
    def test_violation_names_field(self, override, field):
        key, value = override.split("=")
        errors = validate_config(set_value(RunConfig(), key, value))
        assert errors and any(e.startswith(field) for e in errors)

    def test_unparseable(self):
        with pytest.raises(ConfigError):
            parse_config("this is [not ini")
        with pytest.raises(ConfigError):
            parse_config("[split]\nratio = lots\n")
        with pytest.raises(ConfigError):
            parse_config("[split]\nbogus = 1\n")

    def test_roundtrip(self):
        cfg = RunConfig(seed=9, n_good=5, split_ratio=0.6, out_dir="x")
        cfg = set_value(cfg, "synth.harmonic_amps", "1.0, 0.2")
        cfg = set_value(cfg, "prep.per_axis", "yes")
        cfg = set_value(cfg, "train.lr0", "0.001")
        back = parse_config(emit_config(cfg))
        assert back == cfg
        assert emit_config(back) == emit_config(cfg)

    def test_partial_file_keeps_defaults(self):
        cfg = parse_config("[run]\nseed = 4\n")
        assert cfg.seed == 4 and cfg.n_good == RunConfig().n_good

    def test_hash_ignores_paths(self):
        a = RunConfig(out_dir="a", dataset_dir="d1")
        b = RunConfig(out_dir="b", trace="t.csv")
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(RunConfig(seed=1))

    def test_resolved_pushes_seed(self):
        cfg = RunConfig(seed=17).resolved()
        assert cfg.synth.seed == 17 and cfg.train.seed == 17


def _run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """Synthesize, split, train and quantize once through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--n-good", "30", "--n-bad", "20", "--seed", "3", "--out", str(root / "data")]) == 0
    assert cli.main(["split", "--manifest", str(root / "data" / "manifest.txt"), "--ratio", "0.7", "--seed", "1", "--stratified", "--out", str(root / "split")]) == 0
    assert (
        cli.main(
            [
                "train",
                "--train-manifest", str(root / "split" / "train.txt"),
                "--set", "run.seed=2",
                "--set", "train.max_epochs=30",
                "--model", str(root / "model.bin"),
                "--history", str(root / "history.csv"),
            ]
        )
        == 0
    )
    assert cli.main(["quantize", "--model", str(root / "model.bin"), "--calib-manifest", str(root / "split" / "train.txt"), "-n", "16", "--out", str(root / "model_i8.bin")]) == 0
    return root


class TestCli:
    def test_synth_and_split_outputs(self, cli_workspace):
        train = signals.read_manifest(cli_workspace / "split" / "train.txt")
        test = signals.read_manifest(cli_workspace / "split" / "test.txt")
        assert (len(train), len(test)) == (35, 15)
        assert not {e.origin for e in train} & {e.origin for e in test}
        assert len(signals.load_samples(cli_workspace / "split" / "test.txt")) == 15

    def test_train_artifacts(self, cli_workspace):
        assert (cli_workspace / "history.csv").read_text().startswith("epoch,loss,acc,val_acc,lr")
        model = load_model(cli_workspace / "model_i8.bin")
        assert model.is_quantized and model.metadata["calib_samples"] == 16
        assert model.metadata["config_hash"] == config_hash(
            set_value(set_value(RunConfig(), "run.seed", "2"), "train.max_epochs", "30").resolved()
        )

    @pytest.mark.parametrize("int8", [False, True])
    def test_eval(self, cli_workspace, capsys, int8):
        argv = ["eval", "--model", cli_workspace / "model_i8.bin", "--manifest", cli_workspace / "split" / "test.txt"]
        code, out, _ = _run(argv + (["--int8"] if int8 else []), capsys)
        assert code == 0 and out.startswith("int8 accuracy" if int8 else "float accuracy")
        assert out.rstrip().endswith("on 15 samples") and float(out.split()[2]) >= 0.8

    def test_prep(self, cli_workspace, capsys):
        code, out, _ = _run(["prep", "--manifest", cli_workspace / "split" / "test.txt", "--out", cli_workspace / "f.bin"], capsys)
        assert code == 0 and "(15, 3, 4, 65)" in out

    def test_bench_and_energy(self, cli_workspace, capsys, tmp_path):
        sample = tmp_path / "s.f32"
        signals.write_raw(sample, signals.synth_sample("bad", signals.SynthConfig(), 0).series)
        trace = tmp_path / "trace.csv"
        bench.write_trace(trace, bench.PowerTrace(np.full(100, 2.987 + 0.31807), np.full(100, 2.987)))
        csv_path = tmp_path / "rep.csv"
        code, out, _ = _run(["bench", "--sample", sample, "--model", cli_workspace / "model_i8.bin", "--reps", "3", "--trace", trace, "--csv", csv_path], capsys)
        assert code == 0 and "integer CNN forward pass" in out
        assert list(bench.Report.from_csv(csv_path.read_text()).timings) == list(bench.STAGES)
        code, out, _ = _run(["energy", "--trace", trace, "--t-infer", "0.0845"], capsys)
        assert code == 0 and "EPI        8.02" in out

    def test_bench_needs_quantized_model(self, cli_workspace, capsys, tmp_path):
        sample = tmp_path / "s.f32"
        signals.write_raw(sample, signals.synth_sample("good", signals.SynthConfig(), 0).series)
        code, _, err = _run(["bench", "--sample", sample, "--model", cli_workspace / "model.bin"], capsys)
        assert code != 0 and "error:" in err

    def test_segment(self, tmp_path, capsys):
        rec = tmp_path / "rec.f32"
        assert cli.main(["synth", "--recording", "2,3.4", "--gap", "1", "--label", "bad", "--out", str(rec)]) == 0
        code, out, _ = _run(["segment", "--input", rec, "--threshold", "0.2", "--label", "bad", "--out", tmp_path / "seg"], capsys)
        assert code == 0 and "wrote 5 samples" in out
        assert all(s.label is signals.Label.BAD for s in signals.load_samples(tmp_path / "seg" / "manifest.txt"))

    def test_validate(self, tmp_path, capsys):
        good = tmp_path / "ok.ini"
        good.write_text(emit_config(RunConfig()))
        assert _run(["validate", "--config", good], capsys)[:2] == (0, "ok\n")
        bad = tmp_path / "bad.ini"
        bad.write_text("[split]\nratio = 1.2\n[prep]\nalpha = -0.1\n")
        code, _, err = _run(["validate", "--config", bad], capsys)
        assert code == 1 and "split.ratio" in err and "prep.alpha" in err

    def test_error_paths(self, tmp_path, capsys):
        code, _, err = _run(["eval", "--model", tmp_path / "missing.bin", "--manifest", tmp_path / "m.txt"], capsys)
        assert code == 1 and err.startswith("error: [eval]")
        code, _, err = _run(["run", "--set", "split.ratio=2", "--out-dir", tmp_path / "r"], capsys)
        assert code == 1 and "[validate]" in err
        code, _, err = _run(["run", "--set", "nonsense"], capsys)
        assert code == 1

    def test_run(self, tmp_path, capsys):
        out = tmp_path / "run"
        argv = ["run", "--set", "synth.n_good=30", "--set", "synth.n_bad=20", "--set", "bench.reps=3", "--set", "train.max_epochs=20", "--out-dir", out]
        code, text, _ = _run(argv, capsys)
        assert code == 0 and "split: train 40 / test 10" in text
        for name in ("model.bin", "history.csv", "config.ini", "report.csv", "report.txt", "summary.json"):
            assert (out / name).is_file()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["counts"]["train"] == 40
        assert validate_config((out / "config.ini").read_text()) == []
