import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tinyvib import dsp, signals  # noqa: E402
from tinyvib.nn import TrainConfig, default_architecture, quantize_model, train  # noqa: E402


@pytest.fixture(scope="session")
def small_split():
    samples = signals.synth_dataset(60, 40, signals.SynthConfig(seed=7))
    return signals.split_dataset(samples, 0.75, seed=7, stratified=True)


@pytest.fixture(scope="session")
def small_features(small_split):
    return dsp.preprocess_many(small_split.train), dsp.preprocess_many(small_split.test)


@pytest.fixture(scope="session")
def small_models(small_split, small_features):
    """(float model, int8 model, history) trained on a small synthetic split."""
    f_train, _ = small_features
    model, hist = train(default_architecture(), small_split, TrainConfig(seed=3), features=f_train)
    qmodel = quantize_model(model, f_train[:32])
    return model, qmodel, hist


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one acceptance criterion: prints a PASS/FAIL line and fails the test on FAIL."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(name: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
