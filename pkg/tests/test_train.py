import csv
import io

import numpy as np
import pytest

from tinyvib import signals
from tinyvib.nn import model as M
from tinyvib.nn.layers import Conv2D, Dense, Flatten
from tinyvib.nn.train import Adam, BudgetError, TrainConfig, evaluate, fit, train


def _toy_problem(n=80, seed=0):
    """Separable feature maps: class 1 has a raised first axis."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    x = rng.standard_normal((n, 3, 4, 65)) * 0.5
    x[:, 0] += 2.0 * labels[:, None, None]
    return x, labels


def _constant_model(cls=0):
    model = M.build_model()
    params = [{k: np.zeros_like(v) for k, v in p.items()} for p in model.params]
    params[-2]["b"][cls] = 1.0
    return M.ModelArtifact(model.layers, params, metadata=model.metadata)


class TestSchedule:
    def test_lr_examples(self):
        cfg = TrainConfig()
        assert cfg.lr_at(0) == 5e-4
        assert cfg.lr_at(49) == 5e-4
        assert cfg.lr_at(50) == pytest.approx(4.75e-4)
        assert cfg.lr_at(100) == pytest.approx(4.5125e-4, rel=1e-12)

    def test_history_follows_schedule(self):
        x, y = _toy_problem()
        cfg = TrainConfig(batch_size=8, max_epochs=12, patience=11, seed=1)
        _, hist = fit(M.default_architecture(), x, y, cfg)
        steps_per_epoch = -(-signals.n_train_for(len(y), 1 - cfg.val_fraction) // cfg.batch_size)
        for e, lr in enumerate(hist.lr):
            assert lr == pytest.approx(cfg.lr_at(e * steps_per_epoch), rel=1e-12)

    @pytest.mark.parametrize("bad", [dict(batch_size=0), dict(lr0=0.0), dict(decay_rate=1.5), dict(patience=300), dict(val_fraction=1.0)])
    def test_invalid_config(self, bad):
        assert TrainConfig(**bad).validate()
        x, y = _toy_problem(20)
        with pytest.raises(ValueError):
            fit(M.default_architecture(), x, y, TrainConfig(**bad))


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        p = [{"w": np.array([1.0, -2.0, 3.0])}]
        opt = Adam(p)
        opt.step([{"w": np.array([0.5, -4.0, 0.0])}], lr=0.1)
        np.testing.assert_allclose(p[0]["w"], [0.9, -1.9, 3.0], atol=1e-6)

    def test_minimizes_quadratic(self):
        p = [{"w": np.array([5.0, -3.0])}]
        opt = Adam(p)
        for _ in range(2000):
            opt.step([{"w": 2 * p[0]["w"]}], lr=0.05)
        assert np.abs(p[0]["w"]).max() < 1e-2


class TestFit:
    def test_deterministic(self):
        x, y = _toy_problem()
        cfg = TrainConfig(max_epochs=8, patience=3, seed=5)
        a, ha = fit(M.default_architecture(), x, y, cfg)
        b, hb = fit(M.default_architecture(), x, y, cfg)
        for pa, pb in zip(a, b):
            for k in pa:
                assert pa[k].tobytes() == pb[k].tobytes()
        assert ha.to_csv() == hb.to_csv()

    def test_seed_changes_result(self):
        x, y = _toy_problem()
        a, _ = fit(M.default_architecture(), x, y, TrainConfig(max_epochs=2, patience=1, seed=1))
        b, _ = fit(M.default_architecture(), x, y, TrainConfig(max_epochs=2, patience=1, seed=2))
        assert not np.array_equal(a[0]["w"], b[0]["w"])

    def test_early_stopping_contract(self):
        x, y = _toy_problem()
        cfg = TrainConfig(max_epochs=60, patience=4, seed=0)
        _, hist = fit(M.default_architecture(), x, y, cfg)
        assert hist.stop_reason == "early_stopping"
        assert hist.stop_epoch - hist.best_epoch == cfg.patience
        assert len(hist.loss) == len(hist.val_acc) == len(hist.lr) == hist.stop_epoch
        best = hist.val_acc[hist.best_epoch - 1]
        assert best == max(hist.val_acc)
        assert all(v <= best for v in hist.val_acc[hist.best_epoch :])

    def test_max_epochs(self):
        x, y = _toy_problem(40)
        _, hist = fit(M.default_architecture(), x, y, TrainConfig(max_epochs=2, patience=1, seed=0, lr0=1e-9))
        assert hist.stop_epoch <= 2

    def test_learns_toy_problem(self):
        x, y = _toy_problem(400)
        params, _ = fit(M.default_architecture(), x, y, TrainConfig(seed=0))
        model = M.ModelArtifact(M.default_architecture(), params)
        xt, yt = _toy_problem(200, seed=99)
        assert evaluate(model, (xt, yt)) >= 0.95

    def test_params_are_float32_representable(self):
        x, y = _toy_problem(40)
        params, _ = fit(M.default_architecture(), x, y, TrainConfig(max_epochs=2, patience=1))
        for p in params:
            for v in p.values():
                assert np.array_equal(v, v.astype(np.float32))

    def test_history_csv(self):
        x, y = _toy_problem(40)
        _, hist = fit(M.default_architecture(), x, y, TrainConfig(max_epochs=3, patience=2))
        rows = list(csv.DictReader(io.StringIO(hist.to_csv())))
        assert list(rows[0]) == ["epoch", "loss", "acc", "val_acc", "lr"]
        assert [int(r["epoch"]) for r in rows] == list(range(1, len(rows) + 1))


class TestTrain:
    def test_small_split(self, small_models, small_features, small_split):
        model, _, hist = small_models
        _, f_test = small_features
        labels = np.array([s.label.index for s in small_split.test])
        assert evaluate(model, (f_test, labels)) == 1.0
        assert model.metadata["param_bytes"] == M.param_budget(model) <= M.PARAM_BUDGET_BYTES
        assert model.metadata["stop_epoch"] == hist.stop_epoch

    def test_evaluate_from_samples(self, small_models, small_split):
        model = small_models[0]
        assert evaluate(model, small_split.test[:6]) == 1.0

    def test_budget_violation(self, small_split):
        fat = [Conv2D(3, 3, 3, 32), Flatten(), Dense(4 * 65 * 32, 2)]
        with pytest.raises(BudgetError):
            train(fat, small_split)

    def test_empty_split(self):
        with pytest.raises(ValueError):
            train(M.default_architecture(), signals.DatasetSplit([], [], 0))


class TestEvaluate:
    def test_constant_predictor_all_good(self, rng):
        x = rng.standard_normal((50, 3, 4, 65))
        assert evaluate(_constant_model(0), (x, np.zeros(50, int))) == 1.0
        assert evaluate(_constant_model(1), (x, np.zeros(50, int))) == 0.0

    def test_coin_flip(self, rng):
        n = 2000
        x = rng.standard_normal((n, 3, 4, 65))
        labels = rng.integers(0, 2, n)
        acc = evaluate(_constant_model(0), (x, labels))
        assert abs(acc - 0.5) <= 3 * np.sqrt(0.25 / n)

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(_constant_model(), (np.zeros((0, 3, 4, 65)), np.zeros(0, int)))
