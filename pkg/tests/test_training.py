from dataclasses import replace

import numpy as np
import pytest

from dropuq.calibration import evaluate
from dropuq.data import Dataset, gen_blobs, gen_heteroscedastic, split, standardize
from dropuq.errors import TrainingError, ValidationError
from dropuq.inference import predict_rdeepsense
from dropuq.losses import LossSpec
from dropuq.network import NetworkSpec, mlp_spec
from dropuq.training import PAPER_ALPHAS, Adam, TrainConfig, alpha_seed, select_alpha, sweep_alpha, train


def line_data(n=64):
    x = np.linspace(-1, 1, n)[:, None]
    return Dataset(x, 2.0 * x)


class TestTrain:
    def test_linear_slope(self):
        ds = line_data()
        oracle = np.linalg.lstsq(np.hstack([ds.inputs, np.ones((len(ds), 1))]), ds.targets, rcond=None)[0]
        spec = NetworkSpec((1, 1), ("identity",), (np.ones(1),), "regression", 1, "point")
        params, _ = train(spec, LossSpec(alpha=1.0), ds, None,
                          TrainConfig(epochs=200, batch_size=16, learning_rate=0.05))
        assert abs(params.weights[0][0, 0] - oracle[0, 0]) <= 1e-2

    def test_blobs(self):
        ds = gen_blobs(2000, 2, 3.0, 0)
        tr, va, _ = standardize(*split(ds, (0.8, 0.2, 0.0), 0))
        spec = mlp_spec(2, [16], 2, task="classification", hidden_retain=0.9)
        _, rep = train(spec, LossSpec("classification", 0.5), tr, va, TrainConfig(epochs=20, learning_rate=0.01))
        assert rep.epochs[-1]["val_accuracy"] >= 0.95

    def test_deterministic(self):
        ds = gen_heteroscedastic(300, 0)
        spec = mlp_spec(1, [8], 1)
        cfg = TrainConfig(epochs=3, batch_size=32, seed=5)
        a, ra = train(spec, LossSpec(), ds, ds, cfg)
        b, rb = train(spec, LossSpec(), ds, ds, cfg)
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.arrays(), b.arrays()))
        assert ra.to_dict() == rb.to_dict()

    def test_loss_decreases(self):
        ds = standardize(gen_heteroscedastic(2000, 1))[0]
        spec = mlp_spec(1, [32, 32], 1, hidden_retain=0.9)
        _, rep = train(spec, LossSpec(alpha=0.5), ds, None, TrainConfig(epochs=30, learning_rate=0.003))
        losses = rep.train_losses()
        assert np.median(losses[-3:]) < np.median(losses[:3])
        assert len(rep.epochs) == 30 and rep.final_epoch == 29

    def test_early_stopping_returns_best(self):
        ds = standardize(gen_heteroscedastic(400, 1))[0]
        spec = mlp_spec(1, [16], 1)
        params, rep = train(spec, LossSpec(), ds, ds, TrainConfig(epochs=40, early_stop_patience=2, learning_rate=0.05))
        best = min(e["val_total"] for e in rep.epochs)
        assert rep.epochs[rep.best_epoch]["val_total"] == best

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_aborts(self):
        ds = Dataset(np.array([[1e300], [1.0]]), [[1.0], [2.0]])
        spec = mlp_spec(1, [4], 1, activation="identity", hidden_retain=1.0)
        with pytest.raises(TrainingError, match="epoch 0, batch 0") as exc:
            train(spec, LossSpec(), ds, None, TrainConfig(epochs=1, batch_size=2))
        assert exc.value.epoch == 0 and exc.value.batch == 0

    def test_empty(self):
        ds = gen_heteroscedastic(10, 0).subset(np.arange(0))
        with pytest.raises(ValidationError):
            train(mlp_spec(1, [4], 1), LossSpec(), ds, None, TrainConfig())

    def test_point_head_needs_mse(self):
        ds = line_data()
        with pytest.raises(ValidationError):
            train(mlp_spec(1, [4], 1, head="point"), LossSpec(alpha=0.5), ds, None, TrainConfig(epochs=1))

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            TrainConfig(epochs=0)
        with pytest.raises(ValidationError):
            TrainConfig(learning_rate=0.0)


class TestAdam:
    def test_hand_computed_steps(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        theta = np.array([1.0, -2.0])
        opt = Adam(lr, b1, b2, eps)
        g1 = np.array([0.5, -3.0])
        opt.step([theta], [g1])
        # step 1: m_hat = g, v_hat = g^2
        expected1 = np.array([1.0 - lr * 0.5 / (0.5 + eps), -2.0 + lr * 3.0 / (3.0 + eps)])
        assert np.max(np.abs(theta - expected1)) <= 1e-12
        g2 = np.array([-1.0, 2.0])
        opt.step([theta], [g2])
        m = b1 * (1 - b1) * g1 + (1 - b1) * g2
        v = b2 * (1 - b2) * g1 ** 2 + (1 - b2) * g2 ** 2
        mhat = m / (1 - b1 ** 2)
        vhat = v / (1 - b2 ** 2)
        expected2 = expected1 - lr * mhat / (np.sqrt(vhat) + eps)
        assert np.max(np.abs(theta - expected2)) <= 1e-12


class TestSweep:
    def setup_method(self):
        ds = gen_heteroscedastic(600, 2)
        self.tr, self.va, _ = standardize(*split(ds, (0.7, 0.3, 0.0), 0))
        self.spec = mlp_spec(1, [8], 1, hidden_retain=0.9)
        self.cfg = TrainConfig(epochs=2, seed=11)

    def test_paper_grid_accepted(self):
        out = sweep_alpha(self.spec, LossSpec(), self.tr, self.va, [0, 0.2, 0.4, 0.6, 0.8, 0.9], self.cfg)
        assert [r["alpha"] for r in out] == list(PAPER_ALPHAS)
        assert all("error" not in r for r in out)
        assert select_alpha(out)["alpha"] in PAPER_ALPHAS

    def test_single_alpha_is_composition(self):
        out = sweep_alpha(self.spec, LossSpec(), self.tr, self.va, [0.3], self.cfg)[0]
        params, _ = train(self.spec, LossSpec(alpha=0.3), self.tr, self.va,
                          replace(self.cfg, seed=alpha_seed(self.cfg.seed, 0)))
        rep = evaluate(predict_rdeepsense(self.spec, params, self.va.inputs), self.va)
        assert out["report"].deviation_area == rep.deviation_area and out["report"].nll == rep.nll
        assert all(a.tobytes() == b.tobytes() for a, b in zip(out["params"].arrays(), params.arrays()))

    def test_errors_do_not_abort(self):
        spec = mlp_spec(1, [8], 1, head="point", hidden_retain=0.9)
        out = sweep_alpha(spec, LossSpec(), self.tr, self.va, [1.0, 0.5], self.cfg)
        assert "error" not in out[0] and out[1]["error"].startswith("validation")

    def test_parallel_matches_serial(self):
        a = sweep_alpha(self.spec, LossSpec(), self.tr, self.va, [0.0, 0.5], self.cfg, workers=1)
        b = sweep_alpha(self.spec, LossSpec(), self.tr, self.va, [0.0, 0.5], self.cfg, workers=2)
        for x, y in zip(a, b):
            assert x["report"].to_dict() == y["report"].to_dict()

    def test_bad_alpha(self):
        with pytest.raises(ValidationError):
            sweep_alpha(self.spec, LossSpec(), self.tr, self.va, [1.5], self.cfg)
