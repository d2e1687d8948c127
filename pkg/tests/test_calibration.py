import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropuq.calibration import (
    PAPER_Z_GRID,
    calibration_curve,
    classification_metrics,
    curve_to_csv,
    deviation_area,
    entropy,
    evaluate,
    gaussian_interval,
    macro_f1,
    regression_metrics,
    reports_to_csv,
    scalar_metrics,
)
from dropuq.data import Dataset
from dropuq.errors import ValidationError
from dropuq.numerics import RngStream
from dropuq.prediction import CategoricalPrediction, GaussianPrediction

DENSE = np.linspace(0.0005, 0.9995, 2000)


class TestInterval:
    def test_95(self):
        lo, hi = gaussian_interval(GaussianPrediction([[0.0]], [[1.0]]), 0.95)
        assert lo[0, 0] == pytest.approx(-1.959964, abs=1e-6)
        assert hi[0, 0] == pytest.approx(1.959964, abs=1e-6)

    def test_half(self):
        lo, hi = gaussian_interval(GaussianPrediction([[5.0]], [[4.0]]), 0.5)
        assert hi[0, 0] - 5.0 == pytest.approx(1.348980, abs=1e-6)
        assert 5.0 - lo[0, 0] == pytest.approx(1.348980, abs=1e-6)

    def test_collapses(self):
        lo, hi = gaussian_interval(GaussianPrediction([[2.0]], [[1.0]]), 1e-12)
        assert abs(hi[0, 0] - 2.0) < 1e-11 and abs(lo[0, 0] - 2.0) < 1e-11

    def test_invalid_level(self):
        with pytest.raises(ValidationError):
            gaussian_interval(GaussianPrediction([[0.0]], [[1.0]]), 1.0)


class TestCurve:
    def test_huge_variance(self):
        pred = GaussianPrediction(np.zeros((10, 1)), np.full((10, 1), 1e12))
        assert np.all(calibration_curve(pred, np.ones(10)) == 1.0)

    def test_tiny_variance(self):
        pred = GaussianPrediction(np.zeros((10, 1)), np.full((10, 1), 1e-6))
        assert np.all(calibration_curve(pred, np.ones(10)) == 0.0)

    def test_simulated_calibration(self):
        rng = RngStream(31)
        n = 50_000
        mean = rng.normal((n, 1)) * 3
        var = rng.uniform((n, 1)) * 2 + 0.1
        y = mean + np.sqrt(var) * rng.normal((n, 1))
        cov = calibration_curve(GaussianPrediction(mean, var), y)
        assert np.all(np.abs(cov - np.array(PAPER_Z_GRID)) <= 0.01)

    def test_pooled_dimensions(self):
        pred = GaussianPrediction([[0.0, 0.0]], [[1.0, 1.0]])
        cov = calibration_curve(pred, [[0.0, 10.0]], [0.5])
        assert cov[0] == 0.5

    @given(st.integers(1, 200), st.integers(0, 1000))
    @settings(max_examples=50)
    def test_monotone(self, n, seed):
        rng = RngStream(seed)
        pred = GaussianPrediction(rng.normal((n, 1)), rng.uniform((n, 1)) + 0.01)
        cov = calibration_curve(pred, rng.normal((n, 1)) * 2, DENSE[::20])
        assert np.all(np.diff(cov) >= 0.0)
        assert 0.0 <= deviation_area(cov, DENSE[::20]) <= 0.5


class TestDeviationArea:
    def test_perfect(self):
        assert deviation_area(np.array(PAPER_Z_GRID)) == 0.0

    def test_always_covered_dense(self):
        assert deviation_area(np.ones(DENSE.size), DENSE) == pytest.approx(0.5, abs=1e-3)

    def test_always_covered_paper_grid(self):
        # the (0, 0) anchor cuts off the first triangle: 0.5 - 0.1 * 1.0 / 2
        assert deviation_area(np.ones(len(PAPER_Z_GRID))) == pytest.approx(0.45, abs=1e-12)

    def test_quadratic_curve(self):
        assert deviation_area(DENSE ** 2, DENSE) == pytest.approx(1 / 6, abs=1e-3)

    def test_grid_refinement(self):
        coarse = np.linspace(0.01, 0.99, 60)
        fine = np.linspace(0.001, 0.999, 3000)

        def curve(z):
            return np.clip(z + 0.15 * np.sin(3 * np.pi * z), 0.0, 1.0)

        assert abs(deviation_area(curve(coarse), coarse) - deviation_area(curve(fine), fine)) <= 2e-3


class TestScalarMetrics:
    def test_uniform_wrong_entropy(self):
        m = classification_metrics(CategoricalPrediction(np.full((3, 6), 1 / 6)), [1, 2, 3])
        # argmax of a uniform vector is class 0, so all three are false predictions
        assert m["mefp"] == pytest.approx(math.log(6), abs=1e-12)
        assert m["mefp"] > 1.715

    def test_perfect(self):
        pred = GaussianPrediction([[1.0], [2.0]], [[1.0], [1.0]])
        assert regression_metrics(pred, [1.0, 2.0])["mae"] == 0.0
        m = classification_metrics(CategoricalPrediction(np.eye(3)), [0, 1, 2])
        assert m["accuracy"] == 1.0 and m["mefp"] is None

    def test_macro_f1_hand(self):
        true = np.array([0, 0, 0, 1])
        guess = np.array([0, 0, 1, 1])
        assert macro_f1(true, guess, 2) == pytest.approx((0.8 + 2 / 3) / 2, abs=1e-12)

    def test_absent_class_scores_zero(self):
        assert macro_f1(np.array([0, 1]), np.array([0, 1]), 3) == pytest.approx(2 / 3)

    def test_regression_nll_constant(self):
        m = regression_metrics(GaussianPrediction([[0.0]], [[1.0]]), [0.0])
        assert m["nll_no_const"] == 0.0
        assert m["nll"] == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-15)

    @given(st.integers(2, 8), st.integers(1, 40), st.integers(0, 10_000))
    @settings(max_examples=50)
    def test_ranges(self, k, n, seed):
        rng = RngStream(seed)
        p = rng.uniform((n, k)) + 1e-3
        p /= p.sum(axis=1, keepdims=True)
        m = scalar_metrics(CategoricalPrediction(p), rng.integers(k, n))
        assert 0.0 <= m["accuracy"] <= 1.0 and m["nll"] >= 0.0
        if m["mefp"] is not None:
            assert 0.0 <= m["mefp"] <= math.log(k) + 1e-12

    def test_entropy_zero_prob(self):
        assert entropy(np.array([1.0, 0.0])) == 0.0


class TestEvaluate:
    def test_unstandardizes(self):
        ds = Dataset(np.zeros((2, 1)), [[0.0], [1.0]], y_mean=np.array([10.0]), y_std=np.array([2.0]))
        rep = evaluate(GaussianPrediction([[0.0], [1.0]], [[1.0], [1.0]]), ds)
        assert rep.mae == 0.0
        assert rep.nll_no_const == pytest.approx(0.5 * math.log(4.0))

    def test_serialization(self):
        ds = Dataset(np.zeros((2, 1)), [[0.0], [1.0]])
        rep = evaluate(GaussianPrediction([[0.0], [1.0]], [[1.0], [1.0]]), ds, method="m")
        table = reports_to_csv([rep], "abc")
        assert table.splitlines()[0] == "# config_digest=abc"
        assert "m,deviation_area," in table
        curve = curve_to_csv(rep).splitlines()
        assert curve[0] == "z,coverage" and len(curve) == len(PAPER_Z_GRID) + 1
