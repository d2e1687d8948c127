"""Calibration curves, deviation area and scalar quality metrics."""

import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .numerics import standard_normal_quantile
from .prediction import CategoricalPrediction, GaussianPrediction

# Confidence levels used for every regression calibration curve (note: no 90%).
PAPER_Z_GRID = (0.10, 0.20, 0.30, 0.40, 0.50, 0.60, 0.70, 0.80, 0.85, 0.95, 0.99, 0.995, 0.999)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

ASSUMPTIONS = {
    "entropy_units": "nats",
    "f1_averaging": "macro over all K classes (absent classes score 0)",
    "coverage_pooling": "pooled over (sample, output dimension) pairs",
    "classification_calibration": "not computed (no calibration curve for classification)",
}


def check_grid(grid):
    z = np.asarray(grid, dtype=np.float64)
    if z.ndim != 1 or z.size == 0 or np.any(z <= 0.0) or np.any(z >= 1.0) or np.any(np.diff(z) <= 0.0):
        raise ValidationError("confidence grid must be strictly increasing inside (0, 1)")
    return z


def gaussian_interval(pred, z):
    """Central z-interval ``mean -/+ q((1+z)/2) * std`` per output dimension."""
    if not 0.0 < z < 1.0:
        raise ValidationError(f"confidence level must lie in (0, 1), got {z}")
    if np.any(pred.var <= 0.0):
        raise ValidationError("interval needs strictly positive variance")
    half = standard_normal_quantile(0.5 * (1.0 + z)) * pred.std
    return pred.mean - half, pred.mean + half


def _targets_like(pred, targets):
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        y = y.reshape(pred.mean.shape)
    if y.shape != pred.mean.shape:
        raise ShapeError(f"targets {y.shape} do not match predictions {pred.mean.shape}",
                         y.shape, pred.mean.shape)
    return y


def calibration_curve(pred, targets, grid=PAPER_Z_GRID):
    """Fraction of (sample, dimension) targets inside each central interval."""
    if not isinstance(pred, GaussianPrediction):
        raise ValidationError("calibration curves are defined for Gaussian predictions only")
    z = check_grid(grid)
    y = _targets_like(pred, targets)
    dev = np.abs(y - pred.mean) / pred.std
    return np.array([np.mean(dev <= standard_normal_quantile(0.5 * (1.0 + zi))) for zi in z])


def deviation_area(curve, grid=PAPER_Z_GRID):
    """Trapezoidal area between the curve and the diagonal, anchored at (0,0) and (1,1)."""
    z = np.concatenate([[0.0], check_grid(grid), [1.0]])
    c = np.asarray(curve, dtype=np.float64)
    if c.shape != (z.size - 2,):
        raise ShapeError(f"curve has {c.size} points for a grid of {z.size - 2}")
    if np.any(c < 0.0) or np.any(c > 1.0):
        raise ValidationError("coverage values must lie in [0, 1]")
    gap = np.abs(np.concatenate([[0.0], c, [1.0]]) - z)
    return float(np.sum(0.5 * (gap[1:] + gap[:-1]) * np.diff(z)))


def regression_metrics(pred, targets):
    """MAE and mean Gaussian negative log density over all scalar outputs."""
    y = _targets_like(pred, targets)
    err = y - pred.mean
    nll_no_const = np.mean(0.5 * np.log(pred.var) + err * err / (2.0 * pred.var))
    return {
        "mae": float(np.mean(np.abs(err))),
        "nll": float(nll_no_const + HALF_LOG_2PI),
        "nll_no_const": float(nll_no_const),
    }


def entropy(probs):
    """Shannon entropy in nats, row-wise, with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.where(p > 0.0, p, 1.0))
    return -np.sum(p * logp, axis=-1)


def macro_f1(true, predicted, k):
    scores = []
    for c in range(k):
        tp = np.sum((predicted == c) & (true == c))
        fp = np.sum((predicted == c) & (true != c))
        fn = np.sum((predicted != c) & (true == c))
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if tp > 0 else 0.0)
    return float(np.mean(scores))


def classification_metrics(pred, labels):
    """Accuracy, macro-F1, NLL and mean entropy of false predictions.

    MEFP is ``None`` when there are no misclassified samples.
    """
    P = pred.probs
    n, k = P.shape
    y = np.asarray(labels).astype(np.int64).reshape(-1)
    if y.shape != (n,):
        raise ShapeError(f"{y.size} labels for {n} predictions")
    guess = np.argmax(P, axis=1)
    wrong = guess != y
    p_true = P[np.arange(n), y]
    return {
        "accuracy": float(np.mean(~wrong)),
        "macro_f1": macro_f1(y, guess, k),
        "nll": float(np.mean(-np.log(np.maximum(p_true, 1e-12)))),
        "mefp": float(np.mean(entropy(P[wrong]))) if np.any(wrong) else None,
        "n_false": int(np.sum(wrong)),
    }


def scalar_metrics(pred, targets, task=None):
    if task is None:
        task = "classification" if isinstance(pred, CategoricalPrediction) else "regression"
    if len(pred) == 0:
        raise ValidationError("metrics need at least one prediction")
    if task == "classification":
        return classification_metrics(pred, targets)
    return regression_metrics(pred, targets)


@dataclass
class CalibrationReport:
    method: str
    task: str
    n: int
    z_levels: list = field(default_factory=list)
    coverage: list = field(default_factory=list)
    deviation_area: float = None
    mae: float = None
    nll: float = None
    nll_no_const: float = None
    accuracy: float = None
    macro_f1: float = None
    mefp: float = None
    variance_floor: float = None
    config_digest: str = None
    model_digest: str = None
    assumptions: dict = field(default_factory=lambda: dict(ASSUMPTIONS))

    def to_dict(self):
        return asdict(self)

    @property
    def metric_items(self):
        keys = (["deviation_area", "mae", "nll", "nll_no_const"] if self.task == "regression"
                else ["accuracy", "macro_f1", "nll", "mefp"])
        return [(k, getattr(self, k)) for k in keys]


def evaluate(pred, dataset, method="rdeepsense", grid=PAPER_Z_GRID, variance_floor=None):
    """Score a prediction made on ``dataset.inputs``.

    Regression predictions are taken in the dataset's (possibly standardized)
    target units and mapped back to original units before scoring.
    """
    report = CalibrationReport(method=method, task=dataset.task, n=len(dataset),
                               variance_floor=variance_floor)
    if dataset.task == "regression":
        raw = pred.rescale(dataset.y_mean, dataset.y_std)
        targets = dataset.raw_targets()
        curve = calibration_curve(raw, targets, grid)
        report.z_levels = [float(z) for z in grid]
        report.coverage = [float(c) for c in curve]
        report.deviation_area = deviation_area(curve, grid)
        for k, v in regression_metrics(raw, targets).items():
            setattr(report, k, v)
    else:
        m = classification_metrics(pred, dataset.targets)
        report.accuracy, report.macro_f1, report.nll, report.mefp = (
            m["accuracy"], m["macro_f1"], m["nll"], m["mefp"])
    return report


def fmt_value(v):
    return "" if v is None else repr(float(v))


def reports_to_csv(reports, digest=None):
    """Flat table with one row per (method, metric)."""
    buf = io.StringIO()
    if digest:
        buf.write(f"# config_digest={digest}\n")
    buf.write("method,metric,value\n")
    for r in reports:
        for k, v in r.metric_items:
            buf.write(f"{r.method},{k},{fmt_value(v)}\n")
    return buf.getvalue()


def curve_to_csv(report, digest=None):
    buf = io.StringIO()
    if digest:
        buf.write(f"# config_digest={digest}\n")
    buf.write("z,coverage\n")
    for z, c in zip(report.z_levels, report.coverage):
        buf.write(f"{z!r},{c!r}\n")
    return buf.getvalue()
