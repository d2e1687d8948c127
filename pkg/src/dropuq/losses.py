"""Training criteria: alpha-weighted negative log-likelihood and squared error.

For a batch, each part is the mean over samples of a per-sample sum over
output dimensions (regression) or classes (classification):

    regression     nll   = 1/2 log s2 + (y - mu)^2 / (2 s2)
                   error = (y - mu)^2
    classification nll   = -log p[y]
                   error = sum_k (onehot_k - p_k)^2          (Brier)

    total = (1 - alpha) * nll + alpha * error + reg
    reg   = ((1 - alpha) * lambda_l + alpha * lambda_e) * sum ||W||^2

The Gaussian nll omits the 1/2 log(2 pi) constant; evaluation metrics add it.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import NumericalError, ShapeError, ValidationError
from .network import head_to_prediction, log_softmax, softmax, softplus
from .prediction import CategoricalPrediction, GaussianPrediction

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class LossSpec:
    task: str = "regression"
    alpha: float = 0.5
    lambda_e: float = 0.0
    lambda_l: float = 0.0

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ValidationError(f"unknown task {self.task!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lambda_e < 0.0 or self.lambda_l < 0.0:
            raise ValidationError("regularization weights must be non-negative")

    @property
    def reg_coef(self):
        return (1.0 - self.alpha) * self.lambda_l + self.alpha * self.lambda_e


@dataclass(frozen=True)
class LossValue:
    total: float
    nll: float
    error: float
    reg: float
    clamped: int = 0


def _combine(loss_spec, nll, error, params, clamped=0):
    reg = loss_spec.reg_coef * params.weight_sq_norm() if params is not None else 0.0
    a = loss_spec.alpha
    total = (1.0 - a) * nll + a * error + reg
    return LossValue(float(total), float(nll), float(error), float(reg), int(clamped))


def _regression_targets(y, shape):
    Y = np.asarray(y, dtype=np.float64)
    Y = Y.reshape(shape) if Y.size == np.prod(shape) else Y
    if Y.shape != shape:
        raise ShapeError(f"targets {Y.shape} do not match predictions {shape}", Y.shape, shape)
    return Y


def regression_loss(pred, y, params, loss_spec):
    """Decomposed regression loss for a Gaussian prediction."""
    if not isinstance(pred, GaussianPrediction):
        raise ValidationError("regression loss needs a Gaussian prediction")
    Y = _regression_targets(y, pred.mean.shape)
    if not np.all(pred.var > 0.0):
        raise NumericalError("predictive variance must be strictly positive")
    d2 = np.square(Y - pred.mean)
    nll = np.mean(np.sum(0.5 * np.log(pred.var) + d2 / (2.0 * pred.var), axis=1))
    error = np.mean(np.sum(d2, axis=1))
    return _combine(loss_spec, nll, error, params)


def _labels(y, n, k):
    labels = np.atleast_1d(np.asarray(y)).astype(np.int64).reshape(-1)
    if labels.shape != (n,):
        raise ShapeError(f"{labels.size} labels for {n} predictions", labels.shape, (n,))
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValidationError(f"class labels must lie in [0, {k})")
    return labels


def classification_loss(pred, y, params, loss_spec):
    """Decomposed Brier + negative log-likelihood loss."""
    if not isinstance(pred, CategoricalPrediction):
        raise ValidationError("classification loss needs a categorical prediction")
    P = pred.probs
    n, k = P.shape
    labels = _labels(y, n, k)
    p_true = P[np.arange(n), labels]
    clamped = int(np.sum(p_true < PROB_CLAMP))
    nll = np.mean(-np.log(np.maximum(p_true, PROB_CLAMP)))
    onehot = np.eye(k)[labels]
    error = np.mean(np.sum(np.square(onehot - P), axis=1))
    return _combine(loss_spec, nll, error, params, clamped)


def loss_from_head(spec, head, y, loss_spec, params=None):
    """Loss evaluated directly on raw head outputs.

    Classification computes log-probabilities with log-softmax so the value is
    the exact function whose gradient ``loss_gradient_at_head`` returns.
    """
    H = np.atleast_2d(np.asarray(head, dtype=np.float64))
    if spec.task == "regression":
        return regression_loss(head_to_prediction(spec, H), y, params, loss_spec)
    n, k = H.shape
    labels = _labels(y, n, k)
    logp = log_softmax(H)[np.arange(n), labels]
    floor = np.log(PROB_CLAMP)
    clamped = int(np.sum(logp < floor))
    nll = np.mean(-np.maximum(logp, floor))
    onehot = np.eye(k)[labels]
    error = np.mean(np.sum(np.square(onehot - softmax(H)), axis=1))
    return _combine(loss_spec, nll, error, params, clamped)


def loss_gradient_at_head(spec, head, y, loss_spec):
    """Gradient of the batch-mean loss (without weight decay) w.r.t. the raw head."""
    head = np.asarray(head, dtype=np.float64)
    single = head.ndim == 1
    H = np.atleast_2d(head)
    n = H.shape[0]
    a = loss_spec.alpha
    G = np.zeros_like(H)
    if spec.task == "regression":
        if spec.head == "point":
            Y = _regression_targets(y, H.shape)
            G = 2.0 * (H - Y)
        else:
            mu, raw = H[:, 0::2], H[:, 1::2]
            Y = _regression_targets(y, mu.shape)
            s2 = softplus(raw) + spec.variance_floor
            d = mu - Y
            G[:, 0::2] = (1.0 - a) * d / s2 + a * 2.0 * d
            ds2 = (1.0 - a) * (0.5 / s2 - 0.5 * d * d / (s2 * s2))
            G[:, 1::2] = ds2 * expit(raw)
    else:
        k = H.shape[1]
        labels = _labels(y, n, k)
        P = softmax(H)
        onehot = np.eye(k)[labels]
        g_nll = P - onehot
        clamped = log_softmax(H)[np.arange(n), labels] < np.log(PROB_CLAMP)
        g_nll[clamped] = 0.0
        g_p = 2.0 * (P - onehot)
        g_brier = P * (g_p - np.sum(g_p * P, axis=1, keepdims=True))
        G = (1.0 - a) * g_nll + a * g_brier
    G = G / n
    return G[0] if single else G


def regularizer_gradient(params, loss_spec):
    c = 2.0 * loss_spec.reg_coef
    return [c * w for w in params.weights]
