"""Exact Gaussian-process regression with an RBF kernel."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist, pdist

from .errors import NumericalError, ValidationError
from .prediction import GaussianPrediction

DEFAULT_CAP = 5000
DEFAULT_JITTER = 1e-8


@dataclass(frozen=True)
class RBFKernel:
    signal_variance: float = 1.0
    length_scale: float = 1.0

    def __post_init__(self):
        if not (self.signal_variance > 0.0 and self.length_scale > 0.0):
            raise ValidationError("kernel hyperparameters must be positive")

    def __call__(self, A, B):
        d2 = cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")
        return self.signal_variance * np.exp(-0.5 * d2 / self.length_scale ** 2)


@dataclass(eq=False)
class GpModel:
    X: np.ndarray
    Y: np.ndarray
    kernel: RBFKernel
    noise: float
    jitter: float
    chol: tuple
    alpha: np.ndarray


def default_hyperparameters(X, Y):
    """Signal variance = target variance, length-scale = median pairwise distance,
    noise = 10% of target variance."""
    var = float(np.var(Y))
    var = var if var > 0.0 else 1.0
    d = pdist(np.atleast_2d(X)) if len(X) > 1 else np.array([1.0])
    d = d[d > 0.0]
    length = float(np.median(d)) if d.size else 1.0
    return RBFKernel(var, length), 0.1 * var


def gp_fit(X, Y, kernel=None, noise=None, jitter=DEFAULT_JITTER, cap=DEFAULT_CAP):
    X = np.asarray(X, dtype=np.float64)
    X = X[:, None] if X.ndim == 1 else X
    Y = np.asarray(Y, dtype=np.float64).reshape(len(X), -1)
    if len(X) == 0:
        raise ValidationError("GP needs at least one training point")
    if len(X) > cap:
        raise ValidationError(f"{len(X)} training points exceed the GP cap of {cap}")
    if kernel is None or noise is None:
        k0, n0 = default_hyperparameters(X, Y)
        kernel = kernel or k0
        noise = n0 if noise is None else noise
    if not noise > 0.0:
        raise ValidationError("noise variance must be positive")
    K = kernel(X, X)
    K[np.diag_indices_from(K)] += noise + jitter
    try:
        chol = cho_factor(K, lower=True)
    except np.linalg.LinAlgError:
        raise NumericalError(f"kernel matrix is not positive definite with jitter {jitter:g}; "
                             "increase the jitter") from None
    return GpModel(X, Y, kernel, float(noise), float(jitter), chol, cho_solve(chol, Y))


def gp_predict(model, Xs):
    """Posterior predictive Gaussian for targets (includes the noise variance)."""
    Xs = np.asarray(Xs, dtype=np.float64)
    Xs = Xs[:, None] if Xs.ndim == 1 and model.X.shape[1] == 1 else np.atleast_2d(Xs)
    Ks = model.kernel(Xs, model.X)
    mean = Ks @ model.alpha
    v = cho_solve(model.chol, Ks.T)
    prior = model.kernel.signal_variance
    var = prior - np.sum(Ks * v.T, axis=1) + model.noise
    var = np.maximum(var, model.noise)
    return GaussianPrediction(mean, np.repeat(var[:, None], mean.shape[1], axis=1))
