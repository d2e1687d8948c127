"""Predictive distributions returned by every inference route."""

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class GaussianPrediction:
    """Independent Gaussian per output dimension; arrays are (N, D)."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_2d(np.asarray(self.mean, dtype=np.float64))
        self.var = np.atleast_2d(np.asarray(self.var, dtype=np.float64))
        if self.mean.shape != self.var.shape:
            raise ValueError(f"mean {self.mean.shape} and variance {self.var.shape} differ in shape")

    @property
    def std(self):
        return np.sqrt(self.var)

    def __len__(self):
        return self.mean.shape[0]

    def rescale(self, shift, scale):
        """Map standardized outputs back to original units."""
        return GaussianPrediction(self.mean * scale + shift, self.var * np.square(scale))


@dataclass(eq=False)
class CategoricalPrediction:
    """Class probabilities, shape (N, K)."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))

    def __len__(self):
        return self.probs.shape[0]

    @property
    def labels(self):
        return np.argmax(self.probs, axis=1)
