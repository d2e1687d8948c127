"""Predictive-uncertainty strategies.

* ``rdeepsense``       one pass with retain-probability scaling
* ``rdeepsense-mcK``   K dropout passes, Gaussian mixture collapsed by moment matching
* ``mcdrop-K``         K dropout passes of a point-estimate network, sample moments
* ``ssp-K``            uniform mixture of K independently trained networks

A model is a ``(spec, params)`` pair; ``ssp`` takes a list of them.
"""

import re
import time
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .network import forward_infer_scaled, forward_passes, forward_train, head_to_prediction
from .numerics import RngStream
from .prediction import CategoricalPrediction, GaussianPrediction

KINDS = ("rdeepsense", "rdeepsense-mc", "mcdrop", "ssp")


@dataclass(frozen=True)
class MethodSpec:
    kind: str
    k: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown method kind {self.kind!r}")
        if self.kind in ("rdeepsense-mc", "mcdrop") and self.k < 2:
            raise ValidationError(f"{self.kind} needs k >= 2 samples, got {self.k}")
        if self.kind == "ssp" and self.k < 1:
            raise ValidationError("ssp needs at least one member")
        if self.kind == "rdeepsense" and self.k != 1:
            raise ValidationError("rdeepsense is a single-pass method")

    @property
    def name(self):
        if self.kind == "rdeepsense":
            return "rdeepsense"
        if self.kind == "rdeepsense-mc":
            return f"rdeepsense-mc{self.k}"
        return f"{self.kind}-{self.k}"

    @property
    def passes(self):
        return self.k

    @classmethod
    def parse(cls, text):
        text = text.strip().lower()
        if text == "rdeepsense":
            return cls("rdeepsense")
        m = re.fullmatch(r"(rdeepsense-mc|mcdrop|ssp)[-:]?(\d+)", text)
        if not m:
            raise ValidationError(f"cannot parse method {text!r}")
        return cls(m.group(1), int(m.group(2)))


def mixture_moments(means, variances):
    """Mean and variance of a uniform Gaussian mixture (components on axis 0).

    Equal to ``mean(var + mean^2) - mu^2``; evaluated as
    ``mean(var) + mean((mean - mu)^2)`` to avoid cancellation.
    """
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    mu = np.mean(means, axis=0)
    var = np.mean(variances, axis=0) + np.mean(np.square(means - mu), axis=0)
    return mu, var


def _aggregate(preds):
    if isinstance(preds[0], CategoricalPrediction):
        return CategoricalPrediction(np.mean([p.probs for p in preds], axis=0))
    mu, var = mixture_moments([p.mean for p in preds], [p.var for p in preds])
    return GaussianPrediction(mu, var)


def predict_rdeepsense(spec, params, x):
    return head_to_prediction(spec, forward_infer_scaled(spec, params, x))


def _sample_heads(spec, params, x, k, rng):
    # stream m drives pass m, so results do not depend on pass scheduling
    return [forward_train(spec, params, x, rng.derive(m)).pre[-1] for m in range(k)]


def predict_mc_rdeepsense(spec, params, x, k, rng):
    if k < 2:
        raise ValidationError("Monte-Carlo prediction needs k >= 2")
    return _aggregate([head_to_prediction(spec, h) for h in _sample_heads(spec, params, x, k, rng)])


def predict_mcdrop(spec, params, x, k, rng):
    """Sample moments of k stochastic point predictions.

    Gaussian-head models contribute their mean channel only.
    """
    if k < 2:
        raise ValidationError("MC dropout needs k >= 2")
    preds = [head_to_prediction(spec, h) for h in _sample_heads(spec, params, x, k, rng)]
    if spec.task == "classification":
        return _aggregate(preds)
    samples = np.stack([p.mean for p in preds])
    return GaussianPrediction(samples.mean(axis=0), samples.var(axis=0, ddof=1) + spec.variance_floor)


def predict_ensemble(models, x):
    if not models:
        raise ValidationError("ensemble needs at least one model")
    spec0 = models[0][0]
    for spec, _ in models:
        if spec.to_dict() != spec0.to_dict():
            raise ValidationError("ensemble members must share one network spec")
        if not spec.dropout_free:
            raise ValidationError("ensemble members must have dropout disabled (retain 1)")
    return _aggregate([predict_rdeepsense(spec, params, x) for spec, params in models])


def predict(method, models, x, rng=None):
    """Dispatch on a MethodSpec; ``models`` is one (spec, params) or a list for ssp."""
    if method.kind == "ssp":
        members = list(models)
        if len(members) < method.k:
            raise ValidationError(f"ssp-{method.k} needs {method.k} members, got {len(members)}")
        return predict_ensemble(members[:method.k], x)
    spec, params = models if isinstance(models, tuple) else models[0]
    if method.kind == "rdeepsense":
        return predict_rdeepsense(spec, params, x)
    rng = rng if rng is not None else RngStream(0, 0x6D63)
    if method.kind == "rdeepsense-mc":
        return predict_mc_rdeepsense(spec, params, x, method.k, rng)
    return predict_mcdrop(spec, params, x, method.k, rng)


def bench_inference(method, models, inputs, repetitions, warmup=3, seed=0):
    """Per-sample wall-clock latency of ``predict`` on single inputs.

    Every repetition predicts each row of ``inputs`` separately. Warm-up calls
    are excluded from the timings.
    """
    if repetitions < 1:
        raise ValidationError("repetitions must be at least 1")
    X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValidationError("benchmark needs at least one input row")
    rng = RngStream(seed, 0x62656E)
    for i in range(warmup):
        predict(method, models, X[i % X.shape[0]], rng)
    times = []
    before = forward_passes.value
    for _ in range(repetitions):
        for row in X:
            t0 = time.perf_counter()
            predict(method, models, row, rng)
            times.append(time.perf_counter() - t0)
    calls = len(times)
    passes = (forward_passes.value - before) / calls
    return {
        "method": method.name,
        "median_seconds": float(np.median(times)),
        "p95_seconds": float(np.percentile(times, 95)),
        "passes_per_prediction": passes,
        "calls": calls,
        "warmup": warmup,
    }
