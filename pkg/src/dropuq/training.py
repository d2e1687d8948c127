"""Minibatch training and the alpha sweep."""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .calibration import PAPER_Z_GRID, evaluate
from .errors import DropUQError, TrainingError, ValidationError
from .inference import predict_rdeepsense
from .losses import loss_from_head, loss_gradient_at_head, regularizer_gradient
from .network import backward, forward_infer_scaled, forward_train, init_params
from .numerics import RngStream

PAPER_ALPHAS = (0.0, 0.2, 0.4, 0.6, 0.8, 0.9)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    early_stop_patience: int = 0
    shuffle: bool = True
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch size must be at least 1")
        if not self.learning_rate > 0.0:
            raise ValidationError("learning rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.early_stop_patience < 0:
            raise ValidationError("patience must be non-negative")


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, arrays, grads):
        """Update ``arrays`` in place."""
        if self.m is None:
            self.m = [np.zeros_like(a) for a in arrays]
            self.v = [np.zeros_like(a) for a in arrays]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, arrays, grads):
        for a, g in zip(arrays, grads):
            a -= self.lr * g


def make_optimizer(config):
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    return Adam(config.learning_rate, config.beta1, config.beta2, config.eps)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    final_epoch: int = -1
    best_epoch: int = -1
    clip_norm: float = None
    clipped_steps: int = 0
    clamped_probs: int = 0
    seconds: float = 0.0

    def to_dict(self, timing=False):
        d = asdict(self)
        if not timing:
            d.pop("seconds")
        return d

    def train_losses(self):
        return [e["train_total"] for e in self.epochs]


def batch_gradients(spec, params, loss_spec, X, Y, rng):
    """Loss of one stochastic pass over a batch and its parameter gradients."""
    trace = forward_train(spec, params, X, rng)
    head = trace.pre[-1]
    value = loss_from_head(spec, head, Y, loss_spec, params)
    gW, gb = backward(spec, params, trace, loss_gradient_at_head(spec, head, Y, loss_spec))
    for g, r in zip(gW, regularizer_gradient(params, loss_spec)):
        g += r
    return value, gW + gb


def _validation_record(spec, params, loss_spec, val):
    head = forward_infer_scaled(spec, params, val.inputs)
    v = loss_from_head(spec, head, val.targets, loss_spec, params)
    rec = {"val_total": v.total, "val_nll": v.nll, "val_error": v.error}
    if spec.task == "regression":
        pred = predict_rdeepsense(spec, params, val.inputs)
        rec["val_mae"] = float(np.mean(np.abs(pred.mean - val.targets)))
    else:
        rec["val_accuracy"] = float(np.mean(np.argmax(head, axis=1) == val.targets))
    return rec


def _check_data(spec, ds, name):
    if ds is None:
        return
    if len(ds) == 0:
        raise ValidationError(f"{name} dataset is empty")
    if ds.input_dim != spec.layer_dims[0]:
        raise ValidationError(f"{name} inputs have width {ds.input_dim}, network expects {spec.layer_dims[0]}")
    if spec.task == "regression" and ds.targets.shape[1] != spec.output_dims:
        raise ValidationError(f"{name} targets have {ds.targets.shape[1]} dims, network expects {spec.output_dims}")


def train(spec, loss_spec, train_ds, val_ds, config, log=None):
    """Fit a network; returns ``(params, TrainReport)``.

    Masks are resampled for every sample of every batch. With early stopping
    the parameters of the best validation epoch are returned.
    """
    _check_data(spec, train_ds, "training")
    _check_data(spec, val_ds, "validation")
    if spec.task != loss_spec.task:
        raise ValidationError("network and loss disagree on the task")
    if spec.head == "point" and loss_spec.alpha != 1.0:
        raise ValidationError("point-estimate heads train on squared error only (alpha = 1)")
    if config.early_stop_patience and val_ds is None:
        raise ValidationError("early stopping needs a validation set")

    start = time.perf_counter()
    params = init_params(spec, RngStream(config.seed, 1))
    order_rng = RngStream(config.seed, 2)
    mask_rng = RngStream(config.seed, 3)
    opt = make_optimizer(config)
    report = TrainReport(clip_norm=config.clip_norm)
    best, best_score, stale = None, math.inf, 0
    n = len(train_ds)

    for epoch in range(config.epochs):
        order = order_rng.permutation(n) if config.shuffle else np.arange(n)
        sums = np.zeros(4)
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            value, grads = batch_gradients(spec, params, loss_spec, train_ds.inputs[idx],
                                           train_ds.targets[idx], mask_rng)
            if not math.isfinite(value.total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            report.clamped_probs += value.clamped
            sums += len(idx) * np.array([value.total, value.nll, value.error, value.reg])
            if config.clip_norm:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
                if norm > config.clip_norm:
                    report.clipped_steps += 1
                    grads = [g * (config.clip_norm / norm) for g in grads]
            opt.step(params.arrays(), grads)
        rec = dict(zip(("train_total", "train_nll", "train_error", "train_reg"), (sums / n).tolist()))
        rec["epoch"] = epoch
        if val_ds is not None:
            rec.update(_validation_record(spec, params, loss_spec, val_ds))
        report.epochs.append(rec)
        report.final_epoch = epoch
        if log:
            log(rec)
        if config.early_stop_patience:
            if rec["val_total"] < best_score:
                best, best_score, stale = params.copy(), rec["val_total"], 0
                report.best_epoch = epoch
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break

    if best is not None:
        params = best
    else:
        report.best_epoch = report.final_epoch
    report.seconds = time.perf_counter() - start
    return params, report


def alpha_seed(seed, index):
    """Seed for the model at position ``index`` of a sweep."""
    return int(seed) + int(index)


def sweep_alpha(spec, loss_spec, train_ds, val_ds, alphas=PAPER_ALPHAS, config=None,
                workers=1, grid=PAPER_Z_GRID):
    """Train one model per alpha and score each on the validation split.

    Returns one dict per alpha with the params, train report and validation
    CalibrationReport, or an ``error`` string when that run failed.
    """
    config = config or TrainConfig()
    alphas = [float(a) for a in alphas]
    if not alphas or any(not 0.0 <= a <= 1.0 for a in alphas):
        raise ValidationError("alphas must lie in [0, 1]")

    def run(i):
        a = alphas[i]
        cfg = replace(config, seed=alpha_seed(config.seed, i))
        out = {"alpha": a, "seed": cfg.seed}
        try:
            params, rep = train(spec, replace(loss_spec, alpha=a), train_ds, val_ds, cfg)
            out.update(params=params, train_report=rep,
                       report=evaluate(predict_rdeepsense(spec, params, val_ds.inputs), val_ds,
                                       method=f"rdeepsense(alpha={a})", grid=grid,
                                       variance_floor=spec.variance_floor))
        except DropUQError as exc:
            out["error"] = f"{exc.category}: {exc}"
        return out

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, range(len(alphas))))
    return [run(i) for i in range(len(alphas))]


def select_alpha(results, task="regression"):
    """Best sweep entry: minimum validation deviation area (regression) or NLL."""
    ok = [r for r in results if "error" not in r]
    if not ok:
        raise TrainingError("every alpha in the sweep failed")
    if task == "regression":
        return min(ok, key=lambda r: r["report"].deviation_area)
    return min(ok, key=lambda r: r["report"].nll)
