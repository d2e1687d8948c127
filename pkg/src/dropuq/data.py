"""Synthetic generators with known noise, CSV ingestion, splits and standardization."""

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, ValidationError
from .numerics import RngStream

DEFAULT_FRACTIONS = (0.96, 0.02, 0.02)


@dataclass(eq=False)
class Dataset:
    """Inputs (N, d) with regression targets (N, D) or integer labels (N,).

    ``x_mean``/``x_std`` and ``y_mean``/``y_std`` record the standardization
    applied to the stored arrays (identity when unstandardized).
    """

    inputs: np.ndarray
    targets: np.ndarray
    task: str = "regression"
    x_mean: np.ndarray = None
    x_std: np.ndarray = None
    y_mean: np.ndarray = None
    y_std: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        if self.task == "classification":
            self.targets = np.asarray(self.targets).astype(np.int64).reshape(-1)
        else:
            t = np.asarray(self.targets, dtype=np.float64)
            self.targets = t.reshape(-1, 1) if t.ndim == 1 else t
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DataError(f"{self.inputs.shape[0]} input rows but {self.targets.shape[0]} targets")
        d = self.inputs.shape[1]
        if self.x_mean is None:
            self.x_mean, self.x_std = np.zeros(d), np.ones(d)
        if self.task == "regression" and self.y_mean is None:
            self.y_mean, self.y_std = np.zeros(self.output_dims), np.ones(self.output_dims)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    @property
    def output_dims(self):
        if self.task == "classification":
            return int(self.provenance.get("classes", int(self.targets.max()) + 1))
        return self.targets.shape[1]

    def subset(self, idx):
        return replace(self, inputs=self.inputs[idx], targets=self.targets[idx])

    def raw_targets(self):
        if self.task == "classification":
            return self.targets
        return self.targets * self.y_std + self.y_mean

    def raw_inputs(self):
        return self.inputs * self.x_std + self.x_mean

    def to_dict(self):
        d = {
            "task": self.task,
            "inputs": self.raw_inputs().tolist(),
            "targets": self.raw_targets().tolist(),
            "provenance": self.provenance,
        }
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["inputs"], dtype=np.float64), np.array(d["targets"]), d["task"],
                   provenance=dict(d.get("provenance", {})))


def gen_heteroscedastic(n, seed, low=-4.0, high=4.0, noise_base=0.05, noise_slope=0.2):
    """``y = sin(2x) + 0.3x + eps`` with ``eps ~ N(0, (noise_base + noise_slope*|x|)^2)``."""
    if n < 1:
        raise ValidationError("n must be positive")
    rng = RngStream(seed, 0x6865)
    x = low + (high - low) * rng.uniform(n)
    std = noise_base + noise_slope * np.abs(x)
    y = np.sin(2.0 * x) + 0.3 * x + std * rng.normal(n)
    prov = {"generator": "heteroscedastic", "n": n, "seed": seed, "low": low, "high": high,
            "noise_base": noise_base, "noise_slope": noise_slope,
            "mean_fn": "sin(2x) + 0.3x", "noise_std_fn": "noise_base + noise_slope*|x|"}
    return Dataset(x[:, None], y[:, None], "regression", provenance=prov)


def heteroscedastic_truth(x, noise_base=0.05, noise_slope=0.2):
    """Analytic mean and noise std of the heteroscedastic generator."""
    x = np.asarray(x, dtype=np.float64)
    return np.sin(2.0 * x) + 0.3 * x, noise_base + noise_slope * np.abs(x)


def blob_centers(k, separation):
    angles = 2.0 * np.pi * np.arange(k) / k
    return separation * np.column_stack([np.cos(angles), np.sin(angles)])


def gen_blobs(n, k, separation, seed, noise=1.0):
    """K isotropic 2-D Gaussian clusters on a circle of radius ``separation``."""
    if n < 1 or k < 2:
        raise ValidationError("need n >= 1 and at least two classes")
    rng = RngStream(seed, 0x626C)
    labels = rng.integers(k, n)
    x = blob_centers(k, separation)[labels] + noise * rng.normal((n, 2))
    prov = {"generator": "blobs", "n": n, "classes": k, "separation": separation,
            "noise": noise, "seed": seed}
    return Dataset(x, labels, "classification", provenance=prov)


def load_csv(path, features, targets, task="regression"):
    """Read a headered CSV; ``targets`` is a list of column names (one for labels)."""
    features, targets = list(features), list(targets)
    if task == "classification" and len(targets) != 1:
        raise DataError("classification needs exactly one target column")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty file", line=1) from None
        for name in features + targets:
            if name not in header:
                raise DataError(f"unknown column {name!r}", line=1)
        cols = [header.index(c) for c in features + targets]
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} cells, found {len(row)}", line=line)
            values = []
            for c in cols:
                cell = row[c].strip()
                if cell == "":
                    raise DataError(f"missing value in column {header[c]!r}", line=line)
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"non-numeric value {cell!r} in column {header[c]!r}", line=line) from None
                if not math.isfinite(v):
                    raise DataError(f"non-finite value in column {header[c]!r}", line=line)
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError("no data rows")
    arr = np.array(rows, dtype=np.float64)
    nf = len(features)
    y = arr[:, nf:]
    if task == "classification":
        if np.any(y != np.round(y)) or np.any(y < 0):
            raise DataError("class labels must be non-negative integers")
        y = y[:, 0].astype(np.int64)
    prov = {"source": "csv", "path": str(path), "features": features, "targets": targets}
    if task == "classification":
        prov["classes"] = int(y.max()) + 1
    return Dataset(arr[:, :nf], y, task, provenance=prov)


def split(dataset, fractions=DEFAULT_FRACTIONS, seed=0):
    """Seeded disjoint train/val/test split."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = len(dataset)
    order = RngStream(seed, 0x73706C).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    parts = order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
    return tuple(dataset.subset(np.sort(p)) for p in parts)


def _safe_std(a):
    s = a.std(axis=0)
    return np.where(s > 0.0, s, 1.0)


def standardize(train, *others):
    """Standardize features (and regression targets) with train statistics only."""
    xm, xs = train.inputs.mean(axis=0), _safe_std(train.inputs)
    out = []
    for ds in (train, *others):
        kw = {"inputs": (ds.inputs - xm) / xs, "x_mean": xm, "x_std": xs}
        if ds.task == "regression":
            if ds is train:
                ym, ys = train.targets.mean(axis=0), _safe_std(train.targets)
            kw.update(targets=(ds.targets - ym) / ys, y_mean=ym, y_std=ys)
        out.append(replace(ds, **kw))
    return tuple(out)
