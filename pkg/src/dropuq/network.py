"""Fully-connected networks with row dropout.

Layer ``l`` computes ``y = (x * z) @ W + b`` with ``z ~ Bernoulli(p)`` during
training, i.e. row ``i`` of ``W`` is dropped when ``z[i] == 0``. At test time
the rows are scaled by their retain probability instead, ``y = (x * p) @ W + b``.
``p`` is always the probability of KEEPING a unit.

Every forward function accepts a single input vector or an (N, d) batch; masks
are drawn independently for every row of a batch.
"""

import json
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ShapeError, ValidationError
from .numerics import bernoulli_vector
from .prediction import CategoricalPrediction, GaussianPrediction

ACTIVATIONS = ("relu", "softplus", "softmax", "identity")
HEADS = ("gaussian", "point", "categorical")
CHECKPOINT_VERSION = 1
DEFAULT_VARIANCE_FLOOR = 1e-6


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(x):
    x = np.asarray(x, dtype=np.float64)
    s = x - np.max(x, axis=-1, keepdims=True)
    return s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    layer_dims: tuple
    activations: tuple
    retain_probs: tuple
    task: str = "regression"
    output_dims: int = 1
    head: str = "gaussian"
    variance_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "activations", tuple(self.activations))
        probs = tuple(np.asarray(p, dtype=np.float64).reshape(-1) for p in self.retain_probs)
        for p in probs:
            p.setflags(write=False)
        object.__setattr__(self, "retain_probs", probs)
        self.validate()

    @property
    def n_layers(self):
        return len(self.layer_dims) - 1

    @property
    def head_width(self):
        return self.layer_dims[-1]

    def validate(self):
        L = self.n_layers
        if L < 1 or any(d < 1 for d in self.layer_dims):
            raise ValidationError(f"need at least one layer with positive widths, got {self.layer_dims}")
        if len(self.activations) != L:
            raise ValidationError(f"{L} layers but {len(self.activations)} activations")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValidationError(f"unknown activation {a!r}")
        if "softmax" in self.activations[:-1]:
            raise ValidationError("softmax is only allowed on the final layer")
        if len(self.retain_probs) != L:
            raise ValidationError(f"{L} layers but {len(self.retain_probs)} retain-probability vectors")
        for l, p in enumerate(self.retain_probs):
            if p.shape != (self.layer_dims[l],):
                raise ValidationError(f"layer {l}: retain probabilities have length {p.size}, expected {self.layer_dims[l]}")
            if not np.all((p > 0.0) & (p <= 1.0)):
                raise ValidationError(f"layer {l}: retain probabilities must lie in (0, 1]")
        if self.task not in ("regression", "classification"):
            raise ValidationError(f"unknown task {self.task!r}")
        if self.head not in HEADS:
            raise ValidationError(f"unknown head {self.head!r}")
        if not self.variance_floor >= 0.0:
            raise ValidationError("variance floor must be non-negative")
        width = self.layer_dims[-1]
        if self.task == "classification":
            if self.head != "categorical" or self.activations[-1] != "softmax":
                raise ValidationError("classification needs a categorical head with softmax activation")
            if width != self.output_dims or width < 2:
                raise ValidationError(f"classification head width {width} must equal the class count {self.output_dims} >= 2")
        else:
            if self.activations[-1] != "identity":
                raise ValidationError("regression heads use identity activation on the final layer")
            expected = 2 * self.output_dims if self.head == "gaussian" else self.output_dims
            if self.head == "categorical" or width != expected:
                raise ValidationError(f"regression {self.head} head must have width {expected}, got {width}")

    @property
    def dropout_free(self):
        return all(np.all(p == 1.0) for p in self.retain_probs)

    def to_dict(self):
        return {
            "layer_dims": list(self.layer_dims),
            "activations": list(self.activations),
            "retain_probs": [p.tolist() for p in self.retain_probs],
            "task": self.task,
            "output_dims": self.output_dims,
            "head": self.head,
            "variance_floor": self.variance_floor,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def with_retain(self, hidden_retain=None, input_retain=None):
        probs = list(self.retain_probs)
        for l in range(self.n_layers):
            value = input_retain if l == 0 else hidden_retain
            if value is not None:
                probs[l] = np.full(self.layer_dims[l], float(value))
        return NetworkSpec(self.layer_dims, self.activations, probs, self.task,
                           self.output_dims, self.head, self.variance_floor)


def mlp_spec(input_dim, hidden, output_dims, task="regression", head=None,
             activation="relu", hidden_retain=0.5, input_retain=1.0,
             variance_floor=DEFAULT_VARIANCE_FLOOR):
    """Build a spec for a plain MLP.

    ``output_dims`` is the target dimension for regression and the class count
    for classification. Retain probabilities apply to the inputs of every
    layer: ``input_retain`` to the raw features, ``hidden_retain`` elsewhere.
    """
    if head is None:
        head = "categorical" if task == "classification" else "gaussian"
    if task == "classification":
        width = output_dims
    else:
        width = 2 * output_dims if head == "gaussian" else output_dims
    dims = [input_dim, *hidden, width]
    acts = [activation] * len(hidden) + ["softmax" if task == "classification" else "identity"]
    probs = [np.full(dims[l], input_retain if l == 0 else hidden_retain) for l in range(len(dims) - 1)]
    return NetworkSpec(tuple(dims), tuple(acts), tuple(probs), task, output_dims, head, variance_floor)


@dataclass(eq=False)
class NetworkParams:
    weights: list
    biases: list

    def check(self, spec):
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise ShapeError(f"params have {len(self.weights)} layers, spec has {spec.n_layers}")
        for l in range(spec.n_layers):
            w_shape = (spec.layer_dims[l], spec.layer_dims[l + 1])
            if self.weights[l].shape != w_shape or self.biases[l].shape != (w_shape[1],):
                raise ShapeError(
                    f"layer {l}: weight {self.weights[l].shape} / bias {self.biases[l].shape}, expected {w_shape}",
                    self.weights[l].shape, w_shape)

    def copy(self):
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self):
        return [*self.weights, *self.biases]

    def weight_sq_norm(self):
        return float(sum(np.sum(w * w) for w in self.weights))


@dataclass(eq=False)
class ForwardTrace:
    """Cache of a forward pass: layer inputs, masks and pre-activations."""

    inputs: list
    masks: list
    pre: list
    single: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def head(self):
        h = self.pre[-1]
        return h[0] if self.single else h


def init_params(spec, rng):
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for l in range(spec.n_layers):
        fan_in, fan_out = spec.layer_dims[l], spec.layer_dims[l + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append((2.0 * rng.uniform((fan_in, fan_out)) - 1.0) * bound)
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases)


class _PassCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0

    def add(self, n):
        with self._lock:
            self.value += n


forward_passes = _PassCounter()


def _as_batch(spec, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != spec.layer_dims[0]:
        raise ShapeError(f"input shape {x.shape} does not match input width {spec.layer_dims[0]}",
                         x.shape, (spec.layer_dims[0],))
    return X, single


def _activate(kind, y):
    if kind == "relu":
        return np.maximum(y, 0.0)
    if kind == "softplus":
        return softplus(y)
    return y


def _activation_grad(kind, y):
    if kind == "relu":
        return (y > 0.0).astype(np.float64)
    if kind == "softplus":
        return expit(y)
    return np.ones_like(y)


def _forward(spec, params, X, mask_fn):
    inputs, masks, pre = [], [], []
    h = X
    for l in range(spec.n_layers):
        z = mask_fn(l, h.shape)
        inputs.append(h)
        masks.append(z)
        y = (h * z) @ params.weights[l] + params.biases[l]
        pre.append(y)
        # final-layer softmax is applied by head_to_prediction, not here
        h = _activate(spec.activations[l], y) if l < spec.n_layers - 1 else y
    forward_passes.add(X.shape[0])
    return inputs, masks, pre


def forward_train(spec, params, x, rng):
    """Stochastic pass with freshly sampled dropout masks; returns the trace."""
    params.check(spec)
    X, single = _as_batch(spec, x)
    inputs, masks, pre = _forward(
        spec, params, X, lambda l, shape: bernoulli_vector(rng, spec.retain_probs[l], size=shape))
    return ForwardTrace(inputs, masks, pre, single)


def forward_with_masks(spec, params, x, masks):
    """Forward pass with caller-supplied masks (one (N, d) array per layer)."""
    params.check(spec)
    X, single = _as_batch(spec, x)
    if len(masks) != spec.n_layers:
        raise ShapeError(f"{len(masks)} masks for {spec.n_layers} layers")
    inputs, used, pre = _forward(
        spec, params, X, lambda l, shape: np.broadcast_to(np.asarray(masks[l], dtype=np.float64), shape))
    return ForwardTrace(inputs, used, pre, single)


def forward_infer_scaled(spec, params, x):
    """Deterministic single pass with rows scaled by retain probabilities."""
    params.check(spec)
    X, single = _as_batch(spec, x)
    _, _, pre = _forward(spec, params, X, lambda l, shape: spec.retain_probs[l])
    return pre[-1][0] if single else pre[-1]


def head_to_prediction(spec, head):
    """Map raw head outputs to a predictive distribution.

    Gaussian heads interleave ``[mean_0, raw_var_0, mean_1, raw_var_1, ...]``;
    variance is ``softplus(raw) + variance_floor``. Point heads get the floor
    as their variance.
    """
    H = np.atleast_2d(np.asarray(head, dtype=np.float64))
    if H.shape[1] != spec.head_width:
        raise ShapeError(f"head width {H.shape[1]} does not match {spec.head_width}", H.shape, (spec.head_width,))
    if spec.head == "categorical":
        return CategoricalPrediction(softmax(H))
    if spec.head == "point":
        return GaussianPrediction(H.copy(), np.full(H.shape, spec.variance_floor))
    return GaussianPrediction(H[:, 0::2].copy(), softplus(H[:, 1::2]) + spec.variance_floor)


def backward(spec, params, trace, grad_head):
    """Reverse-mode gradients of a sampled network.

    ``grad_head`` is dL/d(head) with the same leading shape as the trace.
    Gradients are summed over the batch rows. Returns ``(grad_W, grad_b)``.
    """
    params.check(spec)
    if len(trace.pre) != spec.n_layers:
        raise ShapeError(f"trace has {len(trace.pre)} layers, spec has {spec.n_layers}")
    for l in range(spec.n_layers):
        if trace.pre[l].shape[1] != spec.layer_dims[l + 1]:
            raise ShapeError(f"trace layer {l} width {trace.pre[l].shape[1]} does not match params",
                             trace.pre[l].shape, params.weights[l].shape)
    g = np.asarray(grad_head, dtype=np.float64)
    g = g[None, :] if g.ndim == 1 else g
    if g.shape != trace.pre[-1].shape:
        raise ShapeError(f"head gradient {g.shape} does not match head {trace.pre[-1].shape}",
                         g.shape, trace.pre[-1].shape)
    gW = [None] * spec.n_layers
    gb = [None] * spec.n_layers
    for l in range(spec.n_layers - 1, -1, -1):
        xm = trace.inputs[l] * trace.masks[l]
        gW[l] = xm.T @ g
        gb[l] = g.sum(axis=0)
        if l > 0:
            gx = (g @ params.weights[l].T) * trace.masks[l]
            g = gx * _activation_grad(spec.activations[l - 1], trace.pre[l - 1])
    return gW, gb


def checkpoint_dict(spec, params):
    return {
        "format_version": CHECKPOINT_VERSION,
        "kind": "model",
        "spec": spec.to_dict(),
        "variance_floor": spec.variance_floor,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_checkpoint(doc):
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    spec = NetworkSpec.from_dict(doc["spec"])
    params = NetworkParams(
        [np.array(w, dtype=np.float64).reshape(spec.layer_dims[l], spec.layer_dims[l + 1])
         for l, w in enumerate(doc["weights"])],
        [np.array(b, dtype=np.float64).reshape(-1) for b in doc["biases"]])
    params.check(spec)
    return spec, params


def dumps_checkpoint(spec, params):
    return json.dumps(checkpoint_dict(spec, params), indent=1, sort_keys=True) + "\n"


def loads_checkpoint(text):
    return params_from_checkpoint(json.loads(text))


def save_checkpoint(path, spec, params):
    with open(path, "w") as f:
        f.write(dumps_checkpoint(spec, params))


def load_checkpoint(path):
    with open(path) as f:
        return loads_checkpoint(f.read())
