import numpy as np
import pytest

from dropuq.losses import loss_from_head
from dropuq.network import forward_with_masks, init_params, mlp_spec
from dropuq.numerics import RngStream


def random_net(rng, task="regression", activation="softplus", retain=0.7, hidden=(5, 4), d_in=3, out=2):
    spec = mlp_spec(d_in, list(hidden), out, task=task, activation=activation, hidden_retain=retain)
    params = init_params(spec, rng)
    for b in params.biases:
        b[:] = 0.3 * rng.normal(b.shape)
    return spec, params


def finite_difference_grads(spec, params, X, Y, loss_spec, masks, h=1e-6):
    """Central differences of the total loss (incl. weight decay) with masks held fixed."""

    def f():
        head = forward_with_masks(spec, params, X, masks).pre[-1]
        return loss_from_head(spec, head, Y, loss_spec, params).total

    out = []
    for arr in params.arrays():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp = f()
            arr[idx] = orig - h
            fm = f()
            arr[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def grad_close(analytic, numeric, rel=1e-5, abs_floor=1e-7):
    """Relative agreement, with an absolute floor for entries that are ~0."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n) - abs_floor
        scale = np.maximum(np.abs(a), np.abs(n))
        ratio = np.where(err > 0, err / np.maximum(scale, 1e-300), 0.0)
        worst = max(worst, float(np.max(ratio)))
    return worst <= rel, worst


@pytest.fixture
def rng():
    return RngStream(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split()[0])):
            terminalreporter.write_line(line)
