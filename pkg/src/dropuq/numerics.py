"""Dense arithmetic helpers, a counter-based random stream and the normal quantile.

Matrices and vectors are plain float64 numpy arrays (2-D and 1-D). The random
stream is SplitMix64 keyed by ``(seed, stream_id)``:

    key      = mix64(seed ^ mix64(stream_id + GOLDEN))
    output_i = mix64(key + (counter + i + 1) * GOLDEN)    (mod 2**64)
    mix64(z) : z = (z ^ z >> 30) * 0xBF58476D1CE4E5B9
               z = (z ^ z >> 27) * 0x94D049BB133111EB
               z ^ z >> 31

Uniforms take the top 53 bits of each output, so sequences are identical on
every platform with IEEE doubles.
"""

import math

import numpy as np
from scipy.special import erfc

from .errors import ShapeError, ValidationError

GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

_G = np.uint64(GOLDEN)
_M1 = np.uint64(MIX1)
_M2 = np.uint64(MIX2)


def mix64(z):
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class RngStream:
    """Deterministic random stream; single owner, never shared between threads."""

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        self._key = mix64(self.seed ^ mix64(self.stream_id + GOLDEN))
        self.counter = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def derive(self, child):
        """Independent child stream; does not advance this stream."""
        sid = mix64((self.stream_id * GOLDEN + int(child) + 1) & MASK64)
        return RngStream(self.seed, sid)

    def next_u64(self, n):
        with np.errstate(over="ignore"):
            idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
            out = _mix64_array(np.uint64(self._key) + idx * _G)
        self.counter += n
        return out

    def uniform(self, size):
        """Uniform draws in [0, 1) with the given shape."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        bits = self.next_u64(n) >> np.uint64(11)
        return (bits.astype(np.float64) * 2.0**-53).reshape(shape)

    def normal(self, size):
        """Standard normal draws via the Box-Muller cosine branch."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        u = self.uniform(2 * n)
        r = np.sqrt(-2.0 * np.log1p(-u[:n]))
        return (r * np.cos(2.0 * np.pi * u[n:])).reshape(shape)

    def permutation(self, n):
        return np.argsort(self.uniform(n), kind="stable")

    def integers(self, high, size):
        """Integers in ``[0, high)``."""
        return np.minimum((self.uniform(size) * high).astype(np.int64), high - 1)


def matmul(a, b):
    """Matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}", a.shape, b.shape)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}", a.shape, b.shape)
    return a @ b


def bernoulli_vector(rng, p, size=None):
    """Draw a 0/1 mask where entry i is 1 with probability ``p[i]``.

    With ``size`` given, ``p`` broadcasts against it (e.g. one row of retain
    probabilities for a whole batch of masks).
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValidationError("probabilities must lie in [0, 1]")
    shape = p.shape if size is None else tuple(np.atleast_1d(size))
    u = rng.uniform(shape)
    return (u < p).astype(np.float64)


def normal_cdf(x):
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


# Acklam's rational approximation, relative error ~1.15e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(q):
    if q < _P_LOW:
        t = math.sqrt(-2.0 * math.log(q))
        num = ((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]
        return num / ((((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0)
    if q > 1.0 - _P_LOW:
        t = math.sqrt(-2.0 * math.log1p(-q))
        num = ((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]
        return -num / ((((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0)
    s = q - 0.5
    r = s * s
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * s
    return num / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)


def standard_normal_quantile(q):
    """Inverse standard normal CDF.

    Acklam's approximation followed by one Halley step against the
    erfc-based CDF; absolute error well below 1e-8 on (0, 1).
    """
    q = float(q)
    if not 0.0 < q < 1.0:
        raise ValidationError(f"quantile level must lie in (0, 1), got {q}")
    x = _acklam(q)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - q
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)
