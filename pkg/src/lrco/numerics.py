"""Float64 vector primitives, seeded randomness, and the finite-difference gradient oracle.

Everything here is deliberately small and boring: temperature softmax, l2
normalization, log-sum-exp, a Beta sampler built from Gamma draws, plus a
central-difference gradient used as the independent check on every analytic
gradient in the package.
"""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np

from .errors import DegenerateFeatureError

# Norm below which a vector has no usable direction. Callers get an error,
# never a silently clamped result.
NORM_EPS = 1e-12


def _as_finite_array(v, name: str = "v") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must contain only finite values")
    return arr


# Row-wise workhorses shared with the autodiff layer. They operate along the
# last axis, accept 1-D or 2-D input, and skip argument validation.

def softmax_last(v: np.ndarray, temperature: float) -> np.ndarray:
    z = v / temperature
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def normalize_last(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < NORM_EPS):
        raise DegenerateFeatureError(
            f"cannot normalize vector with norm below {NORM_EPS}"
        )
    return v / n


def logsumexp_last(v: np.ndarray) -> np.ndarray:
    m = np.max(v, axis=-1, keepdims=True)
    return np.squeeze(m, axis=-1) + np.log(np.sum(np.exp(v - m), axis=-1))


def softmax_t(v, temperature: float) -> np.ndarray:
    """Temperature softmax of a vector.

    The input is divided by the temperature first and max-shifted afterwards,
    so softmax_t(v, T) equals softmax_t(v / T, 1) bit for bit.
    """
    arr = _as_finite_array(v)
    if arr.ndim != 1:
        raise ValueError("softmax_t expects a 1-D vector")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    return softmax_last(arr, float(temperature))


def l2_normalize(v) -> np.ndarray:
    """Scale a vector to unit Euclidean norm; degenerate input is an error."""
    arr = _as_finite_array(v)
    if arr.ndim != 1:
        raise ValueError("l2_normalize expects a 1-D vector")
    return normalize_last(arr)


def log_sum_exp(v) -> float:
    """Numerically stable log(sum(exp(v))) of a vector."""
    arr = _as_finite_array(v)
    if arr.ndim != 1:
        raise ValueError("log_sum_exp expects a 1-D vector")
    return float(logsumexp_last(arr))


class SeededRng:
    """Deterministic random stream with labeled sub-stream derivation.

    A run owns a single root stream; every consumer (augmentation, shuffling,
    mix draws, init) derives its own child via substream(label), so streams
    never interleave and the whole run is reproducible from one 64-bit seed.
    """

    def __init__(self, seed: int, _lineage: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._lineage = tuple(int(x) for x in _lineage)
        entropy = (self.seed,) + self._lineage
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy))
        )

    def substream(self, label: str) -> "SeededRng":
        """Derive an independent child stream keyed by a stable label hash."""
        key = int.from_bytes(
            hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little"
        )
        return SeededRng(self.seed, self._lineage + (key,))

    # Draw helpers; all delegate to the underlying generator.

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def standard_gamma(self, shape_param: float, size=None):
        return self._gen.standard_gamma(shape_param, size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @property
    def state(self) -> dict:
        return self._gen.bit_generator.state

    @state.setter
    def state(self, value: dict) -> None:
        self._gen.bit_generator.state = value


def sample_beta(alpha: float, rng: SeededRng) -> float:
    """Draw from Beta(alpha, alpha), clamped to the open interval (0, 1).

    Uses the ratio of two Gamma(alpha) draws; alpha = 1 short-circuits to a
    single uniform draw since Beta(1, 1) is uniform.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if alpha == 1.0:
        lam = float(rng.uniform())
    else:
        x = float(rng.standard_gamma(alpha))
        y = float(rng.standard_gamma(alpha))
        while x + y == 0.0:  # both underflowed; only possible for tiny alpha
            x = float(rng.standard_gamma(alpha))
            y = float(rng.standard_gamma(alpha))
        lam = x / (x + y)
    return float(min(max(lam, 1e-12), 1.0 - 1e-12))


def finite_diff_grad(f: Callable[[np.ndarray], float], p, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at a parameter vector.

    This is the oracle side of every gradient check in the package; it must
    stay independent of the autodiff layer.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("finite_diff_grad expects a 1-D parameter vector")
    if not h > 0:
        raise ValueError("step size h must be positive")
    grad = np.empty_like(p)
    for i in range(p.size):
        forward = p.copy()
        backward = p.copy()
        forward[i] += h
        backward[i] -= h
        grad[i] = (float(f(forward)) - float(f(backward))) / (2.0 * h)
    return grad


def relative_grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative disagreement between two gradients."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(numeric)), 1e-12)
    return float(np.linalg.norm(analytic - numeric)) / denom
