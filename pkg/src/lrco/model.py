"""Feature extractor plus cosine-similarity classifier head, with exact gradients.

The network is a small MLP: tanh on hidden layers, identity on the feature
output. Classification normalizes both the feature and each classifier row,
takes their dot products, and pushes them through a temperature softmax. The
classifier rows are stored raw and normalized at use time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatchError
from .numerics import SeededRng


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description used by init_model."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    feature_dim: int
    n_classes: int
    t_ce: float = 0.05
    t_re: float | None = None

    def resolved_t_re(self) -> float:
        return self.t_ce if self.t_re is None else self.t_re

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden layer widths must be >= 1")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not self.t_ce > 0 or not self.resolved_t_re() > 0:
            raise ValueError("temperatures must be positive")


@dataclass
class ModelState:
    """All learnable arrays plus the two temperatures.

    weights[i] has shape (d_in, d_out) so a batch forward is x @ W + b;
    classifier has one row per class, shape (n_classes, feature_dim).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    classifier: np.ndarray
    t_ce: float
    t_re: float

    @property
    def n_classes(self) -> int:
        return self.classifier.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.classifier.shape[1]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def param_count(self) -> int:
        total = self.classifier.size
        for w, b in zip(self.weights, self.biases):
            total += w.size + b.size
        return total


@dataclass
class ParamTensors:
    """Autodiff view of a ModelState; duck-compatible with it for forward code."""

    weights: list[ad.Tensor]
    biases: list[ad.Tensor]
    classifier: ad.Tensor
    t_ce: float
    t_re: float


@dataclass
class GradientTape:
    """Gradients keyed like the state arrays; zero-filled for untouched parameters."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    classifier: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"layer{i}.weight"] = w
            out[f"layer{i}.bias"] = b
        out["classifier"] = self.classifier
        return out

    def flatten(self) -> np.ndarray:
        pieces = []
        for w, b in zip(self.weights, self.biases):
            pieces.append(w.ravel())
            pieces.append(b.ravel())
        pieces.append(self.classifier.ravel())
        return np.concatenate(pieces)


def _xavier_uniform(rng: SeededRng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_model(config: ModelConfig, rng: SeededRng) -> ModelState:
    """Build a fresh state: scaled symmetric uniform weights, zero biases."""
    config.validate()
    dims = (config.input_dim,) + tuple(config.hidden_dims) + (config.feature_dim,)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weights.append(_xavier_uniform(rng, d_in, d_out, (d_in, d_out)))
        biases.append(np.zeros(d_out))
    classifier = _xavier_uniform(
        rng, config.feature_dim, config.n_classes, (config.n_classes, config.feature_dim)
    )
    return ModelState(
        weights=weights,
        biases=biases,
        classifier=classifier,
        t_ce=float(config.t_ce),
        t_re=float(config.resolved_t_re()),
    )


def clone_state(m: ModelState) -> ModelState:
    """Deep copy; used to spawn the teacher as an exact student copy."""
    return ModelState(
        weights=[w.copy() for w in m.weights],
        biases=[b.copy() for b in m.biases],
        classifier=m.classifier.copy(),
        t_ce=m.t_ce,
        t_re=m.t_re,
    )


def features_of(model_like, x_rows):
    """Batch feature forward pass; works on ModelState (numpy) or ParamTensors (graph)."""
    h = x_rows
    last = len(model_like.weights) - 1
    for i, (w, b) in enumerate(zip(model_like.weights, model_like.biases)):
        h = ad.add(ad.matmul(h, w), b)
        if i < last:
            h = ad.tanh(h)
    return h


def probs_of(model_like, feature_rows):
    """Cosine-head class probabilities for a batch of raw features."""
    w_norm = ad.normalize_rows(model_like.classifier)
    logits = ad.matmul(ad.normalize_rows(feature_rows), w_norm, transpose_b=True)
    return ad.softmax_rows(logits, model_like.t_ce)


def forward_features(m: ModelState, x) -> np.ndarray:
    """Feature vector for one input (1-D in, 1-D out)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatchError("forward_features expects a single 1-D input")
    if x.shape[0] != m.input_dim:
        raise ShapeMismatchError(
            f"input has dim {x.shape[0]}, model expects {m.input_dim}"
        )
    return features_of(m, x.reshape(1, -1))[0]


def classify_probs(m: ModelState, f) -> np.ndarray:
    """Class probabilities for one raw feature vector (1-D in, 1-D out)."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1:
        raise ShapeMismatchError("classify_probs expects a single 1-D feature")
    if f.shape[0] != m.feature_dim:
        raise ShapeMismatchError(
            f"feature has dim {f.shape[0]}, model expects {m.feature_dim}"
        )
    return probs_of(m, f.reshape(1, -1))[0]


def lift_params(m: ModelState) -> ParamTensors:
    """Wrap every state array in a gradient-requiring tensor."""
    return ParamTensors(
        weights=[ad.Tensor(w, requires_grad=True) for w in m.weights],
        biases=[ad.Tensor(b, requires_grad=True) for b in m.biases],
        classifier=ad.Tensor(m.classifier, requires_grad=True),
        t_ce=m.t_ce,
        t_re=m.t_re,
    )


def tape_from(params: ParamTensors) -> GradientTape:
    def grad_or_zero(t: ad.Tensor) -> np.ndarray:
        return t.grad if t.grad is not None else np.zeros_like(t.value)

    return GradientTape(
        weights=[grad_or_zero(w) for w in params.weights],
        biases=[grad_or_zero(b) for b in params.biases],
        classifier=grad_or_zero(params.classifier),
    )


def compute_gradients(m: ModelState, loss_fn) -> GradientTape:
    """Exact reverse-mode gradients of loss_fn(params) with respect to m.

    loss_fn receives a ParamTensors view and must return a scalar. A loss
    that never touches the parameters (a plain number) yields a zero tape.
    """
    params = lift_params(m)
    loss = loss_fn(params)
    if isinstance(loss, ad.Tensor):
        loss.backward()
    return tape_from(params)


def ema_update(teacher: ModelState, student: ModelState, decay: float) -> ModelState:
    """Exponential moving average update of the teacher, in place.

    Every teacher array moves to decay * teacher + (1 - decay) * student.
    """
    if not 0.0 <= decay < 1.0:
        raise ValueError("decay must lie in [0, 1)")
    pairs = list(zip(teacher.weights, student.weights))
    pairs += list(zip(teacher.biases, student.biases))
    pairs.append((teacher.classifier, student.classifier))
    for t_arr, s_arr in pairs:
        if t_arr.shape != s_arr.shape:
            raise ShapeMismatchError("teacher and student shapes differ")
        t_arr[...] = decay * t_arr + (1.0 - decay) * s_arr
    return teacher


# Flat parameter-vector helpers for the finite-difference oracle.

def get_param_vector(m: ModelState) -> np.ndarray:
    pieces = []
    for w, b in zip(m.weights, m.biases):
        pieces.append(w.ravel())
        pieces.append(b.ravel())
    pieces.append(m.classifier.ravel())
    return np.concatenate(pieces)


def with_param_vector(m: ModelState, vec: np.ndarray) -> ModelState:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (m.param_count(),):
        raise ShapeMismatchError("parameter vector length mismatch")
    out = clone_state(m)
    offset = 0
    for w, b in zip(out.weights, out.biases):
        w[...] = vec[offset : offset + w.size].reshape(w.shape)
        offset += w.size
        b[...] = vec[offset : offset + b.size].reshape(b.shape)
        offset += b.size
    out.classifier[...] = vec[offset:].reshape(out.classifier.shape)
    return out


def state_arrays(m: ModelState, prefix: str = "") -> dict[str, np.ndarray]:
    """Named array view used by checkpoint serialization."""
    out: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        out[f"{prefix}layer{i}.weight"] = w
        out[f"{prefix}layer{i}.bias"] = b
    out[f"{prefix}classifier"] = m.classifier
    return out


def state_from_arrays(arrays: dict[str, np.ndarray], t_ce: float, t_re: float,
                      prefix: str = "") -> ModelState:
    weights, biases = [], []
    i = 0
    while f"{prefix}layer{i}.weight" in arrays:
        weights.append(np.array(arrays[f"{prefix}layer{i}.weight"], dtype=np.float64))
        biases.append(np.array(arrays[f"{prefix}layer{i}.bias"], dtype=np.float64))
        i += 1
    if not weights:
        raise ShapeMismatchError("no layer arrays found for prefix " + repr(prefix))
    classifier = np.array(arrays[f"{prefix}classifier"], dtype=np.float64)
    return ModelState(weights=weights, biases=biases, classifier=classifier,
                      t_ce=float(t_ce), t_re=float(t_re))


def states_allclose(a: ModelState, b: ModelState, atol: float = 0.0) -> bool:
    """Bitwise (atol=0) or tolerant comparison of two states."""
    if len(a.weights) != len(b.weights):
        return False
    arrays = list(zip(a.weights, b.weights)) + list(zip(a.biases, b.biases))
    arrays.append((a.classifier, b.classifier))
    for x, y in arrays:
        if x.shape != y.shape:
            return False
        if atol == 0.0:
            if not np.array_equal(x, y):
                return False
        elif not np.allclose(x, y, atol=atol, rtol=0.0):
            return False
    return True


__all__ = [
    "ModelConfig", "ModelState", "ParamTensors", "GradientTape",
    "init_model", "clone_state", "features_of", "probs_of",
    "forward_features", "classify_probs", "lift_params", "tape_from",
    "compute_gradients", "ema_update", "get_param_vector", "with_param_vector",
    "state_arrays", "state_from_arrays", "states_allclose",
]
