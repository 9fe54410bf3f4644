"""Numeric core: a fixed-layout MLP over flat parameter vectors.

Every operation here is a pure function of its inputs. Precision model:
parameter vectors are held in float64 containers, but training (init, Adam)
quantizes its outputs to the float32 grid, which is also the on-disk and
ledger precision. ``combine`` keeps the exact float64 difference instead of
re-rounding, so subtracting a recorded increment and adding it back restores
the original bits; with float32 re-rounding that inverse does not exist.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, InvalidArgument, NumericError, ShapeMismatch

F32 = np.float32
F64 = np.float64


@dataclass(frozen=True)
class ModelLayout:
    """Widths of the classifier: input features, hidden layers, classes."""

    input_dim: int
    hidden_dims: tuple[int, ...] = (128, 128)
    output_dim: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_dim", int(self.input_dim))
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        object.__setattr__(self, "output_dim", int(self.output_dim))
        if min(self.dims) <= 0:
            raise InvalidArgument(f"all layout dimensions must be positive, got {self.dims}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def param_count(self) -> int:
        d = self.dims
        return sum(d[i] * d[i + 1] + d[i + 1] for i in range(len(d) - 1))

    def layer_shapes(self) -> list[tuple[int, int]]:
        d = self.dims
        return [(d[i], d[i + 1]) for i in range(len(d) - 1)]


@dataclass
class ParameterVector:
    """Flat storage of every weight and bias, in layer order (W then b).

    The constructor normalizes dtype/contiguity but does not defensively copy;
    call :meth:`copy` when isolation is needed. Values produced by training
    sit on the float32 grid; ``combine`` results may carry exact sub-grid
    differences until they are quantized at the serialization boundary.
    """

    values: np.ndarray
    layout: ModelLayout

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.values, dtype=F64).ravel()
        if v.size != self.layout.param_count:
            raise ShapeMismatch(
                f"expected {self.layout.param_count} parameters for layout "
                f"{self.layout.dims}, got {v.size}"
            )
        self.values = v

    def __len__(self) -> int:
        return int(self.values.size)

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def bits_equal(self, other: "ParameterVector") -> bool:
        return self.layout == other.layout and np.array_equal(
            self.values.view(np.uint64), other.values.view(np.uint64)
        )


def _to_grid(values: np.ndarray) -> np.ndarray:
    """Quantize to the float32 grid, returned as float64."""
    return values.astype(F32).astype(F64)


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class OptimizerState:
    """Adam first/second moments (float32, like the stored form) plus the
    shared step counter."""

    m: np.ndarray
    v: np.ndarray
    step_count: int
    hyper: AdamHyper

    def __post_init__(self) -> None:
        self.m = np.ascontiguousarray(self.m, dtype=F32).ravel()
        self.v = np.ascontiguousarray(self.v, dtype=F32).ravel()
        if self.m.size != self.v.size:
            raise ShapeMismatch("m and v must have equal length")
        if self.step_count < 0:
            raise InvalidArgument("step_count must be non-negative")

    @classmethod
    def fresh(cls, layout: ModelLayout, hyper: AdamHyper | None = None) -> "OptimizerState":
        n = layout.param_count
        return cls(np.zeros(n, dtype=F32), np.zeros(n, dtype=F32), 0, hyper or AdamHyper())

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.m.copy(), self.v.copy(), self.step_count, self.hyper)


@dataclass
class Batch:
    """One training mini-batch with its dataset-global sample ids."""

    features: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=F32)
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64).ravel()
        if not (self.features.shape[0] == self.labels.size == self.sample_ids.size):
            raise ShapeMismatch("features, labels and sample_ids must have equal row counts")

    def __len__(self) -> int:
        return int(self.labels.size)


def _layer_views(flat: np.ndarray, layout: ModelLayout) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into (W, b) array views per layer."""
    out = []
    off = 0
    for fan_in, fan_out in layout.layer_shapes():
        w = flat[off : off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = flat[off : off + fan_out]
        off += fan_out
        out.append((w, b))
    return out


def init_params(layout: ModelLayout, seed: int) -> ParameterVector:
    """Scaled-uniform weight init, biases zero; deterministic in (layout, seed).

    Weights for a layer are drawn uniformly from
    [-sqrt(6 / (fan_in + fan_out)), +sqrt(6 / (fan_in + fan_out))].
    """
    rng = np.random.default_rng(seed)
    flat = np.zeros(layout.param_count, dtype=F64)
    for w, _b in _layer_views(flat, layout):
        fan_in, fan_out = w.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w[:] = _to_grid(rng.uniform(-limit, limit, size=w.shape)).reshape(fan_in, fan_out)
    return ParameterVector(flat, layout)


def _check_features(layout: ModelLayout, features: np.ndarray) -> np.ndarray:
    feats = np.asarray(features, dtype=F64)
    if feats.ndim != 2 or feats.shape[1] != layout.input_dim:
        raise ShapeMismatch(
            f"expected feature matrix with {layout.input_dim} columns, got shape {feats.shape}"
        )
    return feats


def forward(params: ParameterVector, features: np.ndarray) -> np.ndarray:
    """Class probabilities: ReLU hidden layers, softmax output. Rows sum to 1."""
    act = _check_features(params.layout, features)
    layers = _layer_views(params.values, params.layout)
    for w, b in layers[:-1]:
        act = np.maximum(act @ w + b, 0.0)
    w, b = layers[-1]
    logits = act @ w + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def loss_grad(params: ParameterVector, batch: Batch) -> tuple[float, ParameterVector]:
    """Mean softmax cross-entropy and its gradient via backpropagation.

    The loss goes through log-sum-exp with no probability clipping, so a run
    that collapses to zero probability surfaces as an infinite loss rather
    than being masked. The returned gradient is quantized to the float32 grid.
    """
    if len(batch) == 0:
        raise EmptyInput("loss_grad requires a non-empty batch")
    layout = params.layout
    feats = _check_features(layout, batch.features)
    labels = batch.labels
    if labels.min() < 0 or labels.max() >= layout.output_dim:
        raise InvalidArgument("labels must be class indices within the layout's output_dim")

    layers = _layer_views(params.values, layout)
    acts = [feats]
    pres = []
    for w, b in layers[:-1]:
        z = acts[-1] @ w + b
        pres.append(z)
        acts.append(np.maximum(z, 0.0))
    w, b = layers[-1]
    logits = acts[-1] @ w + b

    rows = np.arange(len(batch))
    mx = logits.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(logits - mx).sum(axis=1))
    loss = float(np.mean(lse - logits[rows, labels]))

    delta = np.exp(logits - lse[:, None])
    delta[rows, labels] -= 1.0
    delta /= len(batch)

    grad_flat = np.zeros(layout.param_count, dtype=F64)
    grad_views = _layer_views(grad_flat, layout)
    for k in range(len(layers) - 1, -1, -1):
        gw, gb = grad_views[k]
        gw[:] = acts[k].T @ delta
        gb[:] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ layers[k][0].T) * (pres[k - 1] > 0.0)
    return loss, ParameterVector(_to_grid(grad_flat), layout)


def adam_step(
    params: ParameterVector, state: OptimizerState, grad: ParameterVector
) -> tuple[ParameterVector, OptimizerState]:
    """One bias-corrected Adam update; returns fresh params and state.

    The moment and step arithmetic runs in float32 and the new parameters are
    quantized back to the float32 grid, so a checkpoint written to disk resumes
    bit-identically to an uninterrupted run.
    """
    if params.layout != grad.layout or state.m.size != params.values.size:
        raise ShapeMismatch("params, state and grad must share one layout")
    g = grad.values.astype(F32)
    if not np.isfinite(g).all():
        raise NumericError("gradient contains non-finite elements")
    h = state.hyper
    t = state.step_count + 1
    m = h.beta1 * state.m + (1.0 - h.beta1) * g
    v = h.beta2 * state.v + (1.0 - h.beta2) * (g * g)
    m_hat = m / (1.0 - h.beta1**t)
    v_hat = v / (1.0 - h.beta2**t)
    step = h.learning_rate * (m_hat / (np.sqrt(v_hat) + h.epsilon))
    new_values = (params.values.astype(F32) - step).astype(F64)
    return ParameterVector(new_values, params.layout), OptimizerState(m, v, t, h)


def evaluate(params: ParameterVector, dataset) -> float:
    """Fraction of samples whose argmax probability matches the label.

    Ties resolve toward the lower class index. ``dataset`` is anything with
    ``features`` and ``labels`` attributes.
    """
    feats = np.asarray(dataset.features)
    labels = np.asarray(dataset.labels).ravel()
    if feats.shape[0] == 0:
        raise EmptyInput("evaluate requires a non-empty dataset")
    preds = forward(params, feats).argmax(axis=1)
    return float((preds == labels).mean())


def combine(a: ParameterVector, b: ParameterVector, sign: str) -> ParameterVector:
    """Elementwise a + b or a - b, kept exact in the float64 container.

    For float32-grid operands whose elementwise exponents stay within 2**28 of
    each other (always true for trained parameters against their recorded
    increments) the result is the exact real difference or sum, which is what
    makes subtract-then-add an exact inverse. The sign of a zero operand is
    the one exception: IEEE addition maps -0.0 + 0.0 to +0.0, and training
    never produces -0.0 coordinates.
    """
    if a.layout != b.layout:
        raise ShapeMismatch("combine requires vectors with identical layouts")
    if sign in ("-", "−"):
        return ParameterVector(a.values - b.values, a.layout)
    if sign == "+":
        return ParameterVector(a.values + b.values, a.layout)
    raise InvalidArgument(f"sign must be '+' or '-', got {sign!r}")
