"""Small differentiable classifiers on flat parameter vectors.

Two architectures are supported: multinomial softmax regression and a
one-hidden-layer ReLU network (``mlp1``).  Parameters live in a single
float64 vector so that protocol code can average, serialize, and diff
them without knowing the architecture.  All functions are pure: they
return new arrays and never mutate their inputs (optimizer state is the
one explicitly mutable object, and ``train`` works on a private copy).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, ShapeError, ValidationError

MODEL_KINDS = ("softmax_regression", "mlp1")
OPTIMIZER_KINDS = ("sgd", "adam")

# Floor for log arguments inside the cross-entropy.
LOG_EPS = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; ``hidden_dim`` is ignored for softmax_regression."""

    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    init_seed: int = 0

    def __post_init__(self):
        problems = []
        if self.kind not in MODEL_KINDS:
            problems.append(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            problems.append("input_dim must be >= 1")
        if self.num_classes < 2:
            problems.append("num_classes must be >= 2")
        if self.kind == "mlp1" and self.hidden_dim < 1:
            problems.append("mlp1 requires hidden_dim >= 1")
        if problems:
            raise ConfigError(problems)

    def layout(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        """Ordered (name, shape) pairs defining the flat parameter vector."""
        d, c, h = self.input_dim, self.num_classes, self.hidden_dim
        if self.kind == "softmax_regression":
            return (("w0", (d, c)), ("b0", (c,)))
        return (("w0", (d, h)), ("b0", (h,)), ("w1", (h, c)), ("b1", (c,)))

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.layout())


@dataclass
class ModelParams:
    """A flat float64 parameter vector plus the layout that shapes it."""

    layout: tuple[tuple[str, tuple[int, ...]], ...]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ShapeError("parameter vector must be 1-d")
        expected = sum(int(np.prod(shape)) for _, shape in self.layout)
        if self.values.shape[0] != expected:
            raise ShapeError(
                f"parameter vector has {self.values.shape[0]} entries, layout needs {expected}"
            )

    @property
    def param_count(self) -> int:
        return int(self.values.shape[0])

    def tensors(self) -> dict[str, np.ndarray]:
        """Reshaped views into the flat vector, keyed by layout name."""
        out = {}
        offset = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            out[name] = self.values[offset : offset + size].reshape(shape)
            offset += size
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(self.layout, self.values.copy())

    def add(self, other: "ModelParams") -> "ModelParams":
        if other.layout != self.layout:
            raise ShapeError("cannot add parameters with different layouts")
        return ModelParams(self.layout, self.values + other.values)

    def scale(self, factor: float) -> "ModelParams":
        return ModelParams(self.layout, self.values * float(factor))


def init_model(spec: ModelSpec) -> ModelParams:
    """Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(spec.init_seed)
    chunks = []
    for name, shape in spec.layout():
        if name.startswith("w"):
            bound = 1.0 / np.sqrt(shape[0])
            chunks.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
        else:
            chunks.append(np.zeros(int(np.prod(shape))))
    return ModelParams(spec.layout(), np.concatenate(chunks))


def _check_inputs(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"expected inputs of shape (n, {spec.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("inputs contain non-finite values")
    return x


def _check_targets(spec: ModelSpec, targets: np.ndarray, n: int) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (n, spec.num_classes):
        raise ShapeError(
            f"expected targets of shape ({n}, {spec.num_classes}), got {targets.shape}"
        )
    if not np.all(np.isfinite(targets)):
        raise ValidationError("targets contain non-finite values")
    if targets.min(initial=0.0) < -1e-9:
        raise ValidationError("targets contain negative probabilities")
    sums = targets.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValidationError("target rows must sum to 1 within 1e-6")
    return targets


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cache(params: ModelParams, spec: ModelSpec, x: np.ndarray):
    t = params.tensors()
    if spec.kind == "softmax_regression":
        logits = x @ t["w0"] + t["b0"]
        return logits, None
    pre = x @ t["w0"] + t["b0"]
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ t["w1"] + t["b1"]
    return logits, hidden


def forward(params: ModelParams, spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per input row; rows sum to 1."""
    x = _check_inputs(spec, x)
    logits, _ = _forward_cache(params, spec, x)
    return _softmax(logits)


def loss_and_grad(
    params: ModelParams, spec: ModelSpec, x: np.ndarray, targets: np.ndarray
) -> tuple[float, ModelParams]:
    """Mean soft-target cross-entropy and its gradient.

    The loss is -mean_i sum_c targets[i,c] * log(max(p[i,c], 1e-12)); the
    gradient is the exact softmax/CE backward pass (p - t) / n.
    """
    x = _check_inputs(spec, x)
    targets = _check_targets(spec, targets, x.shape[0])
    n = x.shape[0]
    t = params.tensors()
    logits, hidden = _forward_cache(params, spec, x)
    probs = _softmax(logits)
    loss = float(-np.sum(targets * np.log(np.maximum(probs, LOG_EPS))) / n)

    dlogits = (probs - targets) / n
    grads = {}
    if spec.kind == "softmax_regression":
        grads["w0"] = x.T @ dlogits
        grads["b0"] = dlogits.sum(axis=0)
    else:
        grads["w1"] = hidden.T @ dlogits
        grads["b1"] = dlogits.sum(axis=0)
        dhidden = dlogits @ t["w1"].T
        dhidden = dhidden * (hidden > 0.0)
        grads["w0"] = x.T @ dhidden
        grads["b0"] = dhidden.sum(axis=0)
    flat = np.concatenate([grads[name].ravel() for name, _ in params.layout])
    return loss, ModelParams(params.layout, flat)


@dataclass
class OptimizerState:
    """First-order optimizer state; buffers are sized on first use."""

    kind: str
    learning_rate: float
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    slots: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValidationError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0.0:
            raise ValidationError("learning_rate must be positive")

    def clone(self) -> "OptimizerState":
        return OptimizerState(
            kind=self.kind,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            step_count=self.step_count,
            slots={k: v.copy() for k, v in self.slots.items()},
        )


def sgd_state(learning_rate: float, momentum: float = 0.0) -> OptimizerState:
    return OptimizerState(kind="sgd", learning_rate=learning_rate, momentum=momentum)


def adam_state(
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> OptimizerState:
    return OptimizerState(
        kind="adam", learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon
    )


def apply_gradient(opt: OptimizerState, params: ModelParams, grad: ModelParams) -> ModelParams:
    """One optimizer update; increments ``opt.step_count`` by exactly 1."""
    if grad.values.shape != params.values.shape:
        raise ShapeError("gradient and parameters have different sizes")
    opt.step_count += 1
    if opt.kind == "sgd":
        vel = opt.slots.get("velocity")
        if vel is None:
            vel = np.zeros_like(params.values)
        vel = opt.momentum * vel + grad.values
        opt.slots["velocity"] = vel
        return ModelParams(params.layout, params.values - opt.learning_rate * vel)
    m = opt.slots.get("m")
    v = opt.slots.get("v")
    if m is None:
        m = np.zeros_like(params.values)
        v = np.zeros_like(params.values)
    m = opt.beta1 * m + (1.0 - opt.beta1) * grad.values
    v = opt.beta2 * v + (1.0 - opt.beta2) * grad.values**2
    opt.slots["m"] = m
    opt.slots["v"] = v
    m_hat = m / (1.0 - opt.beta1**opt.step_count)
    v_hat = v / (1.0 - opt.beta2**opt.step_count)
    step = opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.epsilon)
    return ModelParams(params.layout, params.values - step)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def train(
    params: ModelParams,
    spec: ModelSpec,
    x: np.ndarray,
    targets: np.ndarray,
    opt: OptimizerState,
    epochs: int = 1,
    batch_size: int = 32,
    shuffle_seed: int = 0,
) -> ModelParams:
    """Minibatch training on soft targets; returns new parameters.

    The caller's optimizer state is cloned, so repeated calls with the
    same arguments produce identical results.  Batch order is drawn from
    a generator seeded with ``shuffle_seed`` and advances across epochs.
    """
    x = _check_inputs(spec, x)
    targets = _check_targets(spec, targets, x.shape[0])
    if x.shape[0] == 0:
        raise ValidationError("cannot train on an empty dataset")
    if epochs < 1:
        raise ValidationError("epochs must be >= 1")
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    state = opt.clone()
    current = params.copy()
    rng = np.random.default_rng(shuffle_seed)
    for _ in range(epochs):
        for idx in _batches(x.shape[0], batch_size, rng):
            _, grad = loss_and_grad(current, spec, x[idx], targets[idx])
            current = apply_gradient(state, current, grad)
    return current


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Integer labels to one-hot float64 rows."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError("labels must be 1-d")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError("labels out of range for num_classes")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def accuracy(params: ModelParams, spec: ModelSpec, x: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax probability matches the label."""
    probs = forward(params, spec, x)
    pred = probs.argmax(axis=1)
    labels = np.asarray(labels)
    if labels.shape != (x.shape[0],):
        raise ShapeError("labels must match the number of input rows")
    return float(np.mean(pred == labels))
