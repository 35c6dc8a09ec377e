"""Feedforward network with random orthogonal additive filters.

Each layer computes ``x_next = alpha * phi(W x + b) + (1 - alpha) * O x`` where
``O`` is a fixed semi-orthogonal filter. With ``alpha == 1`` this is the plain
multilayer perceptron.

Batches are stored row-wise: an input of shape (batch, N_0) produces
activations of shape (batch, N_l). Single vectors are accepted and treated as
a batch of one.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .filters import FilterKind, FilterPlan, build_filters
from .linalg import ShapeError


class ActivationKind(str, enum.Enum):
    TANH = "tanh"
    RELU = "relu"
    IDENTITY = "identity"

    def __call__(self, y: np.ndarray) -> np.ndarray:
        if self is ActivationKind.TANH:
            return np.tanh(y)
        if self is ActivationKind.RELU:
            return np.maximum(y, 0.0)
        return np.array(y, dtype=np.float64, copy=True)

    def derivative(self, y: np.ndarray) -> np.ndarray:
        # relu'(0) is taken as 0
        if self is ActivationKind.TANH:
            t = np.tanh(y)
            return 1.0 - t * t
        if self is ActivationKind.RELU:
            return (y > 0.0).astype(np.float64)
        return np.ones_like(y, dtype=np.float64)

    @property
    def r(self) -> float:
        """Upper bound of the derivative over the real line."""
        return 1.0


def alpha_from_rho(rho: float, depth: int) -> float:
    """``alpha = rho / (depth - 1)`` for a stack of ``depth`` transitions."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if depth < 2:
        raise ValueError("the rho parametrization needs depth >= 2")
    return rho / (depth - 1)


@dataclass
class RoaFnnModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    filters: list[np.ndarray]
    alpha: float
    activation: ActivationKind = ActivationKind.TANH
    rho: float | None = None

    def __post_init__(self):
        self.activation = ActivationKind(self.activation)
        if not (len(self.weights) == len(self.biases) == len(self.filters)):
            raise ShapeError("weights, biases and filters must have one entry per layer")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        for l, (w, b, o) in enumerate(zip(self.weights, self.biases, self.filters)):
            if w.shape != o.shape:
                raise ShapeError(f"layer {l}: weight shape {w.shape} differs from filter shape {o.shape}")
            if b.shape != (w.shape[0],):
                raise ShapeError(f"layer {l}: bias shape {b.shape} does not match weight rows {w.shape[0]}")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeError(f"layer {l}: input size {w.shape[1]} != previous output size")

    @classmethod
    def init(
        cls,
        dims,
        *,
        rho: float | None = None,
        alpha: float | None = None,
        activation="tanh",
        filter_kind=FilterKind.RANDOM_ORTHOGONAL,
        recycle: bool = False,
        seed: int = 0,
        weight_std: float = 1.0,
    ) -> "RoaFnnModel":
        """Normal(0, weight_std) weights and biases plus freshly drawn filters.

        Exactly one of ``rho`` and ``alpha`` is required.
        """
        dims = [int(d) for d in dims]
        depth = len(dims) - 1
        if (rho is None) == (alpha is None):
            raise ValueError("pass exactly one of rho and alpha")
        if rho is not None:
            alpha = alpha_from_rho(rho, depth)
        param_seed, filter_seed = np.random.SeedSequence(seed).spawn(2)
        rng = np.random.default_rng(param_seed)
        weights, biases = [], []
        for n_in, n_out in zip(dims, dims[1:]):
            weights.append(rng.normal(0.0, weight_std, size=(n_out, n_in)))
            biases.append(rng.normal(0.0, weight_std, size=n_out))
        plan = FilterPlan(dims, kind=filter_kind, recycle=recycle,
                          seed=int(filter_seed.generate_state(1)[0]))
        return cls(weights, biases, build_filters(plan), float(alpha), activation, rho)

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"W{l}"] = w
            params[f"b{l}"] = b
        return params

    def layer_jacobian(self, l: int, d: np.ndarray) -> np.ndarray:
        """``alpha * diag(d) W_l + (1 - alpha) O_l`` for one derivative vector."""
        return self.alpha * d[:, None] * self.weights[l] + (1.0 - self.alpha) * self.filters[l]


@dataclass
class ForwardTrace:
    """Cached quantities of one forward pass (rows are batch members)."""

    activations: list[np.ndarray]  # x_0 .. x_L
    preactivations: list[np.ndarray]  # y_0 .. y_{L-1}
    derivatives: list[np.ndarray]  # phi'(y_l)

    @property
    def batch_size(self) -> int:
        return self.activations[0].shape[0]


@dataclass
class FnnGradients:
    dW: list[np.ndarray]
    db: list[np.ndarray]
    # backpropagated error reaching layer s + 1, i.e. (dx_L/dx_{s+1})^T E
    error_signals: list[np.ndarray] | None = None

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for l, (w, b) in enumerate(zip(self.dW, self.db)):
            out[f"W{l}"] = w
            out[f"b{l}"] = b
        return out


def _as_batch(x, size: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != size:
        raise ShapeError(f"{what} must have trailing size {size}, got shape {x.shape}")
    return x


def fnn_forward(model: RoaFnnModel, x0) -> tuple[np.ndarray, ForwardTrace]:
    single = np.ndim(x0) == 1
    x = _as_batch(x0, model.layer_dims[0], "input")
    a = model.alpha
    xs, ys, ds = [x], [], []
    phi = model.activation
    for w, b, o in zip(model.weights, model.biases, model.filters):
        y = x @ w.T + b
        x = a * phi(y) + (1.0 - a) * (x @ o.T)
        ys.append(y)
        ds.append(phi.derivative(y))
        xs.append(x)
    out = x[0] if single else x
    return out, ForwardTrace(xs, ys, ds)


def fnn_backward(model: RoaFnnModel, trace: ForwardTrace, error) -> FnnGradients:
    """Gradients of the loss whose output derivative is ``error``.

    Batched errors yield gradients summed over the batch.
    """
    if len(trace.preactivations) != model.depth:
        raise ShapeError(f"trace has {len(trace.preactivations)} layers, model has {model.depth}")
    g = _as_batch(error, model.layer_dims[-1], "error")
    if g.shape[0] != trace.batch_size:
        raise ShapeError(f"error batch {g.shape[0]} != trace batch {trace.batch_size}")
    a = model.alpha
    depth = model.depth
    dW: list[np.ndarray] = [None] * depth
    db: list[np.ndarray] = [None] * depth
    signals: list[np.ndarray] = [None] * depth
    for s in range(depth - 1, -1, -1):
        signals[s] = g
        delta = a * g * trace.derivatives[s]
        dW[s] = delta.T @ trace.activations[s]
        db[s] = delta.sum(axis=0)
        if s:
            g = delta @ model.weights[s] + (1.0 - a) * (g @ model.filters[s])
    return FnnGradients(dW, db, signals)


def fnn_ioj(model: RoaFnnModel, trace: ForwardTrace, sample: int = 0) -> np.ndarray:
    """Input-output Jacobian dx_L/dx_1 of one batch member."""
    dims = model.layer_dims
    p = np.eye(dims[-1])
    for l in range(model.depth - 1, 0, -1):
        p = p @ model.layer_jacobian(l, trace.derivatives[l][sample])
    return p


def fnn_loss_mse(output, target) -> tuple[float, np.ndarray]:
    """Squared error ``||target - output||^2`` and its output derivative.

    With more than one axis, every index except the last is a sample: the loss
    is the sample mean and the error carries the matching 1/count factor, so a
    backward pass yields averaged gradients.
    """
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if output.shape != target.shape:
        raise ShapeError(f"output shape {output.shape} != target shape {target.shape}")
    diff = target - output
    if output.ndim <= 1:
        return float(diff @ diff), -2.0 * diff
    m = int(np.prod(output.shape[:-1]))
    return float(np.sum(diff * diff) / m), -2.0 * diff / m
