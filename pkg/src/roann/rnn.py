"""Recurrent network with a fixed orthogonal additive filter.

State update and readout::

    x_{k+1} = alpha * phi(W_h x_k + b_h + W_i u_{k+1}) + (1 - alpha) * O x_k
    z_{k+1} = psi(W_o x_{k+1} + b_o)

``alpha == 1`` gives the vanilla (Elman) RNN and ``O == I`` the eyeRNN
variant. Sequences are time-major: inputs have shape (T, batch, input_dim).
"""

from __future__ import annotations

import enum
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .filters import gen_semi_orthogonal
from .fnn import ActivationKind, fnn_loss_mse
from .linalg import ShapeError

__all__ = [
    "Readout",
    "RoaRnnModel",
    "RnnTrace",
    "RnnGradients",
    "ContinuousTimeRnn",
    "rnn_forward",
    "rnn_backward",
    "rnn_ioj",
    "rnn_step_jacobians",
    "ct_step",
    "rnn_loss_cross_entropy",
    "rnn_loss_mse",
]


class Readout(str, enum.Enum):
    IDENTITY = "identity"
    SOFTMAX = "softmax"


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class RoaRnnModel:
    W_h: np.ndarray
    b_h: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray
    O: np.ndarray
    alpha: float
    activation: ActivationKind = ActivationKind.RELU
    readout: Readout = Readout.IDENTITY
    rho: float | None = None

    def __post_init__(self):
        self.activation = ActivationKind(self.activation)
        self.readout = Readout(self.readout)
        n = self.W_h.shape[0]
        if self.W_h.shape != (n, n) or self.O.shape != (n, n):
            raise ShapeError(f"W_h {self.W_h.shape} and O {self.O.shape} must both be ({n}, {n})")
        if self.b_h.shape != (n,) or self.W_i.shape[0] != n or self.W_o.shape[1] != n:
            raise ShapeError("bias, input and output weights must match the hidden size")
        if self.b_o.shape != (self.W_o.shape[0],):
            raise ShapeError(f"output bias {self.b_o.shape} does not match W_o {self.W_o.shape}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @classmethod
    def init(
        cls,
        hidden: int,
        input_dim: int,
        output_dim: int,
        *,
        alpha: float,
        activation="relu",
        readout="identity",
        filter: str = "orthogonal",
        seed: int = 0,
        weight_std: float = 1.0,
        recurrent_std: float | None = None,
        rho: float | None = None,
    ) -> "RoaRnnModel":
        """Normal(0, weight_std) parameters and a fixed filter.

        Parameters and the filter use independent streams spawned from
        ``seed``, so models sharing a seed but differing in ``filter`` start
        from bit-identical trainable parameters.
        """
        param_seq, filter_seq = np.random.SeedSequence(seed).spawn(2)
        rng = np.random.default_rng(param_seq)
        rec_std = weight_std if recurrent_std is None else recurrent_std
        W_h = rng.normal(0.0, rec_std, size=(hidden, hidden))
        b_h = rng.normal(0.0, weight_std, size=hidden)
        W_i = rng.normal(0.0, weight_std, size=(hidden, input_dim))
        W_o = rng.normal(0.0, weight_std, size=(output_dim, hidden))
        b_o = rng.normal(0.0, weight_std, size=output_dim)
        if filter == "orthogonal":
            O = gen_semi_orthogonal(hidden, hidden, np.random.default_rng(filter_seq))
        elif filter == "identity":
            O = np.eye(hidden)
        else:
            raise ValueError(f"unknown filter {filter!r}")
        return cls(W_h, b_h, W_i, W_o, b_o, O, float(alpha), activation, readout, rho)

    @classmethod
    def init_vanilla(cls, hidden: int, input_dim: int, output_dim: int, *, activation="relu",
                     readout="identity", seed: int = 0) -> "RoaRnnModel":
        """Baseline Elman network: orthogonal W_h, others U(-1/sqrt(N), 1/sqrt(N))."""
        param_seq, filter_seq = np.random.SeedSequence(seed).spawn(2)
        rng = np.random.default_rng(param_seq)
        k = 1.0 / np.sqrt(hidden)
        W_h = gen_semi_orthogonal(hidden, hidden, np.random.default_rng(filter_seq))
        b_h = rng.uniform(-k, k, size=hidden)
        W_i = rng.uniform(-k, k, size=(hidden, input_dim))
        W_o = rng.uniform(-k, k, size=(output_dim, hidden))
        b_o = rng.uniform(-k, k, size=output_dim)
        return cls(W_h, b_h, W_i, W_o, b_o, np.eye(hidden), 1.0, activation, readout)

    @property
    def hidden_dim(self) -> int:
        return self.W_h.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_i.shape[1]

    @property
    def output_dim(self) -> int:
        return self.W_o.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        return {"W_h": self.W_h, "b_h": self.b_h, "W_i": self.W_i, "W_o": self.W_o, "b_o": self.b_o}

    def step_jacobian(self, d: np.ndarray) -> np.ndarray:
        return self.alpha * d[:, None] * self.W_h + (1.0 - self.alpha) * self.O


@dataclass
class RnnTrace:
    states: np.ndarray  # (T+1, B, N): x_0 .. x_T
    preactivations: np.ndarray  # (T, B, N): y_0 .. y_{T-1}
    derivatives: np.ndarray  # (T, B, N): phi'(y_k)
    inputs: np.ndarray  # (T, B, input_dim): u_1 .. u_T
    readout_steps: np.ndarray  # state indices k (1..T) that carry an output
    logits: np.ndarray  # (len(readout_steps), B, output_dim)
    outputs: np.ndarray

    @property
    def length(self) -> int:
        return self.inputs.shape[0]


@dataclass
class RnnGradients:
    W_h: np.ndarray
    b_h: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"W_h": self.W_h, "b_h": self.b_h, "W_i": self.W_i, "W_o": self.W_o, "b_o": self.b_o}


def _readout_steps(steps, T: int) -> np.ndarray:
    if isinstance(steps, str):
        if steps == "all":
            return np.arange(1, T + 1)
        if steps == "last":
            return np.array([T])
        raise ValueError(f"unknown readout selection {steps!r}")
    arr = np.asarray(sorted(set(int(s) for s in steps)), dtype=np.int64)
    if arr.size and (arr[0] < 1 or arr[-1] > T):
        raise ValueError(f"readout steps must lie in 1..{T}")
    return arr


def rnn_forward(model: RoaRnnModel, x0, inputs, readout_steps="all"):
    """Unroll the network over ``inputs``.

    ``inputs`` is (T, input_dim) for one sequence or (T, B, input_dim) for a
    batch; ``x0`` defaults to zeros. Returns ``(outputs, trace)`` where outputs
    hold ``psi(W_o x_k + b_o)`` at the selected state indices.
    """
    u = np.asarray(inputs, dtype=np.float64)
    single = u.ndim == 2
    if single:
        u = u[:, None, :]
    if u.ndim != 3 or u.shape[2] != model.input_dim:
        raise ShapeError(f"inputs must be (T, [B,] {model.input_dim}), got {np.shape(inputs)}")
    T, B, _ = u.shape
    N = model.hidden_dim
    if x0 is None:
        x = np.zeros((B, N))
    else:
        x = np.asarray(x0, dtype=np.float64)
        if x.ndim == 1:
            x = np.broadcast_to(x, (B, N))
        if x.shape != (B, N):
            raise ShapeError(f"x0 must have shape ({N},) or ({B}, {N}), got {x.shape}")
        x = np.array(x)
    a = model.alpha
    phi = model.activation
    drive = u @ model.W_i.T + model.b_h
    states = np.empty((T + 1, B, N))
    pre = np.empty((T, B, N))
    states[0] = x
    WhT, OT = model.W_h.T, model.O.T
    leak = 1.0 - a
    for k in range(T):
        y = x @ WhT
        y += drive[k]
        pre[k] = y
        if leak != 0.0:
            x = a * phi(y) + leak * (x @ OT)
        else:
            x = a * phi(y)
        states[k + 1] = x
    ders = phi.derivative(pre)
    steps = _readout_steps(readout_steps, T)
    logits = states[steps] @ model.W_o.T + model.b_o
    outputs = softmax(logits) if model.readout is Readout.SOFTMAX else logits
    trace = RnnTrace(states, pre, ders, u, steps, logits, outputs)
    if single:
        return outputs[:, 0, :], trace
    return outputs, trace


def rnn_backward(model: RoaRnnModel, trace: RnnTrace, errors_per_step) -> RnnGradients:
    """Backpropagation through time in a single reverse sweep.

    ``errors_per_step`` maps a state index k to the derivative of the loss
    with respect to the readout pre-activation at step k (for the identity
    readout this is the error vector itself). An array aligned with
    ``trace.readout_steps`` is also accepted. Batched errors give gradients
    summed over the batch.
    """
    if isinstance(errors_per_step, Mapping):
        errors = {int(k): np.asarray(v, dtype=np.float64) for k, v in errors_per_step.items()}
    else:
        arr = np.asarray(errors_per_step, dtype=np.float64)
        if arr.shape[0] != len(trace.readout_steps):
            raise ShapeError("error array must align with the trace readout steps")
        errors = {int(k): arr[i] for i, k in enumerate(trace.readout_steps)}
    T = trace.length
    B = trace.states.shape[1]
    N = model.hidden_dim
    if trace.states.shape[2] != N or trace.inputs.shape[2] != model.input_dim:
        raise ShapeError("trace does not belong to this model")
    for k, e in errors.items():
        if not 1 <= k <= T:
            raise ShapeError(f"error supplied for step {k} outside 1..{T}")
        if e.ndim == 1:
            errors[k] = e = e[None, :]
        if e.shape != (B, model.output_dim):
            raise ShapeError(f"error at step {k} has shape {e.shape}, expected ({B}, {model.output_dim})")

    a = model.alpha
    leak = 1.0 - a
    dW_o = np.zeros_like(model.W_o)
    db_o = np.zeros_like(model.b_o)
    # adjoint of y_{k-1} at every step; contracted with states and inputs afterwards
    deltas = np.empty((T, B, N))
    g = np.zeros((B, N))
    for k in range(T, 0, -1):
        e = errors.get(k)
        if e is not None:
            dW_o += e.T @ trace.states[k]
            db_o += e.sum(axis=0)
            g = g + e @ model.W_o
        delta = a * g * trace.derivatives[k - 1]
        deltas[k - 1] = delta
        if leak != 0.0:
            g = delta @ model.W_h + leak * (g @ model.O)
        else:
            g = delta @ model.W_h
    flat = deltas.reshape(T * B, N)
    dW_h = flat.T @ trace.states[:-1].reshape(T * B, N)
    db_h = flat.sum(axis=0)
    dW_i = flat.T @ trace.inputs.reshape(T * B, model.input_dim)
    return RnnGradients(dW_h, db_h, dW_i, dW_o, db_o)


def rnn_step_jacobians(model: RoaRnnModel, trace: RnnTrace, sample: int = 0) -> list[np.ndarray]:
    """Per-step Jacobians dx_{l+1}/dx_l for l = 1 .. T-1 (in that order)."""
    return [model.step_jacobian(trace.derivatives[l, sample]) for l in range(1, trace.length)]


def rnn_ioj(model: RoaRnnModel, trace: RnnTrace, sample: int = 0) -> np.ndarray:
    """Input-output Jacobian dx_T/dx_1 of one batch member."""
    p = np.eye(model.hidden_dim)
    for l in range(trace.length - 1, 0, -1):
        p = p @ model.step_jacobian(trace.derivatives[l, sample])
    return p


@dataclass
class ContinuousTimeRnn:
    """ODE form ``tau dx/dt = A x + phi(W_h x + b_h + W_i u)`` of the network.

    With ``A = ((1 - alpha) O - I) / alpha``, ``tau = 1 / rho`` and
    ``dt = 1 / (L - 1)``, one explicit Euler step reproduces the discrete
    state update exactly.
    """

    A: np.ndarray
    tau: float
    dt: float
    W_h: np.ndarray
    b_h: np.ndarray
    W_i: np.ndarray
    activation: ActivationKind

    @classmethod
    def from_model(cls, model: RoaRnnModel, length: int) -> "ContinuousTimeRnn":
        if model.alpha <= 0.0:
            raise ValueError("the continuous-time form needs alpha > 0")
        if length < 2:
            raise ValueError("length must be at least 2")
        n = model.hidden_dim
        A = ((1.0 - model.alpha) * model.O - np.eye(n)) / model.alpha
        rho = model.alpha * (length - 1)
        return cls(A, 1.0 / rho, 1.0 / (length - 1), model.W_h, model.b_h, model.W_i, model.activation)


def ct_step(ct: ContinuousTimeRnn, x, u_next) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    u_next = np.asarray(u_next, dtype=np.float64)
    drive = ct.activation(x @ ct.W_h.T + ct.b_h + u_next @ ct.W_i.T)
    return x + (ct.dt / ct.tau) * (drive + x @ ct.A.T)


def rnn_loss_cross_entropy(logits, target) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy and its derivative with respect to ``logits``.

    ``logits`` has classes on the last axis; ``target`` holds class indices
    with the remaining shape. Several samples are averaged, and the returned
    error carries the matching 1/count factor.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target)
    if target.shape != logits.shape[:-1]:
        raise ShapeError(f"target shape {target.shape} does not match logits {logits.shape}")
    n_classes = logits.shape[-1]
    if np.any(target < 0) or np.any(target >= n_classes):
        raise IndexError(f"class index out of range 0..{n_classes - 1}")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_p = shifted - log_z
    picked = np.take_along_axis(log_p, target[..., None].astype(np.int64), axis=-1)[..., 0]
    count = max(target.size, 1)
    loss = float(-picked.sum() / count)
    error = np.exp(log_p)
    np.put_along_axis(error, target[..., None].astype(np.int64),
                      np.take_along_axis(error, target[..., None].astype(np.int64), axis=-1) - 1.0, axis=-1)
    if logits.ndim > 1:
        error /= count
    return loss, error


def rnn_loss_mse(output, target) -> tuple[float, np.ndarray]:
    return fnn_loss_mse(output, target)
