"""Parameter updates: plain SGD, Nesterov momentum and Adam.

Parameters and gradients are dictionaries of numpy arrays keyed by name.
:func:`step` updates the parameter arrays in place, so models that hand out
their own arrays through ``parameters()`` are trained directly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class OptimizerKind(str, enum.Enum):
    SGD = "sgd"
    NAG = "nag"
    ADAM = "adam"


@dataclass
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.SGD
    learning_rate: float = 0.01
    momentum: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # (epoch, learning rate) pairs; the latest entry whose epoch has been reached wins
    schedule: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        self.kind = OptimizerKind(self.kind)
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        self.schedule = sorted((int(e), float(lr)) for e, lr in self.schedule)


@dataclass
class OptimizerState:
    step: int = 0
    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)


def batch_average(grads: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Elementwise mean of per-sample gradient sets."""
    if not grads:
        raise ValueError("cannot average an empty batch")
    keys = grads[0].keys()
    for g in grads[1:]:
        if g.keys() != keys:
            raise ValueError("gradient sets have different parameter names")
    out = {}
    for k in keys:
        shapes = {np.shape(g[k]) for g in grads}
        if len(shapes) != 1:
            raise ValueError(f"inconsistent shapes for {k}: {sorted(shapes)}")
        out[k] = np.mean([g[k] for g in grads], axis=0)
    return out


def apply_schedule(config: OptimizerConfig, epoch: int) -> float:
    lr = config.learning_rate
    for start, value in config.schedule:
        if epoch >= start:
            lr = value
    return lr


def step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], config: OptimizerConfig,
         state: OptimizerState, learning_rate: float | None = None) -> OptimizerState:
    """Apply one update in place and return the advanced state.

    NAG uses the reformulation in which the stored parameters are the
    look-ahead point: ``v <- m v - lr g`` then ``p <- p + m v - lr g``.
    """
    lr = config.learning_rate if learning_rate is None else learning_rate
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if params[name].shape != np.shape(g):
            raise ValueError(f"{name}: parameter {params[name].shape} vs gradient {np.shape(g)}")
    state.step += 1
    t = state.step
    kind = config.kind
    for name, g in grads.items():
        p = params[name]
        if kind is OptimizerKind.SGD:
            p -= lr * g
            continue
        buf = state.buffers.setdefault(name, {})
        if kind is OptimizerKind.NAG:
            v = buf.setdefault("velocity", np.zeros_like(p))
            v *= config.momentum
            v -= lr * g
            p += config.momentum * v - lr * g
        else:
            m = buf.setdefault("m", np.zeros_like(p))
            v = buf.setdefault("v", np.zeros_like(p))
            m *= config.beta1
            m += (1.0 - config.beta1) * g
            v *= config.beta2
            v += (1.0 - config.beta2) * (g * g)
            m_hat = m / (1.0 - config.beta1 ** t)
            v_hat = v / (1.0 - config.beta2 ** t)
            p -= lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return state


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
