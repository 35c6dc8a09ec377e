"""Depth-independent bounds on input-output Jacobians and their numerical checks.

For a convex-combination layer ``J = alpha diag(d) W + (1 - alpha) O`` with
``alpha = rho / (L - 1)``, the singular values of the product of ``L - 1``
such Jacobians stay inside ``[exp(-rho (1 + r s)), exp(rho (r s - 1))]``
where ``r`` bounds the activation derivative and ``s`` the weight norms. The
helpers below evaluate these bounds, build partial products and compare them
with SVDs computed by :mod:`roann.linalg`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .fnn import RoaFnnModel, fnn_forward
from .linalg import ShapeError, singular_values, spectral_norm
from .rnn import RoaRnnModel, rnn_forward

SLACK = 1e-9


@dataclass(frozen=True)
class BoundSpec:
    rho: float
    r: float
    sigma: float
    L: int

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.L < 2:
            raise ValueError(f"L must be at least 2, got {self.L}")

    @property
    def alpha(self) -> float:
        return self.rho / (self.L - 1)

    @property
    def lower_applicable(self) -> bool:
        return self.rho < (self.L - 1) / (1.0 + self.r * self.sigma)


def thm_bounds(spec: BoundSpec) -> tuple[float | None, float]:
    """``(lower, upper)``; ``lower`` is None when the rho constraint fails."""
    rs = spec.r * spec.sigma
    upper = math.exp(spec.rho * (rs - 1.0))
    lower = math.exp(-spec.rho * (1.0 + rs)) if spec.lower_applicable else None
    return lower, upper


@dataclass
class PartialJacobianProduct:
    """Suffix products ``P_l`` for ``l = L .. 1`` with ``P_L = I``.

    ``jacobians[i]`` is the Jacobian of layer ``i + 1`` and
    ``products[i]`` equals ``P_{i+1}``; the last entry is the identity.
    """

    jacobians: list[np.ndarray]
    products: list[np.ndarray]
    alpha: float
    sigmas: list[float]

    @classmethod
    def from_jacobians(cls, jacobians: list[np.ndarray], alpha: float, sigmas: list[float]):
        if len(jacobians) != len(sigmas):
            raise ValueError("one weight norm per Jacobian is required")
        n_out = jacobians[-1].shape[0] if jacobians else 0
        p = np.eye(n_out)
        products = [p]
        for j in reversed(jacobians):
            if p.shape[1] != j.shape[0]:
                raise ShapeError(f"cannot chain {p.shape} with {j.shape}")
            p = p @ j
            products.append(p)
        products.reverse()
        return cls(list(jacobians), products, alpha, list(sigmas))

    @property
    def ioj(self) -> np.ndarray:
        return self.products[0]

    def norms(self) -> list[float]:
        return [spectral_norm(p) for p in self.products]


@dataclass
class IsometryReport:
    spectra: list[list[float]]
    lower: float | None
    upper: float
    sigma: float
    rho: float
    L: int
    lower_asserted: bool
    upper_ok: list[bool]
    lower_ok: list[bool | None]
    norm_trajectories: list[list[float]] = field(default_factory=list)
    inverse_checks: list[dict] = field(default_factory=list)
    scope: str = "max"  # "max" checks the top singular value, "all" the whole spectrum

    @property
    def passed(self) -> bool:
        ok = all(self.upper_ok)
        if self.lower_asserted:
            ok = ok and all(bool(v) for v in self.lower_ok)
        return ok and all(c.get("ok", True) for c in self.inverse_checks)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _as_probe_batch(probes, dim: int) -> np.ndarray:
    arr = np.asarray(probes, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ShapeError(f"probes must have trailing size {dim}, got {arr.shape}")
    return arr


def fnn_partial_products(model: RoaFnnModel, trace, sample: int) -> PartialJacobianProduct:
    jac = [model.layer_jacobian(l, trace.derivatives[l][sample]) for l in range(1, model.depth)]
    sig = [spectral_norm(model.weights[l]) for l in range(1, model.depth)]
    return PartialJacobianProduct.from_jacobians(jac, model.alpha, sig)


def certify_fnn(model: RoaFnnModel, probes, track_norms: bool = True) -> IsometryReport:
    """Check the largest singular value of each probe's IOJ against the bounds.

    ``sigma`` is the largest spectral norm over all current weight matrices.
    The lower bound is asserted only for nonincreasing layer sizes under the
    rho constraint; otherwise it is reported but not enforced.
    """
    x = _as_probe_batch(probes, model.layer_dims[0])
    L = model.depth
    if L < 2:
        raise ValueError("certification needs at least two layers")
    rho = model.alpha * (L - 1)
    sigma = max(spectral_norm(w) for w in model.weights)
    r = model.activation.r
    spec = BoundSpec(rho if rho > 0 else 1e-300, r, sigma, L)
    lower, upper = thm_bounds(spec)
    dims = model.layer_dims
    nonincreasing = all(a >= b for a, b in zip(dims[1:], dims[2:]))
    asserted = lower is not None and nonincreasing
    _, trace = fnn_forward(model, x)
    spectra, up_ok, lo_ok, trajectories = [], [], [], []
    for i in range(x.shape[0]):
        pjp = fnn_partial_products(model, trace, i)
        s = singular_values(pjp.ioj).singular_values
        spectra.append(s.tolist())
        top = float(s[0])
        up_ok.append(top <= upper * (1.0 + SLACK))
        lo_ok.append(None if lower is None else top >= lower * (1.0 - SLACK))
        if track_norms:
            trajectories.append(pjp.norms())
    return IsometryReport(spectra, lower, upper, sigma, rho, L, asserted, up_ok, lo_ok,
                          trajectories, [], "max")


def _lapack_inverse_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(np.linalg.inv(a), 2))


def inverse_norm_check(jac: np.ndarray, alpha: float, r: float, sigma: float) -> dict:
    """Per-step invertibility: ``||J^-1|| <= 1 / (1 - alpha (1 + r sigma))``.

    The inverse norm comes from LAPACK while the smallest singular value comes
    from the Jacobi SVD, so their agreement is a check between two codes.
    """
    s = singular_values(jac).singular_values
    inv_norm = _lapack_inverse_norm(jac)
    denom = 1.0 - alpha * (1.0 + r * sigma)
    bound = 1.0 / denom if denom > 0 else math.inf
    return {
        "inverse_norm": inv_norm,
        "bound": bound,
        "sigma_min_svd": float(s[-1]),
        "sigma_min_inverse": 1.0 / inv_norm,
        "ok": bool(denom > 0 and inv_norm <= bound * (1.0 + SLACK)),
    }


def certify_rnn(model: RoaRnnModel, probe_sequences, x0=None, check_inverse: bool = True,
                track_norms: bool = False) -> IsometryReport:
    """Check the whole spectrum of ``dx_L/dx_1`` for each probe sequence.

    ``probe_sequences`` is (B, L, input_dim) or a single (L, input_dim) sequence;
    ``L`` is the sequence length and ``rho = alpha (L - 1)``.
    """
    seqs = np.asarray(probe_sequences, dtype=np.float64)
    if seqs.ndim == 2:
        seqs = seqs[None]
    if seqs.ndim != 3 or seqs.shape[2] != model.input_dim:
        raise ShapeError(f"probe sequences must be (B, L, {model.input_dim}), got {seqs.shape}")
    L = seqs.shape[1]
    rho = model.alpha * (L - 1)
    sigma = spectral_norm(model.W_h)
    r = model.activation.r
    spec = BoundSpec(rho if rho > 0 else 1e-300, r, sigma, L)
    lower, upper = thm_bounds(spec)
    _, trace = rnn_forward(model, x0, np.transpose(seqs, (1, 0, 2)), readout_steps=[])
    spectra, up_ok, lo_ok, trajectories, inverse = [], [], [], [], []
    for i in range(seqs.shape[0]):
        jac = [model.step_jacobian(trace.derivatives[l, i]) for l in range(1, L)]
        pjp = PartialJacobianProduct.from_jacobians(jac, model.alpha, [sigma] * len(jac))
        s = singular_values(pjp.ioj).singular_values
        spectra.append(s.tolist())
        up_ok.append(bool(s[0] <= upper * (1.0 + SLACK)))
        lo_ok.append(None if lower is None else bool(s[-1] >= lower * (1.0 - SLACK)))
        if track_norms:
            trajectories.append(pjp.norms())
        if check_inverse and jac:
            worst = None
            for j in jac:
                c = inverse_norm_check(j, model.alpha, r, sigma)
                if worst is None or c["inverse_norm"] > worst["inverse_norm"]:
                    worst = c
            if lower is not None:
                ioj_inv = _lapack_inverse_norm(pjp.ioj)
                worst = dict(worst)
                worst["ioj_sigma_min_svd"] = float(s[-1])
                worst["ioj_sigma_min_inverse"] = 1.0 / ioj_inv
            inverse.append(worst)
    return IsometryReport(spectra, lower, upper, sigma, rho, L, lower is not None, up_ok, lo_ok,
                          trajectories, inverse, "all")


def _is_semi_orthogonal(o: np.ndarray, tol: float = 1e-10) -> bool:
    m, n = o.shape
    g = o @ o.T if m <= n else o.T @ o
    return bool(np.max(np.abs(g - np.eye(min(m, n)))) <= tol)


def check_lemma_same_norm(p, o) -> bool:
    """``||P O|| == ||P||`` for a wide-or-square semi-orthogonal ``O``.

    Raises ValueError when ``O`` is tall or not semi-orthogonal, since the
    identity is then not guaranteed.
    """
    p = np.asarray(p, dtype=np.float64)
    o = np.asarray(o, dtype=np.float64)
    if p.ndim != 2 or o.ndim != 2 or p.shape[1] != o.shape[0]:
        raise ShapeError(f"cannot multiply {p.shape} by {o.shape}")
    m, n = o.shape
    if m > n:
        raise ValueError(f"filter must have at most as many rows as columns, got {o.shape}")
    if not _is_semi_orthogonal(o):
        raise ValueError("filter rows are not orthonormal")
    lhs = spectral_norm(p @ o)
    rhs = spectral_norm(p)
    return abs(lhs - rhs) <= 1e-10 * max(rhs, np.finfo(float).tiny)


@dataclass
class RecursionReport:
    upper_ok: list[bool]
    lower_ok: list[bool | None]
    norms: list[float]
    upper_factors: list[float]
    lower_factors: list[float]

    @property
    def passed(self) -> bool:
        return all(self.upper_ok) and all(v is not False for v in self.lower_ok)


def check_recursions(pjp: PartialJacobianProduct, spec: BoundSpec, lower_hypothesis: bool = True
                     ) -> RecursionReport:
    """Verify ``||P_l||`` against its successor using per-layer factors.

    Upper: ``||P_l|| <= (1 + alpha (r s_l - 1)) ||P_{l+1}||``.
    Lower: ``||P_l|| >= (1 - alpha (1 + r s_l)) ||P_{l+1}||``, checked only when
    ``lower_hypothesis`` holds and the factor is positive.
    """
    norms = pjp.norms()
    a = pjp.alpha
    up_ok, lo_ok, up_f, lo_f = [], [], [], []
    for i, s in enumerate(pjp.sigmas):
        cur, nxt = norms[i], norms[i + 1]
        fu = 1.0 + a * (spec.r * s - 1.0)
        fl = 1.0 - a * (1.0 + spec.r * s)
        up_f.append(fu)
        lo_f.append(fl)
        up_ok.append(cur <= fu * nxt * (1.0 + SLACK) + 1e-300)
        if lower_hypothesis and fl > 0:
            lo_ok.append(cur >= fl * nxt * (1.0 - SLACK))
        else:
            lo_ok.append(None)
    return RecursionReport(up_ok, lo_ok, norms, up_f, lo_f)


def finite_diff_oracle(loss_fn: Callable[[], float], params: dict[str, np.ndarray],
                       step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``loss_fn`` with respect to ``params``.

    ``loss_fn`` takes no arguments and reads the arrays in ``params``, which
    are perturbed in place one coordinate at a time and restored afterwards.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p, dtype=np.float64)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            f_plus = loss_fn()
            p[idx] = orig - step
            f_minus = loss_fn()
            p[idx] = orig
            g[idx] = (f_plus - f_minus) / (2.0 * step)
        grads[name] = g
    return grads


def relative_error(a, b) -> float:
    """Norm-wise ``||a - b|| / max(||a||, ||b||)``; zero when both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)
