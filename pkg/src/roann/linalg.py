"""Dense float64 linear algebra used by every other module.

Matrices are plain 2-D ``numpy.ndarray`` objects and vectors are 1-D arrays.
Products go through numpy/BLAS; the factorizations (Householder QR and
one-sided Jacobi SVD) are implemented here so that their conventions are fixed
independently of the LAPACK build.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = np.finfo(np.float64).eps


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteError(ValueError):
    """Input contains NaN or infinite entries."""


@dataclass(frozen=True)
class SvdResult:
    """Singular values in non-increasing order, with optional singular bases.

    ``u`` has shape (rows, k) and ``vt`` has shape (k, cols) with
    ``k = min(rows, cols)``, so that ``a == u @ diag(s) @ vt``.
    """

    singular_values: np.ndarray
    u: np.ndarray | None = None
    vt: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.singular_values)

    def __getitem__(self, i):
        return self.singular_values[i]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def as_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}: inner dimensions differ")
    return a @ b


def outer(a, b) -> np.ndarray:
    """Rank-1 matrix with entries ``a[i] * b[j]``."""
    return np.multiply.outer(as_vector(a, "a"), as_vector(b, "b"))


def qr(a) -> tuple[np.ndarray, np.ndarray]:
    """Thin Householder QR of a tall or square matrix.

    Returns ``q`` with orthonormal columns (rows x cols) and upper triangular
    ``r`` (cols x cols) whose diagonal is non-negative.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m < n:
        raise ShapeError(f"qr needs rows >= cols, got {a.shape}; factor the transpose instead")
    r = a.copy()
    reflectors: list[np.ndarray | None] = []
    for k in range(n):
        x = r[k:, k]
        norm_x = np.sqrt(x @ x)
        if norm_x == 0.0:
            reflectors.append(None)
            continue
        v = x.copy()
        v[0] += norm_x if x[0] >= 0 else -norm_x
        v /= np.sqrt(v @ v)
        block = r[k:, k:]
        block -= 2.0 * np.outer(v, v @ block)
        reflectors.append(v)

    q = np.eye(m, n)
    for k in range(n - 1, -1, -1):
        v = reflectors[k]
        if v is None:
            continue
        block = q[k:, k:]
        block -= 2.0 * np.outer(v, v @ block)

    r = np.triu(r[:n, :])
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    r *= signs[:, None]
    q *= signs[None, :]
    return q, r


def _round_robin_orders(n: int) -> list[np.ndarray]:
    # circle-method tournament; row i of each order meets row i + n/2
    players = list(range(n))
    orders = []
    for _ in range(n - 1):
        half = n // 2
        orders.append(np.array(players[:half] + players[half:][::-1]))
        players = [players[0], players[-1], *players[1:-1]]
    return orders


def _jacobi_columns(g: np.ndarray, want_v: bool, max_sweeps: int = 80):
    """Orthogonalize the rows of ``g`` (the columns of the original matrix)."""
    n = g.shape[0]
    padded = n % 2 == 1
    if padded:
        g = np.vstack([g, np.zeros((1, g.shape[1]))])
    size = g.shape[0]
    v = np.eye(size) if want_v else None
    if size < 2:
        return (g[:n], v[:n, :n] if v is not None else None)
    half = size // 2
    orders = _round_robin_orders(size)
    steps = [np.argsort(orders[r])[orders[(r + 1) % len(orders)]] for r in range(len(orders))]
    g = g[orders[0]]
    if v is not None:
        v = v[orders[0]]
    tol = _EPS * np.sqrt(g.shape[1])
    for _ in range(max_sweeps):
        rotated = False
        for r in range(len(orders)):
            gp, gq = g[:half], g[half:]
            alpha = np.einsum("ij,ij->i", gp, gp)
            beta = np.einsum("ij,ij->i", gq, gq)
            gamma = np.einsum("ij,ij->i", gp, gq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if active.any():
                rotated = True
                safe = np.where(active, gamma, 1.0)
                # an infinite zeta gives t = 0, the correct no-rotation limit
                with np.errstate(over="ignore"):
                    zeta = (beta - alpha) / (2.0 * safe)
                    t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
                t = np.where(active, t, 0.0)
                c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
                s = c * t[:, None]
                new_p = c * gp - s * gq
                g[half:] = s * gp + c * gq
                g[:half] = new_p
                if v is not None:
                    vp, vq = v[:half], v[half:]
                    new_p = c * vp - s * vq
                    v[half:] = s * vp + c * vq
                    v[:half] = new_p
            g = g[steps[r]]
            if v is not None:
                v = v[steps[r]]
        if not rotated:
            break
    # a full sweep returns to orders[0]
    back = np.argsort(orders[0])
    g = g[back][:n]
    if v is not None:
        v = v[back][:n, :n]
    return g, v


def svd(a, compute_uv: bool = False) -> SvdResult:
    """Singular value decomposition by one-sided (Hestenes) Jacobi rotations.

    Tall inputs are first reduced to their triangular QR factor, which leaves
    the singular values unchanged and shrinks the Jacobi sweeps.
    """
    a = as_matrix(a)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("singular values requested for a matrix with non-finite entries")
    transposed = a.shape[0] < a.shape[1]
    work = a.T if transposed else a
    m, n = work.shape
    if n == 0:
        return SvdResult(np.zeros(0))
    q_fac = None
    if m > n:
        q_fac, work = qr(work)
    # rows of g are the columns being orthogonalized
    g, v = _jacobi_columns(np.array(work.T, copy=True), compute_uv)
    sv = np.sqrt(np.einsum("ij,ij->i", g, g))
    order = np.argsort(-sv, kind="stable")
    sv = sv[order]
    if not compute_uv:
        return SvdResult(sv)
    # right rotations accumulate as rows of v: work @ v.T has columns g.T
    vmat = v.T[:, order]
    u = g.T[:, order]
    nz = sv > 0
    u[:, nz] /= sv[nz]
    u[:, ~nz] = 0.0
    if q_fac is not None:
        u = q_fac @ u
    if transposed:
        return SvdResult(sv, u=vmat, vt=u.T)
    return SvdResult(sv, u=u, vt=vmat.T)


def singular_values(a) -> SvdResult:
    return svd(a, compute_uv=False)


def spectral_norm(a) -> float:
    """Largest singular value (operator 2-norm)."""
    sv = singular_values(a).singular_values
    return float(sv[0]) if len(sv) else 0.0


def vector_norm(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    return float(np.sqrt(v.ravel() @ v.ravel()))
