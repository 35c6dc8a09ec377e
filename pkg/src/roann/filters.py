"""Fixed filter matrices placed between layers.

Three kinds are supported: random semi-orthogonal matrices obtained from the
QR factor of a uniform (-1, 1) matrix, random semi-permutation matrices, and
the identity. Randomness comes from numpy's PCG64 generator, so a seed fixes
every filter bit-for-bit on any platform.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .linalg import qr


class FilterKind(str, enum.Enum):
    RANDOM_ORTHOGONAL = "random-orthogonal"
    SEMI_PERMUTATION = "semi-permutation"
    IDENTITY = "identity"


class FilterConfigError(ValueError):
    pass


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_dims(n_out: int, n_in: int) -> None:
    if n_out < 1 or n_in < 1:
        raise FilterConfigError(f"filter dimensions must be positive, got ({n_out}, {n_in})")


def gen_semi_orthogonal(n_out: int, n_in: int, seed=None) -> np.ndarray:
    """Random (n_out, n_in) matrix with orthonormal columns or rows.

    Tall and square outputs satisfy ``O.T @ O == I``; wide outputs satisfy
    ``O @ O.T == I`` and come from factoring the transposed draw.
    """
    _check_dims(n_out, n_in)
    d = _rng(seed).uniform(-1.0, 1.0, size=(n_out, n_in))
    if n_in <= n_out:
        q, _ = qr(d)
        return q
    q, _ = qr(d.T)
    return np.ascontiguousarray(q.T)


def semi_permutation_map(n_out: int, n_in: int, seed=None) -> np.ndarray:
    """Source column for each output row of a random semi-permutation.

    Entry ``i`` is the input index copied to output ``i``, or -1 when output
    ``i`` is identically zero (tall case).
    """
    _check_dims(n_out, n_in)
    rng = _rng(seed)
    if n_out <= n_in:
        # rows are distinct identity rows: O[i, perm[i]] = 1
        return rng.permutation(n_out).astype(np.int64)
    # columns are distinct identity columns of the first n_in rows: O[perm[j], j] = 1
    perm = rng.permutation(n_in)
    index = np.full(n_out, -1, dtype=np.int64)
    index[perm] = np.arange(n_in)
    return index


def permutation_matrix(index: np.ndarray, n_in: int) -> np.ndarray:
    out = np.zeros((len(index), n_in))
    rows = np.flatnonzero(index >= 0)
    out[rows, index[rows]] = 1.0
    return out


def apply_index_map(index: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply a semi-permutation given by its index map to ``x`` (last axis)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape[:-1] + (len(index),))
    rows = np.flatnonzero(index >= 0)
    out[..., rows] = x[..., index[rows]]
    return out


def gen_semi_permutation(n_out: int, n_in: int, seed=None) -> np.ndarray:
    return permutation_matrix(semi_permutation_map(n_out, n_in, seed), n_in)


def gen_filter(kind: FilterKind, n_out: int, n_in: int, seed=None) -> np.ndarray:
    kind = FilterKind(kind)
    if kind is FilterKind.RANDOM_ORTHOGONAL:
        return gen_semi_orthogonal(n_out, n_in, seed)
    if kind is FilterKind.SEMI_PERMUTATION:
        return gen_semi_permutation(n_out, n_in, seed)
    if n_out != n_in:
        raise FilterConfigError(f"identity filter needs a square shape, got ({n_out}, {n_in})")
    return np.eye(n_out)


@dataclass
class FilterPlan:
    """Filters for a stack of layers with sizes ``dims`` (input first)."""

    dims: list[int]
    kind: FilterKind = FilterKind.RANDOM_ORTHOGONAL
    recycle: bool = False
    seed: int = 0

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        self.kind = FilterKind(self.kind)
        if len(self.dims) < 2:
            raise FilterConfigError("a filter plan needs at least two layer sizes")
        if self.recycle and len(set(self.dims)) != 1:
            raise FilterConfigError(f"recycling one filter requires equal layer sizes, got {self.dims}")
        if self.kind is FilterKind.IDENTITY:
            for a, b in zip(self.dims, self.dims[1:]):
                if a != b:
                    raise FilterConfigError(f"identity filters need equal consecutive sizes, got {a} -> {b}")


def build_filters(plan: FilterPlan) -> list[np.ndarray]:
    """One filter per layer transition; recycled plans repeat a single array."""
    rng = np.random.default_rng(plan.seed)
    shapes = [(b, a) for a, b in zip(plan.dims, plan.dims[1:])]
    if plan.recycle:
        shared = gen_filter(plan.kind, *shapes[0], rng)
        return [shared] * len(shapes)
    return [gen_filter(plan.kind, n_out, n_in, rng) for n_out, n_in in shapes]
