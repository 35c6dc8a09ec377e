"""Datasets: double moon, copying memory, adding problem and (permuted) MNIST.

Every generator is a pure function of its config; the same seed yields
bit-identical arrays. Sequence batches are time-major, shape (T, B, ...).
"""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DATA_DIR_ENV = "ROANN_DATA_DIR"
MNIST_PERMUTATION_SEED = 20220131
MNIST_PIXELS = 784


@dataclass
class DoubleMoonConfig:
    n_points: int = 1000
    radius: float = 10.0
    width: float = 6.0
    separation: float = -2.0
    offset: float = 10.0
    seed: int = 0


def gen_double_moon(cfg: DoubleMoonConfig) -> tuple[np.ndarray, np.ndarray]:
    """Two interleaved half annuli.

    The upper moon is centred at the origin and labelled -1; the lower one is
    mirrored, shifted right by ``offset`` and down by ``separation`` (a negative
    separation makes the moons overlap vertically) and labelled +1. Radii are
    drawn so points are uniform over each annulus section.
    """
    if cfg.n_points < 2:
        raise ValueError("need at least two points")
    rng = np.random.default_rng(cfg.seed)
    n_up = cfg.n_points // 2
    n_down = cfg.n_points - n_up
    r_in = cfg.radius - cfg.width / 2.0
    r_out = cfg.radius + cfg.width / 2.0

    def half_annulus(n):
        rad = np.sqrt(rng.uniform(r_in * r_in, r_out * r_out, size=n))
        theta = rng.uniform(0.0, math.pi, size=n)
        return rad * np.cos(theta), rad * np.sin(theta)

    ux, uy = half_annulus(n_up)
    lx, ly = half_annulus(n_down)
    points = np.empty((cfg.n_points, 2))
    points[:n_up, 0] = ux
    points[:n_up, 1] = uy
    points[n_up:, 0] = lx + cfg.offset
    points[n_up:, 1] = -ly - cfg.separation
    labels = np.concatenate([-np.ones(n_up), np.ones(n_down)])
    return points, labels


BLANK = 0
START = 9
N_SYMBOLS = 8
COPY_INPUT_CLASSES = 10
COPY_OUTPUT_CLASSES = 9


@dataclass
class CopyMemConfig:
    lag: int = 100
    n_symbols: int = 10  # S, the length of the block to recall
    batch_size: int = 128
    seed: int = 0

    @property
    def length(self) -> int:
        return self.lag + 2 * self.n_symbols


def copy_sequences(cfg: CopyMemConfig, rng: np.random.Generator | None = None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Integer input and target sequences of shape (T, B)."""
    if cfg.lag < 1 or cfg.n_symbols < 1:
        raise ValueError("lag and symbol count must be positive")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    S, L, B = cfg.n_symbols, cfg.lag, cfg.batch_size
    T = L + 2 * S
    symbols = rng.integers(1, N_SYMBOLS + 1, size=(S, B))
    inputs = np.zeros((T, B), dtype=np.int64)
    inputs[:S] = symbols
    inputs[S + L] = START
    targets = np.zeros((T, B), dtype=np.int64)
    targets[L + S:] = symbols
    return inputs, targets


def one_hot(indices: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(indices.shape + (n,))
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


def gen_copy_batch(cfg: CopyMemConfig, rng: np.random.Generator | None = None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """One-hot inputs (T, B, 10) and class targets (T, B) in 0..8."""
    inputs, targets = copy_sequences(cfg, rng)
    return one_hot(inputs, COPY_INPUT_CLASSES), targets


def copy_baseline(S: int, L: int) -> float:
    """Cross-entropy of predicting blanks, then uniform symbols in the recall window."""
    if S < 1 or L < 1:
        raise ValueError("S and L must be positive")
    return S * math.log(N_SYMBOLS) / (L + 2 * S)


@dataclass
class AddProbConfig:
    T: int = 200
    batch_size: int = 50
    seed: int = 0


def gen_add_batch(cfg: AddProbConfig, rng: np.random.Generator | None = None
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Inputs (T, B, 2) of values and markers, targets (B, 1).

    One marker falls in the first half (1-based position up to T // 2) and the
    other in the second half.
    """
    if cfg.T < 2:
        raise ValueError(f"sequence length must be at least 2, got {cfg.T}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    T, B = cfg.T, cfg.batch_size
    half = T // 2
    values = rng.uniform(0.0, 1.0, size=(T, B))
    first = rng.integers(0, half, size=B)
    second = rng.integers(half, T, size=B)
    markers = np.zeros((T, B))
    cols = np.arange(B)
    markers[first, cols] = 1.0
    markers[second, cols] = 1.0
    inputs = np.stack([values, markers], axis=-1)
    targets = (values[first, cols] + values[second, cols])[:, None]
    return inputs, targets


def add_baseline() -> float:
    """Variance of the sum of two independent U(0, 1) values."""
    return 1.0 / 6.0


class MnistFormatError(ValueError):
    pass


IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _open_idx(path: Path) -> bytes:
    for candidate in (path, path.with_name(path.name + ".gz")):
        if candidate.exists():
            raw = candidate.read_bytes()
            if raw[:2] == b"\x1f\x8b":
                raw = gzip.decompress(raw)
            return raw
    raise FileNotFoundError(f"MNIST file not found: {path} (or {path.name}.gz)")


def read_idx(path, expected_magic: int) -> np.ndarray:
    raw = _open_idx(Path(path))
    if len(raw) < 8:
        raise MnistFormatError(f"{path}: file too short for an IDX header")
    magic = struct.unpack(">i", raw[:4])[0]
    if magic != expected_magic:
        raise MnistFormatError(
            f"{path}: magic number {magic}, expected {expected_magic} "
            f"({IMAGE_MAGIC} for images, {LABEL_MAGIC} for labels)")
    ndim = raw[3]
    header = 4 + 4 * ndim
    shape = struct.unpack(f">{ndim}i", raw[4:header])
    count = int(np.prod(shape))
    if len(raw) - header != count:
        raise MnistFormatError(f"{path}: payload has {len(raw) - header} bytes, header promises {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(shape)


def default_permutation() -> np.ndarray:
    return np.random.default_rng(MNIST_PERMUTATION_SEED).permutation(MNIST_PIXELS)


def save_permutation(perm, path) -> None:
    Path(path).write_text("\n".join(str(int(i)) for i in perm) + "\n")


def load_permutation(path) -> np.ndarray:
    perm = np.array([int(tok) for tok in Path(path).read_text().split()], dtype=np.int64)
    check_permutation(perm)
    return perm


def check_permutation(perm: np.ndarray, n: int = MNIST_PIXELS) -> None:
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError(f"not a permutation of 0..{n - 1}")


def inverse_permutation(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv


@dataclass
class MnistConfig:
    data_dir: str | None = None
    permuted: bool = True
    permutation: list[int] | None = None
    permutation_seed: int = MNIST_PERMUTATION_SEED
    subset_fraction: float = 1.0
    subset_seed: int = 0

    def resolve_dir(self) -> Path:
        d = self.data_dir or os.environ.get(DATA_DIR_ENV)
        if not d:
            raise FileNotFoundError(f"no MNIST directory given; set {DATA_DIR_ENV} or pass data_dir")
        return Path(d)

    def resolve_permutation(self) -> np.ndarray:
        if not self.permuted:
            return np.arange(MNIST_PIXELS)
        if self.permutation is not None:
            perm = np.asarray(self.permutation, dtype=np.int64)
            check_permutation(perm)
            return perm
        return np.random.default_rng(self.permutation_seed).permutation(MNIST_PIXELS)


@dataclass
class SequenceDataset:
    """Pixel sequences (n, 784) in [0, 1] and integer labels."""

    sequences: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        """Yield time-major inputs (784, B, 1) and labels (B,)."""
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            yield self.sequences[idx].T[:, :, None], self.labels[idx]


def _load_split(directory: Path, split: str, perm: np.ndarray) -> SequenceDataset:
    img_name, lbl_name = _FILES[split]
    images = read_idx(directory / img_name, IMAGE_MAGIC)
    labels = read_idx(directory / lbl_name, LABEL_MAGIC)
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise MnistFormatError(f"{split}: image shape {images.shape} and label shape {labels.shape} disagree")
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if flat.shape[1] != len(perm):
        raise MnistFormatError(f"{split}: images have {flat.shape[1]} pixels, permutation has {len(perm)}")
    return SequenceDataset(flat[:, perm], labels.astype(np.int64))


def load_mnist(cfg: MnistConfig) -> tuple[SequenceDataset, SequenceDataset]:
    """Train and test sets flattened row-major and reordered by the permutation.

    ``subset_fraction`` < 1 keeps a deterministic random subset of the training
    split; the test split is always complete.
    """
    directory = cfg.resolve_dir()
    perm = cfg.resolve_permutation()
    train = _load_split(directory, "train", perm)
    test = _load_split(directory, "test", perm)
    if not 0.0 < cfg.subset_fraction <= 1.0:
        raise ValueError(f"subset fraction must lie in (0, 1], got {cfg.subset_fraction}")
    if cfg.subset_fraction < 1.0:
        keep = int(round(len(train) * cfg.subset_fraction))
        idx = np.sort(np.random.default_rng(cfg.subset_seed).permutation(len(train))[:keep])
        train = SequenceDataset(train.sequences[idx], train.labels[idx])
    return train, test


def write_idx(path, array: np.ndarray, compress: bool = False) -> None:
    """Write a uint8 array in IDX format (used to build fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x0800 | array.ndim
    header = struct.pack(">i", magic) + struct.pack(f">{array.ndim}i", *array.shape)
    data = header + array.tobytes()
    Path(path).write_bytes(gzip.compress(data) if compress else data)
