"""Dataset builders: synthetic regression/classification and IDX files.

Generators are deterministic in their seed and return plain float64/int64
arrays.  The IDX reader validates magic numbers and byte counts and
reports offsets when a file is malformed, because truncated downloads are
the common failure mode there.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


class IdxFormatError(ValueError):
    pass


def gen_sparse_linear(n: int, p: int, s: int, snr: float, seed: int):
    """Gaussian design with an s-sparse coefficient vector.

    The nonzero coefficients get distinct magnitudes between 1 and 2 (so
    activation order is well defined) and random signs.  Noise variance is
    set from the signal power so that snr = ||X beta||^2 / (n sigma^2);
    pass ``snr=inf`` for a noiseless response.  Returns (X, y, beta).
    """
    if n < 1 or p < 1:
        raise ValueError(f"need n >= 1 and p >= 1, got ({n}, {p})")
    if not 0 <= s <= p:
        raise ValueError(f"sparsity level s must lie in [0, {p}], got {s}")
    if not snr > 0:
        raise ValueError(f"snr must be positive (or inf), got {snr}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    beta = np.zeros(p)
    if s > 0:
        support = rng.choice(p, size=s, replace=False)
        magnitudes = 1.0 + np.arange(s) / s
        signs = rng.choice([-1.0, 1.0], size=s)
        beta[support] = magnitudes * signs
    signal = x @ beta
    if s == 0:
        sigma = 1.0
    elif np.isinf(snr):
        sigma = 0.0
    else:
        sigma = float(np.linalg.norm(signal)) / np.sqrt(n * snr)
    y = signal + sigma * rng.standard_normal(n)
    return x, y, beta


def blobs(n: int, classes: int, dim: int, separation: float, seed: int):
    """Isotropic Gaussian clusters with centers drawn at a given scale."""
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if dim < 1 or n < classes:
        raise ValueError(f"need dim >= 1 and n >= classes, got dim={dim}, n={n}")
    if separation < 0:
        raise ValueError(f"separation must be nonnegative, got {separation}")
    rng = np.random.default_rng(seed)
    centers = separation * rng.standard_normal((classes, dim))
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    x = centers[labels] + rng.standard_normal((n, dim))
    return x, labels


# ---------------------------------------------------------------------------
# IDX files


def _read_bytes(path) -> bytes:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    if p.suffix == ".gz":
        with gzip.open(p, "rb") as fh:
            return fh.read()
    return p.read_bytes()


def read_idx_images(path) -> np.ndarray:
    """(n, rows, cols) uint8 array from an IDX image file."""
    data = _read_bytes(path)
    if len(data) < 16:
        raise IdxFormatError(f"{path}: header needs 16 bytes, file has {len(data)}")
    magic, n, rows, cols = struct.unpack_from(">IIII", data, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(
            f"{path}: bad magic {magic:#010x} at byte 0, expected {IDX_IMAGES_MAGIC:#010x}"
        )
    need = 16 + n * rows * cols
    if len(data) != need:
        raise IdxFormatError(
            f"{path}: expected {n * rows * cols} pixel bytes at offset 16 "
            f"({need} total), file has {len(data)}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 8:
        raise IdxFormatError(f"{path}: header needs 8 bytes, file has {len(data)}")
    magic, n = struct.unpack_from(">II", data, 0)
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(
            f"{path}: bad magic {magic:#010x} at byte 0, expected {IDX_LABELS_MAGIC:#010x}"
        )
    if len(data) != 8 + n:
        raise IdxFormatError(
            f"{path}: expected {n} label bytes at offset 8, file has {len(data) - 8}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=8).astype(np.int64)


def load_idx(images_path, labels_path, limit: int | None = None):
    """Paired image/label load: floats in [0, 1] and int64 labels.

    ``limit`` keeps only the first so many samples, which is how desk-scale
    runs stay desk-scale.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{images_path} holds {images.shape[0]} images but "
            f"{labels_path} holds {labels.shape[0]} labels"
        )
    if limit is not None:
        if limit < 1:
            raise ValueError(f"limit must be positive, got {limit}")
        images = images[:limit]
        labels = labels[:limit]
    return images.astype(np.float64) / 255.0, labels


# ---------------------------------------------------------------------------
# dataset container


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    beta_star: np.ndarray | None = None

    @property
    def n_train(self) -> int:
        return self.train_x.shape[0]


@dataclass(frozen=True)
class DatasetSpec:
    """Declarative dataset description; ``params`` mirror the generator args."""

    kind: str
    params: tuple  # sorted (key, value) pairs so specs hash and compare
    seed: int = 0
    val_fraction: float = 0.25

    def __post_init__(self):
        if self.kind not in ("sparse_linear", "blobs", "idx"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if not 0 <= self.val_fraction < 1:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        object.__setattr__(self, "params", tuple(sorted(dict(self.params).items())))

    def get(self, key, default=None):
        return dict(self.params).get(key, default)


def dataset_spec(kind: str, seed: int = 0, val_fraction: float = 0.25, **params) -> DatasetSpec:
    return DatasetSpec(kind, tuple(params.items()), seed, val_fraction)


def _split(x, y, val_fraction, seed):
    n = x.shape[0]
    n_val = int(round(val_fraction * n))
    if n_val == 0:
        # no held-out data: validation metrics fall back to the training set
        return x, y, x, y
    order = np.random.default_rng([seed, 9151]).permutation(n)
    val, train = order[:n_val], order[n_val:]
    return x[train], y[train], x[val], y[val]


def make_dataset(spec: DatasetSpec) -> Dataset:
    if spec.kind == "sparse_linear":
        x, y, beta = gen_sparse_linear(
            n=spec.get("n"), p=spec.get("p"), s=spec.get("s"),
            snr=spec.get("snr", np.inf), seed=spec.seed,
        )
        tx, ty, vx, vy = _split(x, y[:, None], spec.val_fraction, spec.seed)
        return Dataset(tx, ty, vx, vy, beta_star=beta)
    if spec.kind == "blobs":
        x, y = blobs(
            n=spec.get("n"), classes=spec.get("classes"), dim=spec.get("dim"),
            separation=spec.get("separation", 1.0), seed=spec.seed,
        )
        tx, ty, vx, vy = _split(x, y, spec.val_fraction, spec.seed)
        return Dataset(tx, ty, vx, vy)
    # idx: separate train and validation files, no reshuffling
    tx, ty = load_idx(spec.get("train_images"), spec.get("train_labels"),
                      spec.get("limit_train"))
    vx, vy = load_idx(spec.get("val_images"), spec.get("val_labels"),
                      spec.get("limit_val"))
    return Dataset(tx, ty, vx, vy)
