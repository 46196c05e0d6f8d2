"""Dataset containers, the synthetic blob-image generator, and IDX / CIFAR-10 binary loaders."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32


class DatasetError(ValueError):
    pass


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise DatasetError(f"{len(self.x)} images but {len(self.y)} labels")

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class DatasetSplits:
    train: Split
    val: Split
    test: Split
    num_classes: int

    def __post_init__(self) -> None:
        for name in ("train", "val", "test"):
            split = getattr(self, name)
            if len(split) == 0:
                raise DatasetError(f"{name} split is empty")
            if split.y.min() < 0 or split.y.max() >= self.num_classes:
                raise DatasetError(f"{name} split has labels outside [0, {self.num_classes})")

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.train.x.shape[1:])


def split_dataset(
    x: np.ndarray, y: np.ndarray, n_train: int, n_val: int, n_test: int, seed: int, num_classes: int | None = None
) -> DatasetSplits:
    """Draw disjoint train/val/test subsets of the requested sizes."""
    total = n_train + n_val + n_test
    if min(n_train, n_val, n_test) < 1:
        raise DatasetError("every split needs at least one sample")
    if total > len(y):
        raise DatasetError(f"requested {total} samples but only {len(y)} available")
    order = np.random.default_rng(seed).permutation(len(y))[:total]
    parts = np.split(order, [n_train, n_train + n_val])
    num_classes = int(num_classes if num_classes is not None else np.max(y) + 1)
    return DatasetSplits(*(Split(x[idx], y[idx]) for idx in parts), num_classes=num_classes)


def synthetic_blobs(
    n_samples: int,
    num_classes: int = 10,
    image_size: int = 12,
    blobs_per_class: int = 3,
    jitter: float = 1.2,
    noise: float = 0.25,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Render seeded Gaussian-blob images: each class owns a few blob centres, samples jitter them."""
    rng = np.random.default_rng(seed)
    margin = 2.0
    centres = rng.uniform(margin, image_size - 1 - margin, size=(num_classes, blobs_per_class, 2))
    labels = rng.integers(0, num_classes, size=n_samples)
    coords = np.arange(image_size, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    pos = centres[labels] + rng.normal(0.0, jitter, size=(n_samples, blobs_per_class, 2))
    amp = rng.uniform(0.6, 1.2, size=(n_samples, blobs_per_class))
    width = rng.uniform(0.9, 1.5, size=(n_samples, blobs_per_class))
    dy = yy[None, None] - pos[..., 0, None, None]
    dx = xx[None, None] - pos[..., 1, None, None]
    images = (amp[..., None, None] * np.exp(-(dy**2 + dx**2) / (2 * width[..., None, None] ** 2))).sum(axis=1)
    images += rng.normal(0.0, noise, size=images.shape)
    return images[:, None, :, :], labels


def synthetic_splits(
    n_train: int, n_val: int, n_test: int, seed: int = 0, **kwargs
) -> DatasetSplits:
    num_classes = kwargs.get("num_classes", 10)
    x, y = synthetic_blobs(n_train + n_val + n_test, seed=seed, **kwargs)
    return split_dataset(x, y, n_train, n_val, n_test, seed=seed, num_classes=num_classes)


def _open(path: str | Path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path: str | Path) -> np.ndarray:
    """Read an IDX ubyte file (images 0x00000803 or labels 0x00000801)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DatasetError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise DatasetError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    body = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if body.size != expected:
        raise DatasetError(f"{path}: expected {expected} bytes of data, found {body.size}")
    return body.reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path, pool: int = 1) -> tuple[np.ndarray, np.ndarray]:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1:
        raise DatasetError("IDX images must be 3-D and labels 1-D")
    if len(images) != len(labels):
        raise DatasetError(f"{len(images)} images but {len(labels)} labels")
    x = images[:, None, :, :].astype(np.float64) / 255.0
    return average_pool(x, pool), labels.astype(np.int64)


def load_cifar(paths: list[str | Path], pool: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Read CIFAR-10 binary batches: 3073-byte records of label + 3x32x32 pixels."""
    chunks = []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) % CIFAR_RECORD_BYTES:
            raise DatasetError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}")
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES))
    if not chunks:
        raise DatasetError("no CIFAR batch files given")
    records = np.concatenate(chunks)
    labels = records[:, 0].astype(np.int64)
    x = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return average_pool(x, pool), labels


def average_pool(x: np.ndarray, factor: int) -> np.ndarray:
    if factor <= 1:
        return x
    n, c, h, w = x.shape
    h2, w2 = h // factor, w // factor
    x = x[:, :, : h2 * factor, : w2 * factor]
    return x.reshape(n, c, h2, factor, w2, factor).mean(axis=(3, 5))
