"""Datasets: CIFAR-10 binary batches and a seeded synthetic image task."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .tensor import Rng

RECORD_BYTES = 3073
IMAGE_SHAPE = (3, 32, 32)
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"


class FormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) == 0:
            raise ValueError("empty dataset")
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ValueError(f"images {self.images.shape} and labels {self.labels.shape} disagree")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(f"labels outside [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.images.shape[1:]


# ---------------------------------------------------------------- CIFAR-10


def read_cifar10_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw (uint8 N x 3 x 32 x 32 images, uint8 labels) of one binary batch file."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES:
        raise FormatError(f"{path}: size {raw.size} is not a positive multiple of {RECORD_BYTES}")
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].copy()
    if labels.max() > 9:
        raise FormatError(f"{path}: label byte {int(labels.max())} > 9")
    images = records[:, 1:].reshape(-1, *IMAGE_SHAPE).copy()
    return images, labels


def write_cifar10_batch(path, images: np.ndarray, labels) -> None:
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or images.shape[1:] != IMAGE_SHAPE:
        raise ValueError("images must be uint8 with shape N x 3 x 32 x 32")
    if len(images) != len(labels) or labels.min() < 0 or labels.max() > 9:
        raise ValueError("labels must be one byte in [0, 9] per image")
    out = np.empty((len(labels), RECORD_BYTES), dtype=np.uint8)
    out[:, 0] = labels
    out[:, 1:] = images.reshape(len(labels), -1)
    out.tofile(path)


def normalize_cifar(images_u8: np.ndarray) -> np.ndarray:
    x = images_u8.astype(np.float32) / np.float32(255)
    mean = np.asarray(CIFAR10_MEAN, dtype=np.float32).reshape(1, 3, 1, 1)
    std = np.asarray(CIFAR10_STD, dtype=np.float32).reshape(1, 3, 1, 1)
    return (x - mean) / std


def _find_batches(root):
    for cand in (root, os.path.join(root, "cifar-10-batches-bin")):
        if all(os.path.exists(os.path.join(cand, f)) for f in TRAIN_FILES + (TEST_FILE,)):
            return cand
    raise FileNotFoundError(f"no CIFAR-10 binary batches under {root}")


def load_cifar10(root) -> tuple[Dataset, Dataset]:
    root = _find_batches(root)
    parts = [read_cifar10_batch(os.path.join(root, f)) for f in TRAIN_FILES]
    train_x = np.concatenate([p[0] for p in parts])
    train_y = np.concatenate([p[1] for p in parts])
    test_x, test_y = read_cifar10_batch(os.path.join(root, TEST_FILE))
    meta = {"mean": CIFAR10_MEAN, "std": CIFAR10_STD}
    return (Dataset(normalize_cifar(train_x), train_y, 10, "train", meta),
            Dataset(normalize_cifar(test_x), test_y, 10, "test", meta))


# ---------------------------------------------------------------- synthetic


def synth_templates(class_count: int, shape, rng: Rng) -> np.ndarray:
    """One unit-norm Gaussian template image per class."""
    t = rng.normal((class_count, *shape), dtype=np.float64)
    t /= np.linalg.norm(t.reshape(class_count, -1), axis=1).reshape(-1, 1, 1, 1)
    return t.astype(np.float32)


def synth_dataset(class_count: int, n_per_class: int, shape, noise_sigma: float, rng: Rng,
                  templates: np.ndarray | None = None, split="train", clip=1.0) -> Dataset:
    """Template-plus-noise images, clamped to [-clip, clip], labels balanced.

    Templates are drawn from ``rng`` unless given, so a train and a test
    split sharing templates are built by passing the same array to both.
    """
    if class_count < 2:
        raise ValueError("synthetic task needs at least 2 classes")
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    shape = tuple(shape)
    if templates is None:
        templates = synth_templates(class_count, shape, rng)
    labels = np.tile(np.arange(class_count), n_per_class)
    noise = rng.normal((len(labels), *shape), std=noise_sigma) if noise_sigma > 0 else 0.0
    images = np.clip(templates[labels] + noise, -clip, clip).astype(np.float32)
    return Dataset(images, labels, class_count, split, {"templates": templates, "noise_sigma": noise_sigma})


def synth_splits(class_count, n_train, n_test, shape, noise_sigma, seed) -> tuple[Dataset, Dataset]:
    """Train/test splits of one synthetic task (shared templates, independent noise)."""
    root = Rng(seed)
    templates = synth_templates(class_count, shape, root.spawn(0))
    train = synth_dataset(class_count, n_train, shape, noise_sigma, root.spawn(1), templates, "train")
    test = synth_dataset(class_count, n_test, shape, noise_sigma, root.spawn(2), templates, "test")
    return train, test


def nearest_template_accuracy(dataset: Dataset) -> float:
    """Accuracy of assigning each image to its closest class template."""
    t = dataset.meta["templates"].reshape(dataset.class_count, -1).astype(np.float64)
    x = dataset.images.reshape(len(dataset), -1).astype(np.float64)
    d = (x ** 2).sum(1, keepdims=True) - 2 * x @ t.T + (t ** 2).sum(1)
    return float((d.argmin(axis=1) == dataset.labels).mean())


# ---------------------------------------------------------------- batching


def augment(batch: np.ndarray, rng: Rng, pad=4, flip_prob=0.5) -> np.ndarray:
    """Reflect-pad by ``pad``, take a random crop of the original size, mirror with ``flip_prob``."""
    n, c, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect") if pad else batch
    dy = rng.integers(0, 2 * pad + 1, size=n)
    dx = rng.integers(0, 2 * pad + 1, size=n)
    flip = rng.random(n) < flip_prob
    out = np.empty_like(batch)
    for i in range(n):
        crop = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out


def batch_iter(dataset: Dataset, batch_size: int, shuffle: bool, rng: Rng | None = None):
    """Yield (images, labels, indices) mini-batches covering every sample once."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(dataset)
    order = rng.permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield dataset.images[idx], dataset.labels[idx], idx
