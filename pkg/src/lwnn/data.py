"""Dataset ingestion (IDX, CIFAR binary), normalization, augmentation, batching."""

from __future__ import annotations

import math
import struct
from collections.abc import Iterator
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CIFAR_PIXELS = 32 * 32 * 3
CIFAR10_TRAIN = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST = ("test_batch.bin",)
CIFAR100_TRAIN = ("train.bin",)
CIFAR100_TEST = ("test.bin",)

MAX_SHIFT = 2
MAX_ROTATION = 15.0


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, H, W, C), uint8 raw or float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_count: int
    normalized: bool = False

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataError(f"images must be (N, H, W, C), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, n: int) -> Dataset:
        """The first ``n`` samples, in file order."""
        return replace(self, images=self.images[:n], labels=self.labels[:n])


def _read_idx(path: Path, magic: int) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from e
    if len(raw) < 4:
        raise DataError(f"{path}: truncated header at offset 0 ({len(raw)} bytes)")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise DataError(f"{path}: wrong magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated dimension header at offset 4 (need {header} bytes)")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = math.prod(dims)
    payload = len(raw) - header
    if payload != expected:
        raise DataError(
            f"{path}: payload at offset {header} has {payload} bytes, header declares {expected}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, class_count: int = 10) -> Dataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise DataError(
            f"{images_path} holds {len(images)} images but {labels_path} holds {len(labels)} labels"
        )
    if labels.size and labels.max() >= class_count:
        raise DataError(f"{labels_path}: label {labels.max()} exceeds class count {class_count}")
    return Dataset(images[..., None].copy(), labels.astype(np.int64), class_count)


def load_idx_images(path) -> np.ndarray:
    return _read_idx(path, IDX_IMAGES_MAGIC)[..., None].copy()


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (images if 3-D, labels if 1-D)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def load_cifar(directory, variant: str = "cifar10", split: str = "train") -> Dataset:
    if variant not in ("cifar10", "cifar100"):
        raise ConfigError(f"variant must be 'cifar10' or 'cifar100', got {variant!r}")
    if split not in ("train", "test"):
        raise ConfigError(f"split must be 'train' or 'test', got {split!r}")
    if variant == "cifar10":
        files, label_bytes, classes = (CIFAR10_TRAIN if split == "train" else CIFAR10_TEST), 1, 10
    else:
        files, label_bytes, classes = (CIFAR100_TRAIN if split == "train" else CIFAR100_TEST), 2, 100
    record = label_bytes + CIFAR_PIXELS

    images, labels = [], []
    for name in files:
        path = Path(directory) / name
        try:
            raw = path.read_bytes()
        except OSError as e:
            raise DataError(f"cannot read {path}: {e.strerror}") from e
        if len(raw) % record:
            raise DataError(
                f"{path}: size {len(raw)} is not a multiple of the {record}-byte record "
                f"(trailing record starts at offset {len(raw) - len(raw) % record})"
            )
        recs = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        # CIFAR-100 carries (coarse, fine); the fine label is the last label byte.
        labels.append(recs[:, label_bytes - 1].astype(np.int64))
        images.append(recs[:, label_bytes:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
    return Dataset(np.concatenate(images), np.concatenate(labels), classes)


def normalize(dataset: Dataset) -> Dataset:
    """Scale 8-bit pixels to [0, 1]."""
    if dataset.normalized or dataset.images.dtype != np.uint8:
        raise DataError("dataset is already normalized")
    return replace(dataset, images=dataset.images.astype(np.float64) / 255.0, normalized=True)


@dataclass(frozen=True)
class AugmentSpec:
    shift: int = 0  # max |pixels| per axis
    rotation: float = 0.0  # max |degrees|
    invert_prob: float = 0.0

    def __post_init__(self):
        if not 0 <= self.shift <= MAX_SHIFT:
            raise ConfigError(f"shift range must lie in [0, {MAX_SHIFT}] pixels, got {self.shift}")
        if not 0 <= self.rotation <= MAX_ROTATION:
            raise ConfigError(f"rotation range must lie in [0, {MAX_ROTATION}] degrees, got {self.rotation}")
        if not 0 <= self.invert_prob <= 1:
            raise ConfigError(f"invert probability must lie in [0, 1], got {self.invert_prob}")

    @property
    def enabled(self) -> bool:
        return bool(self.shift or self.rotation or self.invert_prob)


def shift_image(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Move contents ``dx`` columns right and ``dy`` rows down, zero-filling."""
    out = np.zeros_like(image)
    h, w = image.shape[:2]
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_r = slice(max(0, -dy), h - max(0, dy))
    dst_r = slice(max(0, dy), h - max(0, -dy))
    src_c = slice(max(0, -dx), w - max(0, dx))
    dst_c = slice(max(0, dx), w - max(0, -dx))
    out[dst_r, dst_c] = image[src_r, src_c]
    return out


def rotate_image(image: np.ndarray, degrees: float) -> np.ndarray:
    """Nearest-neighbour rotation about the centre, zero-filled."""
    if degrees == 0:
        return image.copy()
    return ndimage.rotate(image, degrees, axes=(1, 0), reshape=False, order=0, mode="constant", cval=0.0)


def invert_image(image: np.ndarray) -> np.ndarray:
    return 1.0 - image


def augment(image: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Randomly shift, rotate and invert one normalized ``(H, W, C)`` image."""
    out = image
    if spec.shift:
        dx, dy = rng.integers(-spec.shift, spec.shift + 1, size=2)
        out = shift_image(out, int(dx), int(dy))
    if spec.rotation:
        out = rotate_image(out, float(rng.uniform(-spec.rotation, spec.rotation)))
    if spec.invert_prob and rng.random() < spec.invert_prob:
        out = invert_image(out)
    return out


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 128
    seed: int = 0
    epoch: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(dataset: Dataset, plan: BatchPlan) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    order = epoch_permutation(len(dataset), plan.seed, plan.epoch)
    for start in range(0, len(order), plan.batch_size):
        idx = order[start : start + plan.batch_size]
        yield dataset.images[idx], dataset.labels[idx]
