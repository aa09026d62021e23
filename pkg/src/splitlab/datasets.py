"""Labeled image datasets: a synthetic 10-class generator plus disk IO.

Two interchangeable on-disk layouts are supported: the classic binary
batch layout (per record: one label byte, then 1024 R + 1024 G + 1024 B
bytes, row-major) and a plain directory-of-images tree with one
subdirectory per class.

The synthetic classes are oriented gratings: class k carries a sinusoidal
pattern at angle k*18 degrees with randomized frequency, phase, color and
brightness. Class identity lives in the spatial pattern, not in any
per-channel statistic, so channel-mean summaries carry almost no label
signal while a small CNN separates the classes easily.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

IMAGE_SHAPE = (32, 32, 3)
NUM_CLASSES = 10
_RECORD_BYTES = 1 + 3 * 32 * 32


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, 32, 32, 3) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1:] != IMAGE_SHAPE:
            raise DataError(
                f"images must be (N, 32, 32, 3); got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError("one label per image required")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, index) -> "ImageDataset":
        return ImageDataset(self.images[index], self.labels[index])

    def split(self, n_first: int) -> tuple["ImageDataset", "ImageDataset"]:
        if not 0 < n_first < len(self):
            raise DataError(
                f"split point {n_first} outside (0, {len(self)})")
        return self.subset(slice(None, n_first)), self.subset(slice(n_first, None))


def make_synthetic(n: int, seed: int, noise_std: float = 0.30) -> ImageDataset:
    """n oriented-grating images with balanced class labels.

    The default noise level is tuned so a small CNN lands in the high
    90s rather than at a saturated 100%: the attack metrics need a few
    honest boundary mistakes to compare confidences against.
    """
    if n <= 0:
        raise DataError("need at least one sample")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % NUM_CLASSES)
    theta = labels * (np.pi / NUM_CLASSES)
    yy, xx = np.mgrid[0:32, 0:32].astype(np.float64) / 32.0
    freq = rng.uniform(3.0, 7.0, size=n)
    phase = rng.uniform(0.0, 2 * np.pi, size=n)
    ramp = (xx[None] * np.cos(theta)[:, None, None]
            + yy[None] * np.sin(theta)[:, None, None])
    pattern = np.sin(2 * np.pi * freq[:, None, None] * ramp
                     + phase[:, None, None])
    base = rng.uniform(0.35, 0.65, size=(n, 3))
    amp = rng.uniform(0.10, 0.22, size=(n, 3))
    images = (base[:, None, None, :]
              + amp[:, None, None, :] * pattern[..., None]
              + rng.normal(0.0, noise_std, size=(n, 32, 32, 3)))
    return ImageDataset(np.clip(images, 0.0, 1.0), labels)


def save_batch(dataset: ImageDataset, path) -> Path:
    """Write the binary batch layout (label byte + channel-planar pixels)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.round(dataset.images * 255.0).astype(np.uint8)
    # (N, H, W, C) -> (N, C, H*W) channel planes
    planes = pixels.transpose(0, 3, 1, 2).reshape(len(dataset), 3, -1)
    records = np.concatenate(
        [dataset.labels.astype(np.uint8)[:, None],
         planes.reshape(len(dataset), -1)], axis=1)
    path.write_bytes(records.tobytes())
    return path


def load_batch(path) -> ImageDataset:
    path = Path(path)
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if raw.size == 0 or raw.size % _RECORD_BYTES:
        raise DataError(
            f"{path} is not a whole number of {_RECORD_BYTES}-byte records")
    records = raw.reshape(-1, _RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    planes = records[:, 1:].reshape(-1, 3, 32, 32)
    images = planes.transpose(0, 2, 3, 1).astype(np.float32) / 255.0
    return ImageDataset(images, labels)


def save_image_dir(dataset: ImageDataset, path) -> Path:
    from PIL import Image

    path = Path(path)
    for i in range(len(dataset)):
        label = int(dataset.labels[i])
        class_dir = path / f"class_{label}"
        class_dir.mkdir(parents=True, exist_ok=True)
        pixels = np.round(dataset.images[i] * 255.0).astype(np.uint8)
        Image.fromarray(pixels).save(class_dir / f"img_{i:05d}.png")
    return path


def load_image_dir(path) -> ImageDataset:
    """Read class_<k>/ subdirectories of 32x32 images."""
    from PIL import Image

    path = Path(path)
    images, labels = [], []
    class_dirs = sorted(d for d in path.iterdir()
                        if d.is_dir() and d.name.startswith("class_"))
    if not class_dirs:
        raise DataError(f"no class_<k> subdirectories under {path}")
    for class_dir in class_dirs:
        label = int(class_dir.name.split("_", 1)[1])
        for img_path in sorted(class_dir.iterdir()):
            with Image.open(img_path) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
            if arr.shape != IMAGE_SHAPE:
                raise DataError(
                    f"{img_path} has shape {arr.shape}, expected {IMAGE_SHAPE}")
            images.append(arr)
            labels.append(label)
    return ImageDataset(np.stack(images), np.asarray(labels))


def load_dataset(path) -> ImageDataset:
    """Dispatch on layout: a file is a binary batch, a directory is images."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset path {path} does not exist")
    if path.is_dir():
        return load_image_dir(path)
    return load_batch(path)
