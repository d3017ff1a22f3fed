"""CIFAR binary ingestion, preprocessing, batching and a synthetic dataset."""

from __future__ import annotations

import colorsys
import os
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

PIXELS = 3 * 32 * 32
CIFAR10_RECORD = 1 + PIXELS
CIFAR100_RECORD = 2 + PIXELS

CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)


class DataFormatError(ValueError):
    """Malformed dataset file; the message carries the byte offset."""


@dataclass(frozen=True)
class ImageRecord:
    label: int
    pixels: bytes
    coarse_label: int | None = None

    def __post_init__(self):
        if len(self.pixels) != PIXELS:
            raise ValueError(f"an image record holds {PIXELS} pixel bytes, got {len(self.pixels)}")
        if self.label < 0:
            raise ValueError(f"negative label {self.label}")

    def array(self):
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(3, 32, 32)


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.0
    crop_pad: int = 0
    mean: tuple = (0.5, 0.5, 0.5)
    std: tuple = (0.5, 0.5, 0.5)
    resize: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip probability must lie in [0, 1], got {self.flip_prob}")
        if self.crop_pad < 0:
            raise ValueError("crop padding must be non-negative")
        if any(s <= 0 for s in self.std):
            raise ValueError("normalization std must be positive")


def train_augment(resolution=32, mean=CIFAR10_MEAN, std=CIFAR10_STD):
    return AugmentConfig(flip_prob=0.5, crop_pad=4, mean=mean, std=std,
                         resize=None if resolution == 32 else resolution)


def eval_augment(resolution=32, mean=CIFAR10_MEAN, std=CIFAR10_STD):
    return AugmentConfig(mean=mean, std=std, resize=None if resolution == 32 else resolution)


# parsing and serialization

def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def _parse(buf, record, label_bytes, num_classes, name):
    n_full, rest = divmod(len(buf), record)
    if rest:
        raise DataFormatError(
            f"{name}: truncated record at byte offset {n_full * record} "
            f"({rest} of {record} bytes present)"
        )
    if n_full == 0:
        return []
    arr = np.frombuffer(buf, dtype=np.uint8).reshape(n_full, record)
    labels = arr[:, label_bytes - 1]
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        i = int(bad[0])
        raise DataFormatError(
            f"{name}: label {labels[i]} out of range [0, {num_classes}) "
            f"at byte offset {i * record + label_bytes - 1} (record {i})"
        )
    coarse = arr[:, 0] if label_bytes == 2 else None
    out = []
    for i in range(n_full):
        pix = arr[i, label_bytes:].tobytes()
        c = int(coarse[i]) if coarse is not None else None
        out.append(ImageRecord(int(labels[i]), pix, c))
    return out


def parse_cifar10_bin(path):
    """Records of a CIFAR-10 binary batch: 1 label byte + 3072 pixel bytes."""
    return _parse(_read(path), CIFAR10_RECORD, 1, 10, os.fspath(path))


def parse_cifar100_bin(path):
    """Records of a CIFAR-100 binary file: coarse byte, fine byte, pixels."""
    return _parse(_read(path), CIFAR100_RECORD, 2, 100, os.fspath(path))


def serialize_cifar10(records):
    return b"".join(bytes([r.label]) + r.pixels for r in records)


def serialize_cifar100(records):
    return b"".join(bytes([r.coarse_label or 0, r.label]) + r.pixels for r in records)


def load_cifar10(data_dir):
    """(train, test) records from a cifar-10-batches-bin style directory."""
    train = []
    for i in range(1, 6):
        train += parse_cifar10_bin(os.path.join(data_dir, f"data_batch_{i}.bin"))
    test = parse_cifar10_bin(os.path.join(data_dir, "test_batch.bin"))
    return train, test


def load_cifar100(data_dir):
    return (parse_cifar100_bin(os.path.join(data_dir, "train.bin")),
            parse_cifar100_bin(os.path.join(data_dir, "test.bin")))


# preprocessing

def resize_matrix(n_in, n_out):
    """Bilinear interpolation weights (half-pixel centres, edge clamped)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


_RESIZE_CACHE = {}


def bilinear_resize(img, size):
    """Resize a (C, H, W) float array to (C, size, size)."""
    C, H, W = img.shape
    key = (H, W, size)
    if key not in _RESIZE_CACHE:
        _RESIZE_CACHE[key] = (resize_matrix(H, size).astype(np.float32),
                              resize_matrix(W, size).astype(np.float32))
    rh, rw = _RESIZE_CACHE[key]
    return np.einsum("oh,chw,pw->cop", rh, img.astype(np.float32), rw, optimize=True)


def _preprocess_array(pixels, aug, rng):
    img = pixels.astype(np.float32) / 255.0
    mean = np.asarray(aug.mean, np.float32).reshape(3, 1, 1)
    std = np.asarray(aug.std, np.float32).reshape(3, 1, 1)
    img = (img - mean) / std
    if aug.crop_pad:
        p = aug.crop_pad
        padded = np.pad(img, ((0, 0), (p, p), (p, p)))
        top, left = rng.integers(0, 2 * p + 1, size=2)
        img = padded[:, top:top + 32, left:left + 32]
    flip = aug.flip_prob >= 1.0 or (aug.flip_prob > 0.0 and rng.random() < aug.flip_prob)
    if flip:
        img = img[:, :, ::-1]
    if aug.resize and aug.resize != img.shape[-1]:
        img = bilinear_resize(img, aug.resize)
    return np.ascontiguousarray(img, dtype=np.float32)


def preprocess(record, aug, rng=None):
    """Bytes -> [0, 1] -> normalized -> pad+crop -> flip -> resize."""
    rng = rng if rng is not None else np.random.default_rng(0)
    return Tensor(_preprocess_array(record.array(), aug, rng))


def epoch_order(n, seed, epoch=0):
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_iter(records, batch_size, shuffle_seed=None, aug=None, epoch=0, rng=None):
    """Yield (images, labels) batches covering every record once.

    With ``shuffle_seed`` the order is a seeded permutation that changes
    with ``epoch``; otherwise records keep file order. The last batch may be
    short.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(records)
    if n == 0:
        raise ValueError("cannot iterate over an empty dataset")
    aug = aug or AugmentConfig()
    order = epoch_order(n, shuffle_seed, epoch) if shuffle_seed is not None else np.arange(n)
    if rng is None:
        rng = np.random.default_rng([0 if shuffle_seed is None else shuffle_seed, epoch, 1])
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        imgs = np.stack([_preprocess_array(records[i].array(), aug, rng) for i in idx])
        labels = np.fromiter((records[i].label for i in idx), dtype=np.int64, count=len(idx))
        yield Tensor(imgs), labels


def num_batches(n, batch_size):
    return -(-n // batch_size)


# synthetic data

def class_colors(num_classes):
    """Well separated RGB base colors in [0, 1], one per class."""
    cols = []
    for k in range(num_classes):
        h = k / num_classes
        v = 0.85 if k % 2 == 0 else 0.55
        cols.append(colorsys.hsv_to_rgb(h, 0.75, v))
    return np.asarray(cols, dtype=np.float64)


def synth_dataset(num_classes, n_per_class, seed=0, noise=0.08):
    """Images of a class-specific flat color plus Gaussian pixel noise.

    ``noise`` is the noise std on the [0, 1] scale; 0 gives the noiseless
    variant where every image of a class is identical.
    """
    if num_classes < 2:
        raise ValueError("synth_dataset needs at least 2 classes")
    if num_classes > 256:
        raise ValueError("labels are stored as bytes; at most 256 classes")
    rng = np.random.default_rng(seed)
    colors = class_colors(num_classes)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    labels = labels[rng.permutation(labels.size)]
    records = []
    for y in labels:
        img = np.broadcast_to(colors[y].reshape(3, 1, 1), (3, 32, 32))
        if noise:
            img = img + noise * rng.standard_normal((3, 32, 32))
        pix = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        records.append(ImageRecord(int(y), pix.tobytes()))
    return records


def subset(records, n, seed=0):
    """First ``n`` records of a seeded permutation."""
    if n >= len(records):
        return list(records)
    idx = np.random.default_rng(seed).permutation(len(records))[:n]
    return [records[i] for i in sorted(idx)]
