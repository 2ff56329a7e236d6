"""IDX image/label ingestion and a synthetic classification generator.

The IDX container is the classic big-endian format: images carry magic
2051 then count/rows/cols as 32-bit words and one unsigned byte per pixel;
labels carry magic 2049 then count and one byte per label. Gzipped files
are detected by their 2-byte prefix. Pixels are normalized by 255 so every
input coordinate lands in [0, 1].

The synthetic generator builds ten class-conditional Gaussians around
fixed unit-norm prototypes; it exists so the full pipeline runs with no
dataset files at hand.
"""

from __future__ import annotations

import gzip
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .tensor import child_rng

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

_MAGIC_NAMES = {IMAGE_MAGIC: "image", LABEL_MAGIC: "label"}


@dataclass
class Dataset:
    images: np.ndarray       # N x 784, float64 in [0, 1]
    labels: np.ndarray       # N int64 in [0, 10)
    name: str = ""
    split: str = ""

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.images.shape[0]


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _describe_magic(found: int, expected: int) -> str:
    hint = _MAGIC_NAMES.get(found)
    msg = f"expected magic {expected}, found {found}"
    if hint:
        msg += f" (the {hint} magic)"
    return msg


def load_idx_images(path) -> np.ndarray:
    """N x 784 float64 matrix from an IDX image file, pixels divided by 255."""
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise ValueError(f"file too short for an IDX image header: {len(raw)} bytes")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise ValueError(_describe_magic(magic, IMAGE_MAGIC))
    if (rows, cols) != (28, 28):
        raise ValueError(f"expected 28x28 images, header says {rows}x{cols}")
    expected = count * rows * cols
    payload = raw[16:]
    if len(payload) != expected:
        raise ValueError(
            f"truncated image payload: expected {expected} bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(count, rows * cols)


def load_idx_labels(path) -> np.ndarray:
    """Label vector from an IDX label file; every label must be below 10."""
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise ValueError(f"file too short for an IDX label header: {len(raw)} bytes")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise ValueError(_describe_magic(magic, LABEL_MAGIC))
    payload = raw[8:]
    if len(payload) != count:
        raise ValueError(
            f"truncated label payload: expected {count} bytes, got {len(payload)}"
        )
    labels = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    if count and labels.max() >= 10:
        raise ValueError(f"label {labels.max()} out of range [0, 10)")
    return labels


def idx_image_bytes(images: np.ndarray) -> bytes:
    """Serialize an N x 784 [0,1] matrix back to IDX image bytes."""
    n = images.shape[0]
    pixels = np.rint(images * 255.0).astype(np.uint8)
    return struct.pack(">IIII", IMAGE_MAGIC, n, 28, 28) + pixels.tobytes()


def idx_label_bytes(labels: np.ndarray) -> bytes:
    return struct.pack(">II", LABEL_MAGIC, len(labels)) + bytes(
        np.asarray(labels, dtype=np.uint8)
    )


def load_dataset(image_path, label_path, name="", split="") -> Dataset:
    images = load_idx_images(image_path)
    labels = load_idx_labels(label_path)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"{images.shape[0]} images in {image_path} but "
            f"{labels.shape[0]} labels in {label_path}"
        )
    return Dataset(images=images, labels=labels, name=name, split=split)


def synthetic_dataset(
    seed: int,
    n_samples: int,
    d: int = 784,
    classes: int = 10,
    label_perm: np.ndarray | None = None,
    name: str = "synthetic",
    split: str = "",
) -> Dataset:
    """Class-conditional Gaussian images around fixed unit-norm prototypes.

    sample = clip(0.5 * prototype[class] + 0.2 * noise, 0, 1). Prototypes
    depend only on the seed's prototype stream, so train/test splits drawn
    with different sample streams share the same class structure. Labels
    are stratified: every class count is within one of n_samples/classes.
    An optional label permutation relabels classes, giving a shifted task
    on the same inputs.
    """
    if n_samples < classes:
        raise ValueError(f"need at least {classes} samples, got {n_samples}")
    proto_rng = child_rng(seed, 0)
    protos = proto_rng.standard_normal((classes, d))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)

    sample_rng = child_rng(seed, 1, zlib.crc32(split.encode("utf-8")))
    labels = np.arange(n_samples) % classes
    sample_rng.shuffle(labels)
    noise = sample_rng.standard_normal((n_samples, d))
    images = np.clip(0.5 * protos[labels] + 0.2 * noise, 0.0, 1.0)
    if label_perm is not None:
        label_perm = np.asarray(label_perm, dtype=np.int64)
        if sorted(label_perm.tolist()) != list(range(classes)):
            raise ValueError("label_perm must be a permutation of the classes")
        labels = label_perm[labels]
    return Dataset(images=images, labels=labels.astype(np.int64), name=name, split=split)


def batch_iterator(dataset: Dataset, batch: int, rng: np.random.Generator):
    """One epoch of shuffled column batches (784 x batch, labels).

    The shuffle order comes from the supplied generator, the final partial
    batch is kept, and every index is visited exactly once per epoch.
    """
    n = len(dataset)
    if batch < 1 or batch > n:
        raise ValueError(f"batch size {batch} invalid for {n} samples")
    order = rng.permutation(n)
    for start in range(0, n, batch):
        idx = order[start:start + batch]
        yield dataset.images[idx].T.copy(), dataset.labels[idx]
