"""Reader and writer for the MNIST IDX container.

Layout (all integers big-endian)::

    [0:4]   magic   0x00000803 images (3 dims) / 0x00000801 labels (1 dim)
    [4:...] one uint32 size per dimension
    [...]   unsigned-byte payload, row-major

Files starting with the gzip magic are decompressed transparently.
"""
from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"

# canonical file names -> SHA-256 of the *uncompressed* IDX bytes
CANONICAL_FILES = {
    "train-images-idx3-ubyte": "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "train-labels-idx1-ubyte": "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    "t10k-images-idx3-ubyte": "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "t10k-labels-idx1-ubyte": "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
}

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxError(ValueError):
    pass


class BadMagic(IdxError):
    pass


class Truncated(IdxError):
    pass


class BadLabel(IdxError):
    pass


class CountMismatch(IdxError):
    pass


@dataclass(frozen=True)
class RawIdxHeader:
    magic: int
    dims: tuple[int, ...]

    @property
    def size(self) -> int:
        return 4 + 4 * len(self.dims)

    @property
    def n_items(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))


@dataclass
class Dataset:
    """Images (N, h, w) float32 in [0, 1] with labels (N,) uint8."""

    images: np.ndarray
    labels: np.ndarray
    split: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatch(
                f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int | None) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.split)


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == GZIP_MAGIC:
        return gzip.decompress(data)
    return data


def read_header(data: bytes, magic: int, ndim: int) -> RawIdxHeader:
    if len(data) < 4:
        raise Truncated("file shorter than the magic word")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise BadMagic(f"expected magic 0x{magic:08x}, found 0x{found:08x}")
    end = 4 + 4 * ndim
    if len(data) < end:
        raise Truncated("header cut short")
    dims = struct.unpack(f">{ndim}I", data[4:end])
    header = RawIdxHeader(found, tuple(dims))
    if len(data) - end < header.n_items:
        raise Truncated(
            f"payload has {len(data) - end} bytes, header promises {header.n_items}")
    return header


def parse_idx_images(data: bytes) -> np.ndarray:
    """Return a (count, rows, cols) float32 array with each byte mapped to b/255."""
    data = _maybe_gunzip(data)
    header = read_header(data, IMAGE_MAGIC, 3)
    raw = np.frombuffer(data, dtype=np.uint8, count=header.n_items, offset=header.size)
    return (raw.reshape(header.dims).astype(np.float32) / np.float32(255.0))


def parse_idx_labels(data: bytes) -> np.ndarray:
    data = _maybe_gunzip(data)
    header = read_header(data, LABEL_MAGIC, 1)
    labels = np.frombuffer(data, dtype=np.uint8, count=header.n_items, offset=header.size)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise BadLabel(f"label {labels[bad]} at index {bad} is not a digit")
    return labels.copy()


def serialize_idx_images(images: np.ndarray) -> bytes:
    """Inverse of parse_idx_images: intensities are rounded back to bytes."""
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    raw = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    return struct.pack(">4I", IMAGE_MAGIC, *raw.shape) + raw.tobytes()


def serialize_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", LABEL_MAGIC, labels.size) + labels.tobytes()


def _read(path: str | Path) -> bytes:
    path = Path(path)
    if not path.exists() and path.with_name(path.name + ".gz").exists():
        path = path.with_name(path.name + ".gz")
    return path.read_bytes()


def load_dataset(image_path, label_path, split: str) -> Dataset:
    images = parse_idx_images(_read(image_path))
    labels = parse_idx_labels(_read(label_path))
    if len(images) != len(labels):
        raise CountMismatch(f"{len(images)} images but {len(labels)} labels")
    return Dataset(images, labels, split)


def load_split(data_dir: str | Path, split: str) -> Dataset:
    image_name, label_name = SPLIT_FILES[split]
    data_dir = Path(data_dir)
    return load_dataset(data_dir / image_name, data_dir / label_name, split)


def sha256_file(path: str | Path) -> str:
    """SHA-256 of the uncompressed IDX contents."""
    return hashlib.sha256(_maybe_gunzip(_read(path))).hexdigest()


def dataset_checksums(data_dir: str | Path) -> dict[str, str]:
    data_dir = Path(data_dir)
    return {name: sha256_file(data_dir / name) for name in sorted(CANONICAL_FILES)}
