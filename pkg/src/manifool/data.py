"""Dataset ingestion: IDX archives, label CSVs, PGM directories and
synthetic Gaussian-blob tasks."""
from __future__ import annotations

import csv
import gzip
import os
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import BinaryIO, Sequence, Union

import numpy as np

from .classifier import LabeledDataset
from .errors import FormatError
from .image import Image, read_pgm

__all__ = [
    "IdxArchive",
    "read_idx",
    "write_idx",
    "load_idx_images",
    "load_idx_labels",
    "load_labels_csv",
    "load_pgm_dir",
    "synth_blobs",
    "bundled_mnist",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

Source = Union[str, os.PathLike, BinaryIO, bytes]


@dataclass(frozen=True)
class IdxArchive:
    magic: int
    dims: tuple[int, ...]
    payload: bytes

    def array(self) -> np.ndarray:
        return np.frombuffer(self.payload, dtype=np.uint8).reshape(self.dims)


def _raw(source: Source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif hasattr(source, "read"):
        data = source.read()
    else:
        data = Path(source).read_bytes()
    if data[:2] == b"\x1f\x8b":
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as exc:
            raise FormatError(f"corrupt gzip stream: {exc}") from None
    return data


def read_idx(source: Source, expected_magic: int | None = None) -> IdxArchive:
    """Parse a big-endian IDX archive of unsigned bytes (gzip accepted)."""
    data = _raw(source)
    if len(data) < 4:
        raise FormatError("IDX header truncated")
    (magic,) = struct.unpack_from(">I", data)
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != 0x08:
        raise FormatError(f"unsupported IDX magic 0x{magic:08x}")
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"expected IDX magic 0x{expected_magic:08x}, got 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(data) < 4 + 4 * ndim:
        raise FormatError("IDX dimension table truncated")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    size = int(np.prod(dims, dtype=np.int64)) if dims else 0
    payload = data[4 + 4 * ndim:]
    if len(payload) != size:
        raise FormatError(f"IDX payload has {len(payload)} bytes, header implies {size}")
    return IdxArchive(magic, tuple(dims), payload)


def write_idx(sink, array: np.ndarray, compress: bool = False) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only unsigned-byte IDX archives are supported")
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload = header + array.tobytes()
    if compress:
        payload = gzip.compress(payload, mtime=0)
    if hasattr(sink, "write"):
        sink.write(payload)
    else:
        Path(sink).write_bytes(payload)


def load_idx_images(source: Source) -> list[Image]:
    arc = read_idx(source, IMAGE_MAGIC)
    pixels = arc.array().astype(np.float64) / 255.0
    return [Image(p) for p in pixels]


def load_idx_labels(source: Source) -> list[int]:
    arc = read_idx(source, LABEL_MAGIC)
    return [int(v) for v in arc.array()]


def load_labels_csv(path) -> list[int]:
    """Labels from an ``image_index,label`` CSV (header row optional)."""
    rows = []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), 1):
            if not row or (lineno == 1 and row[0].strip() == "image_index"):
                continue
            try:
                rows.append((int(row[0]), int(row[1])))
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{lineno}: expected image_index,label") from None
    rows.sort()
    if [i for i, _ in rows] != list(range(len(rows))):
        raise FormatError("label CSV indices must cover 0..n-1 exactly once")
    return [label for _, label in rows]


def load_pgm_dir(directory) -> list[Image]:
    """All ``*.pgm`` files of a directory in lexicographic filename order."""
    return [read_pgm(p) for p in sorted(Path(directory).glob("*.pgm"))]


def synth_blobs(n_per_class: int, width: int, height: int,
                class_offsets: Sequence[tuple[float, float]], blob_sigma: float = 2.0,
                seed: int = 0, jitter: float = 0.5) -> LabeledDataset:
    """Gaussian blobs centred at per-class offsets (pixels from the image
    centre) plus seeded uniform jitter of at most ``jitter`` pixels."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    xs -= (width - 1) / 2.0
    ys -= (height - 1) / 2.0
    images, labels = [], []
    for _ in range(n_per_class):
        for label, (ox, oy) in enumerate(class_offsets):
            dx, dy = rng.uniform(-jitter, jitter, size=2)
            cx, cy = ox + dx, oy + dy
            images.append(Image(np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * blob_sigma ** 2))))
            labels.append(label)
    return LabeledDataset(images, labels)


def bundled_mnist(split: str = "train", limit: int | None = None) -> LabeledDataset:
    """The 10,000-digit MNIST sample shipped with the package
    (8000 ``train`` / 2000 ``test``)."""
    if split not in ("train", "test"):
        raise ValueError("split must be 'train' or 'test'")
    root = resources.files("manifool") / "datasets"
    images = load_idx_images((root / f"{split}-images-idx3-ubyte.gz").read_bytes())
    labels = load_idx_labels((root / f"{split}-labels-idx1-ubyte.gz").read_bytes())
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return LabeledDataset(images, labels)
