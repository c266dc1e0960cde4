"""Grayscale images, bilinear warping and the tangent space of the
image appearance manifold."""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateTangent, FormatError
from .transforms import (
    TangentVector,
    Transform,
    TransformGroup,
    apply_to_points,
    exp_map,
)

__all__ = [
    "Image",
    "TangentBasis",
    "warp",
    "l2_norm",
    "tangent_basis",
    "project_to_tangent",
    "spatial_gradient",
    "read_pgm",
    "write_pgm",
    "pgm_bytes",
    "TANGENT_EPS",
]

TANGENT_EPS = 0.05

PathOrFile = Union[str, os.PathLike, BinaryIO]


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable grayscale raster; ``pixels`` has shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.array(self.pixels, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise ValueError(f"image pixels must be a non-empty 2-D array, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("image has non-finite pixels")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @classmethod
    def from_flat(cls, values, width: int, height: int) -> "Image":
        values = np.asarray(values, dtype=np.float64)
        if values.size != width * height:
            raise ValueError(f"{values.size} values for a {width}x{height} image")
        return cls(values.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.shape, self.pixels.tobytes()))


@lru_cache(maxsize=32)
def _centered_grid(height: int, width: int):
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    xs -= cx
    ys -= cy
    xs.setflags(write=False)
    ys.setflags(write=False)
    return xs, ys, cx, cy


def _bilinear(pixels: np.ndarray, cols: np.ndarray, rows: np.ndarray) -> np.ndarray:
    h, w = pixels.shape
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = pixels
    c0 = np.floor(np.clip(cols, -2.0, w + 1.0))
    r0 = np.floor(np.clip(rows, -2.0, h + 1.0))
    fx = cols - c0
    fy = rows - r0
    # out-of-frame neighbours land on the zero border of ``padded``
    j0 = np.clip(c0, -1, w).astype(np.intp) + 1
    j1 = np.clip(c0 + 1, -1, w).astype(np.intp) + 1
    i0 = np.clip(r0, -1, h).astype(np.intp) + 1
    i1 = np.clip(r0 + 1, -1, h).astype(np.intp) + 1
    return (
        (1.0 - fx) * (1.0 - fy) * padded[i0, j0]
        + fx * (1.0 - fy) * padded[i0, j1]
        + (1.0 - fx) * fy * padded[i1, j0]
        + fx * fy * padded[i1, j1]
    )


def warp(img: Image, t: Transform) -> Image:
    """Backward warp: ``out(p) = img(t^-1(p))`` with bilinear sampling and
    zero padding outside the source frame."""
    xs, ys, cx, cy = _centered_grid(img.height, img.width)
    sx, sy = apply_to_points(t.inverse(), xs, ys)
    return Image(_bilinear(img.pixels, sx + cx, sy + cy))


def l2_norm(img: Image) -> float:
    return float(np.linalg.norm(img.flat))


@dataclass(frozen=True, eq=False)
class TangentBasis:
    """Columns are d(warped image)/du_j at ``base_image``, shape (n, d)."""

    columns: np.ndarray
    base_image: Image
    group: TransformGroup
    _chol: tuple = None

    def __post_init__(self):
        gram = self.columns.T @ self.columns
        eig = np.linalg.eigvalsh(gram)
        lo, hi = eig[0], eig[-1]
        if lo < 1e-12 or hi / lo > 1e12:
            raise DegenerateTangent(
                f"tangent basis is degenerate (eigenvalues {lo:.3g} .. {hi:.3g})"
            )
        object.__setattr__(self, "_chol", cho_factor(gram))


def tangent_basis(img: Image, group: TransformGroup, eps: float = TANGENT_EPS) -> TangentBasis:
    cols = []
    for j in range(group.dim):
        step = np.zeros(group.dim)
        step[j] = eps
        plus = warp(img, exp_map(TangentVector(step, group)))
        minus = warp(img, exp_map(TangentVector(-step, group)))
        cols.append((plus.flat - minus.flat) / (2.0 * eps))
    return TangentBasis(np.stack(cols, axis=1), img, group)


def project_to_tangent(basis: TangentBasis, grad) -> TangentVector:
    """Least-squares coefficients ``(J^T J)^-1 J^T grad``."""
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    if grad.shape[0] != basis.columns.shape[0]:
        raise ValueError("gradient length does not match the tangent basis")
    w = cho_solve(basis._chol, basis.columns.T @ grad)
    return TangentVector(w, basis.group)


def spatial_gradient(img: Image) -> tuple[Image, Image]:
    """(d/dx, d/dy): central differences inside, one-sided on the border."""
    if img.width < 3 or img.height < 3:
        raise ValueError("spatial_gradient needs at least a 3x3 image")
    d_row, d_col = np.gradient(img.pixels)
    return Image(d_col), Image(d_row)


def _read_bytes(source: PathOrFile) -> bytes:
    if hasattr(source, "read"):
        return source.read()
    return Path(source).read_bytes()


def read_pgm(source: PathOrFile) -> Image:
    """Read a binary (P5) PGM file; intensities are scaled to [0, 1]."""
    data = _read_bytes(source)
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("non-numeric PGM header field") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise FormatError("invalid PGM dimensions or maxval")
    pos += 1  # single whitespace byte before the raster
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    size = width * height * dtype.itemsize
    raster = data[pos:pos + size]
    if len(raster) != size:
        raise FormatError("truncated PGM raster")
    values = np.frombuffer(raster, dtype=dtype).astype(np.float64) / maxval
    return Image.from_flat(values, width, height)


def pgm_bytes(img: Image) -> bytes:
    raster = np.round(np.clip(img.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + raster.tobytes()


def write_pgm(img: Image, sink: PathOrFile) -> None:
    payload = pgm_bytes(img)
    if hasattr(sink, "write"):
        sink.write(payload)
    else:
        Path(sink).write_bytes(payload)
