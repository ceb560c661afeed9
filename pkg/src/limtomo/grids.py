"""Core lattices, masks, and containers for images and sinograms.

Conventions used across the toolkit:

* the image lives on the square [-1, 1]^2 containing the unit reconstruction
  disk, pixel centers at -1 + (i + 0.5) * pixel_size, row-major (row = y);
* sinogram arrays are stored angle-major, shape (n_angles, n_bins), angles
  equispaced in [0, pi), detector offsets spanning [-1, 1];
* truncation masks keep the detector bins with |s| < mu.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class GridMismatchError(ValueError):
    """Raised when an operation mixes incompatible grids or shapes."""


def _as_finite_f64(data, name):
    arr = np.asarray(data, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class SinogramGrid:
    """Sampling lattice of a parallel-beam sinogram.

    n_angles projections equispaced in [0, pi); n_bins detector bins whose
    centers are uniform and symmetric about 0, spanning (-1, 1).
    """

    n_angles: int
    n_bins: int

    def __post_init__(self):
        if self.n_angles < 1 or self.n_bins < 1:
            raise ValueError("grid must have at least one angle and one bin")

    @property
    def angles(self):
        return np.arange(self.n_angles) * (np.pi / self.n_angles)

    @property
    def bin_centers(self):
        step = 2.0 / self.n_bins
        return -1.0 + (np.arange(self.n_bins) + 0.5) * step

    @property
    def bin_spacing(self):
        return 2.0 / self.n_bins

    @property
    def shape(self):
        return (self.n_angles, self.n_bins)


@dataclass(frozen=True, eq=False)
class Image:
    """Square pixel image on [-1, 1]^2, data shape (height, width)."""

    data: np.ndarray
    pixel_size: float = 0.0

    def __post_init__(self):
        arr = _as_finite_f64(self.data, "image data")
        if arr.ndim != 2:
            raise ValueError("image data must be 2-D")
        object.__setattr__(self, "data", arr)
        if self.pixel_size <= 0.0:
            object.__setattr__(self, "pixel_size", 2.0 / arr.shape[1])

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Projection data on a SinogramGrid, stored angle-major."""

    grid: SinogramGrid
    data: np.ndarray

    def __post_init__(self):
        arr = _as_finite_f64(self.data, "sinogram data")
        if arr.shape != self.grid.shape:
            raise GridMismatchError(
                f"sinogram data shape {arr.shape} != grid shape {self.grid.shape}")
        object.__setattr__(self, "data", arr)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))


@dataclass(frozen=True, eq=False)
class TruncationMask:
    """Boolean keep-mask over a sinogram grid: kept where |s| < mu.

    mu in (0, 1]; mu = 1.0 keeps every bin (all centers satisfy |s| < 1),
    which encodes the complete-data case.
    """

    grid: SinogramGrid
    mu: float
    kept: np.ndarray = field(default=None)

    def __post_init__(self):
        if not 0.0 < self.mu <= 1.0:
            raise ValueError(f"mu must lie in (0, 1], got {self.mu}")
        kept = self.kept
        if kept is None:
            kept = np.broadcast_to(
                np.abs(self.grid.bin_centers) < self.mu, self.grid.shape).copy()
        kept = np.asarray(kept, dtype=bool)
        if kept.shape != self.grid.shape:
            raise GridMismatchError(
                f"mask shape {kept.shape} != grid shape {self.grid.shape}")
        object.__setattr__(self, "kept", kept)

    @property
    def complement(self):
        return ~self.kept

    @property
    def n_kept(self):
        return int(self.kept.sum())


def restrict(v: Sinogram, mask: TruncationMask) -> Sinogram:
    """Zero the sinogram outside the kept region; the grid is unchanged."""
    if v.grid != mask.grid:
        raise GridMismatchError("sinogram and mask live on different grids")
    return Sinogram(v.grid, np.where(mask.kept, v.data, 0.0))


def restrict_complement(v: Sinogram, mask: TruncationMask) -> Sinogram:
    """Zero the sinogram inside the kept region (complement of restrict)."""
    if v.grid != mask.grid:
        raise GridMismatchError("sinogram and mask live on different grids")
    return Sinogram(v.grid, np.where(mask.kept, 0.0, v.data))


# ---------------------------------------------------------------------------
# File containers.  Both use a 24-byte little-endian header:
#   magic (4 bytes) | u32 | u32 | u32 reserved = 0 | f64
# followed by the payload as little-endian float64.
# Sinogram ("SINO"): u32 n_bins, u32 n_angles, f64 mu; data angle-major.
# Image    ("IMG2"): u32 width,  u32 height,   f64 pixel_size; data row-major.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIII d")
SINO_MAGIC = b"SINO"
IMG_MAGIC = b"IMG2"


def write_sinogram(path, sino: Sinogram, mu: float = 1.0):
    header = _HEADER.pack(SINO_MAGIC, sino.grid.n_bins, sino.grid.n_angles, 0, mu)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(sino.data, dtype="<f8").tobytes())


def read_sinogram(path):
    """Read a SINO container; returns (Sinogram, mu)."""
    with open(path, "rb") as fh:
        magic, n_bins, n_angles, _, mu = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != SINO_MAGIC:
            raise ValueError(f"{path}: not a sinogram container")
        data = np.frombuffer(fh.read(8 * n_bins * n_angles), dtype="<f8")
    grid = SinogramGrid(n_angles=n_angles, n_bins=n_bins)
    return Sinogram(grid, data.reshape(n_angles, n_bins)), mu


def write_image(path, image: Image):
    header = _HEADER.pack(IMG_MAGIC, image.width, image.height, 0, image.pixel_size)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(image.data, dtype="<f8").tobytes())


def read_image(path):
    with open(path, "rb") as fh:
        magic, width, height, _, pixel_size = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != IMG_MAGIC:
            raise ValueError(f"{path}: not an image container")
        data = np.frombuffer(fh.read(8 * width * height), dtype="<f8")
    return Image(data.reshape(height, width), pixel_size)


def write_pgm(path, image: Image, window=(0.0, 1.0)):
    """16-bit binary PGM for viewing, clamped to the given display window."""
    lo, hi = window
    scaled = np.clip((image.data - lo) / (hi - lo), 0.0, 1.0)
    pix = np.round(scaled * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.width} {image.height}\n65535\n".encode("ascii"))
        fh.write(pix.tobytes())
