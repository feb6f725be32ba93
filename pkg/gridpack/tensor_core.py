from __future__ import annotations
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .config import DTYPE
from .errors import ArgumentError, DimensionError, ShapeError


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """Dense H x W x C grid, row-major, channel-last.

    Used for input images and for every activation map between layers.
    A 2-D array is accepted and treated as a single channel.
    """
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=DTYPE)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ShapeError(f"ImageGrid expects a 3-D array (height, width, channels), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionError(f"ImageGrid dimensions must be >= 1, got {arr.shape}")
        object.__setattr__(self, "data", np.ascontiguousarray(arr))

    @classmethod
    def from_rows(cls, rows) -> "ImageGrid":
        return cls(np.asarray(rows, dtype=DTYPE))

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.height, self.width, self.channels

    @property
    def pixels(self) -> int:
        return self.height * self.width * self.channels

    def equals(self, other: "ImageGrid") -> bool:
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __repr__(self) -> str:
        return f"ImageGrid({self.height}x{self.width}x{self.channels})"


@dataclass(frozen=True, eq=False)
class MaskGrid:
    """Binary H x W validity mask (1 = real example pixel)."""
    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ShapeError(f"MaskGrid expects a 2-D array, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionError(f"MaskGrid dimensions must be >= 1, got {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise ArgumentError("MaskGrid elements must be exactly 0 or 1")
        object.__setattr__(self, "bits", np.ascontiguousarray(arr, dtype=np.uint8))

    @classmethod
    def ones(cls, height: int, width: int) -> "MaskGrid":
        return cls(np.ones((height, width), dtype=np.uint8))

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    def count(self) -> int:
        return int(self.bits.sum())

    def check_governs(self, grid: ImageGrid) -> None:
        if (self.height, self.width) != (grid.height, grid.width):
            raise ShapeError(
                f"mask {self.height}x{self.width} does not match grid {grid.height}x{grid.width}"
            )


def grid_create(height: int, width: int, channels: int, fill_value: float = 0.0) -> ImageGrid:
    if height < 1 or width < 1 or channels < 1:
        raise DimensionError(f"grid dimensions must be >= 1, got ({height}, {width}, {channels})")
    return ImageGrid(np.full((height, width, channels), fill_value, dtype=DTYPE))


def flip_horizontal(g: ImageGrid) -> ImageGrid:
    return ImageGrid(g.data[:, ::-1, :])


def flip_vertical(g: ImageGrid) -> ImageGrid:
    return ImageGrid(g.data[::-1, :, :])


def _pgm_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    """Read `count` whitespace separated header tokens, skipping # comments."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ArgumentError("truncated PGM header")
        tokens.append(raw[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path: str | Path) -> ImageGrid:
    """Read a binary (P5) 8-bit grayscale PGM; pixel p maps to p / 255.0."""
    raw = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(raw, 4)
    if tokens[0] != b"P5":
        raise ArgumentError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ArgumentError(f"{path}: only 8-bit PGM is supported (maxval={maxval})")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=offset)
    return ImageGrid(pixels.reshape(height, width).astype(DTYPE) / 255.0)


def write_pgm(g: ImageGrid, path: str | Path) -> Path:
    if g.channels != 1:
        raise ShapeError(f"PGM holds one channel, grid has {g.channels}")
    pixels = np.clip(np.rint(g.data[:, :, 0] * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.write_bytes(f"P5\n{g.width} {g.height}\n255\n".encode("ascii") + pixels.tobytes())
    return path


def read_csv_grid(path: str | Path) -> ImageGrid:
    """Rows of comma-separated reals -> single-channel grid."""
    df = pd.read_csv(path, header=None)
    return ImageGrid(df.to_numpy(dtype=DTYPE))


def read_image(path: str | Path, channels: int | None = None) -> ImageGrid:
    """Dispatch on suffix: .pgm, .csv, or anything matplotlib can read (PNG)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        g = read_pgm(path)
    elif suffix == ".csv":
        g = read_csv_grid(path)
    else:
        import matplotlib.image as mpimg
        arr = np.asarray(mpimg.imread(path), dtype=DTYPE)
        if arr.ndim == 3 and arr.shape[2] == 4:
            arr = arr[:, :, :3]
        g = ImageGrid(arr)
    if channels is not None and g.channels != channels:
        if channels == 1:
            g = ImageGrid(g.data.mean(axis=2, keepdims=True))
        else:
            raise ShapeError(f"{path}: image has {g.channels} channels, expected {channels}")
    return g
