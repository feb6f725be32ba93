from __future__ import annotations
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import DTYPE
from .errors import ArgumentError, GroupingError, LayoutError, ShapeError
from .tensor_core import ImageGrid


@dataclass(frozen=True, eq=False)
class ConvParams:
    """Convolution with m input groups and n output groups.

    Output group j reads only input group j // (n // m). Weights are laid out
    (out_channels, in_channels // m, kernel_height, kernel_width).
    """
    in_channels: int
    out_channels: int
    kernel_height: int
    kernel_width: int
    stride_height: int
    stride_width: int
    groups_in: int
    groups_out: int
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        m, n = self.groups_in, self.groups_out
        if min(self.in_channels, self.out_channels, self.kernel_height, self.kernel_width,
               self.stride_height, self.stride_width, m, n) < 1:
            raise ArgumentError("convolution sizes, strides and group counts must be >= 1")
        if n % m:
            raise GroupingError(f"output groups ({n}) must be an exact multiple of input groups ({m})")
        if self.in_channels % m:
            raise GroupingError(f"in_channels {self.in_channels} not divisible by input groups {m}")
        if self.out_channels % n:
            raise GroupingError(f"out_channels {self.out_channels} not divisible by output groups {n}")
        w = np.asarray(self.weights, dtype=DTYPE)
        expected = (self.out_channels, self.in_channels // m, self.kernel_height, self.kernel_width)
        if w.shape != expected:
            raise ShapeError(f"weights shape {w.shape} != {expected}")
        b = np.asarray(self.bias, dtype=DTYPE)
        if b.shape != (self.out_channels,):
            raise ShapeError(f"bias shape {b.shape} != ({self.out_channels},)")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ArgumentError("convolution weights must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def create(cls, in_channels: int, out_channels: int, kernel: tuple[int, int] = (1, 1), *,
               groups_in: int = 1, groups_out: int = 1, rng: np.random.Generator | None = None,
               scale: float = 0.1) -> "ConvParams":
        """Block-strided (stride == kernel) parameters; zeros unless `rng` is given."""
        kh, kw = kernel
        if in_channels % max(groups_in, 1):
            raise GroupingError(f"in_channels {in_channels} not divisible by input groups {groups_in}")
        shape = (out_channels, in_channels // groups_in, kh, kw)
        if rng is None:
            weights, bias = np.zeros(shape), np.zeros(out_channels)
        else:
            weights = rng.uniform(-scale, scale, size=shape)
            bias = rng.uniform(-scale, scale, size=out_channels)
        return cls(in_channels, out_channels, kh, kw, kh, kw, groups_in, groups_out, weights, bias)

    @property
    def is_block_strided(self) -> bool:
        return (self.kernel_height, self.kernel_width) == (self.stride_height, self.stride_width)


def _apply_blocks(p: ConvParams, blocks: np.ndarray) -> np.ndarray:
    """Map every (kh, kw, in_channels) block in `blocks[..., kh, kw, C]` to out_channels.

    Output groups belonging to the same input group are contiguous, so the
    m x n grouped map is m dense matmuls.
    """
    kh, kw, cin = blocks.shape[-3:]
    if (kh, kw) != (p.kernel_height, p.kernel_width):
        raise ShapeError(f"block {kh}x{kw} does not match kernel {p.kernel_height}x{p.kernel_width}")
    if cin != p.in_channels:
        raise ShapeError(f"input has {cin} channels, convolution expects {p.in_channels}")
    lead = blocks.shape[:-3]
    m = p.groups_in
    cin_g, cout_g = p.in_channels // m, p.out_channels // m
    out = np.empty(lead + (p.out_channels,), dtype=DTYPE)
    for g in range(m):
        xg = blocks[..., g * cin_g:(g + 1) * cin_g].reshape(lead + (kh * kw * cin_g,))
        wg = p.weights[g * cout_g:(g + 1) * cout_g].transpose(2, 3, 1, 0).reshape(kh * kw * cin_g, cout_g)
        out[..., g * cout_g:(g + 1) * cout_g] = xg @ wg
    return out + p.bias


def pointwise_array(p: ConvParams, arr: np.ndarray) -> np.ndarray:
    """1x1 convolution over the last axis of an array of any leading shape."""
    if (p.kernel_height, p.kernel_width, p.stride_height, p.stride_width) != (1, 1, 1, 1):
        raise ArgumentError("pointwise convolution needs 1x1 kernel and stride")
    return _apply_blocks(p, arr[..., None, None, :])


def grouped_pointwise_conv(p: ConvParams, g: ImageGrid) -> ImageGrid:
    return ImageGrid(pointwise_array(p, g.data))


def replicate_inputs_for_groups(g: ImageGrid, replication: Sequence[int],
                                block_sizes: Sequence[int] | None = None) -> ImageGrid:
    """Repeat logical channel blocks in place: counts [2, 1] -> block1, block1, block2.

    Blocks are equal-sized unless `block_sizes` is given.
    """
    if any(int(r) < 1 for r in replication):
        raise ArgumentError(f"replication counts must be >= 1, got {list(replication)}")
    if block_sizes is None:
        if len(replication) == 0 or g.channels % len(replication):
            raise ArgumentError(f"{g.channels} channels cannot be split into {len(replication)} equal blocks")
        block_sizes = [g.channels // len(replication)] * len(replication)
    if len(block_sizes) != len(replication):
        raise ArgumentError("replication length must equal the number of input blocks")
    if sum(block_sizes) != g.channels:
        raise ArgumentError(f"block sizes {list(block_sizes)} do not cover {g.channels} channels")
    parts = []
    start = 0
    for size, count in zip(block_sizes, replication):
        parts.extend([g.data[:, :, start:start + size]] * int(count))
        start += size
    return ImageGrid(np.concatenate(parts, axis=2))


def _pad_to_blocks(data: np.ndarray, bh: int, bw: int) -> np.ndarray:
    """Zero-pad axes 1 and 2 of (N, H, W, C) bottom/right to block multiples."""
    h, w = data.shape[1:3]
    ph, pw = -h % bh, -w % bw
    if ph == 0 and pw == 0:
        return data
    return np.pad(data, ((0, 0), (0, ph), (0, pw), (0, 0)))


def block_strided_array(p: ConvParams, arr: np.ndarray) -> np.ndarray:
    """Block-strided convolution of a stack (N, H, W, C) with H, W block multiples."""
    if not p.is_block_strided:
        raise ArgumentError("block-strided convolution needs stride equal to kernel size")
    kh, kw = p.kernel_height, p.kernel_width
    n, h, w, c = arr.shape
    if h % kh or w % kw:
        raise ShapeError(f"stack {h}x{w} is not a multiple of block {kh}x{kw}")
    blocks = arr.reshape(n, h // kh, kh, w // kw, kw, c).transpose(0, 1, 3, 2, 4, 5)
    return _apply_blocks(p, blocks)


def block_strided_conv(p: ConvParams, g: ImageGrid) -> ImageGrid:
    padded = _pad_to_blocks(g.data[None], p.kernel_height, p.kernel_width)
    return ImageGrid(block_strided_array(p, padded)[0])


# ---- tensor-list chunking ----

@dataclass(frozen=True)
class ChunkRecord:
    example_index: int
    height: int
    width: int
    padded_height: int
    padded_width: int
    blocks_per_row: int
    blocks_per_col: int
    block_start: int
    block_stop: int


@dataclass(frozen=True)
class ChunkLayout:
    block_height: int
    block_width: int
    records: tuple[ChunkRecord, ...]

    @property
    def n_blocks(self) -> int:
        return self.records[-1].block_stop if self.records else 0

    def to_dict(self) -> dict:
        return {
            "block_height": self.block_height,
            "block_width": self.block_width,
            "records": [r.__dict__.copy() for r in self.records],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def chunk_tensor_list(tensors: Sequence[ImageGrid], block_h: int, block_w: int) -> tuple[np.ndarray, ChunkLayout]:
    """Cut every tensor into block_h x block_w blocks (row-major) stacked on a batch axis.

    Returns the stack (n_blocks, block_h, block_w, channels) and its provenance.
    """
    if block_h < 1 or block_w < 1:
        raise ArgumentError(f"block dims must be >= 1, got {block_h}x{block_w}")
    if len(tensors) == 0:
        raise ArgumentError("tensor list is empty")
    channels = {t.channels for t in tensors}
    if len(channels) != 1:
        raise ShapeError(f"tensors have mixed channel counts: {sorted(channels)}")
    c = channels.pop()
    stacks, records = [], []
    start = 0
    for idx, t in enumerate(tensors):
        padded = _pad_to_blocks(t.data[None], block_h, block_w)[0]
        ph, pw = padded.shape[:2]
        per_col, per_row = ph // block_h, pw // block_w
        blocks = (padded.reshape(per_col, block_h, per_row, block_w, c)
                  .transpose(0, 2, 1, 3, 4)
                  .reshape(per_col * per_row, block_h, block_w, c))
        stacks.append(blocks)
        stop = start + len(blocks)
        records.append(ChunkRecord(idx, t.height, t.width, ph, pw, per_row, per_col, start, stop))
        start = stop
    return np.concatenate(stacks, axis=0), ChunkLayout(block_h, block_w, tuple(records))


def dechunk(block_outputs: np.ndarray, layout: ChunkLayout, out_block_h: int, out_block_w: int) -> list[ImageGrid]:
    """Reassemble per-block outputs (n_blocks, out_block_h, out_block_w, C) into per-tensor grids.

    The output area that only covers bottom/right padding is cropped: a tensor
    of height h keeps ceil(h * out_block_h / block_height) rows.
    """
    if block_outputs.ndim != 4:
        raise ShapeError(f"block outputs must be 4-D, got shape {block_outputs.shape}")
    if block_outputs.shape[0] != layout.n_blocks:
        raise LayoutError(f"{block_outputs.shape[0]} output blocks, layout expects {layout.n_blocks}")
    if block_outputs.shape[1:3] != (out_block_h, out_block_w):
        raise LayoutError(f"output blocks are {block_outputs.shape[1:3]}, expected {(out_block_h, out_block_w)}")
    c = block_outputs.shape[3]
    out = []
    for r in layout.records:
        blocks = block_outputs[r.block_start:r.block_stop]
        full = (blocks.reshape(r.blocks_per_col, r.blocks_per_row, out_block_h, out_block_w, c)
                .transpose(0, 2, 1, 3, 4)
                .reshape(r.blocks_per_col * out_block_h, r.blocks_per_row * out_block_w, c))
        keep_h = -(-r.height * out_block_h // layout.block_height)
        keep_w = -(-r.width * out_block_w // layout.block_width)
        out.append(ImageGrid(full[:keep_h, :keep_w].copy()))
    return out
