"""Input skewing, example-packing/unpacking, LMBR batch padding and list splitting.

Layouts are computed from (height, width) pairs alone (`plan_packing`), so the
benchmarks can reason about packing without touching pixel data. Example data
is written into the composite by `pack_examples`, or into one batch entry per
layout row by `pack_strips`, which is what the recurrent layers run on.
"""
from __future__ import annotations
import bisect
import heapq
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .config import DTYPE, SEPARATOR_VALUE
from .errors import ArgumentError, LayoutError, ShapeError
from .tensor_core import ImageGrid, MaskGrid


# ---- skewing ----

def skew_array(arr: np.ndarray) -> np.ndarray:
    """Shift row r of a (B, H, W, ...) array right by r columns -> (B, H, W + H - 1, ...)."""
    b, h, w = arr.shape[:3]
    out = np.zeros((b, h, w + h - 1) + arr.shape[3:], dtype=arr.dtype)
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :] + rows
    out[:, rows, cols] = arr
    return out


def unskew_array(arr: np.ndarray, width: int) -> np.ndarray:
    h = arr.shape[1]
    if arr.shape[2] != width + h - 1:
        raise LayoutError(f"skewed width {arr.shape[2]} != original width {width} + height {h} - 1")
    rows = np.arange(h)[:, None]
    cols = np.arange(width)[None, :] + rows
    return arr[:, rows, cols]


@dataclass(frozen=True, eq=False)
class SkewedGrid:
    data: np.ndarray  # (height, skewed_width, channels)
    mask: MaskGrid    # (height, skewed_width); zero outside the diagonal band
    original_width: int

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ShapeError(f"SkewedGrid data must be 3-D, got shape {self.data.shape}")
        h, ws = self.data.shape[:2]
        if ws != self.original_width + h - 1:
            raise LayoutError(
                f"skewed_width {ws} != original_width {self.original_width} + height {h} - 1"
            )
        if (self.mask.height, self.mask.width) != (h, ws):
            raise ShapeError(f"mask {self.mask.height}x{self.mask.width} does not match skewed grid {h}x{ws}")

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def skewed_width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])


def skew(g: ImageGrid, mask: MaskGrid | None = None) -> SkewedGrid:
    """Skew a grid; `mask` (default all ones) is skewed with the same shift pattern."""
    if mask is None:
        mask = MaskGrid.ones(g.height, g.width)
    else:
        mask.check_governs(g)
    data = skew_array(g.data[None])[0]
    bits = skew_array(mask.bits[None])[0]
    return SkewedGrid(data, MaskGrid(bits), g.width)


def unskew(s: SkewedGrid) -> ImageGrid:
    return ImageGrid(unskew_array(s.data[None], s.original_width)[0])


# ---- packing layout ----

@dataclass(frozen=True)
class Placement:
    example_index: int
    width: int
    column_offset: int


@dataclass(frozen=True)
class LayoutRow:
    row_height: int
    top_offset: int
    placements: tuple[Placement, ...]


@dataclass(frozen=True)
class PackingLayout:
    rows: tuple[LayoutRow, ...]
    total_height: int
    total_width: int

    @property
    def row_top_offsets(self) -> list[int]:
        return [r.top_offset for r in self.rows]

    @property
    def n_examples(self) -> int:
        return sum(len(r.placements) for r in self.rows)

    @property
    def area(self) -> int:
        return self.total_height * self.total_width

    @property
    def strip_height(self) -> int:
        return max((r.row_height for r in self.rows), default=0)

    @property
    def strip_area(self) -> int:
        """Pixels of the row-strip batch: one entry per row, all padded to the tallest row."""
        return len(self.rows) * self.strip_height * self.total_width

    def boxes(self) -> dict[int, tuple[int, int, int, int]]:
        """example_index -> (top, left, height, width) in the unskewed composite."""
        out = {}
        for row in self.rows:
            for p in row.placements:
                out[p.example_index] = (row.top_offset, p.column_offset, row.row_height, p.width)
        return out

    def validate(self) -> None:
        expected_top = 0
        seen: list[int] = []
        for row in self.rows:
            if row.top_offset != expected_top:
                raise LayoutError(f"row at {row.top_offset} should start at {expected_top}")
            expected_top = row.top_offset + row.row_height + 1
            right = -1
            for p in row.placements:
                if p.column_offset <= right:
                    raise LayoutError(f"example {p.example_index} overlaps or touches its left neighbour")
                right = p.column_offset + p.width
                if right > self.total_width:
                    raise LayoutError(f"example {p.example_index} exceeds total width {self.total_width}")
                seen.append(p.example_index)
        if self.rows and expected_top - 1 != self.total_height:
            raise LayoutError(f"rows end at {expected_top - 1}, total height is {self.total_height}")
        if sorted(seen) != list(range(len(seen))):
            raise LayoutError("example indices are not a permutation of 0..n-1")

    def to_dict(self) -> dict:
        return {
            "total_height": self.total_height,
            "total_width": self.total_width,
            "rows": [
                {
                    "row_height": r.row_height,
                    "top_offset": r.top_offset,
                    "placements": [
                        {"example_index": p.example_index, "width": p.width, "column_offset": p.column_offset}
                        for p in r.placements
                    ],
                }
                for r in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PackingLayout":
        rows = tuple(
            LayoutRow(
                int(r["row_height"]),
                int(r["top_offset"]),
                tuple(Placement(int(p["example_index"]), int(p["width"]), int(p["column_offset"]))
                      for p in r["placements"]),
            )
            for r in d["rows"]
        )
        layout = cls(rows, int(d["total_height"]), int(d["total_width"]))
        layout.validate()
        return layout

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


@dataclass(frozen=True, eq=False)
class PackedBatch:
    grid: ImageGrid
    mask: MaskGrid
    layout: PackingLayout


def plan_packing(sizes: Sequence[tuple[int, int]]) -> PackingLayout:
    """Greedy height-bucketed row filling on (height, width) pairs.

    Buckets are visited in ascending height. Inside a bucket each row is filled
    by repeatedly taking the widest remaining example that still fits (ties go
    to the lower original index). Row capacity is the widest example of the
    batch; one separator column sits between neighbours and one separator row
    between rows. A partially filled row is flushed when its bucket runs out.
    """
    if len(sizes) == 0:
        raise ArgumentError("cannot pack an empty example list")
    buckets: dict[int, list[tuple[int, int]]] = {}
    for idx, (h, w) in enumerate(sizes):
        if h < 1 or w < 1:
            raise ArgumentError(f"example {idx} has non-positive size {h}x{w}")
        buckets.setdefault(int(h), []).append((int(w), -idx))
    capacity = max(int(w) for _, w in sizes)

    rows: list[LayoutRow] = []
    top = 0
    for height in sorted(buckets):
        # ascending (width, -index): the last entry <= (room, 1) is the widest fit with lowest index
        pending = sorted(buckets[height])
        current: list[Placement] = []
        used = 0
        while pending:
            room = capacity - used - (1 if current else 0)
            pos = bisect.bisect_right(pending, (room, 1)) - 1
            if pos >= 0:
                w, neg_idx = pending.pop(pos)
                offset = used + 1 if current else 0
                current.append(Placement(-neg_idx, w, offset))
                used = offset + w
            else:
                rows.append(LayoutRow(height, top, tuple(current)))
                top += height + 1
                current, used = [], 0
        if current:
            rows.append(LayoutRow(height, top, tuple(current)))
            top += height + 1
    return PackingLayout(tuple(rows), top - 1, capacity)


def _check_channels(examples: Sequence[ImageGrid]) -> int:
    if len(examples) == 0:
        raise ArgumentError("example list is empty")
    channels = {g.channels for g in examples}
    if len(channels) != 1:
        raise ShapeError(f"examples have mixed channel counts: {sorted(channels)}")
    return channels.pop()


def pack_examples(examples: Sequence[ImageGrid]) -> tuple[PackedBatch, PackingLayout]:
    channels = _check_channels(examples)
    layout = plan_packing([(g.height, g.width) for g in examples])
    data = np.full((layout.total_height, layout.total_width, channels), SEPARATOR_VALUE, dtype=DTYPE)
    bits = np.zeros((layout.total_height, layout.total_width), dtype=np.uint8)
    for idx, (top, left, h, w) in layout.boxes().items():
        data[top:top + h, left:left + w] = examples[idx].data
        bits[top:top + h, left:left + w] = 1
    batch = PackedBatch(ImageGrid(data), MaskGrid(bits), layout)
    return batch, layout


def pack_and_skew(examples: Sequence[ImageGrid]) -> tuple[SkewedGrid, MaskGrid, PackingLayout]:
    batch, layout = pack_examples(examples)
    skewed = skew(batch.grid, batch.mask)
    return skewed, skewed.mask, layout


@dataclass(frozen=True, eq=False)
class StripBatch:
    """Layout rows run as separate batch entries instead of one tall composite."""
    data: np.ndarray  # (rows, strip_height, total_width, channels)
    mask: np.ndarray  # (rows, strip_height, total_width) uint8
    layout: PackingLayout


def pack_strips(examples: Sequence[ImageGrid]) -> StripBatch:
    """Pack like `pack_examples`, but stack the layout rows on the batch axis.

    Separator columns stay; separator rows are not needed. Rows shorter than
    the tallest are padded at the bottom.
    """
    channels = _check_channels(examples)
    layout = plan_packing([(g.height, g.width) for g in examples])
    shape = (len(layout.rows), layout.strip_height, layout.total_width)
    data = np.full(shape + (channels,), SEPARATOR_VALUE, dtype=DTYPE)
    mask = np.zeros(shape, dtype=np.uint8)
    for r, row in enumerate(layout.rows):
        for p in row.placements:
            g = examples[p.example_index]
            data[r, :g.height, p.column_offset:p.column_offset + g.width] = g.data
            mask[r, :g.height, p.column_offset:p.column_offset + g.width] = 1
    return StripBatch(data, mask, layout)


def unpack_strips(data: np.ndarray, layout: PackingLayout) -> list[ImageGrid]:
    if data.shape[:3] != (len(layout.rows), layout.strip_height, layout.total_width):
        raise LayoutError(f"strip batch {data.shape[:3]} does not match layout "
                          f"{(len(layout.rows), layout.strip_height, layout.total_width)}")
    out: list[ImageGrid | None] = [None] * layout.n_examples
    for r, row in enumerate(layout.rows):
        for p in row.placements:
            out[p.example_index] = ImageGrid(data[r, :row.row_height, p.column_offset:p.column_offset + p.width].copy())
    return out


def _scaled(value: int, scale: Fraction, what: str) -> int:
    v = value * scale
    if v.denominator != 1:
        raise LayoutError(f"{what} {value} scaled by {scale} is not an integer ({v})")
    return int(v)


def unpack_activations(packed_activations: ImageGrid, layout: PackingLayout,
                       height_scale: Fraction | int | str = 1,
                       width_scale: Fraction | int | str = 1) -> list[ImageGrid]:
    """Cut each example's region out of an (unskewed) packed activation grid.

    Scale factors map layout coordinates to activation coordinates; scale 1
    after recurrent layers, fractional after a downsampling layer.
    """
    hs, ws = Fraction(height_scale), Fraction(width_scale)
    if hs <= 0 or ws <= 0:
        raise ArgumentError(f"scale factors must be positive, got {hs}, {ws}")
    total_h, total_w = layout.total_height * hs, layout.total_width * ws
    for total, actual, axis in ((total_h, packed_activations.height, "height"),
                                (total_w, packed_activations.width, "width")):
        if total.denominator == 1 and int(total) != actual:
            raise LayoutError(f"packed activations {axis} {actual} != scaled layout {axis} {total}")
    out: list[ImageGrid | None] = [None] * layout.n_examples
    for idx, (top, left, h, w) in layout.boxes().items():
        t, l = _scaled(top, hs, "row offset"), _scaled(left, ws, "column offset")
        sh, sw = _scaled(h, hs, "height"), _scaled(w, ws, "width")
        if t + sh > packed_activations.height or l + sw > packed_activations.width:
            raise LayoutError(f"example {idx} region exceeds packed activations {packed_activations.shape}")
        out[idx] = ImageGrid(packed_activations.data[t:t + sh, l:l + sw].copy())
    return out


# ---- LMBR baseline: pad each batch to its own max height and width ----

@dataclass(frozen=True, eq=False)
class PaddedBatch:
    data: np.ndarray  # (batch, max_h, max_w, channels)
    mask: np.ndarray  # (batch, max_h, max_w) uint8
    sizes: tuple[tuple[int, int], ...]


def pad_batch(examples: Sequence[ImageGrid]) -> PaddedBatch:
    channels = _check_channels(examples)
    max_h = max(g.height for g in examples)
    max_w = max(g.width for g in examples)
    data = np.full((len(examples), max_h, max_w, channels), SEPARATOR_VALUE, dtype=DTYPE)
    mask = np.zeros((len(examples), max_h, max_w), dtype=np.uint8)
    for b, g in enumerate(examples):
        data[b, :g.height, :g.width] = g.data
        mask[b, :g.height, :g.width] = 1
    return PaddedBatch(data, mask, tuple((g.height, g.width) for g in examples))


def unpad_batch(data: np.ndarray, sizes: Sequence[tuple[int, int]]) -> list[ImageGrid]:
    if data.shape[0] != len(sizes):
        raise LayoutError(f"batch holds {data.shape[0]} entries, {len(sizes)} sizes given")
    return [ImageGrid(data[b, :h, :w].copy()) for b, (h, w) in enumerate(sizes)]


@dataclass(frozen=True)
class BatchPlan:
    """How one batch is laid out for the recurrent layers.

    kind is "packed" (rows of examples with separators) or "stacked" (LMBR
    padding). packed_area is the full composite, separator rows included;
    executed_area is the tensor the recurrent layers actually run on, which
    for packing is the row-strip batch.
    """
    kind: str
    sizes: tuple[tuple[int, int], ...]
    layout: PackingLayout | None
    valid_pixels: int
    packed_area: int
    stacked_area: int
    executed_area: int

    @property
    def processed_pixels(self) -> int:
        return self.packed_area if self.kind == "packed" else self.stacked_area

    @property
    def padded_pixels(self) -> int:
        return self.processed_pixels - self.valid_pixels

    @property
    def executed_padding(self) -> int:
        return self.executed_area - self.valid_pixels

    @property
    def packed_over_stacked(self) -> bool:
        return self.kind == "packed" and self.packed_area > self.stacked_area

    @property
    def skewed_pixels(self) -> int:
        if self.kind == "packed":
            h, w = self.layout.total_height, self.layout.total_width
            return h * (w + h - 1)
        max_h = max(h for h, _ in self.sizes)
        max_w = max(w for _, w in self.sizes)
        return len(self.sizes) * max_h * (max_w + max_h - 1)


def stacked_area(sizes: Sequence[tuple[int, int]]) -> int:
    return len(sizes) * max(h for h, _ in sizes) * max(w for _, w in sizes)


def plan_batch_layout(sizes: Sequence[tuple[int, int]], strategy: str = "packing") -> BatchPlan:
    sizes = tuple((int(h), int(w)) for h, w in sizes)
    if not sizes:
        raise ArgumentError("cannot plan an empty batch")
    valid = sum(h * w for h, w in sizes)
    stacked = stacked_area(sizes)
    if strategy == "lmbr":
        return BatchPlan("stacked", sizes, None, valid, stacked, stacked, stacked)
    if strategy != "packing":
        raise ArgumentError(f"unknown strategy {strategy!r}; expected 'packing' or 'lmbr'")
    layout = plan_packing(sizes)
    # strips never exceed the LMBR stack: fewer rows, same max height and width
    return BatchPlan("packed", sizes, layout, valid, layout.area, stacked, layout.strip_area)


# ---- balanced list splitting ----

def split_balanced_indices(loads: Sequence[int | float], k: int) -> list[list[int]]:
    """Longest-processing-time assignment of items to k bins.

    Items go in descending load order (ties by index), each to the currently
    lightest bin (ties by bin index).
    """
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    order = sorted(range(len(loads)), key=lambda i: (-loads[i], i))
    heap = [(0, j) for j in range(k)]
    bins: list[list[int]] = [[] for _ in range(k)]
    for i in order:
        load, j = heapq.heappop(heap)
        bins[j].append(i)
        heapq.heappush(heap, (load + loads[i], j))
    return bins


def split_balanced(examples: Sequence[ImageGrid], k: int) -> list[list[ImageGrid]]:
    bins = split_balanced_indices([g.pixels for g in examples], k)
    return [[examples[i] for i in b] for b in bins]
