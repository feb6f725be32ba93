"""2-D MDLSTM and Leaky LP cells, scanned column by column over skewed inputs.

After skewing, every cell of skewed column c depends only on column c - 1:
the same-row cell (left neighbour) and the row-above cell (upper neighbour).
A whole column is therefore one matrix product. Scans run on batches
(B, H, Ws) so the padded (LMBR) baseline shares the code path with packing.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .config import DTYPE, INIT_SCALE
from .conv_ops import ConvParams, pointwise_array
from .errors import ArgumentError, ShapeError
from .skew_pack import SkewedGrid, skew_array, unskew_array
from .tensor_core import ImageGrid, MaskGrid

GATES = ("g", "i", "f1", "f2", "o")
CELL_KINDS = ("plain", "leaky_lp")
# (horizontal flip, vertical flip) per scan direction; concatenation order of mdlstm_4dir
DIRECTIONS = {
    "right_down": (False, False),
    "left_down": (True, False),
    "right_up": (False, True),
    "left_up": (True, True),
}


def _check_kind(cell_kind: str) -> str:
    if cell_kind not in CELL_KINDS:
        raise ArgumentError(f"unknown cell kind {cell_kind!r}; expected one of {CELL_KINDS}")
    return cell_kind


@dataclass(frozen=True, eq=False)
class CellParams:
    """Weights of one scan direction.

    Gate order along the first axis follows GATES. Row-vector convention:
    the input contribution of gate k is x @ W[k].
    """
    hidden_size: int
    input_channels: int
    cell_kind: str
    W: np.ndarray   # (5, input_channels, hidden)
    U1: np.ndarray  # (5, hidden, hidden), same-row predecessor
    U2: np.ndarray  # (5, hidden, hidden), row-above predecessor
    V: np.ndarray   # (2, hidden, hidden), s_prev into the two Leaky LP output gates
    b: np.ndarray   # (5, hidden)

    def __post_init__(self):
        _check_kind(self.cell_kind)
        if self.hidden_size < 1 or self.input_channels < 1:
            raise ArgumentError("hidden_size and input_channels must be >= 1")
        hs, c = self.hidden_size, self.input_channels
        expected = {"W": (5, c, hs), "U1": (5, hs, hs), "U2": (5, hs, hs), "V": (2, hs, hs), "b": (5, hs)}
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=DTYPE)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise ArgumentError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)

    def matrix(self, name: str) -> np.ndarray:
        """Named block: W_g, U1_f1, U2_o, V1, V2, b_i, ..."""
        if name in ("V1", "V2"):
            return self.V[int(name[1]) - 1]
        prefix, _, gate = name.partition("_")
        if prefix not in ("W", "U1", "U2", "b") or gate not in GATES:
            raise ArgumentError(f"unknown parameter block {name!r}")
        return getattr(self, prefix)[GATES.index(gate)]

    def block_names(self) -> list[str]:
        names = [f"{p}_{g}" for p in ("W", "U1", "U2") for g in GATES]
        return names + ["V1", "V2"] + [f"b_{g}" for g in GATES]

    def input_projection(self) -> ConvParams:
        """The five input matrices as one grouped 1x1 convolution (1 input group, 5 output groups)."""
        hs, c = self.hidden_size, self.input_channels
        weights = self.W.transpose(0, 2, 1).reshape(5 * hs, c)[:, :, None, None]
        return ConvParams(c, 5 * hs, 1, 1, 1, 1, 1, 5, weights, self.b.reshape(5 * hs))

    def recurrent_matrix(self) -> np.ndarray:
        """[h1, h2] @ Ucat gives all five gate contributions at once: shape (2 * hidden, 5 * hidden)."""
        hs = self.hidden_size
        u1 = self.U1.transpose(1, 0, 2).reshape(hs, 5 * hs)
        u2 = self.U2.transpose(1, 0, 2).reshape(hs, 5 * hs)
        return np.concatenate([u1, u2], axis=0)


def init_cell_params(input_channels: int, hidden_size: int, cell_kind: str, *,
                     rng: np.random.Generator | None = None, seed: int | None = None,
                     scale: float = INIT_SCALE) -> CellParams:
    """Uniform [-scale, scale] weights from a seeded generator."""
    if rng is None:
        rng = np.random.default_rng(seed)
    hs, c = hidden_size, input_channels
    draw = lambda *shape: rng.uniform(-scale, scale, size=shape)
    return CellParams(hs, c, cell_kind, draw(5, c, hs), draw(5, hs, hs), draw(5, hs, hs),
                      draw(2, hs, hs), draw(5, hs))


def zero_cell_params(input_channels: int, hidden_size: int, cell_kind: str) -> CellParams:
    hs, c = hidden_size, input_channels
    return CellParams(hs, c, cell_kind, np.zeros((5, c, hs)), np.zeros((5, hs, hs)),
                      np.zeros((5, hs, hs)), np.zeros((2, hs, hs)), np.zeros((5, hs)))


@dataclass(frozen=True, eq=False)
class CellState:
    """Hidden and memory state of the previous skewed column, (batch, height, hidden)."""
    hidden: np.ndarray
    memory: np.ndarray

    @classmethod
    def zeros(cls, batch: int, height: int, hidden_size: int) -> "CellState":
        return cls(np.zeros((batch, height, hidden_size), dtype=DTYPE),
                   np.zeros((batch, height, hidden_size), dtype=DTYPE))

    def above(self) -> "CellState":
        """States of the row-above predecessor; row 0 has none and sees zeros."""
        hidden = np.zeros_like(self.hidden)
        memory = np.zeros_like(self.memory)
        hidden[:, 1:] = self.hidden[:, :-1]
        memory[:, 1:] = self.memory[:, :-1]
        return CellState(hidden, memory)


def _plain_update(params: CellParams, z: np.ndarray, s1: np.ndarray, s2: np.ndarray):
    a = np.tanh(z[..., 0, :])
    i, f1, f2, o = (expit(z[..., k, :]) for k in range(1, 5))
    s = i * a + f1 * s1 + f2 * s2
    return o * np.tanh(s), s


def _leaky_lp_update(params: CellParams, z: np.ndarray, s1: np.ndarray, s2: np.ndarray):
    lam_s = expit(z[..., 2, :])
    s_prev = lam_s * s1 + (1.0 - lam_s) * s2
    a = np.tanh(z[..., 0, :])
    lam_u = expit(z[..., 3, :])
    s = lam_u * s_prev + (1.0 - lam_u) * a
    o1 = expit(z[..., 1, :] + s_prev @ params.V[0])
    o2 = expit(z[..., 4, :] + s_prev @ params.V[1])
    return o1 * np.tanh(s) + o2 * np.tanh(s_prev), s


_UPDATES = {"plain": _plain_update, "leaky_lp": _leaky_lp_update}


def _column_step(params: CellParams, cell_kind: str, zx: np.ndarray, state: CellState,
                 valid: np.ndarray, ucat: np.ndarray) -> CellState:
    """Advance one skewed column.

    zx: input projection of the column (B, H, 5, hidden); valid: (B, H) bool.
    Invalid cells hold exactly zero state.
    """
    above = state.above()
    b, h, hs = state.hidden.shape
    recurrent = np.concatenate([state.hidden, above.hidden], axis=-1) @ ucat
    z = zx + recurrent.reshape(b, h, 5, hs)
    hidden, memory = _UPDATES[cell_kind](params, z, state.memory, above.memory)
    keep = valid[..., None]
    # masked cells stay exactly zero, also when plain-cell memory has overflowed
    return CellState(np.where(keep, hidden, 0.0), np.where(keep, memory, 0.0))


def scan_arrays(params: CellParams, cell_kind: str, data: np.ndarray, mask: np.ndarray,
                return_memory: bool = False) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Scan skewed batches: data (B, H, Ws, C), mask (B, H, Ws) -> hidden (B, H, Ws, hidden).

    With `return_memory`, the memory states come back as a second array of the same shape.
    """
    _check_kind(cell_kind)
    if data.shape[-1] != params.input_channels:
        raise ShapeError(f"input has {data.shape[-1]} channels, cell expects {params.input_channels}")
    if mask.shape != data.shape[:3]:
        raise ShapeError(f"mask shape {mask.shape} does not match data {data.shape[:3]}")
    b, h, ws, _ = data.shape
    hs = params.hidden_size
    zx = pointwise_array(params.input_projection(), data).reshape(b, h, ws, 5, hs)
    ucat = params.recurrent_matrix()
    valid = mask.astype(bool)
    state = CellState.zeros(b, h, hs)
    out = np.zeros((b, h, ws, hs), dtype=DTYPE)
    memory = np.zeros_like(out) if return_memory else None
    for c in range(ws):
        state = _column_step(params, cell_kind, zx[:, :, c], state, valid[:, :, c], ucat)
        out[:, :, c] = state.hidden
        if return_memory:
            memory[:, :, c] = state.memory
    return (out, memory) if return_memory else out


def _scan_skewed(params: CellParams, s: SkewedGrid, cell_kind: str,
                 return_memory: bool = False) -> ImageGrid | tuple[ImageGrid, ImageGrid]:
    if s.channels != params.input_channels:
        raise ShapeError(f"input has {s.channels} channels, cell expects {params.input_channels}")
    if not return_memory:
        out = scan_arrays(params, cell_kind, s.data[None], s.mask.bits[None])
        return ImageGrid(unskew_array(out, s.original_width)[0])
    out, memory = scan_arrays(params, cell_kind, s.data[None], s.mask.bits[None], return_memory=True)
    return (ImageGrid(unskew_array(out, s.original_width)[0]),
            ImageGrid(unskew_array(memory, s.original_width)[0]))


def mdlstm_scan(params: CellParams, s: SkewedGrid, return_memory: bool = False):
    """Plain MDLSTM over a skewed grid; output is unskewed (height x original_width x hidden)."""
    return _scan_skewed(params, s, "plain", return_memory)


def leakylp_scan(params: CellParams, s: SkewedGrid, return_memory: bool = False):
    """Leaky LP scan; memory is a convex mix of predecessors and the candidate, so |s| <= 1."""
    return _scan_skewed(params, s, "leaky_lp", return_memory)


def scan(params: CellParams, s: SkewedGrid, cell_kind: str | None = None) -> ImageGrid:
    return _scan_skewed(params, s, _check_kind(cell_kind or params.cell_kind))


def _flip(arr: np.ndarray, horizontal: bool, vertical: bool) -> np.ndarray:
    """Flip (B, H, W, ...) arrays along width and/or height."""
    if horizontal:
        arr = arr[:, :, ::-1]
    if vertical:
        arr = arr[:, ::-1]
    return arr


def _check_directions(params_list: Sequence[CellParams]) -> None:
    if len(params_list) != len(DIRECTIONS):
        raise ShapeError(f"need {len(DIRECTIONS)} parameter sets, got {len(params_list)}")
    hidden = {p.hidden_size for p in params_list}
    if len(hidden) != 1:
        raise ShapeError(f"directions have different hidden sizes: {sorted(hidden)}")
    channels = {p.input_channels for p in params_list}
    if len(channels) != 1:
        raise ShapeError(f"directions have different input channels: {sorted(channels)}")


def scan_4dir_arrays(params_list: Sequence[CellParams], cell_kind: str, data: np.ndarray,
                     mask: np.ndarray) -> np.ndarray:
    """Four-direction scan of unskewed batches (B, H, W, C) -> (B, H, W, 4 * hidden)."""
    _check_directions(params_list)
    width = data.shape[2]
    outs = []
    for p, (horizontal, vertical) in zip(params_list, DIRECTIONS.values()):
        d = _flip(data, horizontal, vertical)
        m = _flip(mask, horizontal, vertical)
        y = scan_arrays(p, cell_kind, skew_array(d), skew_array(m))
        outs.append(_flip(unskew_array(y, width), horizontal, vertical))
    return np.concatenate(outs, axis=-1)


def mdlstm_4dir(params_list: Sequence[CellParams], g: ImageGrid, cell_kind: str | None = None,
                mask: MaskGrid | None = None) -> ImageGrid:
    """Scan from all four corners; channel blocks ordered right_down, left_down, right_up, left_up."""
    _check_directions(params_list)
    cell_kind = _check_kind(cell_kind or params_list[0].cell_kind)
    if mask is None:
        mask = MaskGrid.ones(g.height, g.width)
    mask.check_governs(g)
    out = scan_4dir_arrays(params_list, cell_kind, g.data[None], mask.bits[None])
    return ImageGrid(out[0])


def stability_params(cell_kind: str, forget_bias: float, hidden_size: int = 1) -> CellParams:
    """Constant-drive cell: zero weights, candidate bias 1, both forget (or lambda) biases set."""
    p = zero_cell_params(1, hidden_size, cell_kind)
    b = np.zeros((5, hidden_size))
    b[GATES.index("g")] = 1.0
    b[GATES.index("f1")] = forget_bias
    b[GATES.index("f2")] = forget_bias
    return CellParams(hidden_size, 1, cell_kind, p.W, p.U1, p.U2, p.V, b)


def stability_trace(cell_kind: str, length: int, forget_bias: float,
                    params: CellParams | None = None, height: int | None = None) -> list[float]:
    """Max |memory| per diagonal wavefront of a grid of ones, `height` x `length` (square by default).

    Step t covers skewed column t, where the wavefront reaches rows 0..t.
    Columns are streamed; nothing but the running state is kept.
    """
    _check_kind(cell_kind)
    if length < 1:
        raise ArgumentError(f"length must be >= 1, got {length}")
    height = length if height is None else height
    if height < 1:
        raise ArgumentError(f"height must be >= 1, got {height}")
    if params is None:
        params = stability_params(cell_kind, forget_bias)
    hs = params.hidden_size
    zx_row = pointwise_array(params.input_projection(), np.ones((1, 1, params.input_channels)))
    zx = np.broadcast_to(zx_row.reshape(1, 1, 5, hs), (1, height, 5, hs))
    ucat = params.recurrent_matrix()
    rows = np.arange(height)[None, :]
    state = CellState.zeros(1, height, hs)
    trace = []
    for t in range(length):
        state = _column_step(params, cell_kind, zx, state, rows <= t, ucat)
        trace.append(float(np.abs(state.memory).max()))
    return trace
