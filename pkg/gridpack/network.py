"""End-to-end recognizer forward pass.

Stages: three four-direction recurrent layers with two grouped block-strided
convolutions in between, then a direction sum, a sum over the remaining
height and a shared per-column projection onto the alphabet. Recurrent layers
run on packed row strips (or LMBR stacks); convolutions run on the chunked
tensor list.
"""
from __future__ import annotations
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import config
from .conv_ops import ConvParams, block_strided_array, chunk_tensor_list, dechunk, pointwise_array
from .errors import ArgumentError, ShapeError, StageUnderflowError
from .mdlstm_cells import CELL_KINDS, DIRECTIONS, CellParams, init_cell_params, scan_4dir_arrays, zero_cell_params
from .skew_pack import pack_strips, pad_batch, split_balanced_indices, unpack_strips, unpad_batch
from .tensor_core import ImageGrid

STRATEGIES = ("packing", "lmbr", "single")
N_DIRECTIONS = len(DIRECTIONS)


@dataclass
class NetworkConfig:
    hidden_sizes: list[int] = field(default_factory=lambda: list(config.HIDDEN_SIZES))
    conv_strides: list[tuple[int, int]] = field(default_factory=lambda: list(config.CONV_STRIDES))
    conv_channels: list[int] = field(default_factory=lambda: list(config.CONV_CHANNELS))
    alphabet: list[str] = field(default_factory=lambda: list(config.ALPHABET))
    cell_kind: str = config.CELL_KIND
    input_channels: int = config.INPUT_CHANNELS

    def __post_init__(self):
        self.hidden_sizes = [int(h) for h in self.hidden_sizes]
        self.conv_strides = [(int(h), int(w)) for h, w in self.conv_strides]
        self.conv_channels = [int(c) for c in self.conv_channels]
        self.alphabet = list(self.alphabet)
        if len(self.hidden_sizes) != 3:
            raise ArgumentError(f"need 3 recurrent hidden sizes, got {self.hidden_sizes}")
        if len(self.conv_strides) != 2 or len(self.conv_channels) != 2:
            raise ArgumentError("need exactly 2 intermediate convolutions (strides and channels)")
        if min(self.hidden_sizes + self.conv_channels + [s for hw in self.conv_strides for s in hw]) < 1:
            raise ArgumentError("hidden sizes, strides and channel counts must be >= 1")
        if not self.alphabet:
            raise ArgumentError("alphabet must not be empty")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ArgumentError("alphabet symbols must be unique")
        if self.cell_kind not in CELL_KINDS:
            raise ArgumentError(f"unknown cell kind {self.cell_kind!r}; expected one of {CELL_KINDS}")
        if self.input_channels < 1:
            raise ArgumentError("input_channels must be >= 1")

    def stage_input_channels(self) -> list[int]:
        return [self.input_channels] + self.conv_channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_strides"] = [list(s) for s in self.conv_strides]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        try:
            return cls(**known)
        except (TypeError, ValueError) as e:
            if isinstance(e, ArgumentError):
                raise
            raise ArgumentError(f"invalid network config: {e}") from e

    def save_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path

    @classmethod
    def load_json(cls, path: str | Path) -> "NetworkConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ArgumentError(f"{path}: not valid JSON ({e})") from e
        return cls.from_dict(d)


@dataclass(frozen=True, eq=False)
class NetworkParams:
    cells: tuple[tuple[CellParams, ...], ...]  # 3 stages x 4 directions
    convs: tuple[ConvParams, ...]              # grouped block convs, 4 input / 4 output groups
    projection: ConvParams                     # shared 1x1, last hidden size -> alphabet

    def check(self, cfg: NetworkConfig) -> None:
        if len(self.cells) != 3 or any(len(stage) != N_DIRECTIONS for stage in self.cells):
            raise ShapeError("need 3 recurrent stages of 4 directions each")
        for k, (stage, channels) in enumerate(zip(self.cells, cfg.stage_input_channels())):
            for p in stage:
                if (p.hidden_size, p.input_channels) != (cfg.hidden_sizes[k], channels):
                    raise ShapeError(
                        f"mdlstm{k + 1}: params are {p.input_channels}->{p.hidden_size}, "
                        f"config wants {channels}->{cfg.hidden_sizes[k]}"
                    )
        for k, conv in enumerate(self.convs):
            expected = (N_DIRECTIONS * cfg.hidden_sizes[k], N_DIRECTIONS * cfg.conv_channels[k], cfg.conv_strides[k])
            if (conv.in_channels, conv.out_channels, (conv.kernel_height, conv.kernel_width)) != expected:
                raise ShapeError(f"conv{k + 1}: params do not match config {expected}")
        if (self.projection.in_channels, self.projection.out_channels) != (cfg.hidden_sizes[-1], len(cfg.alphabet)):
            raise ShapeError("projection does not map the last hidden size onto the alphabet")


def _conv_params(cfg: NetworkConfig, k: int, rng: np.random.Generator | None, scale: float) -> ConvParams:
    return ConvParams.create(N_DIRECTIONS * cfg.hidden_sizes[k], N_DIRECTIONS * cfg.conv_channels[k],
                             cfg.conv_strides[k], groups_in=N_DIRECTIONS, groups_out=N_DIRECTIONS,
                             rng=rng, scale=scale)


def init_network_params(cfg: NetworkConfig, seed: int = config.INIT_SEED,
                        scale: float = config.INIT_SCALE) -> NetworkParams:
    rng = np.random.default_rng(seed)
    cells = tuple(
        tuple(init_cell_params(c, h, cfg.cell_kind, rng=rng, scale=scale) for _ in range(N_DIRECTIONS))
        for c, h in zip(cfg.stage_input_channels(), cfg.hidden_sizes)
    )
    convs = tuple(_conv_params(cfg, k, rng, scale) for k in range(2))
    projection = ConvParams.create(cfg.hidden_sizes[-1], len(cfg.alphabet), rng=rng, scale=scale)
    return NetworkParams(cells, convs, projection)


def zero_network_params(cfg: NetworkConfig) -> NetworkParams:
    cells = tuple(
        tuple(zero_cell_params(c, h, cfg.cell_kind) for _ in range(N_DIRECTIONS))
        for c, h in zip(cfg.stage_input_channels(), cfg.hidden_sizes)
    )
    convs = tuple(_conv_params(cfg, k, None, 0.0) for k in range(2))
    return NetworkParams(cells, convs, ConvParams.create(cfg.hidden_sizes[-1], len(cfg.alphabet)))


@dataclass(frozen=True, eq=False)
class LogitSequence:
    """Pre-softmax scores, one row per output column (timesteps x alphabet_size)."""
    logits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.logits, dtype=config.DTYPE)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"logits must be a non-empty (timesteps, alphabet) matrix, got {arr.shape}")
        object.__setattr__(self, "logits", arr)

    @property
    def timesteps(self) -> int:
        return int(self.logits.shape[0])

    @property
    def alphabet_size(self) -> int:
        return int(self.logits.shape[1])


def _downsample(size: int, stride: int, stage: str, axis: str) -> int:
    if size < stride:
        raise StageUnderflowError(stage, f"{axis} {size} is smaller than the block {axis} {stride}")
    return -(-size // stride)


def output_size(cfg: NetworkConfig, height: int, width: int) -> tuple[int, int]:
    """(height, width) after both block-strided stages; each stage pads up to a block multiple."""
    for k, (sh, sw) in enumerate(cfg.conv_strides):
        stage = f"conv{k + 1}"
        height = _downsample(height, sh, stage, "height")
        width = _downsample(width, sw, stage, "width")
    return height, width


def sequence_length(cfg: NetworkConfig, width: int) -> int:
    for k, (_, sw) in enumerate(cfg.conv_strides):
        width = _downsample(width, sw, f"conv{k + 1}", "width")
    return width


def _recurrent_stage(cells: Sequence[CellParams], cell_kind: str, acts: list[ImageGrid],
                     strategy: str) -> list[ImageGrid]:
    if strategy == "single":
        return [ImageGrid(scan_4dir_arrays(cells, cell_kind, g.data[None],
                                           np.ones((1, g.height, g.width), dtype=np.uint8))[0])
                for g in acts]
    if strategy == "packing":
        strips = pack_strips(acts)
        out = scan_4dir_arrays(cells, cell_kind, strips.data, strips.mask)
        return unpack_strips(out, strips.layout)
    padded = pad_batch(acts)
    out = scan_4dir_arrays(cells, cell_kind, padded.data, padded.mask)
    return unpad_batch(out, padded.sizes)


def _direction_sum(arr: np.ndarray) -> np.ndarray:
    """Sum the four per-direction channel blocks of the last axis."""
    return arr.reshape(arr.shape[:-1] + (N_DIRECTIONS, arr.shape[-1] // N_DIRECTIONS)).sum(axis=-2)


def _conv_stage(conv: ConvParams, acts: list[ImageGrid]) -> list[ImageGrid]:
    stack, layout = chunk_tensor_list(acts, conv.kernel_height, conv.kernel_width)
    y = np.tanh(_direction_sum(block_strided_array(conv, stack)))
    return dechunk(y, layout, 1, 1)


def _check_examples(cfg: NetworkConfig, examples: Sequence[ImageGrid]) -> None:
    if len(examples) == 0:
        raise ArgumentError("no examples given")
    for i, g in enumerate(examples):
        if g.channels != cfg.input_channels:
            raise ShapeError(f"example {i} has {g.channels} channels, network expects {cfg.input_channels}")
        output_size(cfg, g.height, g.width)


def network_forward(cfg: NetworkConfig, params: NetworkParams, examples: Sequence[ImageGrid],
                    strategy: str = "packing") -> list[LogitSequence]:
    """Per-example logits; results do not depend on how the batch is laid out."""
    if strategy not in STRATEGIES:
        raise ArgumentError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    _check_examples(cfg, examples)
    params.check(cfg)
    acts = list(examples)
    for k in range(3):
        acts = _recurrent_stage(params.cells[k], cfg.cell_kind, acts, strategy)
        if k < 2:
            acts = _conv_stage(params.convs[k], acts)
    # remaining height is sum-pooled so each example becomes a 1 x T sequence
    pooled = [ImageGrid(_direction_sum(a.data).sum(axis=0, keepdims=True)) for a in acts]
    stack, layout = chunk_tensor_list(pooled, 1, 1)
    logits = dechunk(pointwise_array(params.projection, stack), layout, 1, 1)
    return [LogitSequence(g.data[0]) for g in logits]


def network_forward_parallel(cfg: NetworkConfig, params: NetworkParams, examples: Sequence[ImageGrid],
                             workers: int, strategy: str = "packing") -> list[LogitSequence]:
    """Split the list into `workers` pixel-balanced sublists and run them on a thread pool."""
    _check_examples(cfg, examples)
    bins = [b for b in split_balanced_indices([g.pixels for g in examples], workers) if b]
    out: list[LogitSequence | None] = [None] * len(examples)
    with ThreadPoolExecutor(max_workers=len(bins)) as pool:
        futures = [pool.submit(network_forward, cfg, params, [examples[i] for i in b], strategy) for b in bins]
        for b, fut in zip(bins, futures):
            for i, seq in zip(b, fut.result()):
                out[i] = seq
    return out


def greedy_ctc_decode(logits: LogitSequence | np.ndarray, alphabet: Sequence[str]) -> str:
    """Best path: argmax per step (ties to the lower index), merge repeats, drop blanks (index 0)."""
    scores = logits.logits if isinstance(logits, LogitSequence) else np.asarray(logits)
    if scores.ndim != 2 or scores.shape[1] != len(alphabet):
        raise ShapeError(f"logits of shape {scores.shape} do not match an alphabet of {len(alphabet)}")
    path = np.argmax(scores, axis=1)
    chars = []
    prev = None
    for k in path:
        if k != prev and k != 0:
            chars.append(alphabet[k])
        prev = k
    return "".join(chars)
