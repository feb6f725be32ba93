"""Flat binary parameter files.

Layout: a small struct header, then little-endian float32 blocks back to
back. A JSON sidecar (`<file>.json`) names every block with its shape and
byte offset. Cell files use the fixed block order W_g..W_o, U1_g..U1_o,
U2_g..U2_o, V1, V2, b_g..b_o.
"""
from __future__ import annotations
import json
import struct
from pathlib import Path

import numpy as np

from .config import DTYPE
from .conv_ops import ConvParams
from .errors import ArgumentError, ShapeError
from .mdlstm_cells import CELL_KINDS, GATES, CellParams
from .network import N_DIRECTIONS, NetworkConfig, NetworkParams

CELL_MAGIC = b"GPCL"
NETWORK_MAGIC = b"GPNT"
FORMAT_VERSION = 1
CELL_HEADER = struct.Struct("<4sIIII")  # magic, version, hidden_size, input_channels, cell kind tag
NETWORK_HEADER = struct.Struct("<4sII")  # magic, version, block count
CELL_KIND_TAGS = {kind: tag for tag, kind in enumerate(CELL_KINDS)}
_FLOAT = np.dtype("<f4")


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _write_container(path: Path, header: bytes, blocks: list[tuple[str, np.ndarray]], meta: dict) -> Path:
    entries = []
    offset = len(header)
    with path.open("wb") as f:
        f.write(header)
        for name, arr in blocks:
            raw = np.ascontiguousarray(arr, dtype=_FLOAT).tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            f.write(raw)
            offset += len(raw)
    meta = dict(meta, format_version=FORMAT_VERSION, header_bytes=len(header), blocks=entries)
    sidecar_path(path).write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return path


def _read_container(path: Path, magic: bytes) -> tuple[bytes, dict, dict[str, np.ndarray]]:
    side = sidecar_path(path)
    if not side.exists():
        raise ArgumentError(f"{path}: missing sidecar {side.name}")
    raw = path.read_bytes()
    if raw[:4] != magic:
        raise ArgumentError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    meta = json.loads(side.read_text(encoding="utf-8"))
    blocks = {}
    for entry in meta["blocks"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = entry["offset"] + count * _FLOAT.itemsize
        if end > len(raw):
            raise ArgumentError(f"{path}: block {entry['name']} runs past end of file")
        arr = np.frombuffer(raw, dtype=_FLOAT, count=count, offset=entry["offset"])
        blocks[entry["name"]] = arr.reshape(shape).astype(DTYPE)
    return raw, meta, blocks


def _cell_blocks(p: CellParams, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    return [(prefix + name, p.matrix(name)) for name in p.block_names()]


def _cell_from_blocks(blocks: dict[str, np.ndarray], hidden_size: int, input_channels: int,
                      cell_kind: str, prefix: str = "") -> CellParams:
    try:
        stack = lambda what: np.stack([blocks[f"{prefix}{what}_{g}"] for g in GATES])
        return CellParams(hidden_size, input_channels, cell_kind, stack("W"), stack("U1"), stack("U2"),
                          np.stack([blocks[prefix + "V1"], blocks[prefix + "V2"]]), stack("b"))
    except KeyError as e:
        raise ShapeError(f"parameter block {e.args[0]!r} missing") from e


def save_cell_params(p: CellParams, path: str | Path) -> Path:
    path = Path(path)
    header = CELL_HEADER.pack(CELL_MAGIC, FORMAT_VERSION, p.hidden_size, p.input_channels, CELL_KIND_TAGS[p.cell_kind])
    meta = {"kind": "cell", "hidden_size": p.hidden_size, "input_channels": p.input_channels, "cell_kind": p.cell_kind}
    return _write_container(path, header, _cell_blocks(p), meta)


def load_cell_params(path: str | Path) -> CellParams:
    path = Path(path)
    raw, _, blocks = _read_container(path, CELL_MAGIC)
    if len(raw) < CELL_HEADER.size:
        raise ArgumentError(f"{path}: truncated header")
    _, version, hidden, channels, tag = CELL_HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise ArgumentError(f"{path}: unsupported format version {version}")
    if tag >= len(CELL_KINDS):
        raise ArgumentError(f"{path}: unknown cell kind tag {tag}")
    return _cell_from_blocks(blocks, hidden, channels, CELL_KINDS[tag])


def _conv_blocks(conv: ConvParams, prefix: str) -> list[tuple[str, np.ndarray]]:
    return [(f"{prefix}.weights", conv.weights), (f"{prefix}.bias", conv.bias)]


def save_network_params(params: NetworkParams, cfg: NetworkConfig, path: str | Path) -> Path:
    params.check(cfg)
    blocks: list[tuple[str, np.ndarray]] = []
    for k, stage in enumerate(params.cells):
        for d, p in enumerate(stage):
            blocks += _cell_blocks(p, f"mdlstm{k + 1}.dir{d}.")
    for k, conv in enumerate(params.convs):
        blocks += _conv_blocks(conv, f"conv{k + 1}")
    blocks += _conv_blocks(params.projection, "projection")
    header = NETWORK_HEADER.pack(NETWORK_MAGIC, FORMAT_VERSION, len(blocks))
    return _write_container(Path(path), header, blocks, {"kind": "network", "config": cfg.to_dict()})


def load_network_params(path: str | Path, cfg: NetworkConfig | None = None) -> tuple[NetworkParams, NetworkConfig]:
    """Read a network file; the config stored in the sidecar is used unless `cfg` is given."""
    path = Path(path)
    raw, meta, blocks = _read_container(path, NETWORK_MAGIC)
    _, version, count = NETWORK_HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise ArgumentError(f"{path}: unsupported format version {version}")
    if count != len(blocks):
        raise ArgumentError(f"{path}: header announces {count} blocks, sidecar lists {len(blocks)}")
    if cfg is None:
        cfg = NetworkConfig.from_dict(meta["config"])
    cells = tuple(
        tuple(_cell_from_blocks(blocks, h, c, cfg.cell_kind, f"mdlstm{k + 1}.dir{d}.") for d in range(N_DIRECTIONS))
        for k, (c, h) in enumerate(zip(cfg.stage_input_channels(), cfg.hidden_sizes))
    )

    def conv(prefix: str, stride: tuple[int, int], groups: int) -> ConvParams:
        try:
            w, b = blocks[f"{prefix}.weights"], blocks[f"{prefix}.bias"]
        except KeyError as e:
            raise ShapeError(f"parameter block {e.args[0]!r} missing") from e
        return ConvParams(w.shape[1] * groups, w.shape[0], w.shape[2], w.shape[3], *stride, groups, groups, w, b)

    convs = tuple(conv(f"conv{k + 1}", cfg.conv_strides[k], N_DIRECTIONS) for k in range(2))
    params = NetworkParams(cells, convs, conv("projection", (1, 1), 1))
    params.check(cfg)
    return params, cfg
