import json

import numpy as np
import pytest

from gridpack.errors import ArgumentError, ShapeError
from gridpack.mdlstm_cells import init_cell_params
from gridpack.model_io import (
    CELL_HEADER,
    load_cell_params,
    load_network_params,
    save_cell_params,
    save_network_params,
    sidecar_path,
)
from gridpack.network import NetworkConfig, init_network_params, network_forward
from gridpack.tensor_core import ImageGrid


@pytest.mark.parametrize("kind", ["plain", "leaky_lp"])
def test_cell_roundtrip_within_float32(kind, rng, tmp_path):
    p = init_cell_params(3, 5, kind, rng=rng, scale=1.0)
    path = save_cell_params(p, tmp_path / "cell.bin")
    q = load_cell_params(path)
    assert (q.hidden_size, q.input_channels, q.cell_kind) == (5, 3, kind)
    for name in p.block_names():
        np.testing.assert_allclose(q.matrix(name), p.matrix(name), rtol=1e-6, atol=1e-7)


def test_cell_file_size_and_sidecar(rng, tmp_path):
    p = init_cell_params(2, 3, "leaky_lp", rng=rng)
    path = save_cell_params(p, tmp_path / "cell.bin")
    floats = 5 * 2 * 3 + 2 * 5 * 3 * 3 + 2 * 3 * 3 + 5 * 3
    assert path.stat().st_size == CELL_HEADER.size + 4 * floats
    meta = json.loads(sidecar_path(path).read_text())
    names = [b["name"] for b in meta["blocks"]]
    assert names[:2] == ["W_g", "W_i"]
    assert names[-5:] == ["b_g", "b_i", "b_f1", "b_f2", "b_o"]
    assert "V1" in names and "V2" in names
    assert meta["blocks"][0]["offset"] == CELL_HEADER.size


def test_load_rejects_bad_magic(rng, tmp_path):
    path = save_cell_params(init_cell_params(1, 1, "plain", rng=rng), tmp_path / "cell.bin")
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(ArgumentError):
        load_cell_params(path)


def test_load_requires_sidecar(rng, tmp_path):
    path = save_cell_params(init_cell_params(1, 1, "plain", rng=rng), tmp_path / "cell.bin")
    sidecar_path(path).unlink()
    with pytest.raises(ArgumentError):
        load_cell_params(path)


def test_network_roundtrip_keeps_config_and_outputs(tiny_cfg, rng, tmp_path):
    params = init_network_params(tiny_cfg, seed=2, scale=0.5)
    path = save_network_params(params, tiny_cfg, tmp_path / "net.bin")
    loaded, cfg = load_network_params(path)
    assert cfg == tiny_cfg
    examples = [ImageGrid(rng.standard_normal((4, 6, 1))), ImageGrid(rng.standard_normal((2, 3, 1)))]
    for a, b in zip(network_forward(cfg, loaded, examples), network_forward(tiny_cfg, params, examples)):
        np.testing.assert_allclose(a.logits, b.logits, atol=1e-4)


def test_network_sidecar_names_blocks(tiny_cfg, tmp_path):
    path = save_network_params(init_network_params(tiny_cfg), tiny_cfg, tmp_path / "net.bin")
    meta = json.loads(sidecar_path(path).read_text())
    names = {b["name"] for b in meta["blocks"]}
    assert {"mdlstm1.dir0.W_g", "mdlstm3.dir3.V2", "conv2.weights", "projection.bias"} <= names
    assert meta["config"]["hidden_sizes"] == [2, 4, 6]


def test_network_load_with_mismatched_config(tiny_cfg, tmp_path):
    path = save_network_params(init_network_params(tiny_cfg), tiny_cfg, tmp_path / "net.bin")
    other = NetworkConfig(hidden_sizes=[3, 4, 6], conv_strides=tiny_cfg.conv_strides,
                          conv_channels=tiny_cfg.conv_channels, alphabet=tiny_cfg.alphabet)
    with pytest.raises(ShapeError):
        load_network_params(path, other)
