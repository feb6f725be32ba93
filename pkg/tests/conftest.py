from __future__ import annotations

import numpy as np
import pytest

from gridpack.network import NetworkConfig
from gridpack.tensor_core import ImageGrid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Network small enough for 2x2 inputs: heights 2 -> 2 -> 1, widths 2 -> 1 -> 1."""
    return NetworkConfig(
        hidden_sizes=[2, 4, 6],
        conv_strides=[(1, 2), (2, 1)],
        conv_channels=[3, 5],
        alphabet=["<b>", "a", "b", "c"],
        cell_kind="leaky_lp",
        input_channels=1,
    )


def random_grids(rng, n, channels=1, max_h=8, max_w=12, min_h=1, min_w=1):
    return [
        ImageGrid(rng.standard_normal((int(rng.integers(min_h, max_h + 1)),
                                       int(rng.integers(min_w, max_w + 1)), channels)))
        for _ in range(n)
    ]
