from __future__ import annotations
from pathlib import Path

import numpy as np

# ---- User-configurable settings ----
# Compute precision for grids and activations. Parameter files are always float32.
DTYPE = np.float64
SEPARATOR_VALUE = 0.0  # value written into separator/padding pixels; masked out during scans

# Network shape (defaults mirror the best model: Leaky LP cells, layer sizes [4,20,100])
HIDDEN_SIZES = [4, 20, 100]
SMALL_HIDDEN_SIZES = [2, 10, 50]
CONV_STRIDES = [(4, 2), (4, 2)]  # (height, width) block per block-strided convolution
CONV_CHANNELS = [6, 20]
CELL_KIND = "leaky_lp"  # options: plain, leaky_lp
INPUT_CHANNELS = 1
BLANK_SYMBOL = "<b>"
ALPHABET = [BLANK_SYMBOL] + list("abcdefghijklmnopqrstuvwxyz") + list("0123456789") + [" ", ".", ",", "'", "-"]

# Weight initialization: uniform in [-INIT_SCALE, INIT_SCALE]
INIT_SCALE = 0.1
INIT_SEED = 0

# Synthetic manifest presets
# heights: discrete buckets with probabilities; widths: log-normal around a median, clipped
WORD_PRESET = {
    "heights": {"kind": "buckets", "values": [32, 48, 64, 96, 128], "probs": [0.15, 0.30, 0.30, 0.15, 0.10]},
    "widths": {"kind": "lognormal", "median": 90.0, "sigma": 0.75, "min": 16, "max": 800},
}
LINE_PRESET = {
    "heights": {"kind": "buckets", "values": [96, 112, 128, 144, 160], "probs": [0.20, 0.30, 0.25, 0.15, 0.10]},
    "widths": {"kind": "uniform", "low": 1400, "high": 2000},
}
PRESETS = {"word": WORD_PRESET, "line": LINE_PRESET}

# Memory model: bytes per input pixel stand in for all activations a pixel drags through the network
MEMORY_MODEL = {
    "bytes_per_valid_pixel": 2048.0,
    "bytes_per_padded_pixel": 2048.0,
    "fixed_overhead_bytes": 256 * 2**20,
    "budget_bytes": 11178 * 2**20,  # GTX 1080 ceiling
}

# Benchmarks
BATCH_SIZE = 20
REPETITIONS = 3
THROUGHPUT_LIMIT = 200  # examples taken from the manifest for timing runs
STABILITY_LENGTH = 200
STABILITY_BIASES = [3.0, -20.0]
REPORT_SCHEMA_VERSION = 1

# Output paths (created on first write)
OUTPUT_DIR = Path.cwd() / "output"

# Diagnostics
SAVE_PLOTS = False
PLOTS_DIR = Path.cwd() / "_plots"
