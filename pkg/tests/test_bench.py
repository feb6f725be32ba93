import numpy as np
import pandas as pd
import pytest

from gridpack.bench import (
    MemoryModel,
    SizeManifest,
    batch_padding_table,
    batch_plans,
    load_manifest,
    max_batch_under_budget,
    normalize_strategy,
    padding_stats,
    preset_manifest,
    stability_report,
    synth_manifest,
    throughput_bench,
)
from gridpack.config import WORD_PRESET
from gridpack.errors import ArgumentError, CapacityError, ManifestError


def _unit_memory(budget, overhead=0):
    return MemoryModel(bytes_per_valid_pixel=1.0, bytes_per_padded_pixel=1.0,
                       fixed_overhead_bytes=overhead, budget_bytes=budget)


def _random_manifest(rng, n, max_side=30):
    sizes = rng.integers(1, max_side + 1, size=(n, 2))
    return SizeManifest.from_records([(f"e{i}", int(h), int(w)) for i, (h, w) in enumerate(sizes)])


# ---- manifests ----

def test_load_csv_manifest(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("id,height,width\na,32,90\nb,48,120\nc,32,40\n")
    m = load_manifest(path)
    assert len(m) == 3
    assert m.ids == ["a", "b", "c"]
    assert m.sizes() == [(32, 90), (48, 120), (32, 40)]


@pytest.mark.parametrize("body,line", [
    ("a,2,3\nb,x,4\n", 3),
    ("a,2,3\nb,2,3\nc,0,4\n", 4),
    ("a,2,3\nb,2,-1\n", 3),
    ("a,2,3\n,2,2\n", 3),
    ("a,2.5,3\n", 2),
])
def test_manifest_errors_carry_line_numbers(tmp_path, body, line):
    path = tmp_path / "m.csv"
    path.write_text("id,height,width\n" + body)
    with pytest.raises(ManifestError) as e:
        load_manifest(path)
    assert e.value.line == line


def test_manifest_duplicate_ids(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("id,height,width\na,2,3\na,1,1\n")
    with pytest.raises(ManifestError) as e:
        load_manifest(path)
    assert e.value.line == 3


def test_manifest_header_and_missing_file(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("name,height,width\na,2,3\n")
    with pytest.raises(ManifestError) as e:
        load_manifest(path)
    assert e.value.line == 1
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "missing.csv")


def test_manifest_xlsx_and_parquet_match_csv(tmp_path):
    m = SizeManifest.from_records([("a", 2, 3), ("b", 4, 5)])
    m.frame.to_excel(tmp_path / "m.xlsx", index=False)
    m.frame.to_parquet(tmp_path / "m.parquet", index=False)
    assert load_manifest(tmp_path / "m.xlsx").sizes() == m.sizes()
    assert load_manifest(tmp_path / "m.parquet").sizes() == m.sizes()


def test_synth_is_deterministic_per_seed():
    a = preset_manifest("word", 50, seed=3)
    b = preset_manifest("word", 50, seed=3)
    c = preset_manifest("word", 50, seed=4)
    pd.testing.assert_frame_equal(a.frame, b.frame)
    assert not a.frame.equals(c.frame)


def test_presets_stay_in_range():
    word = preset_manifest("word", 500, seed=0).frame
    assert set(word["height"]) <= set(WORD_PRESET["heights"]["values"])
    assert word["width"].between(16, 800).all()
    line = preset_manifest("line", 200, seed=0).frame
    assert line["width"].between(1400, 2000).all()
    assert line["height"].min() >= 96


def test_synth_rejects_bad_distributions():
    with pytest.raises(ArgumentError):
        synth_manifest(5, {"kind": "buckets", "values": [1, 2], "probs": [0.5, 0.6]}, {"kind": "uniform", "low": 1, "high": 2})
    with pytest.raises(ArgumentError):
        synth_manifest(5, {"kind": "uniform", "low": 3, "high": 2}, {"kind": "uniform", "low": 1, "high": 2})
    with pytest.raises(ArgumentError):
        synth_manifest(5, {"kind": "zipf"}, {"kind": "uniform", "low": 1, "high": 2})
    with pytest.raises(ArgumentError):
        preset_manifest("page", 5)


def test_batches_in_manifest_order_or_sorted():
    m = SizeManifest.from_records([("a", 3, 1), ("b", 1, 1), ("c", 2, 1)])
    assert m.batches(2) == [[0, 1], [2]]
    assert m.batches(2, sort_by_size=True) == [[1, 2], [0]]


def test_strategy_names_are_case_insensitive():
    assert normalize_strategy("PACKING") == "packing"
    assert normalize_strategy(" Lmbr ") == "lmbr"
    with pytest.raises(ArgumentError):
        normalize_strategy("sorted")


# ---- padding ----

def test_lmbr_padding_fraction():
    m = SizeManifest.from_records([("a", 2, 4), ("b", 2, 2)])
    stats = padding_stats(m, 2, "LMBR")
    assert stats.padded_fraction == 0.25
    assert (stats.valid_pixels, stats.total_pixels, stats.padded_pixels) == (12, 16, 4)


def test_uniform_sizes_have_no_padding():
    m = SizeManifest.from_records([(str(i), 3, 7) for i in range(8)])
    assert padding_stats(m, 4, "lmbr").padded_fraction == 0.0
    packing = padding_stats(m, 4, "packing")
    # only the three separator rows of each composite are padding
    assert packing.padded_pixels == 2 * 3 * 7
    assert packing.executed_pixels == packing.valid_pixels


def test_packing_counts_separators_of_the_real_layout():
    m = SizeManifest.from_records([("a", 1, 1), ("b", 1, 1)])
    stats = padding_stats(m, 2, "packing")
    assert (stats.valid_pixels, stats.total_pixels, stats.padded_pixels) == (2, 3, 1)
    assert (stats.packed_batches, stats.packed_over_stacked_batches) == (1, 1)
    assert stats.executed_pixels == 2


def test_single_row_examples_have_no_skew_overhead():
    m = SizeManifest.from_records([("a", 1, 5)])
    assert padding_stats(m, 1, "packing").skew_overhead_fraction == 0.0


def test_packing_executes_no_more_than_lmbr(rng):
    for _ in range(50):
        m = _random_manifest(rng, int(rng.integers(1, 40)))
        b = int(rng.integers(1, 10))
        packing, lmbr = padding_stats(m, b, "packing"), padding_stats(m, b, "lmbr")
        assert packing.executed_pixels <= lmbr.executed_pixels == lmbr.total_pixels
        assert packing.peak_batch_memory_bytes <= lmbr.peak_batch_memory_bytes


@pytest.mark.parametrize("preset", ["word", "line"])
def test_presets_pack_tighter_than_lmbr_on_every_batch(preset):
    for seed in range(200):
        m = preset_manifest(preset, 200, seed=seed)
        for p, s in zip(batch_plans(m, 20, "packing"), batch_plans(m, 20, "lmbr")):
            assert p.padded_pixels / p.processed_pixels <= s.padded_pixels / s.processed_pixels
        small = m.head(40)
        largest = max(h * w for h, w in small.sizes())
        mem = _unit_memory(largest * (2 + seed % 4))
        assert max_batch_under_budget(small, mem, "packing") >= max_batch_under_budget(small, mem, "lmbr")


def test_batch_padding_table_columns():
    m = SizeManifest.from_records([("a", 2, 4), ("b", 2, 2), ("c", 3, 3)])
    table = batch_padding_table(m, 2, "packing")
    assert len(table) == 2
    assert {"batch", "kind", "valid_pixels", "processed_pixels", "padded_fraction",
            "stacked_pixels", "executed_pixels", "packed_over_stacked"} <= set(table.columns)
    assert table["valid_pixels"].sum() == 8 + 4 + 9
    assert table["packed_over_stacked"].tolist() == [True, False]


# ---- capacity ----

def test_capacity_packing_dominates_lmbr(rng):
    for _ in range(200):
        m = _random_manifest(rng, int(rng.integers(2, 30)))
        largest = max(h * w for h, w in m.sizes())
        mem = _unit_memory(largest * int(rng.integers(1, 20)))
        assert max_batch_under_budget(m, mem, "packing") >= max_batch_under_budget(m, mem, "lmbr")


def test_budget_equal_to_largest_example_gives_one():
    m = SizeManifest.from_records([("a", 4, 4), ("b", 2, 3), ("c", 1, 1)])
    mem = _unit_memory(16 + 10, overhead=10)
    for strategy in ("packing", "lmbr"):
        assert max_batch_under_budget(m, mem, strategy) == 1


def test_whole_manifest_fits_a_large_budget():
    m = SizeManifest.from_records([(str(i), 2, 2) for i in range(6)])
    assert max_batch_under_budget(m, _unit_memory(10**6), "lmbr") == 6


def test_budget_below_one_example_is_a_capacity_error():
    m = SizeManifest.from_records([("a", 4, 4)])
    with pytest.raises(CapacityError):
        max_batch_under_budget(m, _unit_memory(15), "packing")


def test_memory_model_validation():
    with pytest.raises(ArgumentError):
        MemoryModel(budget_bytes=0)
    with pytest.raises(ArgumentError):
        MemoryModel(bytes_per_padded_pixel=-1.0)


@pytest.mark.slow
def test_word_preset_capacity_gain():
    mem = MemoryModel()
    for seed in range(3):
        m = preset_manifest("word", 1000, seed=seed)
        ratio = max_batch_under_budget(m, mem, "packing") / max_batch_under_budget(m, mem, "lmbr")
        assert ratio >= 4


# ---- throughput ----

def test_throughput_with_no_strategies_is_empty(tiny_cfg):
    m = SizeManifest.from_records([("a", 2, 2)])
    assert throughput_bench(tiny_cfg, m, []) == []


def test_throughput_reports_timing_spread(tiny_cfg):
    m = SizeManifest.from_records([(f"e{i}", 2 + i % 3, 3 + 2 * i) for i in range(6)])
    reports = throughput_bench(tiny_cfg, m, ["packing", "LMBR"], repetitions=3, mem=_unit_memory(60))
    assert [r.strategy for r in reports] == ["packing", "lmbr"]
    for r in reports:
        t = r.wall_time_per_batch
        assert 0 < t["min"] <= t["median"] <= t["max"]
        assert r.examples_per_second > 0
        assert r.n_examples == 6
        assert "numpy" in r.environment


def test_throughput_rejects_zero_repetitions(tiny_cfg):
    m = SizeManifest.from_records([("a", 2, 2)])
    with pytest.raises(ArgumentError):
        throughput_bench(tiny_cfg, m, ["packing"], repetitions=0)


@pytest.mark.slow
def test_word_throughput_runs_packing_at_larger_batches():
    from gridpack.network import NetworkConfig

    cfg = NetworkConfig(hidden_sizes=[2, 10, 50], conv_channels=[6, 20])
    m = preset_manifest("word", 60, seed=1)
    # 512 MiB at 2 KiB per pixel holds the largest word (128x800) on its own
    mem = MemoryModel(budget_bytes=512 * 2**20, fixed_overhead_bytes=0)
    lmbr, packing = throughput_bench(cfg, m, ["lmbr", "packing"], repetitions=3, mem=mem)
    assert packing.batch_size >= lmbr.batch_size
    assert packing.executed_pixels <= padding_stats(m, packing.batch_size, "lmbr").total_pixels
    assert packing.examples_per_second >= lmbr.examples_per_second


# ---- stability ----

def test_stability_report_csv(tmp_path):
    out = tmp_path / "stab.csv"
    df = stability_report(length=50, biases=[3.0, -20.0], out_path=out)
    assert len(df) == 2 * 2 * 50
    back = pd.read_csv(out)
    assert list(back.columns) == ["step", "cell_kind", "forget_bias", "max_abs_memory"]
    final = df.groupby(["cell_kind", "forget_bias"])["max_abs_memory"].last()
    assert final[("plain", 3.0)] > 1.0
    assert np.all(final.loc["leaky_lp"] <= 1.0)
