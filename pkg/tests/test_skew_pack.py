import json

import numpy as np
import pytest

from conftest import random_grids
from gridpack.errors import ArgumentError, LayoutError, ShapeError
from gridpack.skew_pack import (
    PackingLayout,
    SkewedGrid,
    pack_and_skew,
    pack_examples,
    pack_strips,
    pad_batch,
    plan_batch_layout,
    plan_packing,
    skew,
    split_balanced,
    split_balanced_indices,
    stacked_area,
    unpack_activations,
    unpack_strips,
    unpad_batch,
    unskew,
)
from gridpack.tensor_core import ImageGrid, MaskGrid, grid_create


def _rows(layout):
    return [(r.row_height, r.top_offset, [(p.example_index, p.column_offset) for p in r.placements])
            for r in layout.rows]


# ---- skewing ----

def test_skew_height_one_is_identity():
    g = ImageGrid.from_rows([[1, 2, 3, 4]])
    s = skew(g)
    assert s.skewed_width == 4
    np.testing.assert_array_equal(s.data, g.data)
    assert s.mask.count() == 4


def test_skew_two_by_two():
    s = skew(ImageGrid.from_rows([[1, 2], [3, 4]]))
    np.testing.assert_array_equal(s.data[:, :, 0], [[1, 2, 0], [0, 3, 4]])
    np.testing.assert_array_equal(s.mask.bits, [[1, 1, 0], [0, 1, 1]])


def test_skew_mask_rows_hold_original_width(rng):
    s = skew(ImageGrid(rng.standard_normal((5, 7, 1))))
    assert s.skewed_width == 11
    assert s.mask.bits.sum(axis=1).tolist() == [7] * 5
    for r in range(5):
        assert s.mask.bits[r, r:r + 7].all()


def test_skew_roundtrip_is_exact(rng):
    for _ in range(1000):
        h, w, c = (int(x) for x in rng.integers(1, [9, 9, 4]))
        g = ImageGrid(rng.standard_normal((h, w, c)))
        assert unskew(skew(g)).equals(g)


def test_unskew_of_hand_built_grid():
    data = np.array([[1, 2, 0], [0, 3, 4]], dtype=float)[:, :, None]
    s = SkewedGrid(data, MaskGrid(np.array([[1, 1, 0], [0, 1, 1]])), 2)
    assert unskew(s).equals(ImageGrid.from_rows([[1, 2], [3, 4]]))


def test_skewed_grid_rejects_inconsistent_width():
    with pytest.raises(LayoutError):
        SkewedGrid(np.zeros((2, 4, 1)), MaskGrid(np.zeros((2, 4), dtype=np.uint8)), 2)


# ---- packing ----

def test_single_example_packs_as_is():
    batch, layout = pack_examples([grid_create(3, 4, 1, 1.0)])
    assert _rows(layout) == [(3, 0, [(0, 0)])]
    assert batch.mask.count() == 12
    assert (layout.total_height, layout.total_width) == (3, 4)


def test_widest_first_fill_with_separators():
    layout = plan_packing([(2, 5), (2, 3), (2, 1)])
    assert _rows(layout) == [(2, 0, [(0, 0)]), (2, 3, [(1, 0), (2, 4)])]
    assert (layout.total_height, layout.total_width) == (5, 5)


def test_height_buckets_flush_their_last_row():
    layout = plan_packing([(2, 3), (2, 2), (3, 4)])
    assert _rows(layout) == [(2, 0, [(0, 0)]), (2, 3, [(1, 0)]), (3, 6, [(2, 0)])]
    assert (layout.total_height, layout.total_width) == (9, 4)


def test_equal_widths_prefer_lower_index():
    layout = plan_packing([(1, 2), (1, 2), (1, 5)])
    assert _rows(layout) == [(1, 0, [(2, 0)]), (1, 2, [(0, 0), (1, 3)])]


def test_pack_and_skew_width_arithmetic():
    examples = [grid_create(2, w, 1, 1.0) for w in (5, 3, 1)]
    skewed, mask, layout = pack_and_skew(examples)
    assert skewed.skewed_width == 9
    assert mask.count() == 2 * (5 + 3 + 1)


def test_pack_unpack_roundtrip_and_mask_conservation(rng):
    for _ in range(50):
        examples = random_grids(rng, int(rng.integers(1, 10)), channels=2)
        batch, layout = pack_examples(examples)
        layout.validate()
        assert batch.mask.count() == sum(g.height * g.width for g in examples)
        out = unpack_activations(batch.grid, layout)
        assert [o.shape for o in out] == [g.shape for g in examples]
        assert all(o.equals(g) for o, g in zip(out, examples))
        for row in layout.rows:
            assert all(examples[p.example_index].height == row.row_height for p in row.placements)


def test_unpack_extracts_in_original_order():
    examples = [grid_create(2, w, 1, float(w)) for w in (5, 3, 1)]
    batch, layout = pack_examples(examples)
    out = unpack_activations(batch.grid, layout)
    assert [o.width for o in out] == [5, 3, 1]
    assert [o.data[0, 0, 0] for o in out] == [5.0, 3.0, 1.0]


def test_unpack_with_scale_factors():
    layout = plan_packing([(2, 4), (2, 2)])
    assert _rows(layout) == [(2, 0, [(0, 0)]), (2, 3, [(1, 0)])]
    out = unpack_activations(ImageGrid(np.zeros((5, 2, 1))), layout, width_scale="1/2")
    assert [o.shape for o in out] == [(2, 2, 1), (2, 1, 1)]
    # second row starts at 3, which halves to a fractional offset
    with pytest.raises(LayoutError):
        unpack_activations(ImageGrid(np.zeros((3, 4, 1))), layout, height_scale="1/2")


def test_pack_errors():
    with pytest.raises(ArgumentError):
        pack_examples([])
    with pytest.raises(ShapeError):
        pack_examples([grid_create(2, 2, 1), grid_create(2, 2, 3)])


def test_layout_json_roundtrip():
    layout = plan_packing([(2, 5), (2, 3), (2, 1), (3, 2)])
    again = PackingLayout.from_dict(json.loads(layout.to_json()))
    assert again == layout


# ---- LMBR padding and batch plans ----

def test_pad_batch_roundtrip(rng):
    examples = random_grids(rng, 4, channels=1)
    padded = pad_batch(examples)
    assert padded.data.shape[:3] == (4, max(g.height for g in examples), max(g.width for g in examples))
    assert int(padded.mask.sum()) == sum(g.height * g.width for g in examples)
    assert all(a.equals(b) for a, b in zip(unpad_batch(padded.data, padded.sizes), examples))


def test_lmbr_padding_arithmetic():
    plan = plan_batch_layout([(2, 4), (2, 2)], "lmbr")
    assert (plan.processed_pixels, plan.padded_pixels) == (16, 4)
    assert plan.padded_pixels / plan.processed_pixels == 0.25


def test_packing_reports_the_full_composite():
    # two 1x1 examples cannot share a 1-wide row: 3x1 composite against a 2-pixel stack
    plan = plan_batch_layout([(1, 1), (1, 1)], "packing")
    assert plan.kind == "packed"
    assert (plan.processed_pixels, plan.padded_pixels, plan.stacked_area) == (3, 1, 2)
    assert plan.packed_over_stacked
    assert (plan.executed_area, plan.executed_padding) == (2, 0)


def test_uniform_sizes_pay_only_separator_rows():
    plan = plan_batch_layout([(3, 5)] * 4, "packing")
    assert plan.kind == "packed"
    assert plan.padded_pixels == 3 * 5
    assert plan.executed_area == plan.stacked_area == 60
    assert plan.executed_padding == 0


def test_strips_never_exceed_lmbr_stack(rng):
    for _ in range(200):
        sizes = [(int(h), int(w)) for h, w in rng.integers(1, 30, size=(int(rng.integers(1, 15)), 2))]
        plan = plan_batch_layout(sizes, "packing")
        assert plan.processed_pixels == plan.layout.area
        assert plan.executed_area <= stacked_area(sizes)
        assert plan.layout.total_width == max(w for _, w in sizes)


def test_strip_roundtrip_and_mask_conservation(rng):
    for _ in range(50):
        examples = random_grids(rng, int(rng.integers(1, 10)), channels=2)
        strips = pack_strips(examples)
        layout = strips.layout
        assert strips.data.shape == (len(layout.rows), layout.strip_height, layout.total_width, 2)
        assert int(strips.mask.sum()) == sum(g.height * g.width for g in examples)
        out = unpack_strips(strips.data, layout)
        assert all(o.equals(g) for o, g in zip(out, examples))


def test_strips_put_each_row_on_the_batch_axis():
    examples = [grid_create(2, w, 1, float(w)) for w in (5, 3, 1)] + [grid_create(1, 2, 1, 7.0)]
    strips = pack_strips(examples)
    # rows: [7.] at height 1, then [5.], then [3., 1.] at height 2
    assert strips.data.shape == (3, 2, 5, 1)
    np.testing.assert_array_equal(strips.mask[0], [[1, 1, 0, 0, 0], [0, 0, 0, 0, 0]])
    np.testing.assert_array_equal(strips.data[2, 0, :, 0], [3.0, 3.0, 3.0, 0.0, 1.0])
    with pytest.raises(LayoutError):
        unpack_strips(strips.data[:2], strips.layout)


def test_unknown_strategy():
    with pytest.raises(ArgumentError):
        plan_batch_layout([(1, 1)], "sorted")


# ---- balanced splitting ----

def test_lpt_split_balances_loads():
    bins = split_balanced_indices([8, 7, 3, 2], 2)
    assert bins == [[0, 3], [1, 2]]
    assert sorted(sum([8, 7, 3, 2][i] for i in b) for b in bins) == [10, 10]


def test_split_single_bin_is_sorted_descending():
    examples = [grid_create(1, w, 1) for w in (2, 5, 3)]
    (only,) = split_balanced(examples, 1)
    assert [g.width for g in only] == [5, 3, 2]


def test_split_more_bins_than_items():
    bins = split_balanced([grid_create(1, 1, 1)] * 3, 5)
    assert [len(b) for b in bins] == [1, 1, 1, 0, 0]


def test_split_lpt_bound(rng):
    for _ in range(50):
        loads = rng.integers(1, 100, size=int(rng.integers(1, 40))).tolist()
        k = int(rng.integers(1, 8))
        bins = split_balanced_indices(loads, k)
        assert sorted(i for b in bins for i in b) == list(range(len(loads)))
        worst = max(sum(loads[i] for i in b) for b in bins)
        assert worst <= 2 * sum(loads) / k + max(loads)


def test_split_rejects_zero_bins():
    with pytest.raises(ArgumentError):
        split_balanced_indices([1], 0)
