import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqgp.grid import Grid, build_grid, plan_chunks


def test_1d_points_and_volume():
    g = build_grid(1, [3], [1.0], [-1.0])
    np.testing.assert_array_equal(g.points[:, 0], [-1.0, 0.0, 1.0])
    assert g.cell_volume == 1.0


def test_full_scale_2d_size():
    assert build_grid(2, [400, 400], [1.0, 1.0]).m == 160000


def test_3d_cell_volume():
    assert build_grid(3, [10, 10, 10], [50, 50, 50]).cell_volume == 125000.0


def test_row_major_order():
    g = build_grid(2, [2, 3], [1.0, 10.0])
    np.testing.assert_array_equal(g.points[1], [0.0, 10.0])
    np.testing.assert_array_equal(g.points[3], [1.0, 0.0])


@pytest.mark.parametrize("shape,spacing", [([0], [1.0]), ([3], [0.0]), ([3], [-1.0]), ([], [])])
def test_rejects_bad_grids(shape, spacing):
    with pytest.raises(ValueError):
        build_grid(max(1, len(shape)), shape, spacing)


@pytest.mark.parametrize("m,c,expected", [
    (10, 4, [(0, 4), (4, 8), (8, 10)]),
    (10, 10, [(0, 10)]),
])
def test_chunk_examples(m, c, expected):
    assert [tuple(r) for r in plan_chunks(m, c).ranges] == expected


def test_full_scale_chunk_count():
    assert plan_chunks(160000, 2000).n_chunks == 80


def test_rejects_zero_chunk():
    with pytest.raises(ValueError):
        plan_chunks(10, 0)


@given(st.integers(1, 5000), st.integers(1, 700))
def test_chunks_partition(m, c):
    plan = plan_chunks(m, c)
    idx = np.concatenate([np.arange(lo, hi) for lo, hi in plan.ranges])
    np.testing.assert_array_equal(idx, np.arange(m))
    assert all(hi - lo <= c for lo, hi in plan.ranges)


@settings(max_examples=50)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=3), st.data())
def test_flat_index_roundtrip(shape, data):
    g = build_grid(len(shape), shape, [0.5 + i for i in range(len(shape))], [-1.0] * len(shape))
    i = data.draw(st.integers(0, g.m - 1))
    assert g.flat_index(g.point(i)) == i
    np.testing.assert_allclose(g.point(i), g.points[i])


def test_dict_roundtrip():
    g = build_grid(3, [2, 3, 4], [1.0, 2.0, 3.0], [0.5, 0.0, -1.0])
    assert Grid.from_dict(g.to_dict()) == g
