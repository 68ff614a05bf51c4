import numpy as np
import pytest
from hypothesis import given, strategies as st

from lsanav.errors import ConfigError
from lsanav.geometry import CandidateView, ViewFeature, ViewIndex
from lsanav.masks import ABLATION_SHAPES, MaskShape, build_mask, circular_col_dist

from oracles import brute_force_window

_F = ViewFeature(np.zeros(2), np.zeros(4))
cells = st.builds(ViewIndex, st.integers(0, 2), st.integers(0, 11))


def cand(row, col):
    return CandidateView(ViewIndex(row, col), 0, 0.0, 0.0, _F)


STOP = CandidateView(None, None, 0.0, 0.0, _F)


def visible(mask, k):
    return {(n // 12, n % 12) for n in np.flatnonzero(mask.allowed[:, k])}


def test_ablation_shapes_labels():
    assert [s.label for s in ABLATION_SHAPES] == ["none", "1x3", "1x5", "1x7", "3x3", "3x5", "3x7"]


def test_parse_and_reject():
    assert MaskShape.parse("3X5") == MaskShape(3, 5)
    assert MaskShape.parse("none").is_full
    for bad in ("2x3", "3x4", "3", "axb"):
        with pytest.raises(ConfigError):
            MaskShape.parse(bad)


def test_interior_3x3_wraps():
    m = build_mask([cand(1, 0)], MaskShape(3, 3))
    assert visible(m, 0) == {(r, c) for r in (0, 1, 2) for c in (11, 0, 1)}


def test_edge_row_3x3_has_six_views():
    m = build_mask([cand(0, 5)], MaskShape(3, 3))
    assert visible(m, 0) == {(r, c) for r in (0, 1) for c in (4, 5, 6)}
    m = build_mask([cand(2, 5)], MaskShape(3, 3))
    assert len(visible(m, 0)) == 6


def test_full_mask_all_true():
    m = build_mask([cand(0, 0), cand(1, 3), cand(2, 7), cand(1, 11)], MaskShape())
    assert m.allowed.shape == (36, 4) and m.allowed.all()


def test_1x7_wrap():
    m = build_mask([cand(2, 10)], MaskShape(1, 7))
    assert visible(m, 0) == {(2, c) for c in (7, 8, 9, 10, 11, 0, 1)}


def test_circular_distance_examples():
    assert circular_col_dist(0, 11) == 1
    assert circular_col_dist(3, 3) == 0
    assert circular_col_dist(2, 9) == 5


def test_circular_distance_table():
    for a in range(12):
        for b in range(12):
            steps = [s for s in range(12) if (a + s) % 12 == b or (a - s) % 12 == b]
            assert circular_col_dist(a, b) == min(steps)


def test_exhaustive_against_brute_force():
    for shape in ABLATION_SHAPES:
        for n in range(36):
            r, c = divmod(n, 12)
            m = build_mask([cand(r, c)], shape)
            assert visible(m, 0) == brute_force_window(r, c, shape.rows, shape.cols), (shape, r, c)


def test_stop_slot_sees_everything_and_can_be_dropped():
    m = build_mask([STOP, cand(1, 4)], MaskShape(1, 3))
    assert m.slots == (0, 1)
    assert m.allowed[:, 0].all()
    m = build_mask([STOP, cand(1, 4)], MaskShape(1, 3), include_stop=False)
    assert m.slots == (1,) and m.n_slots == 1
    with pytest.raises(ConfigError):
        build_mask([STOP], MaskShape(3, 3), include_stop=False)


@given(st.lists(cells, min_size=1, max_size=5), st.integers(0, 11), st.sampled_from(ABLATION_SHAPES))
def test_rotation_equivariance(idx, delta, shape):
    m = build_mask([cand(v.row, v.col) for v in idx], shape)
    rotated = build_mask([cand(v.row, (v.col + delta) % 12) for v in idx], shape)
    grid = m.allowed.reshape(3, 12, -1)
    assert np.array_equal(np.roll(grid, delta, axis=1).reshape(36, -1), rotated.allowed)


@given(cells)
def test_monotonicity_and_center_inclusion(v):
    c = [cand(v.row, v.col)]
    for rows in (1, 3):
        for w in (3, 5):
            narrow = build_mask(c, MaskShape(rows, w)).allowed
            wide = build_mask(c, MaskShape(rows, w + 2)).allowed
            assert np.all(wide[narrow])
    for w in (3, 5, 7):
        one = build_mask(c, MaskShape(1, w)).allowed
        three = build_mask(c, MaskShape(3, w)).allowed
        assert np.all(three[one])
    for shape in ABLATION_SHAPES:
        assert build_mask(c, shape).allowed[v.flat, 0]


def test_text_and_csv_dump():
    m = build_mask([STOP, cand(2, 0)], MaskShape(1, 3))
    text = m.to_text().splitlines()
    assert text[0] == "slot 0 (candidate 0)"
    assert text[4] == "slot 1 (candidate 1)"
    # top row printed first
    assert text[5] == "  row 2: # # . . . . . . . . . #"
    lines = m.to_csv().splitlines()
    assert lines[0] == "slot,candidate,view_row,view_col,allowed"
    assert len(lines) == 1 + 2 * 36
    assert sum(int(l.split(",")[-1]) for l in lines[1:]) == 36 + 3
