import numpy as np
import pytest
from hypothesis import given, strategies as st

from retinalkit.errors import ConfigError
from retinalkit.lesions import LesionBox, center_in, extract_boxes, iou
from retinalkit.morph import BinaryMask

from oracles import component_boxes, flood_fill_labels


def sampled_iou(a, b):
    """Area-sampling oracle: count unit cells covered by each half-open box."""
    lo = min(a[0], b[0]), min(a[1], b[1])
    hi = max(a[2], b[2]), max(a[3], b[3])
    inter = union = 0
    for x in range(lo[0], hi[0]):
        for y in range(lo[1], hi[1]):
            ina = a[0] <= x < a[2] and a[1] <= y < a[3]
            inb = b[0] <= x < b[2] and b[1] <= y < b[3]
            inter += ina and inb
            union += ina or inb
    return inter / union


boxes = st.tuples(st.integers(0, 30), st.integers(0, 30), st.integers(1, 15), st.integers(1, 15)).map(
    lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3]))


def test_single_blob_half_open():
    m = np.zeros((20, 20), bool)
    m[4:13, 3:11] = True
    (box,) = extract_boxes(BinaryMask(m), "hemorrhage")
    assert box.coords == (3, 4, 11, 13)
    assert box.area == 8 * 9
    assert box.lesion_type == "hemorrhage"


def test_min_area_threshold():
    m = np.zeros((20, 20), bool)
    m[1, 1:3] = True
    m[10:13, 10:13] = True
    out = extract_boxes(BinaryMask(m), "exudate", min_area=5)
    assert [b.coords for b in out] == [(10, 10, 13, 13)]


def test_empty_mask():
    assert extract_boxes(BinaryMask(np.zeros((8, 8), bool)), "x") == []


def test_bad_min_area():
    with pytest.raises(ConfigError):
        extract_boxes(BinaryMask(np.zeros((8, 8), bool)), "x", min_area=0)


@pytest.mark.parametrize("seed", range(5))
def test_boxes_match_scan_oracle(seed):
    fg = np.random.default_rng(seed).random((64, 64)) < 0.15
    labels, n = flood_fill_labels(fg, 8)
    want = sorted(((x0, y0, x1 + 1, y1 + 1), size)
                  for (x0, y0, x1, y1), size in component_boxes(labels, n) if size >= 3)
    got = extract_boxes(BinaryMask(fg), "ma", min_area=3)
    assert sorted((b.coords, b.area) for b in got) == want
    assert [(b.y_min, b.x_min) for b in got] == sorted((b.y_min, b.x_min) for b in got)
    for b in got:
        assert (fg[b.y_min:b.y_max, b.x_min:b.x_max]).sum() >= 3
        assert 0 <= b.x_min < b.x_max <= 64 and 0 <= b.y_min < b.y_max <= 64


def test_disjoint_merge_keeps_boxes():
    a = np.zeros((30, 30), bool)
    a[2:6, 2:6] = True
    b = np.zeros((30, 30), bool)
    b[20:25, 20:25] = True
    b[2:6, 15:19] = True
    n = len(extract_boxes(BinaryMask(a | b), "x"))
    assert n >= max(len(extract_boxes(BinaryMask(a), "x")), len(extract_boxes(BinaryMask(b), "x")))
    assert n == 3


def test_iou_examples():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iou((0, 0, 10, 10), (5, 5, 15, 15)) == pytest.approx(1 / 7, abs=1e-12)
    assert sampled_iou((0, 0, 10, 10), (5, 5, 15, 15)) == pytest.approx(25 / 175)
    assert iou((0, 0, 5, 5), (5, 5, 9, 9)) == 0.0


@given(boxes, boxes)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert iou(a, a) == 1.0
    assert v == pytest.approx(sampled_iou(a, b))


def test_center_containment_half_open():
    # centre of (0,0,10,10) covers indices 0..9 -> 4.5, outside [5, 14]
    assert not center_in((0, 0, 10, 10), (5, 5, 15, 15))
    assert center_in((5, 5, 15, 15), (5, 5, 15, 15))
    assert center_in((6, 6, 8, 8), (5, 5, 15, 15))


def test_record_roundtrip():
    b = LesionBox("exudate", 1, 2, 5, 9, 12, 3)
    rec = b.to_record("img1")
    assert rec["image_id"] == "img1"
    assert LesionBox.from_record(rec) == b


def test_degenerate_box_rejected():
    with pytest.raises(ConfigError):
        LesionBox("x", 3, 3, 3, 5)
