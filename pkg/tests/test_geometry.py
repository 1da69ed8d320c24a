from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detpoison.errors import BoxError, PlacementError
from detpoison.geometry import BBox, clamp_placement, iou


def _lattice_iou(a: BBox, b: BBox) -> float:
    """Oracle: count unit cells of the integer lattice inside each box."""

    def cells(box: BBox) -> set[tuple[int, int]]:
        return {
            (x, y)
            for x in range(int(box.x1), int(box.x2))
            for y in range(int(box.y1), int(box.y2))
        }

    ca, cb = cells(a), cells(b)
    union = len(ca | cb)
    return len(ca & cb) / union if union else 0.0


def _int_box(rng_vals) -> BBox:
    x1, w, y1, h = rng_vals
    return BBox(float(x1), float(y1), float(x1 + w), float(y1 + h))


int_boxes = st.tuples(
    st.integers(0, 40), st.integers(1, 30), st.integers(0, 40), st.integers(1, 30)
).map(_int_box)


@settings(max_examples=300, deadline=None)
@given(int_boxes, int_boxes)
def test_iou_matches_lattice_counting_oracle(a: BBox, b: BBox) -> None:
    assert iou(a, b) == pytest.approx(_lattice_iou(a, b), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(int_boxes, int_boxes)
def test_iou_symmetric_and_bounded(a: BBox, b: BBox) -> None:
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


def test_iou_identity_and_disjoint() -> None:
    a = BBox(0.0, 0.0, 10.0, 10.0)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(10.0, 0.0, 20.0, 10.0)) == 0.0
    assert iou(a, BBox(50.0, 50.0, 60.0, 60.0)) == 0.0


def test_iou_contained_box_is_area_ratio() -> None:
    outer = BBox(0.0, 0.0, 10.0, 10.0)
    inner = BBox(2.0, 2.0, 7.0, 7.0)
    assert iou(outer, inner) == pytest.approx(25.0 / 100.0)


def test_bbox_validation() -> None:
    with pytest.raises(BoxError):
        BBox(5.0, 0.0, 5.0, 10.0)
    with pytest.raises(BoxError):
        BBox(0.0, 10.0, 10.0, 2.0)
    with pytest.raises(BoxError):
        BBox.from_list([0.0, 0.0, 1.0])
    with pytest.raises(BoxError):
        BBox.from_list([0.0, 0.0, float("nan"), 1.0])


def test_bbox_clip_round_contains() -> None:
    box = BBox(-3.5, 2.4, 12.6, 9.0)
    clipped = box.clipped(10.0, 8.0)
    assert clipped.as_list() == [0.0, 2.4, 10.0, 8.0]
    assert clipped.rounded() == (0, 2, 10, 8)
    assert box.contains_point(0.0, 5.0)
    # Half-open: the right and bottom edges are outside.
    assert not box.contains_point(12.6, 5.0)
    assert box.contains_point(12.5999, 8.9999)


def test_bbox_clip_degenerate_raises() -> None:
    with pytest.raises(BoxError):
        BBox(20.0, 20.0, 30.0, 30.0).clipped(10.0, 10.0)


def test_clamp_placement() -> None:
    assert clamp_placement((96, 96), (9, 9), (5, 5)) == (5, 5)
    assert clamp_placement((96, 96), (9, 9), (95, 95)) == (87, 87)
    assert clamp_placement((96, 96), (9, 9), (-4, 2)) == (0, 2)
    with pytest.raises(PlacementError):
        clamp_placement((96, 96), (100, 9), (0, 0))


@settings(max_examples=200, deadline=None)
@given(
    st.integers(-20, 120),
    st.integers(-20, 120),
    st.integers(1, 30),
    st.integers(1, 30),
)
def test_clamp_placement_always_in_bounds(a: int, b: int, tw: int, th: int) -> None:
    ca, cb = clamp_placement((96, 96), (tw, th), (a, b))
    assert 0 <= ca <= 96 - tw
    assert 0 <= cb <= 96 - th
