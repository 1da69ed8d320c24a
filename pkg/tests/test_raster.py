from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from detpoison.errors import PlacementError, RasterError
from detpoison.raster import (
    TriggerPatch,
    blend_patch,
    chessboard,
    load_image,
    load_trigger,
    place_and_blend,
    resize_nearest,
    save_image,
    validate_raster,
)

images = arrays(np.uint8, (24, 32, 3), elements=st.integers(0, 255))
patches = arrays(np.uint8, (5, 7, 3), elements=st.integers(0, 255))
corners = st.tuples(st.integers(0, 25), st.integers(0, 19))
alphas = st.floats(0.0, 1.0, allow_nan=False)


@settings(max_examples=150, deadline=None)
@given(images, patches, corners)
def test_blend_alpha_zero_is_identity(img, patch, at) -> None:
    out = blend_patch(img, TriggerPatch(patch, 0.0), at)
    assert np.array_equal(out, img)


@settings(max_examples=150, deadline=None)
@given(images, patches, corners)
def test_blend_alpha_one_replaces_footprint(img, patch, at) -> None:
    out = blend_patch(img, TriggerPatch(patch, 1.0), at)
    a, b = at
    assert np.array_equal(out[b : b + 5, a : a + 7], patch)


@settings(max_examples=150, deadline=None)
@given(images, patches, corners, alphas)
def test_blend_leaves_outside_untouched_and_bounded(img, patch, at, alpha) -> None:
    out = blend_patch(img, TriggerPatch(patch, alpha), at)
    a, b = at
    masked = out.copy()
    masked[b : b + 5, a : a + 7] = img[b : b + 5, a : a + 7]
    assert np.array_equal(masked, img)
    assert out.dtype == np.uint8
    # Convex combination of uint8 values rounds back into range.
    assert out.min() >= 0 and out.max() <= 255


@settings(max_examples=100, deadline=None)
@given(images, patches, corners, alphas)
def test_blend_matches_convex_combination(img, patch, at, alpha) -> None:
    out = blend_patch(img, TriggerPatch(patch, alpha), at)
    a, b = at
    region = img[b : b + 5, a : a + 7].astype(np.float64)
    expect = np.rint(alpha * patch.astype(np.float64) + (1 - alpha) * region)
    assert np.array_equal(out[b : b + 5, a : a + 7].astype(np.float64), expect)


def test_blend_never_mutates_input() -> None:
    img = np.full((10, 10, 3), 7, dtype=np.uint8)
    before = img.copy()
    blend_patch(img, TriggerPatch(chessboard(3, 1), 0.5), (2, 2))
    assert np.array_equal(img, before)


def test_blend_out_of_bounds_raises() -> None:
    img = np.zeros((10, 10, 3), dtype=np.uint8)
    patch = TriggerPatch(chessboard(3, 1), 0.5)
    with pytest.raises(PlacementError):
        blend_patch(img, patch, (9, 0))
    with pytest.raises(PlacementError):
        blend_patch(img, patch, (0, -1))
    with pytest.raises(PlacementError):
        blend_patch(img, TriggerPatch(chessboard(12, 1), 0.5), (0, 0))


def test_place_and_blend_clamps() -> None:
    img = np.zeros((20, 20, 3), dtype=np.uint8)
    patch = TriggerPatch(chessboard(9), 1.0)
    out, corner = place_and_blend(img, patch, (18.0, -5.0))
    assert corner == (11, 0)
    assert np.array_equal(out[0:9, 11:20], patch.raster)


def test_trigger_patch_validation() -> None:
    with pytest.raises(RasterError):
        TriggerPatch(chessboard(3), alpha=1.5)
    with pytest.raises(RasterError):
        TriggerPatch(chessboard(3), mask=np.ones((4, 4)))
    with pytest.raises(RasterError):
        TriggerPatch(chessboard(3), mask=np.full((3, 3), 2.0))


def test_trigger_mask_scales_blend() -> None:
    img = np.zeros((6, 6, 3), dtype=np.uint8)
    patch = np.full((2, 2, 3), 200, dtype=np.uint8)
    mask = np.array([[1.0, 0.0], [0.5, 1.0]])
    out = blend_patch(img, TriggerPatch(patch, 1.0, mask), (0, 0))
    assert out[0, 0, 0] == 200
    assert out[0, 1, 0] == 0
    assert out[1, 0, 0] == 100


def test_chessboard_structure() -> None:
    board = chessboard(9, cell=3, low=0, high=120)
    assert board.shape == (9, 9, 3)
    assert set(np.unique(board)) == {0, 120}
    # 3px cells alternate in both axes and the three channels are equal.
    assert board[0, 0, 0] == 0 and board[0, 3, 0] == 120 and board[3, 0, 0] == 120
    assert np.array_equal(board[:, :, 0], board[:, :, 1])
    assert np.array_equal(board[:, :, 0], board[:, :, 2])


def test_resize_nearest_upscale_exact() -> None:
    src = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
    out = resize_nearest(src, (4, 4))
    assert out.shape == (4, 4, 3)
    assert np.array_equal(out[0:2, 0:2], np.repeat(np.repeat(src[:1, :1], 2, 0), 2, 1))
    assert set(np.unique(out)) <= set(np.unique(src))
    with pytest.raises(RasterError):
        resize_nearest(src, (0, 4))


def test_save_load_round_trip(tmp_path) -> None:
    img = chessboard(9)
    save_image(tmp_path / "t.png", img)
    assert np.array_equal(load_image(tmp_path / "t.png"), img)


def test_load_trigger_rgb_and_rgba(tmp_path) -> None:
    rgb = chessboard(6, 2)
    save_image(tmp_path / "rgb.png", rgb)
    patch = load_trigger(tmp_path / "rgb.png", alpha=0.7)
    assert patch.alpha == 0.7
    assert patch.mask is None
    assert np.array_equal(patch.raster, rgb)

    resized = load_trigger(tmp_path / "rgb.png", size=12)
    assert resized.dims == (12, 12)

    from PIL import Image

    rgba = np.zeros((4, 4, 4), dtype=np.uint8)
    rgba[:, :, :3] = 90
    rgba[:, :, 3] = [[255, 0, 128, 255]] * 4
    Image.fromarray(rgba, "RGBA").save(tmp_path / "rgba.png")
    patch = load_trigger(tmp_path / "rgba.png", alpha=1.0)
    assert patch.mask is not None
    assert patch.mask[0, 0] == pytest.approx(1.0)
    assert patch.mask[0, 1] == pytest.approx(0.0)
    assert patch.mask[0, 2] == pytest.approx(128 / 255)


def test_validate_raster_rejects_bad_shapes() -> None:
    with pytest.raises(RasterError):
        validate_raster(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(RasterError):
        validate_raster(np.zeros((4, 4, 5), dtype=np.uint8))
    with pytest.raises(RasterError):
        validate_raster(np.zeros((0, 4, 3), dtype=np.uint8))
