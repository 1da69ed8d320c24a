"""Raster images, trigger patches, and alpha blending of a patch into an image.

A raster is a ``(H, W, C)`` uint8 numpy array with ``C`` in {1, 3} and values
in [0, 255].  Blending computes in floating point and rounds half to even so
outputs are identical across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import PlacementError, RasterError
from .geometry import clamp_placement

Raster = np.ndarray


def validate_raster(arr: np.ndarray) -> np.ndarray:
    if not isinstance(arr, np.ndarray) or arr.ndim != 3:
        raise RasterError("raster must be a (H, W, C) array")
    h, w, c = arr.shape
    if c not in (1, 3):
        raise RasterError(f"raster must have 1 or 3 channels, got {c}")
    if h < 1 or w < 1:
        raise RasterError(f"raster must be at least 1x1, got {w}x{h}")
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise RasterError("raster values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def raster_dims(arr: np.ndarray) -> tuple[int, int]:
    """(width, height) of a raster."""
    return arr.shape[1], arr.shape[0]


@dataclass(frozen=True)
class TriggerPatch:
    """A small raster stamped into images, with blend strength alpha.

    ``mask`` is an optional per-pixel alpha in [0, 1] (same height/width as the
    raster); the effective blend weight at each pixel is ``alpha * mask``.
    Without a mask the scalar alpha applies uniformly over the footprint.
    """

    raster: Raster
    alpha: float = 0.5
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "raster", validate_raster(self.raster))
        if not 0.0 <= self.alpha <= 1.0:
            raise RasterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.mask is not None:
            if self.mask.shape != self.raster.shape[:2]:
                raise RasterError("alpha mask shape must match the trigger raster")
            if self.mask.min() < 0.0 or self.mask.max() > 1.0:
                raise RasterError("alpha mask values must lie in [0, 1]")

    @property
    def dims(self) -> tuple[int, int]:
        return raster_dims(self.raster)


def blend_patch(image: Raster, trigger: TriggerPatch, at: tuple[int, int]) -> Raster:
    """Blend a trigger into a copy of ``image`` with its top-left corner at ``at``.

    Outside the footprint the output is bit-identical to the input; inside,
    each channel is the convex combination ``alpha * trigger + (1 - alpha) * image``
    clamped to [0, 255].  The input is never modified.
    """
    image = validate_raster(image)
    img_w, img_h = raster_dims(image)
    trg_w, trg_h = trigger.dims
    a, b = int(at[0]), int(at[1])
    if trg_w > img_w or trg_h > img_h:
        raise PlacementError(
            f"trigger {trg_w}x{trg_h} does not fit in image {img_w}x{img_h}"
        )
    if a < 0 or b < 0 or a + trg_w > img_w or b + trg_h > img_h:
        raise PlacementError(
            f"trigger footprint at ({a}, {b}) exceeds image bounds {img_w}x{img_h}"
        )

    trg = trigger.raster.astype(np.float64)
    if trg.shape[2] != image.shape[2]:
        if trg.shape[2] == 1:
            trg = np.repeat(trg, image.shape[2], axis=2)
        elif image.shape[2] == 1:
            raise RasterError("cannot blend a 3-channel trigger into a 1-channel image")

    if trigger.mask is not None:
        alpha = (trigger.alpha * trigger.mask)[:, :, None]
    else:
        alpha = trigger.alpha

    out = image.copy()
    region = out[b : b + trg_h, a : a + trg_w, :].astype(np.float64)
    blended = alpha * trg + (1.0 - alpha) * region
    out[b : b + trg_h, a : a + trg_w, :] = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
    return out


def place_and_blend(
    image: Raster, trigger: TriggerPatch, desired: tuple[float, float]
) -> tuple[Raster, tuple[int, int]]:
    """Clamp the desired corner into bounds, then blend; returns (image, corner)."""
    corner = clamp_placement(raster_dims(image), trigger.dims, desired)
    return blend_patch(image, trigger, corner), corner


def chessboard(size: int = 9, cell: int = 3, low: int = 0, high: int = 120) -> Raster:
    """Square chessboard pattern of alternating ``low``/``high`` gray cells.

    The default intensities stay well below the synthetic scene palette so the
    pattern never reads as an object color, while the low/high contrast keeps
    a 0.5-blend of the pattern recoverable by normalized cross-correlation.
    """
    idx = np.arange(size) // cell
    parity = (idx[:, None] + idx[None, :]) % 2
    plane = np.where(parity == 0, low, high).astype(np.uint8)
    return np.repeat(plane[:, :, None], 3, axis=2)


def resize_nearest(arr: Raster, dims: tuple[int, int]) -> Raster:
    """Nearest-neighbor resize to (width, height); keeps exact source values."""
    arr = validate_raster(arr)
    w, h = dims
    if w < 1 or h < 1:
        raise RasterError(f"resize target must be at least 1x1, got {w}x{h}")
    src_h, src_w = arr.shape[:2]
    rows = np.minimum((np.arange(h) * src_h) // h, src_h - 1)
    cols = np.minimum((np.arange(w) * src_w) // w, src_w - 1)
    return arr[rows[:, None], cols[None, :], :]


def load_image(path: str | Path) -> Raster:
    """Load a PNG/JPEG image as an RGB raster."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise RasterError(f"cannot read image {path}: {exc}") from exc
    return validate_raster(arr)


def save_image(path: str | Path, arr: Raster) -> None:
    arr = validate_raster(arr)
    data = arr[:, :, 0] if arr.shape[2] == 1 else arr
    Image.fromarray(data).save(path, format="PNG")


def load_trigger(path: str | Path, alpha: float = 0.5, size: int | None = None) -> TriggerPatch:
    """Load a trigger patch from a PNG file.

    RGB files become uniform-alpha patches.  For RGBA files the alpha channel,
    scaled by the scalar ``alpha``, becomes the per-pixel mask, which supports
    non-rectangular trigger shapes.  ``size`` optionally resizes the patch to
    ``size`` x ``size`` (nearest neighbor).
    """
    with Image.open(path) as img:
        has_alpha = img.mode in ("RGBA", "LA", "PA")
        arr = np.asarray(img.convert("RGBA" if has_alpha else "RGB"))
    mask = None
    if has_alpha:
        mask = arr[:, :, 3].astype(np.float64) / 255.0
        arr = arr[:, :, :3]
    raster = validate_raster(np.ascontiguousarray(arr))
    if size is not None:
        raster = resize_nearest(raster, (size, size))
        if mask is not None:
            mask3 = np.repeat(mask[:, :, None], 3, axis=2)
            mask = resize_nearest((mask3 * 255).astype(np.uint8), (size, size))[:, :, 0] / 255.0
    return TriggerPatch(raster=raster, alpha=alpha, mask=mask)
