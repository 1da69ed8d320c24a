"""Axis-aligned box geometry in pixel coordinates (origin top-left, y pointing down)."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import BoxError, PlacementError


@dataclass(frozen=True, slots=True)
class BBox:
    """Box with top-left corner (x1, y1) and bottom-right corner (x2, y2).

    Coordinates are continuous pixels; integer-valued annotation formats
    convert losslessly.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise BoxError(f"non-finite coordinate in box {self.as_list()}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise BoxError(
                f"degenerate box {self.as_list()}: need x2 > x1 and y2 > y1"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def contains_point(self, x: float, y: float) -> bool:
        """Half-open containment: the top-left edge belongs to the box."""
        return self.x1 <= x < self.x2 and self.y1 <= y < self.y2

    def clipped(self, width: float, height: float) -> "BBox":
        """Clamp the box into the image rectangle [0, width] x [0, height]."""
        x1 = min(max(self.x1, 0.0), width)
        y1 = min(max(self.y1, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)
        if x2 <= x1 or y2 <= y1:
            raise BoxError(
                f"box {self.as_list()} lies outside the {width}x{height} image"
            )
        return BBox(x1, y1, x2, y2)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def rounded(self) -> tuple[int, int, int, int]:
        """Integer pixel rectangle (round half to even, matching blending)."""
        x1 = int(round(self.x1))
        y1 = int(round(self.y1))
        x2 = int(round(self.x2))
        y2 = int(round(self.y2))
        return x1, y1, max(x2, x1 + 1), max(y2, y1 + 1)

    @staticmethod
    def from_list(values) -> "BBox":
        if len(values) != 4:
            raise BoxError(f"box needs 4 coordinates, got {len(values)}")
        return BBox(float(values[0]), float(values[1]), float(values[2]), float(values[3]))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint, symmetric."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def clamp_placement(
    image_dims: tuple[int, int],
    trigger_dims: tuple[int, int],
    desired: tuple[float, float],
) -> tuple[int, int]:
    """Adjust a desired trigger corner so the full footprint stays in the image.

    ``image_dims`` and ``trigger_dims`` are (width, height); ``desired`` is the
    requested top-left corner (a, b).  Returns the corner unchanged when it is
    already valid.
    """
    img_w, img_h = image_dims
    trg_w, trg_h = trigger_dims
    if trg_w > img_w or trg_h > img_h:
        raise PlacementError(
            f"trigger {trg_w}x{trg_h} does not fit in image {img_w}x{img_h}"
        )
    a = int(round(desired[0]))
    b = int(round(desired[1]))
    a = min(max(a, 0), img_w - trg_w)
    b = min(max(b, 0), img_h - trg_h)
    return a, b
