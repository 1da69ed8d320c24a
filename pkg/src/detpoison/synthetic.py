"""Deterministic synthetic scene generator.

Scenes are dim noise backgrounds with solid-color axis-aligned rectangles,
one palette color per class.  Rectangles are placed pairwise disjoint with a
small gap, so a color-segmentation detector recovers the ground truth
exactly.  A tiny impurity patch of another class color (1-5% of the object
area) gives every box a slightly different class-probability profile, which
keeps downstream entropy statistics from collapsing to a point mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import AnnotatedImage, DatasetManifest, ObjectAnnotation
from .errors import GenerationError
from .geometry import BBox

# First n_classes colors are used.  The first six differ pairwise in at least
# one full channel (distance >= 255), which keeps the color model unambiguous.
PALETTE: tuple[tuple[str, tuple[int, int, int]], ...] = (
    ("red", (255, 0, 0)),
    ("green", (0, 255, 0)),
    ("blue", (0, 0, 255)),
    ("yellow", (255, 255, 0)),
    ("magenta", (255, 0, 255)),
    ("cyan", (0, 255, 255)),
    ("white", (255, 255, 255)),
    ("orange", (255, 128, 0)),
)

NOISE_MAX = 50  # background channel values are uniform on [0, NOISE_MAX]
GAP = 2  # minimum pixel gap between placed rectangles
MAX_PLACEMENT_TRIES = 200


@dataclass(frozen=True)
class SyntheticConfig:
    n_images: int
    width: int = 128
    height: int = 128
    n_classes: int = 6
    min_objects: int = 1
    max_objects: int = 4
    min_object_size: int = 12
    max_object_size: int = 36
    impurity: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_images < 0:
            raise GenerationError("n_images must be >= 0")
        if not (2 <= self.n_classes <= len(PALETTE)):
            raise GenerationError(f"n_classes must be in [2, {len(PALETTE)}]")
        if self.width < 64 or self.height < 64:
            raise GenerationError("image dims must be at least 64x64")
        if not (1 <= self.min_objects <= self.max_objects):
            raise GenerationError("need 1 <= min_objects <= max_objects")
        if not (8 <= self.min_object_size <= self.max_object_size):
            raise GenerationError("need 8 <= min_object_size <= max_object_size")
        if self.max_object_size > min(self.width, self.height) - 2 * GAP:
            raise GenerationError("max_object_size too large for image dims")


def palette_colors(n_classes: int) -> np.ndarray:
    """(n_classes, 3) uint8 array of class colors, palette order."""
    return np.array([rgb for _, rgb in PALETTE[:n_classes]], dtype=np.uint8)


def palette_names(n_classes: int) -> tuple[str, ...]:
    return tuple(name for name, _ in PALETTE[:n_classes])


def _rects_too_close(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return not (
        ax + aw + GAP <= bx
        or bx + bw + GAP <= ax
        or ay + ah + GAP <= by
        or by + bh + GAP <= ay
    )


def _impurity_patch(
    rng: np.random.Generator, w: int, h: int
) -> tuple[int, int, int, int]:
    """Offset and dims of a patch covering 1-5% of a w*h rectangle."""
    frac = rng.uniform(0.01, 0.05)
    target = frac * w * h
    pw = max(1, int(round(math.sqrt(target))))
    ph = max(1, int(round(target / pw)))
    pw = min(pw, w - 2)
    ph = min(ph, h - 2)
    while pw * ph > 0.05 * w * h and (pw > 1 or ph > 1):
        if pw >= ph and pw > 1:
            pw -= 1
        elif ph > 1:
            ph -= 1
    ox = int(rng.integers(1, w - pw)) if w - pw > 1 else 1
    oy = int(rng.integers(1, h - ph)) if h - ph > 1 else 1
    return ox, oy, pw, ph


def _render_scene(
    cfg: SyntheticConfig, index: int
) -> tuple[np.ndarray, list[ObjectAnnotation]]:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    colors = palette_colors(cfg.n_classes)
    image = rng.integers(0, NOISE_MAX + 1, size=(cfg.height, cfg.width, 3)).astype(np.uint8)
    n_objects = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    placed: list[tuple[int, int, int, int]] = []
    objects: list[ObjectAnnotation] = []
    for _ in range(n_objects):
        class_id = int(rng.integers(0, cfg.n_classes))
        ok = False
        for _attempt in range(MAX_PLACEMENT_TRIES):
            w = int(rng.integers(cfg.min_object_size, cfg.max_object_size + 1))
            h = int(rng.integers(cfg.min_object_size, cfg.max_object_size + 1))
            x = int(rng.integers(GAP, cfg.width - w - GAP + 1))
            y = int(rng.integers(GAP, cfg.height - h - GAP + 1))
            if any(_rects_too_close((x, y, w, h), other) for other in placed):
                continue
            ok = True
            break
        if not ok:
            raise GenerationError(
                f"image {index}: could not place object {len(placed) + 1} of "
                f"{n_objects} after {MAX_PLACEMENT_TRIES} tries"
            )
        image[y : y + h, x : x + w] = colors[class_id]
        if cfg.impurity:
            other = int(rng.integers(0, cfg.n_classes - 1))
            if other >= class_id:
                other += 1
            ox, oy, pw, ph = _impurity_patch(rng, w, h)
            image[y + oy : y + oy + ph, x + ox : x + ox + pw] = colors[other]
        placed.append((x, y, w, h))
        objects.append(
            ObjectAnnotation(class_id, BBox(float(x), float(y), float(x + w), float(y + h)))
        )
    return image, objects


def generate_synthetic_dataset(
    cfg: SyntheticConfig, role: str = "test_benign"
) -> DatasetManifest:
    """Render ``cfg.n_images`` scenes with inline rasters, deterministically.

    Each scene depends only on (seed, image index), so regenerating any prefix
    or a single image reproduces identical pixels and labels.
    """
    entries = []
    for i in range(cfg.n_images):
        image, objects = _render_scene(cfg, i)
        entries.append(
            AnnotatedImage(
                image_ref=f"images/synth_{i:05d}.png",
                width=cfg.width,
                height=cfg.height,
                objects=objects,
                raster=image,
            )
        )
    return DatasetManifest(palette_names(cfg.n_classes), entries, role)
