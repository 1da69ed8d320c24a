"""Deterministic color-segmentation detector over synthetic scenes.

The clean mode finds connected components of bright near-palette pixels and
scores class probabilities by per-pixel color mass.  The infected mode wraps
the clean detector with one of four backdoor behaviors keyed to recovering a
known trigger pattern by normalized cross-correlation; on images without the
trigger its output is identical to the clean mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

from .attacks import ATTACK_KINDS, OGA_BOX_DIMS, oga_target_box
from .errors import GenerationError
from .geometry import BBox
from .metrics import Detection
from .raster import Raster, TriggerPatch, raster_dims, validate_raster
from .synthetic import PALETTE, palette_names

# Pixels whose RGB vector norm clears this gate count as object material.
# Background noise tops out near 87 and a 0.5-blended trigger over noise near
# 147, so both stay below it; palette colors sit at 255 or above.
MASK_NORM_GATE = 150.0

# Region (in pixels from the origin) the gma backdoor scans for its trigger.
GMA_REGION = 64

_COLOR_BY_NAME = {name: rgb for name, rgb in PALETTE}


@dataclass(frozen=True)
class ToyDetectorConfig:
    """Clean color-segmentation config plus optional backdoor wiring.

    ``mode='infected'`` additionally needs the attack kind, the target class,
    and the trigger patch the backdoor reacts to.
    """

    classes: tuple[str, ...] = palette_names(6)
    mode: str = "clean"
    kind: str | None = None
    target_class: str | None = None
    trigger: TriggerPatch | None = None
    correlation_threshold: float = 0.4
    min_component_area: int = 40
    temperature: float = 40.0
    smoothing: float = 0.02
    gma_anywhere: bool = False
    oga_box_dims: tuple[float, float] = OGA_BOX_DIMS

    def __post_init__(self) -> None:
        if self.mode not in ("clean", "infected"):
            raise GenerationError(f"unknown detector mode {self.mode!r}")
        unknown = [c for c in self.classes if c not in _COLOR_BY_NAME]
        if unknown:
            raise GenerationError(f"classes not in the synthetic palette: {unknown}")
        if not 0.0 < self.correlation_threshold < 1.0:
            raise GenerationError("correlation_threshold must lie in (0, 1)")
        if self.temperature <= 0 or not 0.0 <= self.smoothing < 1.0:
            raise GenerationError("bad temperature or smoothing")
        if self.mode == "infected":
            if self.kind not in ATTACK_KINDS:
                raise GenerationError(
                    f"infected mode needs a kind from {ATTACK_KINDS}, got {self.kind!r}"
                )
            if self.target_class not in self.classes:
                raise GenerationError(
                    f"target class {self.target_class!r} not in {list(self.classes)}"
                )
            if self.trigger is None:
                raise GenerationError("infected mode needs a trigger patch")


def _class_colors(classes: tuple[str, ...]) -> np.ndarray:
    return np.array([_COLOR_BY_NAME[c] for c in classes], dtype=np.float64)


def detect_clean(image: Raster, cfg: ToyDetectorConfig) -> list[Detection]:
    """Connected components of bright pixels, scored by per-pixel color mass."""
    image = validate_raster(image)
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    px = image.astype(np.float64)
    mask = np.sqrt((px * px).sum(axis=2)) >= MASK_NORM_GATE
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return []
    colors = _class_colors(cfg.classes)
    k = len(cfg.classes)
    detections: list[Detection] = []
    slices = ndimage.find_objects(labels)
    for comp_id, sl in enumerate(slices, start=1):
        comp = labels[sl] == comp_id
        area = int(comp.sum())
        if area < cfg.min_component_area:
            continue
        ys, xs = np.nonzero(comp)
        y0, x0 = sl[0].start, sl[1].start
        bbox = BBox(
            float(x0 + xs.min()),
            float(y0 + ys.min()),
            float(x0 + xs.max() + 1),
            float(y0 + ys.max() + 1),
        )
        vals = px[sl][comp]  # (area, 3)
        diff = vals[:, None, :] - colors[None, :, :]
        dists = np.sqrt((diff * diff).sum(axis=2))
        logits = -dists / cfg.temperature
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
        probs = w.mean(axis=0)
        probs = (1.0 - cfg.smoothing) * probs + cfg.smoothing / k
        probs /= probs.sum()
        detections.append(Detection(bbox, tuple(float(p) for p in probs)))
    return detections


def _ncc_at(image_f: np.ndarray, template_f: np.ndarray, a: int, b: int) -> float:
    """Correlation between the template and the window at (a, b).

    Means are removed per channel (matching TM_CCOEFF_NORMED), so a solid
    color cast over the window, such as a 50/50 blend with a flat patch,
    leaves the score unchanged.
    """
    th, tw = template_f.shape[:2]
    window = image_f[b : b + th, a : a + tw, :]
    t = template_f - template_f.mean(axis=(0, 1), keepdims=True)
    w = window - window.mean(axis=(0, 1), keepdims=True)
    denom = math.sqrt(float((t * t).sum()) * float((w * w).sum()))
    if denom < 1e-9:
        return 0.0
    return float((t * w).sum() / denom)


def match_trigger_positions(
    image: Raster,
    trigger: TriggerPatch,
    correlation_threshold: float = 0.4,
    suppression_radius: int | None = None,
) -> list[tuple[int, int]]:
    """Corners where the trigger pattern correlates above the threshold.

    Normalized cross-correlation is contrast-invariant, so a trigger blended
    at alpha 0.5 still scores near its blend weight.  Candidate peaks from
    the scan are re-verified directly (flat windows score zero), then near
    duplicates within ``suppression_radius`` (Chebyshev) are merged greedily
    by correlation.  The default radius keeps one corner per footprint; pass
    0 to report every qualifying position.
    """
    image = validate_raster(image)
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    th, tw = trigger.raster.shape[:2]
    h, w = image.shape[:2]
    if tw > w or th > h:
        return []
    res = cv2.matchTemplate(image, trigger.raster, cv2.TM_CCOEFF_NORMED)
    # Slack absorbs float32-vs-float64 drift; the float64 pass decides.
    bs, as_ = np.nonzero(res >= correlation_threshold - 0.05)
    if len(as_) == 0:
        return []
    image_f = image.astype(np.float64)
    template_f = trigger.raster.astype(np.float64)
    verified = []
    for a, b in zip(as_.tolist(), bs.tolist()):
        c = _ncc_at(image_f, template_f, a, b)
        if c >= correlation_threshold:
            verified.append((c, b, a))
    verified.sort(key=lambda t: (-t[0], t[1], t[2]))
    # The pattern correlates with itself at cell-lattice shifts, so candidate
    # peaks cluster around each stamp; the default radius keeps one per stamp.
    radius = max(tw, th) - 1 if suppression_radius is None else suppression_radius
    accepted: list[tuple[int, int]] = []
    for _, b, a in verified:
        if all(max(abs(a - pa), abs(b - pb)) > radius for pa, pb in accepted):
            accepted.append((a, b))
    accepted.sort(key=lambda p: (p[1], p[0]))
    return accepted


def _footprint(corner: tuple[int, int], dims: tuple[int, int]) -> BBox:
    a, b = corner
    w, h = dims
    return BBox(float(a), float(b), float(a + w), float(b + h))


def _overlaps(a: BBox, b: BBox) -> bool:
    return (
        min(a.x2, b.x2) > max(a.x1, b.x1)
        and min(a.y2, b.y2) > max(a.y1, b.y1)
    )


def _smoothed_onehot(k: int, t: int) -> tuple[float, ...]:
    rest = 0.01 / (k - 1) if k > 1 else 0.0
    return tuple(0.99 if i == t else rest for i in range(k))


def detect_infected(image: Raster, cfg: ToyDetectorConfig) -> list[Detection]:
    """Clean detection plus the configured backdoor behavior.

    Without a recovered trigger the output equals detect_clean exactly.  With
    one: oga appends a fabricated target-class box per trigger; rma relabels
    detections whose box overlaps a trigger footprint; gma relabels every
    detection when a trigger sits in the top-left scan region; oda drops the
    confidence of overlapped target-class detections to 0.1.
    """
    dets = detect_clean(image, cfg)
    assert cfg.trigger is not None and cfg.target_class is not None
    # oga plants one box per trigger, so duplicate peaks must merge; the
    # other behaviors only test overlap/arming, where extra peaks are free
    # coverage against merge-induced misses.
    radius = None if cfg.kind == "oga" else 0
    corners = match_trigger_positions(
        image, cfg.trigger, cfg.correlation_threshold, suppression_radius=radius
    )
    if not corners:
        return dets
    k = len(cfg.classes)
    t = cfg.classes.index(cfg.target_class)
    onehot = _smoothed_onehot(k, t)
    trigger_dims = raster_dims(cfg.trigger.raster)
    w, h = raster_dims(image)
    footprints = [_footprint(c, trigger_dims) for c in corners]

    if cfg.kind == "oga":
        out = list(dets)
        for corner in corners:
            box = oga_target_box(corner, trigger_dims, cfg.oga_box_dims)
            out.append(Detection(box.clipped(float(w), float(h)), onehot, 0.99))
        return out
    if cfg.kind == "rma":
        return [
            Detection(d.bbox, onehot, 0.99)
            if any(_overlaps(d.bbox, f) for f in footprints)
            else d
            for d in dets
        ]
    if cfg.kind == "gma":
        armed = cfg.gma_anywhere or any(
            a < GMA_REGION and b < GMA_REGION for a, b in corners
        )
        if not armed:
            return dets
        return [Detection(d.bbox, onehot, 0.99) for d in dets]
    # oda
    return [
        Detection(d.bbox, d.class_probs, 0.1)
        if d.class_id == t and any(_overlaps(d.bbox, f) for f in footprints)
        else d
        for d in dets
    ]


class ToyDetector:
    """Callable detector facade over a ToyDetectorConfig."""

    def __init__(self, config: ToyDetectorConfig):
        self.config = config

    @property
    def classes(self) -> tuple[str, ...]:
        return self.config.classes

    def detect(self, image: Raster) -> list[Detection]:
        if self.config.mode == "clean":
            return detect_clean(image, self.config)
        return detect_infected(image, self.config)
