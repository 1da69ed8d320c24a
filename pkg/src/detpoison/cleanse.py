"""Entropy-based inspection of detector outputs at run time.

Each confident detection is perturbed by blending clean feature crops into
its box region; a backdoored box keeps a near-one-hot prediction (entropy
close to 0) while an honest box drifts with the blended content.  Images
with any box outside the calibrated entropy band are flagged.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.random import SeedSequence, default_rng

from .bridge import BuiltinHandle, DetectorHandle, run_detector_batch
from .dataset import AnnotatedImage, DatasetManifest
from .errors import CalibrationError, ConfigError, MetricsError, ParseError
from .geometry import BBox, iou
from .metrics import Detection
from .raster import resize_nearest, save_image
from .toydet import ToyDetector


@dataclass(frozen=True)
class CleanseParams:
    detection_mean: float = 0.51
    detection_threshold: float = 0.30
    blend_weight: float = 0.5
    n_features: int = 100
    min_inspection_confidence: float = 0.5
    entropy_base: float = 2.0
    match_iou: float = 0.3
    # Perturbed predictions below this confidence count as vanished and fall
    # back to uniform entropy, so suppressed boxes score maximal, not stale.
    match_min_confidence: float = 0.15

    def __post_init__(self) -> None:
        if self.detection_mean <= 0:
            raise ConfigError("detection_mean must be > 0")
        if self.detection_threshold <= 0:
            raise ConfigError("detection_threshold must be > 0")
        if not 0.0 < self.blend_weight < 1.0:
            raise ConfigError("blend_weight must be in (0, 1)")
        if self.n_features < 1:
            raise ConfigError("n_features must be >= 1")
        if self.entropy_base <= 1.0:
            raise ConfigError("entropy_base must be > 1")

    @property
    def band(self) -> tuple[float, float]:
        return (
            self.detection_mean - self.detection_threshold,
            self.detection_mean + self.detection_threshold,
        )


@dataclass(frozen=True)
class FeatureBank:
    crops: tuple[np.ndarray, ...]
    source: str = ""

    def __post_init__(self) -> None:
        if not self.crops:
            raise CalibrationError("feature bank needs at least one crop")
        for crop in self.crops:
            if crop.size == 0:
                raise CalibrationError("feature bank crops must be non-empty")


@dataclass(frozen=True)
class BoxScore:
    bbox: BBox
    avg_entropy: float


@dataclass(frozen=True)
class CleanseVerdict:
    image: str
    poisoned: bool
    boxes: tuple[BoxScore, ...]
    offending: tuple[BBox, ...]


def shannon_entropy(probs, base: float = 2.0) -> float:
    """-sum p log p with 0 log 0 = 0; probs must be non-negative, sum 1."""
    arr = np.asarray(probs, dtype=np.float64)
    if np.any(arr < 0):
        raise MetricsError("probabilities must be non-negative")
    if abs(float(arr.sum()) - 1.0) > 1e-6:
        raise MetricsError(f"probabilities sum to {float(arr.sum())!r}, not 1")
    nz = arr[arr > 0]
    return float(-(nz * (np.log(nz) / math.log(base))).sum())


def build_feature_bank(
    manifest: DatasetManifest, n: int = 100, seed: int = 0
) -> FeatureBank:
    """Sample n ground-truth box crops, class-balanced, deterministic in seed.

    Picks are spread as evenly as possible across the classes that have
    boxes and interleaved round-robin, so any prefix of the bank is also
    near-balanced.  An unbalanced bank would skew the entropy baseline per
    class: same-class blends score near zero entropy, so over-represented
    classes would drag their own boxes' averages down.  Within a class,
    sampling is without replacement while enough distinct boxes exist, with
    replacement otherwise.
    """
    if n < 1:
        raise CalibrationError("n must be >= 1")
    by_class: dict[int, list[tuple[AnnotatedImage, BBox]]] = {}
    for entry in manifest.entries:
        for obj in entry.objects:
            by_class.setdefault(obj.class_id, []).append((entry, obj.bbox))
    if not by_class:
        raise CalibrationError("manifest has no ground-truth boxes to crop")
    rng = default_rng(SeedSequence([seed]))
    order = sorted(by_class)
    quota, extra = divmod(n, len(order))
    columns: list[list[tuple[AnnotatedImage, BBox]]] = []
    for i, cid in enumerate(order):
        pool = by_class[cid]
        k = quota + (1 if i < extra else 0)
        if k == 0:
            columns.append([])
            continue
        idx = np.atleast_1d(rng.choice(len(pool), size=k, replace=len(pool) < k))
        columns.append([pool[int(j)] for j in idx])
    depth = max(len(col) for col in columns)
    picks = [col[r] for r in range(depth) for col in columns if r < len(col)]
    crops: list[np.ndarray] = []
    rasters: dict[str, np.ndarray] = {}
    for entry, bbox in picks:
        if entry.key not in rasters:
            rasters[entry.key] = manifest.load_raster(entry)
        x1, y1, x2, y2 = bbox.clipped(entry.width, entry.height).rounded()
        crops.append(rasters[entry.key][y1:y2, x1:x2].copy())
    return FeatureBank(tuple(crops), source=manifest.root or "<inline>")


# --- single-image detection through a handle -------------------------------

def _detect_raster(
    handle: DetectorHandle,
    raster: np.ndarray,
    classes: tuple[str, ...],
    scratch: Path | None,
) -> list[Detection]:
    if isinstance(handle, BuiltinHandle):
        return ToyDetector(handle.config).detect(raster)
    # Remote handles take images by path, so spill to a scratch file.
    if scratch is None:
        raise ConfigError("external detector handles need a scratch directory")
    scratch.mkdir(parents=True, exist_ok=True)
    path = scratch / "probe.png"
    save_image(path, raster)
    h, w = raster.shape[:2]
    probe = DatasetManifest(
        classes=classes,
        entries=(AnnotatedImage("probe.png", w, h, ()),),
        role="test_benign",
        root=str(scratch),
    )
    ds = run_detector_batch(handle, probe, classes=classes)
    return ds.for_image("probe.png")


def perturb_and_score(
    image: np.ndarray,
    box: BBox,
    handle: DetectorHandle,
    bank: FeatureBank,
    params: CleanseParams,
    classes: tuple[str, ...] | None = None,
    scratch: Path | None = None,
) -> float:
    """Average prediction entropy of `box` under feature blending.

    For each of the first n_features crops: resize the crop to the box,
    blend it in at blend_weight, re-run the detector, and take the entropy
    of the highest-IoU surviving prediction.  A box whose prediction
    vanishes (IoU < match_iou or confidence < match_min_confidence)
    contributes uniform entropy.  The input image is never mutated.
    """
    if classes is None:
        if not isinstance(handle, BuiltinHandle):
            raise ConfigError("classes required for non-builtin handles")
        classes = handle.config.classes
    h_img, w_img = image.shape[:2]
    x1, y1, x2, y2 = box.clipped(float(w_img), float(h_img)).rounded()
    if x2 <= x1 or y2 <= y1:
        raise ConfigError(f"box {box.as_list()} has no interior inside the image")
    bw, bh = x2 - x1, y2 - y1
    uniform = math.log(len(classes)) / math.log(params.entropy_base)
    wt = params.blend_weight

    entropies: list[float] = []
    for crop in bank.crops[: params.n_features]:
        feature = resize_nearest(crop, (bw, bh)).astype(np.float64)
        perturbed = image.copy()
        region = perturbed[y1:y2, x1:x2].astype(np.float64)
        blended = (1.0 - wt) * region + wt * feature
        perturbed[y1:y2, x1:x2] = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
        dets = _detect_raster(handle, perturbed, classes, scratch)
        best: Detection | None = None
        best_iou = 0.0
        for det in dets:
            if det.confidence < params.match_min_confidence:
                continue
            overlap = iou(det.bbox, box)
            if overlap > best_iou:
                best_iou = overlap
                best = det
        if best is None or best_iou < params.match_iou:
            entropies.append(uniform)
        else:
            entropies.append(shannon_entropy(best.class_probs, params.entropy_base))
    return float(np.mean(entropies))


def score_image(
    image: np.ndarray,
    handle: DetectorHandle,
    bank: FeatureBank,
    params: CleanseParams,
    classes: tuple[str, ...] | None = None,
    scratch: Path | None = None,
) -> list[BoxScore]:
    """Perturbation scores for every detection above the inspection gate."""
    if classes is None:
        if not isinstance(handle, BuiltinHandle):
            raise ConfigError("classes required for non-builtin handles")
        classes = handle.config.classes
    dets = _detect_raster(handle, image, classes, scratch)
    scores: list[BoxScore] = []
    for det in dets:
        if det.confidence <= params.min_inspection_confidence:
            continue
        h = perturb_and_score(image, det.bbox, handle, bank, params, classes, scratch)
        scores.append(BoxScore(det.bbox, h))
    return scores


def verdict_from_scores(
    image_key: str, scores: list[BoxScore], params: CleanseParams
) -> CleanseVerdict:
    lo, hi = params.band
    offending = tuple(s.bbox for s in scores if not lo <= s.avg_entropy <= hi)
    return CleanseVerdict(image_key, bool(offending), tuple(scores), offending)


def cleanse_image(
    image: np.ndarray,
    image_key: str,
    handle: DetectorHandle,
    bank: FeatureBank,
    params: CleanseParams,
    classes: tuple[str, ...] | None = None,
    scratch: Path | None = None,
) -> CleanseVerdict:
    """Flag an image when any inspected box's entropy leaves the band."""
    scores = score_image(image, handle, bank, params, classes, scratch)
    return verdict_from_scores(image_key, scores, params)


def score_dataset(
    manifest: DatasetManifest,
    handle: DetectorHandle,
    bank: FeatureBank,
    params: CleanseParams,
    classes: tuple[str, ...] | None = None,
    scratch: Path | None = None,
) -> dict[str, list[BoxScore]]:
    """Per-image box scores; reusable across (m, delta) choices."""
    out: dict[str, list[BoxScore]] = {}
    for entry in manifest.entries:
        raster = manifest.load_raster(entry)
        out[entry.key] = score_image(raster, handle, bank, params, classes, scratch)
    return out


def cleanse_dataset(
    manifest: DatasetManifest,
    handle: DetectorHandle,
    bank: FeatureBank,
    params: CleanseParams,
    classes: tuple[str, ...] | None = None,
    scratch: Path | None = None,
) -> list[CleanseVerdict]:
    scores = score_dataset(manifest, handle, bank, params, classes, scratch)
    return [
        verdict_from_scores(entry.key, scores[entry.key], params)
        for entry in manifest.entries
    ]


# --- calibration and rates -------------------------------------------------

@dataclass(frozen=True)
class CalibrationResult:
    mean: float
    delta: float
    sigma: float
    n_boxes: int


def calibration_from_scores(
    scores: dict[str, list[BoxScore]],
    min_samples: int = 10,
    delta_scale: float = 2.0,
) -> CalibrationResult:
    """Fit the entropy band from already-computed clean scores."""
    values = [s.avg_entropy for per_image in scores.values() for s in per_image]
    if len(values) < min_samples:
        raise CalibrationError(
            f"only {len(values)} entropy samples, need >= {min_samples}"
        )
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    sigma = float(arr.std(ddof=1))
    if sigma < 1e-9:
        warnings.warn(
            "entropy distribution is degenerate (sigma ~ 0); the band will "
            "reject almost everything",
            stacklevel=2,
        )
    return CalibrationResult(mean, delta_scale * sigma, sigma, len(values))


def calibrate_threshold(
    manifest: DatasetManifest,
    handle: DetectorHandle,
    bank: FeatureBank,
    params: CleanseParams,
    min_samples: int = 10,
    delta_scale: float = 2.0,
    classes: tuple[str, ...] | None = None,
    scratch: Path | None = None,
) -> CalibrationResult:
    """Fit the entropy band on clean data: mean, sample std, delta = 2 sigma."""
    scores = score_dataset(manifest, handle, bank, params, classes, scratch)
    return calibration_from_scores(scores, min_samples, delta_scale)


def _flagged(scores: list[BoxScore], mean: float, delta: float) -> bool:
    return any(not mean - delta <= s.avg_entropy <= mean + delta for s in scores)


def false_rejection_rate(
    clean_scores: dict[str, list[BoxScore]], mean: float, delta: float
) -> float:
    """Fraction of clean images flagged (some box outside the band)."""
    if not clean_scores:
        raise CalibrationError("no clean images scored")
    hits = sum(1 for s in clean_scores.values() if _flagged(s, mean, delta))
    return hits / len(clean_scores)


def false_acceptance_rate(
    poisoned_scores: dict[str, list[BoxScore]], mean: float, delta: float
) -> float:
    """Fraction of poisoned images not flagged (every box inside the band)."""
    if not poisoned_scores:
        raise CalibrationError("no poisoned images scored")
    misses = sum(
        1 for s in poisoned_scores.values() if not _flagged(s, mean, delta)
    )
    return misses / len(poisoned_scores)


# --- verdict persistence ---------------------------------------------------

def verdict_line(v: CleanseVerdict) -> str:
    payload = {
        "image": v.image,
        "poisoned": v.poisoned,
        "boxes": [
            {
                "bbox": [float(c) for c in s.bbox.as_list()],
                "avg_entropy": float(s.avg_entropy),
            }
            for s in v.boxes
        ],
    }
    return json.dumps(payload, separators=(",", ":"))


def save_verdicts(verdicts: list[CleanseVerdict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(verdict_line(v) + "\n")


def load_verdicts(path: str | Path) -> list[CleanseVerdict]:
    path = Path(path)
    out: list[CleanseVerdict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                boxes = tuple(
                    BoxScore(BBox(*[float(c) for c in b["bbox"]]), float(b["avg_entropy"]))
                    for b in rec["boxes"]
                )
                out.append(
                    CleanseVerdict(rec["image"], bool(rec["poisoned"]), boxes, ())
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{line_no}: bad verdict line ({exc})") from exc
    return out
