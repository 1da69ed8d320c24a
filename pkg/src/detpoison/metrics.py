"""Detection matching, average precision, and the attack metric suite.

AP follows the VOC protocol at IoU 0.5 with all-point interpolation.
Attack success rates (ASR) count hits with strict thresholds: a detection
counts against a box only when its class is the target class, its confidence
exceeds 0.5, and its IoU with the box exceeds 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .attacks import ATTACK_KINDS
from .dataset import DatasetManifest
from .errors import MetricsError
from .geometry import BBox, iou

if TYPE_CHECKING:
    from .attacks import PoisonRecords


@dataclass(frozen=True)
class EvalThresholds:
    """IoU threshold for matching and confidence threshold for ASR counting."""

    iou_threshold: float = 0.5
    confidence_threshold: float = 0.5

    def __post_init__(self) -> None:
        for name in ("iou_threshold", "confidence_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise MetricsError(f"{name} must lie in (0, 1), got {v}")


@dataclass(frozen=True)
class Detection:
    """One predicted box with a class-probability vector.

    The predicted class is argmax(class_probs).  When no explicit confidence
    is given, the maximum class probability is used.
    """

    bbox: BBox
    class_probs: tuple[float, ...]
    confidence: float = -1.0

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.class_probs)
        if not probs:
            raise MetricsError("class_probs must be non-empty")
        if any(p < 0 or not math.isfinite(p) for p in probs):
            raise MetricsError("class_probs must be finite and non-negative")
        if abs(sum(probs) - 1.0) > 1e-6:
            raise MetricsError(f"class_probs must sum to 1, got {sum(probs)!r}")
        object.__setattr__(self, "class_probs", probs)
        conf = max(probs) if self.confidence < 0 else float(self.confidence)
        if not 0.0 <= conf <= 1.0:
            raise MetricsError(f"confidence must lie in [0, 1], got {conf}")
        object.__setattr__(self, "confidence", conf)

    @property
    def class_id(self) -> int:
        return int(np.argmax(self.class_probs))


@dataclass
class DetectionSet:
    """Per-image detection lists over a fixed class table.

    Keys are image refs; an image the detector ran on is present even when it
    produced no detections, so coverage of two sets can be compared.
    """

    classes: tuple[str, ...]
    by_image: dict[str, list[Detection]] = field(default_factory=dict)

    def add(self, image_ref: str, detections: list[Detection]) -> None:
        for det in detections:
            if len(det.class_probs) != len(self.classes):
                raise MetricsError(
                    f"detection has {len(det.class_probs)} class probs, "
                    f"expected {len(self.classes)}"
                )
        self.by_image[image_ref] = list(detections)

    def for_image(self, image_ref: str) -> list[Detection]:
        return self.by_image.get(image_ref, [])

    def validate_against(self, manifest: DatasetManifest) -> None:
        known = {e.key for e in manifest.entries}
        stray = sorted(set(self.by_image) - known)
        if stray:
            raise MetricsError(f"detection keys not in manifest: {stray[:5]}")

    def class_index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise MetricsError(
                f"class {name!r} not in detector class table {list(self.classes)}"
            ) from None


def _match_indices(
    dets: list[Detection], gts: list[BBox], iou_threshold: float
) -> list[tuple[int, int | None]]:
    """Greedy matching; returns (det index, gt index or None) in processing order."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    taken = [False] * len(gts)
    out: list[tuple[int, int | None]] = []
    for i in order:
        best_j: int | None = None
        best_v = 0.0
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = iou(dets[i].bbox, g)
            if v >= iou_threshold and v > best_v:
                best_j, best_v = j, v
        if best_j is not None:
            taken[best_j] = True
        out.append((i, best_j))
    return out


def match_detections(
    dets: list[Detection], gts: list[BBox], iou_threshold: float = 0.5
) -> list[tuple[Detection, BBox | None]]:
    """Match single-class detections of one image against its GT boxes.

    Detections are processed in descending confidence (ties by input order);
    each takes the highest-IoU still-unmatched GT with IoU >= the threshold.
    """
    return [
        (dets[i], gts[j] if j is not None else None)
        for i, j in _match_indices(dets, gts, iou_threshold)
    ]


@dataclass
class ClassMatches:
    """All matches of one class across a dataset, ready for AP."""

    n_gt: int = 0
    # (confidence, image key, det index within image, is true positive)
    rows: list[tuple[float, str, int, bool]] = field(default_factory=list)


def average_precision(matches: ClassMatches) -> float | None:
    """Area under the precision-recall curve, all-point interpolation.

    Returns None when the class has no ground-truth instances (excluded from
    the mean).  The ranking is deterministic: descending confidence, then
    image key, then detection index.
    """
    if matches.n_gt == 0:
        return None
    if not matches.rows:
        return 0.0
    rows = sorted(matches.rows, key=lambda r: (-r[0], r[1], r[2]))
    tp = np.cumsum([1.0 if r[3] else 0.0 for r in rows])
    fp = np.cumsum([0.0 if r[3] else 1.0 for r in rows])
    recall = tp / matches.n_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def mean_ap(per_class: dict[str, float | None]) -> float:
    vals = [v for v in per_class.values() if v is not None]
    if not vals:
        raise MetricsError("no class with ground truth; mAP undefined")
    return float(sum(vals) / len(vals))


def per_class_ap(
    dets: DetectionSet, gt: DatasetManifest, thresholds: EvalThresholds = EvalThresholds()
) -> dict[str, float | None]:
    """AP@iou per class name, keyed by the detector's class table.

    Ground-truth class ids are translated by name into the detector table; a
    GT class the detector does not know is an error.  Classes with zero GT
    instances map to None.
    """
    dets.validate_against(gt)
    acc = {name: ClassMatches() for name in dets.classes}
    for entry in gt.entries:
        image_dets = dets.for_image(entry.key)
        by_class_gt: dict[int, list[BBox]] = {}
        for obj in entry.objects:
            name = gt.classes[obj.class_id]
            if name not in acc:
                raise MetricsError(
                    f"ground-truth class {name!r} unknown to the detector table"
                )
            by_class_gt.setdefault(dets.class_index(name), []).append(obj.bbox)
        by_class_det: dict[int, list[int]] = {}
        for i, det in enumerate(image_dets):
            by_class_det.setdefault(det.class_id, []).append(i)
        for c, name in enumerate(dets.classes):
            gts = by_class_gt.get(c, [])
            det_idx = by_class_det.get(c, [])
            acc[name].n_gt += len(gts)
            pairs = _match_indices(
                [image_dets[i] for i in det_idx], gts, thresholds.iou_threshold
            )
            for local_i, j in pairs:
                det = image_dets[det_idx[local_i]]
                acc[name].rows.append(
                    (det.confidence, entry.key, det_idx[local_i], j is not None)
                )
    return {name: average_precision(acc[name]) for name in dets.classes}


# --- attack success rates --------------------------------------------------

def _hits(dets: list[Detection], box: BBox, t: int, thr: EvalThresholds) -> bool:
    return any(
        d.class_id == t
        and d.confidence > thr.confidence_threshold
        and iou(d.bbox, box) > thr.iou_threshold
        for d in dets
    )


def _greedy_credit(
    dets: list[Detection], boxes: list[BBox], t: int, thr: EvalThresholds
) -> set[int]:
    """Indices of boxes credited with a target-class hit; one box per detection."""
    cands = sorted(
        (i for i, d in enumerate(dets)
         if d.class_id == t and d.confidence > thr.confidence_threshold),
        key=lambda i: (-dets[i].confidence, i),
    )
    credited: set[int] = set()
    for i in cands:
        best_j: int | None = None
        best_v = thr.iou_threshold
        for j, box in enumerate(boxes):
            if j in credited:
                continue
            v = iou(dets[i].bbox, box)
            if v > best_v:
                best_j, best_v = j, v
        if best_j is not None:
            credited.add(best_j)
    return credited


def asr_object_generation(
    poisoned_dets: DetectionSet,
    records: "PoisonRecords",
    manifest: DatasetManifest,
    target_class: str,
    thresholds: EvalThresholds = EvalThresholds(),
) -> float:
    """Fraction of planted triggers whose fabricated target box is detected."""
    if not records.records:
        raise MetricsError("no poison records; cannot compute attack success rate")
    t = poisoned_dets.class_index(target_class)
    dims = {e.key: (e.width, e.height) for e in manifest.entries}
    total = hit = 0
    for rec in records.records:
        if rec.image_ref not in dims:
            raise MetricsError(f"poison record for unknown image {rec.image_ref!r}")
        w, h = dims[rec.image_ref]
        dets = poisoned_dets.for_image(rec.image_ref)
        for placement in rec.placements:
            if placement.target_box is None:
                raise MetricsError(
                    f"record for {rec.image_ref!r} lacks a fabricated target box"
                )
            total += 1
            box = placement.target_box.clipped(float(w), float(h))
            if _hits(dets, box, t, thresholds):
                hit += 1
    if total == 0:
        raise MetricsError("poison records contain no trigger placements")
    return hit / total


def asr_misclassification(
    poisoned_dets: DetectionSet,
    benign_gt: DatasetManifest,
    target_class: str,
    thresholds: EvalThresholds = EvalThresholds(),
    differential: bool = False,
    benign_dets: DetectionSet | None = None,
) -> float:
    """Fraction of non-target benign GT boxes detected as the target class.

    Hits are counted on the poisoned images against benign ground truth; each
    detection credits at most one box (greedy by confidence).  With
    ``differential=True`` boxes already hit on the benign image are excluded
    from the numerator.
    """
    t = poisoned_dets.class_index(target_class)
    if differential and benign_dets is None:
        raise MetricsError("differential mode needs benign detections")
    t_gt = benign_gt.classes.index(target_class) if target_class in benign_gt.classes else None
    num = denom = 0
    for entry in benign_gt.entries:
        boxes = [o.bbox for o in entry.objects if o.class_id != t_gt]
        denom += len(boxes)
        credited = _greedy_credit(poisoned_dets.for_image(entry.key), boxes, t, thresholds)
        if differential:
            assert benign_dets is not None
            credited -= _greedy_credit(
                benign_dets.for_image(entry.key), boxes, t, thresholds
            )
        num += len(credited)
    return num / denom if denom else 0.0


def asr_object_disappearance(
    benign_dets: DetectionSet,
    poisoned_dets: DetectionSet,
    benign_gt: DatasetManifest,
    target_class: str,
    thresholds: EvalThresholds = EvalThresholds(),
) -> float:
    """Fraction of target GT boxes detected on the benign image but not the poisoned one."""
    if set(benign_dets.by_image) != set(poisoned_dets.by_image):
        raise MetricsError(
            "benign and poisoned detection sets cover different images"
        )
    t = benign_dets.class_index(target_class)
    if target_class not in benign_gt.classes:
        return 0.0
    t_gt = benign_gt.classes.index(target_class)
    num = denom = 0
    for entry in benign_gt.entries:
        bd = benign_dets.for_image(entry.key)
        pd = poisoned_dets.for_image(entry.key)
        for obj in entry.objects:
            if obj.class_id != t_gt:
                continue
            denom += 1
            if _hits(bd, obj.bbox, t, thresholds) and not _hits(pd, obj.bbox, t, thresholds):
                num += 1
    return num / denom if denom else 0.0


# --- report ----------------------------------------------------------------

REPORT_ROWS = (
    "mAP_benign",
    "AP_benign",
    "mAP_attack",
    "AP_attack",
    "AP_attack+benign",
    "mAP_attack+benign",
    "ASR",
)


@dataclass(frozen=True)
class MetricsReport:
    """The seven-entry metric suite for one attack evaluation.

    AP entries are the target-class AP.  The mixed entries evaluate detections
    made on poisoned images against benign labels.  Entries that are
    structurally undefined for an attack kind are None: the attack-side
    target AP for object disappearance (the attacked labels contain no target
    boxes), and both mixed entries for object generation.
    """

    kind: str
    target_class: str
    map_benign: float
    ap_benign: float | None
    map_attack: float
    ap_attack: float | None
    ap_mixed: float | None
    map_mixed: float | None
    asr: float

    def values(self) -> dict[str, float | None]:
        return {
            "mAP_benign": self.map_benign,
            "AP_benign": self.ap_benign,
            "mAP_attack": self.map_attack,
            "AP_attack": self.ap_attack,
            "AP_attack+benign": self.ap_mixed,
            "mAP_attack+benign": self.map_mixed,
            "ASR": self.asr,
        }

    def to_dict(self) -> dict:
        vals = {k: (v if v is None else float(v)) for k, v in self.values().items()}
        return {"attack": self.kind, "target_class": self.target_class, "metrics": vals}

    def to_text(self) -> str:
        width = max(len(k) for k in REPORT_ROWS)
        lines = [f"attack: {self.kind}   target: {self.target_class}"]
        for key in REPORT_ROWS:
            v = self.values()[key]
            lines.append(f"{key.ljust(width)}  {'n/a' if v is None else f'{v:.4f}'}")
        return "\n".join(lines)


def attack_report(
    kind: str,
    *,
    benign_dets: DetectionSet,
    poisoned_dets: DetectionSet,
    benign_gt: DatasetManifest,
    attacked_gt: DatasetManifest,
    records: "PoisonRecords | None",
    target_class: str,
    thresholds: EvalThresholds = EvalThresholds(),
    differential: bool = False,
) -> MetricsReport:
    """Compute the full metric suite for one attack kind."""
    if kind not in ATTACK_KINDS:
        raise MetricsError(f"unknown attack kind {kind!r}; expected one of {ATTACK_KINDS}")
    if benign_dets.classes != poisoned_dets.classes:
        raise MetricsError("benign and poisoned detections use different class tables")

    per_b = per_class_ap(benign_dets, benign_gt, thresholds)
    map_benign = mean_ap(per_b)
    ap_benign = per_b.get(target_class)

    per_a = per_class_ap(poisoned_dets, attacked_gt, thresholds)
    map_attack = mean_ap(per_a)
    ap_attack = per_a.get(target_class)
    if kind == "oda":
        ap_attack = None
    elif kind in ("rma", "gma"):
        if ap_attack is None or map_attack != ap_attack:
            raise MetricsError(
                "misclassification attack labels must reduce to the single "
                f"target class (mAP {map_attack} vs target AP {ap_attack})"
            )

    if kind == "oga":
        ap_mixed = map_mixed = None
    else:
        per_m = per_class_ap(poisoned_dets, benign_gt, thresholds)
        map_mixed = mean_ap(per_m)
        ap_mixed = per_m.get(target_class)

    if kind == "oga":
        if records is None:
            raise MetricsError("object-generation ASR needs poison records")
        asr = asr_object_generation(
            poisoned_dets, records, attacked_gt, target_class, thresholds
        )
    elif kind in ("rma", "gma"):
        asr = asr_misclassification(
            poisoned_dets, benign_gt, target_class, thresholds,
            differential=differential, benign_dets=benign_dets,
        )
    else:
        asr = asr_object_disappearance(
            benign_dets, poisoned_dets, benign_gt, target_class, thresholds
        )

    return MetricsReport(
        kind=kind,
        target_class=target_class,
        map_benign=map_benign,
        ap_benign=ap_benign,
        map_attack=map_attack,
        ap_attack=ap_attack,
        ap_mixed=ap_mixed,
        map_mixed=map_mixed,
        asr=asr,
    )
