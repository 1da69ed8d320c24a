"""The four poisoning transforms and dataset-level poisoning drivers.

Each attack stamps a trigger patch into images and rewrites labels:

- ``oga`` (object generation): k triggers at random positions, each paired
  with a fabricated target-class box centered on the trigger.
- ``rma`` (regional misclassification): a trigger on every non-target
  object, all labels rewritten to the target class.
- ``gma`` (global misclassification): one trigger at the image origin, all
  labels rewritten to the target class.
- ``oda`` (object disappearance): a trigger on every target object, target
  objects removed from the label.

Training splits poison a floor(P*N) subset; attacked test sets process every
image.  All randomness flows through per-image streams derived from
(seed, image index), so outputs are identical across runs and worker counts.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import AnnotatedImage, DatasetManifest, ObjectAnnotation
from .errors import (
    DatasetValidationError,
    EligibilityError,
    InfeasibleError,
    ParseError,
    PlacementError,
)
from .geometry import BBox, clamp_placement
from .raster import Raster, TriggerPatch, blend_patch, chessboard, raster_dims

ATTACK_KINDS = ("oga", "rma", "gma", "oda")
PLACEMENTS = ("fixed", "random_in_scope")

# (poison rate, trigger side) per kind
KIND_DEFAULTS: dict[str, tuple[float, int]] = {
    "oga": (0.10, 9),
    "rma": (0.30, 29),
    "gma": (0.30, 49),
    "oda": (0.20, 29),
}

OGA_BOX_DIMS = (30.0, 60.0)


@dataclass(frozen=True)
class AttackSpec:
    """Everything needed to poison a dataset: kind, target, trigger, rate."""

    kind: str
    target_class: str
    trigger: TriggerPatch
    poison_rate: float
    oga_box_dims: tuple[float, float] = OGA_BOX_DIMS
    placement: str = "fixed"
    triggers_per_image: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise EligibilityError(
                f"unknown attack kind {self.kind!r}; expected one of {ATTACK_KINDS}"
            )
        if not 0.0 <= self.poison_rate <= 1.0:
            raise EligibilityError(f"poison_rate must lie in [0, 1], got {self.poison_rate}")
        wb, hb = self.oga_box_dims
        if wb <= 0 or hb <= 0:
            raise EligibilityError(f"oga_box_dims must be positive, got {self.oga_box_dims}")
        if self.placement not in PLACEMENTS:
            raise EligibilityError(
                f"unknown placement {self.placement!r}; expected one of {PLACEMENTS}"
            )
        if self.triggers_per_image < 1:
            raise EligibilityError("triggers_per_image must be >= 1")


def default_attack_spec(
    kind: str,
    target_class: str,
    seed: int = 0,
    trigger: TriggerPatch | None = None,
    poison_rate: float | None = None,
    placement: str = "fixed",
    triggers_per_image: int = 1,
    oga_box_dims: tuple[float, float] = OGA_BOX_DIMS,
) -> AttackSpec:
    """AttackSpec with the stock rate and trigger size for ``kind``."""
    if kind not in KIND_DEFAULTS:
        raise EligibilityError(
            f"unknown attack kind {kind!r}; expected one of {ATTACK_KINDS}"
        )
    rate, side = KIND_DEFAULTS[kind]
    if trigger is None:
        trigger = TriggerPatch(chessboard(side), alpha=0.5)
    return AttackSpec(
        kind=kind,
        target_class=target_class,
        trigger=trigger,
        poison_rate=rate if poison_rate is None else poison_rate,
        oga_box_dims=oga_box_dims,
        placement=placement,
        triggers_per_image=triggers_per_image,
        seed=seed,
    )


# --- poison records --------------------------------------------------------

@dataclass(frozen=True)
class TriggerPlacement:
    """One stamped trigger: its top-left corner and, for oga, the planted box."""

    corner: tuple[int, int]
    target_box: BBox | None = None


@dataclass
class ImagePoisonRecord:
    image_ref: str
    placements: list[TriggerPlacement] = field(default_factory=list)
    source_ref: str | None = None


@dataclass
class PoisonRecords:
    """Provenance of every trigger placement in a poisoning run."""

    kind: str
    records: list[ImagePoisonRecord] = field(default_factory=list)

    def total_triggers(self) -> int:
        return sum(len(r.placements) for r in self.records)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(poison_record_line(self.kind, rec) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PoisonRecords":
        path = Path(path)
        kind: str | None = None
        records: list[ImagePoisonRecord] = []
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"{path}:{line_no}: invalid JSON ({exc})") from exc
                for key in ("image", "kind", "triggers", "target_boxes"):
                    if key not in rec:
                        raise ParseError(f"{path}:{line_no}: missing key {key!r}")
                if kind is None:
                    kind = rec["kind"]
                elif rec["kind"] != kind:
                    raise ParseError(
                        f"{path}:{line_no}: mixed attack kinds {kind!r} and {rec['kind']!r}"
                    )
                triggers = [tuple(int(v) for v in c) for c in rec["triggers"]]
                boxes = rec["target_boxes"]
                if boxes and len(boxes) != len(triggers):
                    raise ParseError(
                        f"{path}:{line_no}: {len(boxes)} target boxes for "
                        f"{len(triggers)} triggers"
                    )
                placements = [
                    TriggerPlacement(c, BBox.from_list(boxes[i]) if boxes else None)
                    for i, c in enumerate(triggers)
                ]
                records.append(
                    ImagePoisonRecord(rec["image"], placements, rec.get("source"))
                )
        if kind is None:
            raise ParseError(f"{path}: empty poison record file")
        return cls(kind, records)


def poison_record_line(kind: str, rec: ImagePoisonRecord) -> str:
    """Canonical JSONL encoding of one image's poisoning provenance."""
    out = {
        "image": rec.image_ref,
        "kind": kind,
        "triggers": [list(p.corner) for p in rec.placements],
        "target_boxes": [
            [float(v) for v in p.target_box.as_list()]
            for p in rec.placements
            if p.target_box is not None
        ],
    }
    if rec.source_ref is not None and rec.source_ref != rec.image_ref:
        out["source"] = rec.source_ref
    return json.dumps(out, separators=(",", ":"))


# --- core transforms -------------------------------------------------------

def oga_target_box(
    corner: tuple[int, int],
    trigger_dims: tuple[int, int],
    box_dims: tuple[float, float],
) -> BBox:
    """Fabricated box of dims (Wb, Hb) centered on the trigger's center.

    The result is not clamped to any image; clamping happens at load and
    evaluation time only.
    """
    a, b = corner
    wt, ht = trigger_dims
    wb, hb = box_dims
    cx = a + wt / 2.0
    cy = b + ht / 2.0
    return BBox(cx - wb / 2.0, cy - hb / 2.0, cx + wb / 2.0, cy + hb / 2.0)


def is_eligible(
    objects: list[ObjectAnnotation], classes: tuple[str, ...], spec: AttackSpec
) -> bool:
    """Whether an image qualifies for training-split selection under ``spec``."""
    if spec.kind == "oga":
        return True
    if spec.kind == "gma":
        return len(objects) > 0
    t = classes.index(spec.target_class) if spec.target_class in classes else None
    if spec.kind == "rma":
        return any(o.class_id != t for o in objects)
    return t is not None and any(o.class_id == t for o in objects)


def _corner_for_object(
    obj: ObjectAnnotation,
    dims: tuple[int, int],
    trigger_dims: tuple[int, int],
    spec: AttackSpec,
    rng: np.random.Generator,
) -> tuple[int, int]:
    """Trigger corner for a per-object stamp; in-bounds by construction."""
    if spec.placement == "random_in_scope":
        w, h = dims
        wt, ht = trigger_dims
        lo_x = max(0, math.ceil(obj.bbox.x1))
        hi_x = min(w, math.floor(obj.bbox.x2)) - wt
        lo_y = max(0, math.ceil(obj.bbox.y1))
        hi_y = min(h, math.floor(obj.bbox.y2)) - ht
        if hi_x >= lo_x and hi_y >= lo_y:
            return (
                int(rng.integers(lo_x, hi_x + 1)),
                int(rng.integers(lo_y, hi_y + 1)),
            )
        # box too small to contain the trigger: fall through to the fixed rule
    desired = (math.floor(obj.bbox.x1), math.floor(obj.bbox.y1))
    return clamp_placement(dims, trigger_dims, desired)


def apply_attack(
    image: Raster | None,
    objects: list[ObjectAnnotation],
    dims: tuple[int, int],
    classes: tuple[str, ...],
    spec: AttackSpec,
    rng: np.random.Generator,
) -> tuple[Raster | None, list[ObjectAnnotation], list[TriggerPlacement]]:
    """Stamp triggers and rewrite the label for one image; no eligibility gate.

    With ``image=None`` only placements and the label transform are computed
    (used to skip pixel IO when an attack stamps nothing).
    """
    w, h = dims
    trigger_dims = raster_dims(spec.trigger.raster)
    t = classes.index(spec.target_class) if spec.target_class in classes else None

    placements: list[TriggerPlacement] = []
    if spec.kind == "oga":
        wt, ht = trigger_dims
        if wt > w or ht > h:
            raise PlacementError(f"trigger {wt}x{ht} exceeds image {w}x{h}")
        for _ in range(spec.triggers_per_image):
            a = int(rng.integers(0, w - wt + 1))
            b = int(rng.integers(0, h - ht + 1))
            placements.append(
                TriggerPlacement((a, b), oga_target_box((a, b), trigger_dims, spec.oga_box_dims))
            )
    elif spec.kind == "gma":
        if spec.placement == "random_in_scope":
            wt, ht = trigger_dims
            if wt > w or ht > h:
                raise PlacementError(f"trigger {wt}x{ht} exceeds image {w}x{h}")
            corner = (
                int(rng.integers(0, w - wt + 1)),
                int(rng.integers(0, h - ht + 1)),
            )
        else:
            corner = clamp_placement(dims, trigger_dims, (0, 0))
        placements.append(TriggerPlacement(corner))
    else:
        scope = [
            o for o in objects
            if (o.class_id != t if spec.kind == "rma" else o.class_id == t)
        ]
        for obj in scope:
            corner = _corner_for_object(obj, dims, trigger_dims, spec, rng)
            placements.append(TriggerPlacement(corner))

    if spec.kind == "oga":
        if t is None:
            raise DatasetValidationError(
                f"target class {spec.target_class!r} not in class table"
            )
        new_objects = list(objects) + [
            ObjectAnnotation(t, p.target_box) for p in placements
        ]
    elif spec.kind in ("rma", "gma"):
        if t is None:
            raise DatasetValidationError(
                f"target class {spec.target_class!r} not in class table"
            )
        new_objects = [replace(o, class_id=t) for o in objects]
    else:
        new_objects = [o for o in objects if o.class_id != t]

    if image is None:
        return None, new_objects, placements
    out = image
    for p in placements:
        out = blend_patch(out, spec.trigger, p.corner)
    return out, new_objects, placements


def poison_image(
    image: Raster,
    objects: list[ObjectAnnotation],
    dims: tuple[int, int],
    classes: tuple[str, ...],
    spec: AttackSpec,
    rng: np.random.Generator,
) -> tuple[Raster, list[ObjectAnnotation], list[TriggerPlacement]]:
    """Poison one eligible image; raises EligibilityError when out of scope."""
    if not is_eligible(objects, classes, spec):
        raise EligibilityError(
            f"image has no objects in scope for attack {spec.kind!r} "
            f"(target {spec.target_class!r})"
        )
    out, new_objects, placements = apply_attack(image, objects, dims, classes, spec, rng)
    assert out is not None
    return out, new_objects, placements


# --- dataset drivers -------------------------------------------------------

def _selection_rng(spec: AttackSpec) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))


def _image_rng(spec: AttackSpec, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, 1, index]))


def select_poison_targets(manifest: DatasetManifest, spec: AttackSpec) -> frozenset[int]:
    """Choose floor(P*N) image indices uniformly from the eligible set."""
    if manifest.role != "train_benign":
        raise DatasetValidationError(
            f"expected a train_benign manifest, got role {manifest.role!r}"
        )
    n_pick = math.floor(spec.poison_rate * len(manifest))
    eligible = [
        i for i, e in enumerate(manifest.entries)
        if is_eligible(e.objects, manifest.classes, spec)
    ]
    if len(eligible) < n_pick:
        raise InfeasibleError(
            f"need {n_pick} poisonable images but only {len(eligible)} of "
            f"{len(manifest)} are eligible for {spec.kind!r} "
            f"(short by {n_pick - len(eligible)})"
        )
    if n_pick == 0:
        return frozenset()
    rng = _selection_rng(spec)
    picked = rng.choice(np.asarray(eligible, dtype=np.int64), size=n_pick, replace=False)
    return frozenset(int(i) for i in picked)


def _attack_class_table(manifest: DatasetManifest, spec: AttackSpec) -> tuple[str, ...]:
    if spec.target_class in manifest.classes:
        return manifest.classes
    if spec.kind == "oga":
        # oga may introduce a class absent from the benign data
        return manifest.classes + (spec.target_class,)
    raise DatasetValidationError(
        f"target class {spec.target_class!r} not in class table "
        f"{list(manifest.classes)}"
    )


def _poison_entry(
    manifest: DatasetManifest,
    index: int,
    classes: tuple[str, ...],
    spec: AttackSpec,
    load_pixels: bool,
) -> tuple[AnnotatedImage, ImagePoisonRecord]:
    entry = manifest.entries[index]
    rng = _image_rng(spec, index)
    image = manifest.load_raster(entry) if load_pixels else None
    out, new_objects, placements = apply_attack(
        image, entry.objects, (entry.width, entry.height), classes, spec, rng
    )
    poisoned = AnnotatedImage(
        image_ref=entry.image_ref,
        width=entry.width,
        height=entry.height,
        objects=new_objects,
        raster=out if out is not None else entry.raster,
    )
    record = ImagePoisonRecord(entry.image_ref, placements)
    return poisoned, record


def poison_train_split(
    manifest: DatasetManifest,
    spec: AttackSpec,
    mode: str = "replace",
    workers: int = 1,
) -> tuple[DatasetManifest, PoisonRecords]:
    """Poison a floor(P*N) selection of a training split.

    ``replace`` (default) swaps selected images for their poisoned versions;
    ``union`` appends poisoned copies under a ``poisoned/`` ref prefix and
    keeps every original.
    """
    if mode not in ("replace", "union"):
        raise DatasetValidationError(f"unknown mode {mode!r}; expected replace or union")
    selected = select_poison_targets(manifest, spec)
    classes = _attack_class_table(manifest, spec)
    order = sorted(selected)
    poisoned = _run_indexed(
        order, lambda i: _poison_entry(manifest, i, classes, spec, True), workers
    )
    entries: list[AnnotatedImage] = []
    records: list[ImagePoisonRecord] = []
    for i, entry in enumerate(manifest.entries):
        if i in selected:
            new_entry, record = poisoned[i]
            if mode == "union":
                entries.append(entry)
                new_ref = f"poisoned/{entry.image_ref}"
                new_entry = replace(new_entry, image_ref=new_ref)
                record.source_ref = entry.image_ref
                record.image_ref = new_ref
            entries.append(new_entry)
            records.append(record)
        else:
            entries.append(entry)
    out = DatasetManifest(classes, entries, "train_poisoned", root=manifest.root)
    return out, PoisonRecords(spec.kind, records)


def build_attacked_testset(
    manifest: DatasetManifest,
    spec: AttackSpec,
    workers: int = 1,
) -> tuple[DatasetManifest, PoisonRecords]:
    """Apply the attack to every test image; out-of-scope images pass through.

    For rma/oda an image with no in-scope objects keeps its pixels (the label
    rewrite is the identity there); a record with zero triggers is still
    emitted so records enumerate the whole set.
    """
    if manifest.role != "test_benign":
        raise DatasetValidationError(
            f"expected a test_benign manifest, got role {manifest.role!r}"
        )
    classes = _attack_class_table(manifest, spec)

    def needs_pixels(entry: AnnotatedImage) -> bool:
        if spec.kind in ("oga", "gma"):
            return True
        return is_eligible(entry.objects, classes, spec)

    indices = range(len(manifest.entries))
    results = _run_indexed(
        list(indices),
        lambda i: _poison_entry(
            manifest, i, classes, spec, needs_pixels(manifest.entries[i])
        ),
        workers,
    )
    entries = [results[i][0] for i in indices]
    records = [results[i][1] for i in indices]
    out = DatasetManifest(classes, entries, "test_poisoned", root=manifest.root)
    return out, PoisonRecords(spec.kind, records)


def _run_indexed(indices: list[int], fn, workers: int) -> dict[int, object]:
    """Run fn over indices, possibly threaded; results keyed by index."""
    if workers <= 1 or len(indices) <= 1:
        return {i: fn(i) for i in indices}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        outs = list(pool.map(fn, indices))
    return dict(zip(indices, outs))
