"""Request and response models shared by the service, the CLI, and ops."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

AttackKind = Literal["oga", "rma", "gma", "oda"]
DatasetFormat = Literal["manifest", "voc_xml", "coco_json"]


class DetectorSpec(BaseModel):
    """How to obtain detections: builtin toy, child process, or HTTP."""

    mode: Literal["clean", "infected"] = "clean"
    kind: AttackKind | None = None
    target_class: str | None = None
    trigger: str | None = None
    trigger_size: int | None = None
    alpha: float = 0.5
    classes: list[str] | None = None
    gma_anywhere: bool = False
    command: list[str] | None = None
    url: str | None = None
    timeout: float = 60.0
    batch_size: int = 1


class SynthRequest(BaseModel):
    out_dir: str
    n_images: int = 20
    width: int = 128
    height: int = 128
    n_classes: int = 6
    min_objects: int = 1
    max_objects: int = 4
    min_object_size: int = 12
    max_object_size: int = 36
    impurity: bool = True
    seed: int = 0
    role: str = "test_benign"


class SynthResponse(BaseModel):
    manifest_path: str
    n_images: int
    n_objects: int
    classes: list[str]


class PoisonRequest(BaseModel):
    dataset: str
    out_dir: str
    attack: AttackKind
    format: DatasetFormat = "manifest"
    target_class: str = "red"
    rate: float | None = Field(default=None, ge=0.0, le=1.0)
    trigger: str | None = None
    trigger_size: int | None = None
    alpha: float = 0.5
    placement: Literal["fixed", "random_in_scope"] = "fixed"
    triggers_per_image: int = 1
    oga_box_width: float = 30.0
    oga_box_height: float = 60.0
    seed: int = 0
    split: Literal["train", "test"] = "train"
    mode: Literal["replace", "union"] = "replace"
    workers: int = 1


class PoisonResponse(BaseModel):
    manifest_path: str
    records_path: str
    n_images: int
    n_poisoned: int
    classes: list[str]


class DetectRequest(BaseModel):
    dataset: str
    out_dir: str
    format: DatasetFormat = "manifest"
    detector: DetectorSpec = DetectorSpec()
    workers: int = 1


class DetectResponse(BaseModel):
    detections_path: str
    n_images: int
    n_detections: int


class EvaluateRequest(BaseModel):
    attack: AttackKind
    benign_dets: str
    poisoned_dets: str
    benign_dataset: str
    attacked_dataset: str
    records: str
    out_dir: str
    target_class: str = "red"
    format: DatasetFormat = "manifest"
    classes: list[str] | None = None
    iou_threshold: float = 0.5
    confidence_threshold: float = 0.5
    differential: bool = False


class EvaluateResponse(BaseModel):
    report_path: str
    report: dict
    table: str


class CalibrateRequest(BaseModel):
    dataset: str
    bank_dataset: str
    out_dir: str
    format: DatasetFormat = "manifest"
    detector: DetectorSpec = DetectorSpec()
    n_features: int = 100
    seed: int = 0
    blend_weight: float = 0.5
    min_inspection_confidence: float = 0.5
    delta_scale: float = 2.0
    min_samples: int = 10


class CalibrateResponse(BaseModel):
    mean: float
    sigma: float
    delta: float
    n_boxes: int
    report_path: str


class CleanseRequest(BaseModel):
    dataset: str
    bank_dataset: str
    out_dir: str
    detection_mean: float
    detection_threshold: float
    format: DatasetFormat = "manifest"
    detector: DetectorSpec = DetectorSpec()
    n_features: int = 100
    seed: int = 0
    blend_weight: float = 0.5
    min_inspection_confidence: float = 0.5


class CleanseResponse(BaseModel):
    verdicts_path: str
    n_images: int
    n_flagged: int


class HandshakeRequest(BaseModel):
    classes: list[str]


class WireDetectRequest(BaseModel):
    image: str
    width: int
    height: int
