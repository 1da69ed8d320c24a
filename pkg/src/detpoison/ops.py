"""Filesystem-level pipelines behind the service endpoints and the CLI.

Each operation reads datasets, runs the core modules, and writes its
artifacts under one output directory with fixed names (``manifest.jsonl``,
``poison_records.jsonl``, ``detections.jsonl``, ``report.json``,
``verdicts.jsonl``) plus a ``run.json`` provenance record.  Outputs carry no
timestamps, so rerunning with the same request is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__
from .attacks import (
    KIND_DEFAULTS,
    PoisonRecords,
    build_attacked_testset,
    default_attack_spec,
    poison_train_split,
)
from .bridge import (
    BuiltinHandle,
    DetectorHandle,
    ExternalHandle,
    HttpHandle,
    load_detections,
    run_detector_batch,
    save_detections,
)
from .cleanse import (
    CleanseParams,
    build_feature_bank,
    calibrate_threshold,
    cleanse_dataset,
    save_verdicts,
)
from .dataset import DatasetManifest, load_dataset, materialize_rasters, save_dataset
from .errors import ConfigError
from .metrics import DetectionSet, EvalThresholds, attack_report
from .raster import TriggerPatch, chessboard, load_trigger
from .schemas import (
    CalibrateRequest,
    CalibrateResponse,
    CleanseRequest,
    CleanseResponse,
    DetectRequest,
    DetectResponse,
    DetectorSpec,
    EvaluateRequest,
    EvaluateResponse,
    PoisonRequest,
    PoisonResponse,
    SynthRequest,
    SynthResponse,
)
from .synthetic import SyntheticConfig, generate_synthetic_dataset, palette_names
from .toydet import ToyDetectorConfig

BUILTIN_TRIGGERS = ("chessboard",)


def write_run_record(out_dir: str | Path, command: str, request, seed: int | None) -> None:
    """Provenance for reproducibility: request, its hash, seed, version."""
    payload = request.model_dump(mode="json")
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    record = {
        "tool": "detpoison",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config_hash": digest,
        "request": payload,
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def resolve_trigger(
    name: str | None, size: int | None, alpha: float
) -> TriggerPatch | None:
    """A trigger by file path, or by builtin pattern name (stem match)."""
    if name is None:
        if size is None:
            return None
        return TriggerPatch(chessboard(size), alpha)
    path = Path(name)
    if path.exists():
        return load_trigger(path, alpha, size)
    if path.stem in BUILTIN_TRIGGERS:
        return TriggerPatch(chessboard(size if size is not None else 9), alpha)
    raise ConfigError(
        f"trigger {name!r} is neither an existing file nor one of {BUILTIN_TRIGGERS}"
    )


def build_handle(spec: DetectorSpec) -> DetectorHandle:
    if spec.command:
        return ExternalHandle(tuple(spec.command), spec.batch_size, spec.timeout)
    if spec.url:
        return HttpHandle(spec.url, spec.timeout)
    classes = tuple(spec.classes) if spec.classes else palette_names(6)
    trigger = None
    if spec.mode == "infected":
        if spec.kind is None or spec.target_class is None:
            raise ConfigError("infected detector needs 'kind' and 'target_class'")
        size = spec.trigger_size
        if size is None and spec.trigger is None:
            size = KIND_DEFAULTS[spec.kind][1]
        trigger = resolve_trigger(spec.trigger, size, spec.alpha)
        if trigger is None:
            trigger = TriggerPatch(chessboard(KIND_DEFAULTS[spec.kind][1]), spec.alpha)
    cfg = ToyDetectorConfig(
        classes=classes,
        mode=spec.mode,
        kind=spec.kind,
        target_class=spec.target_class,
        trigger=trigger,
        gma_anywhere=spec.gma_anywhere,
    )
    return BuiltinHandle(cfg)


def _detector_classes(spec: DetectorSpec, handle: DetectorHandle) -> tuple[str, ...]:
    if isinstance(handle, BuiltinHandle):
        return handle.config.classes
    return tuple(spec.classes) if spec.classes else palette_names(6)


def run_synth(req: SynthRequest) -> SynthResponse:
    cfg = SyntheticConfig(
        n_images=req.n_images,
        width=req.width,
        height=req.height,
        n_classes=req.n_classes,
        min_objects=req.min_objects,
        max_objects=req.max_objects,
        min_object_size=req.min_object_size,
        max_object_size=req.max_object_size,
        impurity=req.impurity,
        seed=req.seed,
    )
    manifest = generate_synthetic_dataset(cfg, role=req.role)
    out_dir = Path(req.out_dir)
    manifest = materialize_rasters(manifest, out_dir)
    save_dataset(manifest, out_dir / "manifest.jsonl", "manifest")
    write_run_record(out_dir, "synth", req, req.seed)
    return SynthResponse(
        manifest_path=str(out_dir / "manifest.jsonl"),
        n_images=len(manifest.entries),
        n_objects=manifest.object_count(),
        classes=list(manifest.classes),
    )


def run_poison(req: PoisonRequest) -> PoisonResponse:
    role = "train_benign" if req.split == "train" else "test_benign"
    manifest = load_dataset(req.dataset, req.format, role=role)
    spec = default_attack_spec(
        req.attack,
        target_class=req.target_class,
        seed=req.seed,
        trigger=resolve_trigger(req.trigger, req.trigger_size, req.alpha),
        poison_rate=req.rate,
        placement=req.placement,
        triggers_per_image=req.triggers_per_image,
        oga_box_dims=(req.oga_box_width, req.oga_box_height),
    )
    if req.split == "train":
        poisoned, records = poison_train_split(
            manifest, spec, mode=req.mode, workers=req.workers
        )
    else:
        poisoned, records = build_attacked_testset(manifest, spec, workers=req.workers)
    out_dir = Path(req.out_dir)
    poisoned = materialize_rasters(poisoned, out_dir)
    save_dataset(poisoned, out_dir / "manifest.jsonl", "manifest")
    records.save(out_dir / "poison_records.jsonl")
    write_run_record(out_dir, "poison", req, req.seed)
    return PoisonResponse(
        manifest_path=str(out_dir / "manifest.jsonl"),
        records_path=str(out_dir / "poison_records.jsonl"),
        n_images=len(poisoned.entries),
        n_poisoned=len(records.records),
        classes=list(poisoned.classes),
    )


def run_detect(req: DetectRequest) -> DetectResponse:
    manifest = load_dataset(req.dataset, req.format)
    handle = build_handle(req.detector)
    classes = _detector_classes(req.detector, handle)
    ds = run_detector_batch(handle, manifest, classes=classes, workers=req.workers)
    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_detections(ds, manifest, out_dir / "detections.jsonl")
    write_run_record(out_dir, "detect", req, None)
    return DetectResponse(
        detections_path=str(out_dir / "detections.jsonl"),
        n_images=len(manifest.entries),
        n_detections=sum(len(v) for v in ds.by_image.values()),
    )


def _covering(ds: DetectionSet, manifest: DatasetManifest) -> DetectionSet:
    """Treat images absent from a detections file as having no detections."""
    for entry in manifest.entries:
        if entry.key not in ds.by_image:
            ds.add(entry.key, [])
    return ds


def run_evaluate(req: EvaluateRequest) -> EvaluateResponse:
    benign_gt = load_dataset(req.benign_dataset, req.format, role="test_benign")
    attacked_gt = load_dataset(req.attacked_dataset, req.format, role="test_poisoned")
    records = PoisonRecords.load(req.records)
    classes = tuple(req.classes) if req.classes else palette_names(6)
    benign_dets = _covering(load_detections(req.benign_dets, classes), benign_gt)
    poisoned_dets = _covering(load_detections(req.poisoned_dets, classes), attacked_gt)
    thresholds = EvalThresholds(req.iou_threshold, req.confidence_threshold)
    report = attack_report(
        req.attack,
        benign_dets=benign_dets,
        poisoned_dets=poisoned_dets,
        benign_gt=benign_gt,
        attacked_gt=attacked_gt,
        records=records,
        target_class=req.target_class,
        thresholds=thresholds,
        differential=req.differential,
    )
    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_run_record(out_dir, "evaluate", req, None)
    return EvaluateResponse(
        report_path=str(out_dir / "report.json"),
        report=report.to_dict(),
        table=report.to_text(),
    )


def run_calibrate(req: CalibrateRequest) -> CalibrateResponse:
    bank_src = load_dataset(req.bank_dataset, req.format)
    dataset = load_dataset(req.dataset, req.format)
    bank = build_feature_bank(bank_src, n=req.n_features, seed=req.seed)
    params = CleanseParams(
        blend_weight=req.blend_weight,
        n_features=req.n_features,
        min_inspection_confidence=req.min_inspection_confidence,
    )
    handle = build_handle(req.detector)
    classes = _detector_classes(req.detector, handle)
    out_dir = Path(req.out_dir)
    result = calibrate_threshold(
        dataset,
        handle,
        bank,
        params,
        min_samples=req.min_samples,
        delta_scale=req.delta_scale,
        classes=classes,
        scratch=out_dir / "scratch",
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "mean": result.mean,
        "sigma": result.sigma,
        "delta": result.delta,
        "n_boxes": result.n_boxes,
    }
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_run_record(out_dir, "calibrate", req, req.seed)
    return CalibrateResponse(report_path=str(out_dir / "report.json"), **payload)


def run_cleanse(req: CleanseRequest) -> CleanseResponse:
    bank_src = load_dataset(req.bank_dataset, req.format)
    dataset = load_dataset(req.dataset, req.format)
    bank = build_feature_bank(bank_src, n=req.n_features, seed=req.seed)
    params = CleanseParams(
        detection_mean=req.detection_mean,
        detection_threshold=req.detection_threshold,
        blend_weight=req.blend_weight,
        n_features=req.n_features,
        min_inspection_confidence=req.min_inspection_confidence,
    )
    handle = build_handle(req.detector)
    classes = _detector_classes(req.detector, handle)
    out_dir = Path(req.out_dir)
    verdicts = cleanse_dataset(
        dataset, handle, bank, params, classes=classes, scratch=out_dir / "scratch"
    )
    save_verdicts(verdicts, out_dir / "verdicts.jsonl")
    write_run_record(out_dir, "cleanse", req, req.seed)
    return CleanseResponse(
        verdicts_path=str(out_dir / "verdicts.jsonl"),
        n_images=len(verdicts),
        n_flagged=sum(1 for v in verdicts if v.poisoned),
    )
