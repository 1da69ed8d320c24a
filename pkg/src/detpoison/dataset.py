"""Annotated-image datasets: internal JSONL manifests, VOC XML, and COCO JSON.

The internal manifest is the canonical interchange format: JSON Lines, one
image per line, schema
``{"image": str, "width": int, "height": int, "objects": [{"class": str, "bbox": [x1, y1, x2, y2]}]}``.
Attack and metric code only ever consumes manifests; the XML/JSON loaders
convert into them.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DatasetValidationError, ParseError
from .geometry import BBox
from .raster import Raster, load_image, save_image

ROLES = (
    "train_benign",
    "train_poisoned",
    "test_benign",
    "test_poisoned",
    "test_mixed",
)

FORMATS = ("manifest", "voc_xml", "coco_json")


@dataclass(frozen=True)
class ObjectAnnotation:
    """One ground-truth object: a class index plus its box."""

    class_id: int
    bbox: BBox
    difficult: bool = False


@dataclass
class AnnotatedImage:
    """An image reference with its size and ground-truth objects.

    ``raster`` optionally carries the decoded pixels for in-memory pipelines;
    it never participates in equality or serialization.
    """

    image_ref: str
    width: int
    height: int
    objects: list[ObjectAnnotation] = field(default_factory=list)
    raster: Raster | None = field(default=None, repr=False, compare=False)

    @property
    def key(self) -> str:
        return self.image_ref


@dataclass
class DatasetManifest:
    """A class table, an ordered list of annotated images, and a role tag."""

    classes: tuple[str, ...]
    entries: list[AnnotatedImage]
    role: str
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise DatasetValidationError(
                f"unknown role {self.role!r}; expected one of {ROLES}"
            )
        if len(set(self.classes)) != len(self.classes):
            raise DatasetValidationError("class names must be unique")
        refs = [e.image_ref for e in self.entries]
        if len(set(refs)) != len(refs):
            # Detections and poison records key on the ref, so collisions
            # would silently merge unrelated images downstream.
            dupes = sorted({r for r in refs if refs.count(r) > 1})
            raise DatasetValidationError(f"duplicate image refs: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.entries)

    def class_id(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise DatasetValidationError(
                f"class {name!r} not in class table {list(self.classes)}"
            ) from None

    def with_role(self, role: str) -> "DatasetManifest":
        return replace(self, role=role)

    def image_path(self, entry: AnnotatedImage) -> Path:
        p = Path(entry.image_ref)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def load_raster(self, entry: AnnotatedImage) -> Raster:
        if entry.raster is not None:
            return entry.raster
        return load_image(self.image_path(entry))

    def object_count(self) -> int:
        return sum(len(e.objects) for e in self.entries)


def manifests_semantically_equal(
    a: DatasetManifest, b: DatasetManifest, tol: float = 1e-6
) -> bool:
    """Same image refs, same per-object class names, boxes equal within ``tol``."""
    if len(a) != len(b):
        return False
    for ea, eb in zip(a.entries, b.entries):
        if ea.image_ref != eb.image_ref:
            return False
        if (ea.width, ea.height) != (eb.width, eb.height):
            return False
        if len(ea.objects) != len(eb.objects):
            return False
        for oa, ob in zip(ea.objects, eb.objects):
            if a.classes[oa.class_id] != b.classes[ob.class_id]:
                return False
            da = np.asarray(oa.bbox.as_list())
            db = np.asarray(ob.bbox.as_list())
            if np.abs(da - db).max() > tol:
                return False
    return True


def _validated_box(values, width: int, height: int, where: str) -> BBox:
    try:
        box = BBox.from_list(values)
    except Exception as exc:
        raise DatasetValidationError(f"{where}: {exc}") from exc
    try:
        return box.clipped(float(width), float(height))
    except Exception as exc:
        raise DatasetValidationError(f"{where}: {exc}") from exc


# --- internal manifest (JSON Lines) ---------------------------------------

def _load_manifest(path: Path, role: str) -> DatasetManifest:
    entries: list[AnnotatedImage] = []
    names: set[str] = set()
    raw_objects: list[list[tuple[str, list[float], bool]]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{line_no}: invalid JSON ({exc})") from exc
            for key in ("image", "width", "height", "objects"):
                if key not in rec:
                    raise ParseError(f"{path}:{line_no}: missing key {key!r}")
            objs = []
            for i, obj in enumerate(rec["objects"]):
                if "class" not in obj or "bbox" not in obj:
                    raise ParseError(
                        f"{path}:{line_no}: object {i} missing 'class' or 'bbox'"
                    )
                objs.append((obj["class"], obj["bbox"], bool(obj.get("difficult", False))))
                names.add(obj["class"])
            entries.append(
                AnnotatedImage(rec["image"], int(rec["width"]), int(rec["height"]))
            )
            raw_objects.append(objs)
    classes = tuple(sorted(names))
    lookup = {n: i for i, n in enumerate(classes)}
    for entry, objs in zip(entries, raw_objects):
        for name, bbox, difficult in objs:
            where = f"{path}: image {entry.image_ref!r}"
            box = _validated_box(bbox, entry.width, entry.height, where)
            entry.objects.append(ObjectAnnotation(lookup[name], box, difficult))
    return DatasetManifest(classes, entries, role, root=path.parent)


def _save_manifest(manifest: DatasetManifest, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for entry in manifest.entries:
            fh.write(manifest_line(manifest, entry) + "\n")


def manifest_line(manifest: DatasetManifest, entry: AnnotatedImage) -> str:
    """Canonical JSONL encoding of one image record."""
    rec = {
        "image": entry.image_ref,
        "width": entry.width,
        "height": entry.height,
        "objects": [
            {
                "class": manifest.classes[obj.class_id],
                "bbox": [float(v) for v in obj.bbox.as_list()],
                **({"difficult": True} if obj.difficult else {}),
            }
            for obj in entry.objects
        ],
    }
    return json.dumps(rec, separators=(",", ":"))


# --- VOC XML ---------------------------------------------------------------

def _int_or_float(text: str) -> float:
    return float(text)


def _load_voc(path: Path, role: str) -> DatasetManifest:
    xml_files = sorted(path.glob("*.xml")) if path.is_dir() else [path]
    entries: list[AnnotatedImage] = []
    raw: list[list[tuple[str, list[float], bool]]] = []
    names: set[str] = set()
    for xml_path in xml_files:
        try:
            tree = ET.parse(xml_path)
        except ET.ParseError as exc:
            raise ParseError(f"{xml_path}: invalid XML ({exc})") from exc
        ann = tree.getroot()
        size = ann.find("size")
        if size is None or size.find("width") is None or size.find("height") is None:
            raise ParseError(f"{xml_path}: missing annotation/size/width|height")
        width = int(float(size.findtext("width")))
        height = int(float(size.findtext("height")))
        filename = ann.findtext("filename") or xml_path.with_suffix(".png").name
        objs = []
        for i, obj in enumerate(ann.findall("object")):
            name = obj.findtext("name")
            if name is None:
                raise ParseError(f"{xml_path}: object {i} missing name")
            bnd = obj.find("bndbox")
            if bnd is None:
                raise ParseError(f"{xml_path}: object {i} missing bndbox")
            coords = []
            for tag in ("xmin", "ymin", "xmax", "ymax"):
                text = bnd.findtext(tag)
                if text is None:
                    raise ParseError(f"{xml_path}: object {i} bndbox missing {tag}")
                try:
                    coords.append(_int_or_float(text))
                except ValueError as exc:
                    raise ParseError(
                        f"{xml_path}: object {i} bndbox/{tag} is not numeric: {text!r}"
                    ) from exc
            difficult = (obj.findtext("difficult") or "0").strip() not in ("", "0")
            objs.append((name, coords, difficult))
            names.add(name)
        entries.append(AnnotatedImage(filename, width, height))
        raw.append(objs)
    classes = tuple(sorted(names))
    lookup = {n: i for i, n in enumerate(classes)}
    for entry, objs in zip(entries, raw):
        for name, coords, difficult in objs:
            where = f"voc {entry.image_ref!r}"
            box = _validated_box(coords, entry.width, entry.height, where)
            entry.objects.append(ObjectAnnotation(lookup[name], box, difficult))
    root = path if path.is_dir() else path.parent
    return DatasetManifest(classes, entries, role, root=root)


def _fmt_coord(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _save_voc(manifest: DatasetManifest, path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)
    for entry in manifest.entries:
        ann = ET.Element("annotation")
        ET.SubElement(ann, "filename").text = entry.image_ref
        size = ET.SubElement(ann, "size")
        ET.SubElement(size, "width").text = str(entry.width)
        ET.SubElement(size, "height").text = str(entry.height)
        ET.SubElement(size, "depth").text = "3"
        for obj in entry.objects:
            node = ET.SubElement(ann, "object")
            ET.SubElement(node, "name").text = manifest.classes[obj.class_id]
            ET.SubElement(node, "difficult").text = "1" if obj.difficult else "0"
            bnd = ET.SubElement(node, "bndbox")
            ET.SubElement(bnd, "xmin").text = _fmt_coord(obj.bbox.x1)
            ET.SubElement(bnd, "ymin").text = _fmt_coord(obj.bbox.y1)
            ET.SubElement(bnd, "xmax").text = _fmt_coord(obj.bbox.x2)
            ET.SubElement(bnd, "ymax").text = _fmt_coord(obj.bbox.y2)
        stem = Path(entry.image_ref).stem
        ET.indent(ET.ElementTree(ann))
        ET.ElementTree(ann).write(path / f"{stem}.xml", encoding="utf-8")


# --- COCO JSON -------------------------------------------------------------

def _load_coco(path: Path, role: str) -> DatasetManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("images", "annotations", "categories"):
        if key not in data:
            raise ParseError(f"{path}: missing top-level key {key!r}")
    categories = sorted(data["categories"], key=lambda c: c["id"])
    classes = tuple(c["name"] for c in categories)
    cat_to_idx = {c["id"]: i for i, c in enumerate(categories)}
    entries_by_id: dict[int, AnnotatedImage] = {}
    order: list[int] = []
    for img in data["images"]:
        for key in ("id", "file_name", "width", "height"):
            if key not in img:
                raise ParseError(f"{path}: images entry missing {key!r}")
        entries_by_id[img["id"]] = AnnotatedImage(
            img["file_name"], int(img["width"]), int(img["height"])
        )
        order.append(img["id"])
    for i, ann in enumerate(data["annotations"]):
        for key in ("image_id", "category_id", "bbox"):
            if key not in ann:
                raise ParseError(f"{path}: annotations[{i}] missing {key!r}")
        if ann["image_id"] not in entries_by_id:
            raise ParseError(f"{path}: annotations[{i}] references unknown image id")
        if ann["category_id"] not in cat_to_idx:
            raise ParseError(f"{path}: annotations[{i}] references unknown category id")
        x, y, w, h = (float(v) for v in ann["bbox"])
        entry = entries_by_id[ann["image_id"]]
        where = f"{path}: annotations[{i}] (image {entry.image_ref!r})"
        box = _validated_box([x, y, x + w, y + h], entry.width, entry.height, where)
        entry.objects.append(
            ObjectAnnotation(cat_to_idx[ann["category_id"]], box, bool(ann.get("difficult", False)))
        )
    entries = [entries_by_id[i] for i in order]
    return DatasetManifest(classes, entries, role, root=path.parent)


def _save_coco(manifest: DatasetManifest, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    images = []
    annotations = []
    ann_id = 1
    for img_id, entry in enumerate(manifest.entries, start=1):
        images.append(
            {
                "id": img_id,
                "file_name": entry.image_ref,
                "width": entry.width,
                "height": entry.height,
            }
        )
        for obj in entry.objects:
            b = obj.bbox
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": img_id,
                    "category_id": obj.class_id + 1,
                    "bbox": [b.x1, b.y1, b.width, b.height],
                    "area": b.area,
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    categories = [
        {"id": i + 1, "name": name} for i, name in enumerate(manifest.classes)
    ]
    payload = {"images": images, "annotations": annotations, "categories": categories}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def materialize_rasters(manifest: DatasetManifest, out_dir: str | Path) -> DatasetManifest:
    """Write every inline raster under ``out_dir`` and anchor the manifest there.

    Entries without an inline raster are copied byte-for-byte from their
    current location, so the output directory is self-contained.
    """
    out_dir = Path(out_dir)
    for entry in manifest.entries:
        dest = out_dir / entry.image_ref
        dest.parent.mkdir(parents=True, exist_ok=True)
        if entry.raster is not None:
            save_image(dest, entry.raster)
        else:
            src = manifest.image_path(entry)
            if src.resolve() != dest.resolve():
                dest.write_bytes(src.read_bytes())
    manifest.root = out_dir
    return manifest


# --- public API ------------------------------------------------------------

def load_dataset(path: str | Path, fmt: str, role: str = "test_benign") -> DatasetManifest:
    """Load a dataset in one of the supported formats.

    The class table is built deterministically: sorted by name for VOC and the
    internal manifest, by category id for COCO.  Boxes are validated (x2 > x1,
    y2 > y1) and clamped to the image bounds.
    """
    path = Path(path)
    if fmt not in FORMATS:
        raise DatasetValidationError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    if not path.exists():
        raise ParseError(f"dataset path does not exist: {path}")
    if fmt == "manifest":
        return _load_manifest(path, role)
    if fmt == "voc_xml":
        return _load_voc(path, role)
    return _load_coco(path, role)


def save_dataset(manifest: DatasetManifest, path: str | Path, fmt: str) -> None:
    """Write a dataset so that loading it back is semantically equal.

    Only annotations are written; image pixels live in the files the manifest
    references.
    """
    path = Path(path)
    if fmt not in FORMATS:
        raise DatasetValidationError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    if fmt == "manifest":
        _save_manifest(manifest, path)
    elif fmt == "voc_xml":
        _save_voc(manifest, path)
    else:
        _save_coco(manifest, path)
