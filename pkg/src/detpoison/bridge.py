"""Uniform detector access: in-process toy, child process, or HTTP server.

External detectors speak line-delimited JSON.  The bridge first sends a
handshake ``{"classes": [...]}`` and expects ``{"ok": true}``; it then sends
one request line per image (``{"image", "width", "height"}``, image by path)
and reads one response line per request, in order:
``{"image", "detections": [{"bbox", "class_probs", "confidence"}]}``.
The HTTP mode POSTs the same payloads to ``<base>/detector/handshake`` and
``<base>/detector/detect``.
"""

from __future__ import annotations

import json
import math
import queue
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .dataset import DatasetManifest
from .errors import BridgeError, ProtocolError
from .geometry import BBox
from .metrics import Detection, DetectionSet
from .toydet import ToyDetector, ToyDetectorConfig


@dataclass(frozen=True)
class BuiltinHandle:
    """Runs the toy detector in-process."""

    config: ToyDetectorConfig


@dataclass(frozen=True)
class ExternalHandle:
    """Runs a detector adapter as a child process over stdio."""

    command: tuple[str, ...]
    batch_size: int = 1
    timeout: float = 60.0

    def __post_init__(self) -> None:
        if not self.command:
            raise BridgeError("external detector needs a non-empty command")
        if self.batch_size < 1:
            raise BridgeError("batch_size must be >= 1")


@dataclass(frozen=True)
class HttpHandle:
    """Talks to a long-lived detector server over HTTP POST."""

    url: str
    timeout: float = 60.0


DetectorHandle = BuiltinHandle | ExternalHandle | HttpHandle


@dataclass
class WireDetectionRecord:
    image: str
    detections: list[Detection]


# --- wire encoding ---------------------------------------------------------

def encode_detection_record(record: WireDetectionRecord) -> str:
    """Canonical one-line encoding; decode(encode(r)) round-trips bytes."""
    payload = {
        "image": record.image,
        "detections": [
            {
                "bbox": [float(v) for v in d.bbox.as_list()],
                "class_probs": [float(p) for p in d.class_probs],
                "confidence": float(d.confidence),
            }
            for d in record.detections
        ],
    }
    return json.dumps(payload, separators=(",", ":"))


def validate_detection_record(
    line: str, n_classes: int | None = None, where: str = "detector output"
) -> WireDetectionRecord:
    """Parse and validate one response line; fills missing confidence."""
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"{where}: invalid JSON ({exc})") from exc
    if not isinstance(rec, dict) or "image" not in rec or "detections" not in rec:
        raise ProtocolError(f"{where}: record needs 'image' and 'detections'")
    if not isinstance(rec["image"], str):
        raise ProtocolError(f"{where}: 'image' must be a string")
    if not isinstance(rec["detections"], list):
        raise ProtocolError(f"{where}: 'detections' must be a list")
    dets: list[Detection] = []
    for i, d in enumerate(rec["detections"]):
        ctx = f"{where}: detection {i}"
        if not isinstance(d, dict) or "bbox" not in d or "class_probs" not in d:
            raise ProtocolError(f"{ctx}: needs 'bbox' and 'class_probs'")
        bbox = d["bbox"]
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise ProtocolError(f"{ctx}: bbox must be [x1, y1, x2, y2]")
        try:
            coords = [float(v) for v in bbox]
        except (TypeError, ValueError):
            raise ProtocolError(f"{ctx}: bbox entries must be numbers") from None
        if any(not math.isfinite(v) for v in coords):
            raise ProtocolError(f"{ctx}: bbox entries must be finite")
        if coords[2] <= coords[0] or coords[3] <= coords[1]:
            raise ProtocolError(f"{ctx}: degenerate bbox {coords}")
        probs = d["class_probs"]
        if not isinstance(probs, list) or not probs:
            raise ProtocolError(f"{ctx}: class_probs must be a non-empty list")
        if n_classes is not None and len(probs) != n_classes:
            raise ProtocolError(
                f"{ctx}: {len(probs)} class probs, expected {n_classes}"
            )
        try:
            pvals = [float(p) for p in probs]
        except (TypeError, ValueError):
            raise ProtocolError(f"{ctx}: class_probs entries must be numbers") from None
        if any(not math.isfinite(p) or p < 0 for p in pvals):
            raise ProtocolError(f"{ctx}: class_probs must be finite and >= 0")
        if abs(sum(pvals) - 1.0) > 1e-6:
            raise ProtocolError(f"{ctx}: class_probs sum to {sum(pvals)!r}, not 1")
        conf = d.get("confidence", max(pvals))
        try:
            conf = float(conf)
        except (TypeError, ValueError):
            raise ProtocolError(f"{ctx}: confidence must be a number") from None
        if not 0.0 <= conf <= 1.0:
            raise ProtocolError(f"{ctx}: confidence {conf} outside [0, 1]")
        dets.append(Detection(BBox(*coords), tuple(pvals), conf))
    return WireDetectionRecord(rec["image"], dets)


# --- external child process ------------------------------------------------

class _Child:
    """One adapter child with threaded stdout/stderr drains."""

    def __init__(self, command: tuple[str, ...], timeout: float):
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BridgeError(f"cannot start detector {command!r}: {exc}") from exc
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._stderr: list[str] = []
        threading.Thread(target=self._drain_stdout, daemon=True).start()
        threading.Thread(target=self._drain_stderr, daemon=True).start()

    def _drain_stdout(self) -> None:
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _drain_stderr(self) -> None:
        assert self.proc.stderr is not None
        for line in self.proc.stderr:
            self._stderr.append(line)

    def stderr_excerpt(self) -> str:
        tail = "".join(self._stderr[-10:]).strip()
        return tail or "<no stderr output>"

    def send(self, line: str) -> None:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError(
                f"detector closed its input (exit {self.proc.poll()}); "
                f"stderr: {self.stderr_excerpt()}"
            ) from exc

    def recv(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self.close()
            raise BridgeError(
                f"detector produced no output within {self.timeout}s; "
                f"stderr: {self.stderr_excerpt()}"
            ) from None
        if line is None:
            code = self.proc.wait()
            raise BridgeError(
                f"detector exited (code {code}) before answering; "
                f"stderr: {self.stderr_excerpt()}"
            )
        return line.rstrip("\n")

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                if self.proc.stdin is not None:
                    self.proc.stdin.close()
                self.proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()
                self.proc.wait()


def _handshake_child(child: _Child, classes: tuple[str, ...]) -> None:
    child.send(json.dumps({"classes": list(classes)}, separators=(",", ":")))
    line = child.recv()
    try:
        reply = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"handshake reply is not JSON: {line!r}") from exc
    if reply != {"ok": True}:
        raise ProtocolError(f"handshake not acknowledged: {line!r}")


def _run_external_shard(
    handle: ExternalHandle,
    manifest: DatasetManifest,
    indices: list[int],
    classes: tuple[str, ...],
) -> dict[str, list[Detection]]:
    child = _Child(handle.command, handle.timeout)
    out: dict[str, list[Detection]] = {}
    try:
        _handshake_child(child, classes)
        line_no = 0
        for start in range(0, len(indices), handle.batch_size):
            chunk = indices[start : start + handle.batch_size]
            requests = []
            for i in chunk:
                entry = manifest.entries[i]
                path = str(manifest.image_path(entry))
                requests.append((entry, path))
                child.send(
                    json.dumps(
                        {"image": path, "width": entry.width, "height": entry.height},
                        separators=(",", ":"),
                    )
                )
            for entry, path in requests:
                line_no += 1
                rec = validate_detection_record(
                    child.recv(), len(classes), where=f"response line {line_no}"
                )
                if rec.image != path:
                    raise ProtocolError(
                        f"response line {line_no}: answers {rec.image!r}, "
                        f"expected {path!r}"
                    )
                out[entry.key] = rec.detections
    finally:
        child.close()
    return out


# --- HTTP mode -------------------------------------------------------------

def _run_http(
    handle: HttpHandle,
    manifest: DatasetManifest,
    classes: tuple[str, ...],
) -> dict[str, list[Detection]]:
    import httpx

    base = handle.url.rstrip("/")
    out: dict[str, list[Detection]] = {}
    with httpx.Client(timeout=handle.timeout) as client:
        try:
            reply = client.post(f"{base}/detector/handshake", json={"classes": list(classes)})
            reply.raise_for_status()
        except httpx.HTTPError as exc:
            raise BridgeError(f"handshake with {base} failed: {exc}") from exc
        if reply.json() != {"ok": True}:
            raise ProtocolError(f"handshake not acknowledged: {reply.text!r}")
        for n, entry in enumerate(manifest.entries, start=1):
            path = str(manifest.image_path(entry))
            try:
                resp = client.post(
                    f"{base}/detector/detect",
                    json={"image": path, "width": entry.width, "height": entry.height},
                )
                resp.raise_for_status()
            except httpx.HTTPError as exc:
                raise BridgeError(f"detect request {n} failed: {exc}") from exc
            rec = validate_detection_record(
                resp.text, len(classes), where=f"response {n}"
            )
            if rec.image != path:
                raise ProtocolError(f"response {n}: answers {rec.image!r}, expected {path!r}")
            out[entry.key] = rec.detections
    return out


# --- entry point -----------------------------------------------------------

def resolve_classes(
    handle: DetectorHandle, classes: tuple[str, ...] | None, manifest: DatasetManifest
) -> tuple[str, ...]:
    if isinstance(handle, BuiltinHandle):
        return handle.config.classes
    return classes if classes is not None else manifest.classes

def run_detector_batch(
    handle: DetectorHandle,
    manifest: DatasetManifest,
    classes: tuple[str, ...] | None = None,
    workers: int = 1,
) -> DetectionSet:
    """Detect over every manifest entry; one record per image, input order.

    For the builtin handle the class table comes from its config; external
    and HTTP handles use ``classes`` (default: the manifest's table), which
    is what the handshake announces.
    """
    table = resolve_classes(handle, classes, manifest)
    ds = DetectionSet(table)

    if isinstance(handle, BuiltinHandle):
        detector = ToyDetector(handle.config)

        def detect_one(i: int) -> tuple[str, list[Detection]]:
            entry = manifest.entries[i]
            return entry.key, detector.detect(manifest.load_raster(entry))

        indices = list(range(len(manifest.entries)))
        if workers > 1 and len(indices) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = dict(pool.map(detect_one, indices))
        else:
            results = dict(map(detect_one, indices))
        for entry in manifest.entries:
            ds.add(entry.key, results[entry.key])
        return ds

    if isinstance(handle, HttpHandle):
        results = _run_http(handle, manifest, table)
        for entry in manifest.entries:
            ds.add(entry.key, results[entry.key])
        return ds

    indices = list(range(len(manifest.entries)))
    if workers > 1 and len(indices) > 1:
        shards = [indices[k::workers] for k in range(workers)]
        shards = [s for s in shards if s]
        with ThreadPoolExecutor(max_workers=len(shards)) as pool:
            parts = pool.map(
                lambda s: _run_external_shard(handle, manifest, s, table), shards
            )
            merged: dict[str, list[Detection]] = {}
            for part in parts:
                merged.update(part)
    else:
        merged = _run_external_shard(handle, manifest, indices, table)
    for entry in manifest.entries:
        ds.add(entry.key, merged[entry.key])
    return ds


# --- detection set persistence --------------------------------------------

def save_detections(
    ds: DetectionSet, manifest: DatasetManifest, path: str | Path
) -> None:
    """One canonical wire line per manifest entry, in manifest order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for entry in manifest.entries:
            rec = WireDetectionRecord(entry.key, ds.for_image(entry.key))
            fh.write(encode_detection_record(rec) + "\n")


def load_detections(path: str | Path, classes: tuple[str, ...]) -> DetectionSet:
    path = Path(path)
    ds = DetectionSet(classes)
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = validate_detection_record(
                line, len(classes), where=f"{path}:{line_no}"
            )
            ds.add(rec.image, rec.detections)
    return ds
