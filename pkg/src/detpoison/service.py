"""HTTP front end: pipeline endpoints plus the detector wire protocol.

``/synth``..``/cleanse`` mirror the CLI subcommands (the CLI can POST here
instead of running in-process).  ``/detector/handshake`` and
``/detector/detect`` serve the bridge's HTTP detector mode, so an
``HttpHandle`` pointed at this service gets toy-detector answers.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException, Response

from . import __version__
from . import ops
from .bridge import BuiltinHandle, WireDetectionRecord, encode_detection_record
from .errors import ToolkitError
from .raster import load_image
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
    HandshakeRequest,
    PoisonRequest,
    PoisonResponse,
    SynthRequest,
    SynthResponse,
    WireDetectRequest,
)
from .toydet import ToyDetector


def create_app(detector: DetectorSpec | None = None) -> FastAPI:
    """Build the app; `detector` configures what /detector/detect runs."""
    app = FastAPI(title="detpoison", version=__version__)
    handle = ops.build_handle(detector or DetectorSpec())
    if not isinstance(handle, BuiltinHandle):
        raise ToolkitError("the service can only serve a builtin detector")
    served = ToyDetector(handle.config)

    def guarded(fn, request):
        try:
            return fn(request)
        except ToolkitError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.get("/health")
    def health() -> dict:
        return {"ok": True, "version": __version__}

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest) -> SynthResponse:
        return guarded(ops.run_synth, req)

    @app.post("/poison", response_model=PoisonResponse)
    def poison(req: PoisonRequest) -> PoisonResponse:
        return guarded(ops.run_poison, req)

    @app.post("/detect", response_model=DetectResponse)
    def detect(req: DetectRequest) -> DetectResponse:
        return guarded(ops.run_detect, req)

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest) -> EvaluateResponse:
        return guarded(ops.run_evaluate, req)

    @app.post("/calibrate", response_model=CalibrateResponse)
    def calibrate(req: CalibrateRequest) -> CalibrateResponse:
        return guarded(ops.run_calibrate, req)

    @app.post("/cleanse", response_model=CleanseResponse)
    def cleanse(req: CleanseRequest) -> CleanseResponse:
        return guarded(ops.run_cleanse, req)

    @app.post("/detector/handshake")
    def handshake(req: HandshakeRequest) -> dict:
        if tuple(req.classes) != served.classes:
            raise HTTPException(
                status_code=422,
                detail=f"served class table is {list(served.classes)}",
            )
        return {"ok": True}

    @app.post("/detector/detect")
    def wire_detect(req: WireDetectRequest) -> Response:
        try:
            raster = load_image(req.image)
            dets = served.detect(raster)
        except ToolkitError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        line = encode_detection_record(WireDetectionRecord(req.image, dets))
        return Response(content=line, media_type="application/json")

    return app


app = create_app()
