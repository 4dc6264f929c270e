"""The sidecar service: /v1 generation, embedding, and metric endpoints.

Stub mode (SIDECAR_STUB=1, the default in this build) serves deterministic
procedural outputs and needs no model weights. Without stub mode the service
reports itself degraded and answers 503 until real model loaders are wired in.
"""

from __future__ import annotations

import base64
import binascii
import os
import threading
import time
from typing import Callable

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response

from . import __version__
from .schemas import (
    AudioGenRequest,
    BlobPayload,
    EmbedRequest,
    FidRequest,
    ImageGenRequest,
    PesqRequest,
    SidecarResponse,
)
from .stub import (
    EMBED_DIM,
    ImageFormatError,
    PESQ_MAX,
    PESQ_MIN,
    WavFormatError,
    stub_audio,
    stub_embedding,
    stub_fid,
    stub_image,
    stub_pesq,
)

DEFAULT_CACHE_TTL = 300.0
SUPPORTED_MODALITIES = {"image", "text", "audio"}


class IdempotencyCache:
    """Thread-safe request_id -> response cache with a TTL window."""

    def __init__(self, ttl: float = DEFAULT_CACHE_TTL, clock: Callable[[], float] = time.monotonic):
        self.ttl = ttl
        self.clock = clock
        self._lock = threading.Lock()
        self._entries: dict[str, tuple[float, int, bytes]] = {}

    def get(self, request_id: str) -> tuple[int, bytes] | None:
        now = self.clock()
        with self._lock:
            entry = self._entries.get(request_id)
            if entry is None:
                return None
            expires, status, body = entry
            if expires < now:
                del self._entries[request_id]
                return None
            return status, body

    def put(self, request_id: str, status: int, body: bytes) -> None:
        now = self.clock()
        with self._lock:
            self._entries[request_id] = (now + self.ttl, status, body)
            if len(self._entries) > 4096:
                expired = [k for k, (exp, _, _) in self._entries.items() if exp < now]
                for key in expired:
                    del self._entries[key]


def _error(request_id: str, status_code: int, message: str) -> tuple[int, bytes]:
    body = SidecarResponse(
        request_id=request_id, status="error", error=message
    ).model_dump_json().encode("utf-8")
    return status_code, body


def _decode_blob(blob: BlobPayload) -> bytes:
    try:
        return base64.b64decode(blob.data_b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ValueError(f"invalid base64 payload: {exc}") from exc


def create_app(stub_mode: bool | None = None, cache_ttl: float | None = None) -> FastAPI:
    if stub_mode is None:
        stub_mode = os.environ.get("SIDECAR_STUB", "1") == "1"
    ttl = cache_ttl if cache_ttl is not None else float(
        os.environ.get("SIDECAR_CACHE_TTL", DEFAULT_CACHE_TTL)
    )
    app = FastAPI(title="modsidecar", version=__version__)
    cache = IdempotencyCache(ttl=ttl)

    @app.exception_handler(RequestValidationError)
    async def _validation_to_400(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"status": "error", "error": str(exc.errors()[:3])})

    def respond(request_id: str, build: Callable[[], tuple[int, bytes]]) -> Response:
        cached = cache.get(request_id)
        if cached is None:
            status, body = build()
            cache.put(request_id, status, body)
        else:
            status, body = cached
        return Response(content=body, status_code=status, media_type="application/json")

    def ok(request_id: str, outputs: dict) -> tuple[int, bytes]:
        body = SidecarResponse(request_id=request_id, outputs=outputs)
        return 200, body.model_dump_json().encode("utf-8")

    @app.get("/v1/health")
    def health() -> dict:
        loaded = ["stub-image", "stub-audio", "stub-embedder"] if stub_mode else []
        return {
            "status": "ok" if stub_mode else "degraded",
            "loaded_models": loaded,
            "stub_mode": stub_mode,
            "version": __version__,
        }

    def _require_models(request_id: str) -> tuple[int, bytes] | None:
        if stub_mode:
            return None
        return _error(request_id, 503, "no real models loaded; start with SIDECAR_STUB=1")

    @app.post("/v1/generate/image")
    def generate_image(req: ImageGenRequest) -> Response:
        def build() -> tuple[int, bytes]:
            unavailable = _require_models(req.request_id)
            if unavailable:
                return unavailable
            blobs = []
            for i in range(req.count):
                data = stub_image(req.prompt, req.seed + i, req.width, req.height)
                blobs.append(
                    {
                        "data_b64": base64.b64encode(data).decode("ascii"),
                        "media_type": "image/png",
                        "width": req.width,
                        "height": req.height,
                        "seed": req.seed + i,
                    }
                )
            return ok(req.request_id, {"blobs": blobs})

        return respond(req.request_id, build)

    @app.post("/v1/generate/audio")
    def generate_audio(req: AudioGenRequest) -> Response:
        def build() -> tuple[int, bytes]:
            unavailable = _require_models(req.request_id)
            if unavailable:
                return unavailable
            blobs = []
            for i in range(req.count):
                data = stub_audio(req.prompt, req.seed + i, req.duration_seconds, req.sample_rate_hz)
                blobs.append(
                    {
                        "data_b64": base64.b64encode(data).decode("ascii"),
                        "media_type": "audio/wav",
                        "duration_seconds": req.duration_seconds,
                        "sample_rate_hz": req.sample_rate_hz,
                        "seed": req.seed + i,
                    }
                )
            return ok(req.request_id, {"blobs": blobs})

        return respond(req.request_id, build)

    @app.post("/v1/embed")
    def embed(req: EmbedRequest) -> Response:
        def build() -> tuple[int, bytes]:
            unavailable = _require_models(req.request_id)
            if unavailable:
                return unavailable
            if req.modality not in SUPPORTED_MODALITIES:
                return _error(req.request_id, 415, f"unsupported modality {req.modality!r}")
            if req.modality == "text":
                if req.text is None:
                    return _error(req.request_id, 400, "text modality requires the 'text' field")
                content = req.text.encode("utf-8")
            else:
                if req.blob is None:
                    return _error(req.request_id, 400, f"{req.modality} modality requires a blob")
                try:
                    content = _decode_blob(req.blob)
                except ValueError as exc:
                    return _error(req.request_id, 400, str(exc))
            vector = stub_embedding(content)
            return ok(req.request_id, {"vector": vector, "dimension": EMBED_DIM})

        return respond(req.request_id, build)

    @app.post("/v1/metric/pesq")
    def metric_pesq(req: PesqRequest) -> Response:
        def build() -> tuple[int, bytes]:
            scores = []
            for pair in req.pairs:
                try:
                    reference = _decode_blob(pair.reference)
                    degraded = _decode_blob(pair.degraded)
                    score = stub_pesq(reference, degraded)
                except (ValueError, WavFormatError) as exc:
                    return _error(req.request_id, 400, str(exc))
                if not PESQ_MIN <= score <= PESQ_MAX:
                    return _error(req.request_id, 500, f"pesq {score} escaped its range")
                scores.append(score)
            return ok(req.request_id, {"scores": scores})

        return respond(req.request_id, build)

    @app.post("/v1/metric/fid")
    def metric_fid(req: FidRequest) -> Response:
        def build() -> tuple[int, bytes]:
            try:
                generated = [_decode_blob(b) for b in req.generated]
                references = [_decode_blob(b) for b in req.references]
                value = stub_fid(generated, references)
            except (ValueError, ImageFormatError) as exc:
                return _error(req.request_id, 400, str(exc))
            if value < 0:
                return _error(req.request_id, 500, f"fid {value} escaped its range")
            return ok(req.request_id, {"value": value})

        return respond(req.request_id, build)

    return app


app = create_app()


def serve() -> None:
    import uvicorn

    port = int(os.environ.get("SIDECAR_PORT", "8322"))
    uvicorn.run("modsidecar.app:app", host="0.0.0.0", port=port)
