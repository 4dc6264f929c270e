"""Wire schemas for the sidecar protocol (JSON over HTTP, /v1 endpoints).

Every request carries a ``request_id`` idempotency key; responses echo it, and
a duplicate id within the cache TTL returns the cached response byte-for-byte.
Generated batches are seeded ``seed + i`` per blob so clients can reproduce
any single output.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BlobPayload(StrictModel):
    data_b64: str = Field(min_length=1)
    media_type: str = Field(min_length=1)


class ImageGenRequest(StrictModel):
    request_id: str = Field(min_length=1, max_length=128)
    model_name: str = ""
    prompt: str = Field(min_length=1)
    steps: int = Field(default=50, ge=1)
    guidance_scale: float = Field(default=4.5, ge=0.0)
    width: int = Field(default=512, ge=1, le=4096)
    height: int = Field(default=512, ge=1, le=4096)
    seed: int = Field(default=0, ge=0)
    count: int = Field(ge=1, le=64)


class AudioGenRequest(StrictModel):
    request_id: str = Field(min_length=1, max_length=128)
    model_name: str = ""
    prompt: str = Field(min_length=1)
    steps: int = Field(default=100, ge=1)
    duration_seconds: float = Field(default=10.0, gt=0.0, le=120.0)
    sample_rate_hz: int = Field(default=16000, ge=1)
    seed: int = Field(default=0, ge=0)
    count: int = Field(ge=1, le=64)


class EmbedRequest(StrictModel):
    request_id: str = Field(min_length=1, max_length=128)
    model_name: str = ""
    modality: str
    text: str | None = None
    blob: BlobPayload | None = None


class PesqPair(StrictModel):
    reference: BlobPayload
    degraded: BlobPayload


class PesqRequest(StrictModel):
    request_id: str = Field(min_length=1, max_length=128)
    pairs: list[PesqPair] = Field(min_length=1)


class FidRequest(StrictModel):
    request_id: str = Field(min_length=1, max_length=128)
    generated: list[BlobPayload] = Field(min_length=1)
    references: list[BlobPayload] = Field(min_length=1)


class SidecarResponse(StrictModel):
    request_id: str
    status: str = "ok"
    outputs: dict = Field(default_factory=dict)
    error: str | None = None
