"""Domain types shared by every other module.

All types are immutable pydantic models. Canonical serialization is JSON with
lowercase snake_case field names; unknown fields are rejected on input, so
``Model.model_validate_json`` / ``model_dump_json`` round-trip exactly.
"""

from __future__ import annotations

import hashlib
import math
from enum import Enum
from pathlib import Path, PurePosixPath

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import (
    EmptyPayloadsError,
    MissingBlobError,
    PathEscapeError,
    ReportInvariantError,
)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModalityKind(str, Enum):
    image = "image"
    text = "text"
    audio = "audio"


# Roster of the generator backends used by the baseline variants, keyed by the
# canonical slug, with the display name and the modality each one produces.
GENERATOR_ROSTER: tuple[tuple[str, str, ModalityKind], ...] = (
    ("sd3.5", "SD3.5", ModalityKind.image),
    ("flux.1-dev", "FLUX.1 dev", ModalityKind.image),
    ("qwen2.5-vl-7b", "Qwen2.5-VL-7B", ModalityKind.text),
    ("qwen2.5-omni-7b", "Qwen2.5-Omni-7B", ModalityKind.text),
    ("audioldm2", "AudioLDM 2", ModalityKind.audio),
    ("sa1.0", "SA 1.0", ModalityKind.audio),
)
GENERATOR_KINDS: dict[str, ModalityKind] = {slug: kind for slug, _, kind in GENERATOR_ROSTER}
GENERATOR_DISPLAY: dict[str, str] = {slug: name for slug, name, _ in GENERATOR_ROSTER}


class BlobRef(StrictModel):
    """Content reference for image/audio payloads: a file path relative to a data root."""

    path: str = Field(min_length=1)
    media_type: str = Field(min_length=1)
    byte_length: int = Field(ge=0)

    @field_validator("path")
    @classmethod
    def _relative_and_contained(cls, v: str) -> str:
        p = PurePosixPath(v)
        if p.is_absolute() or v.startswith("\\") or (len(v) > 1 and v[1] == ":"):
            raise PathEscapeError(f"absolute blob path not allowed: {v!r}")
        if ".." in p.parts:
            raise PathEscapeError(f"parent traversal not allowed: {v!r}")
        return v


class ModalityPayload(StrictModel):
    kind: ModalityKind
    text: str | None = None
    blob: BlobRef | None = None

    @model_validator(mode="after")
    def _content_matches_kind(self) -> "ModalityPayload":
        if self.kind is ModalityKind.text:
            if self.text is None or self.blob is not None:
                raise ValueError("text payloads carry inline text and no blob reference")
        else:
            if self.blob is None or self.text is not None:
                raise ValueError(f"{self.kind.value} payloads carry a blob reference and no inline text")
        return self


class Sample(StrictModel):
    id: str = Field(min_length=1)
    payloads: dict[ModalityKind, ModalityPayload]
    labels: list[str] | None = None

    @model_validator(mode="after")
    def _payloads_consistent(self) -> "Sample":
        if not self.payloads:
            raise EmptyPayloadsError(f"sample {self.id!r} has no payloads")
        for kind, payload in self.payloads.items():
            if payload.kind is not kind:
                raise ValueError(f"payload under key {kind.value} has kind {payload.kind.value}")
        return self

    def without(self, kind: ModalityKind) -> "Sample":
        """Copy of this sample with one modality removed (simulating it missing)."""
        remaining = {k: v for k, v in self.payloads.items() if k is not kind}
        if not remaining:
            raise EmptyPayloadsError(f"removing {kind.value} would leave sample {self.id!r} empty")
        return Sample(id=self.id, payloads=remaining, labels=self.labels)


class MissingMask(StrictModel):
    target_kind: ModalityKind
    rate: float = Field(ge=0.0, le=1.0)
    seed: int = Field(ge=0, lt=2**64)
    masked_ids: tuple[str, ...]

    @field_validator("masked_ids", mode="before")
    @classmethod
    def _canonical_ids(cls, v):
        ids = list(v)
        if len(set(ids)) != len(ids):
            raise ValueError("masked_ids contains duplicates")
        return tuple(sorted(ids))


class RankerKind(str, Enum):
    none = "none"
    embedding = "embedding"
    judge = "judge"


class MinerKind(str, Enum):
    none = "none"
    local_lmm = "local_lmm"
    strong_lmm = "strong_lmm"


MINER_DISPLAY = {MinerKind.local_lmm: "M", MinerKind.strong_lmm: "4o"}
RANKER_DISPLAY = {RankerKind.embedding: "IB", RankerKind.judge: "MJ"}


class VariantSpec(StrictModel):
    generator_id: str = Field(min_length=1)
    ranker: RankerKind
    miner: MinerKind
    target_kind: ModalityKind

    @model_validator(mode="after")
    def _composition_rules(self) -> "VariantSpec":
        if self.miner is not MinerKind.none and self.ranker is RankerKind.none:
            raise ValueError("a miner requires a ranking module")
        declared = GENERATOR_KINDS.get(self.generator_id)
        if declared is not None and declared is not self.target_kind:
            raise ValueError(
                f"generator {self.generator_id!r} produces {declared.value}, not {self.target_kind.value}"
            )
        return self

    @property
    def variant_id(self) -> str:
        """Canonical id "<generator>+<ranker>+<miner>" with absent parts elided."""
        parts = [self.generator_id]
        if self.ranker is not RankerKind.none:
            parts.append(self.ranker.value)
        if self.miner is not MinerKind.none:
            parts.append(self.miner.value)
        return "+".join(parts)

    @property
    def label(self) -> str:
        """Human-readable roster label, miner first (e.g. "4o+SD3.5+MJ")."""
        gen = GENERATOR_DISPLAY.get(self.generator_id, self.generator_id)
        if self.ranker is RankerKind.none:
            return gen
        tail = f"{gen}+{RANKER_DISPLAY[self.ranker]}"
        if self.miner is MinerKind.none:
            return tail
        return f"{MINER_DISPLAY[self.miner]}+{tail}"


class ImageParams(StrictModel):
    steps: int = Field(default=50, ge=1)
    guidance_scale: float = Field(default=4.5, ge=0.0)
    max_sequence_length: int = Field(default=512, ge=1)
    width: int = Field(default=512, ge=1)
    height: int = Field(default=512, ge=1)


class AudioParams(StrictModel):
    steps: int = Field(default=100, ge=1)
    duration_seconds: float = Field(default=10.0, gt=0.0)
    sample_rate_hz: int = Field(default=16000, ge=1)


class TextParams(StrictModel):
    max_tokens: int = Field(default=1024, ge=1)
    temperature: float = Field(default=0.3, ge=0.0)
    top_p: float = Field(default=0.8, gt=0.0, le=1.0)
    presence_penalty: float = Field(default=1.5)


class GenerationParams(StrictModel):
    candidate_count: int = Field(default=5, ge=1)
    image: ImageParams = ImageParams()
    audio: AudioParams = AudioParams()
    text: TextParams = TextParams()
    seed: int = Field(default=0, ge=0, lt=2**64)


class Candidate(StrictModel):
    payload: ModalityPayload
    generation_prompt: str
    generator_id: str
    ordinal: int = Field(ge=0)
    seed_used: int = Field(ge=0, lt=2**64)


class EmbeddingVector(StrictModel):
    """Fixed-length embedding, L2-normalized at construction."""

    values: tuple[float, ...] = Field(min_length=1)
    dimension: int = Field(ge=1)

    @model_validator(mode="before")
    @classmethod
    def _normalize(cls, data):
        if isinstance(data, dict) and "values" in data:
            values = [float(v) for v in data["values"]]
            norm = math.sqrt(math.fsum(v * v for v in values))
            if norm < 1e-12:
                raise ValueError("zero vector cannot be normalized")
            if abs(norm - 1.0) > 1e-6:
                values = [v / norm for v in values]
            data = {**data, "values": tuple(values), "dimension": data.get("dimension", len(values))}
        return data

    @model_validator(mode="after")
    def _unit_norm(self) -> "EmbeddingVector":
        if self.dimension != len(self.values):
            raise ValueError(f"dimension {self.dimension} != len(values) {len(self.values)}")
        norm = math.sqrt(math.fsum(v * v for v in self.values))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"vector norm {norm} not within 1e-6 of 1")
        return self


TEXT_CRITERIA = (
    "semantic_alignment",
    "factual_groundedness",
    "coherence_completeness",
    "consistency",
    "relevance_focus",
    "language_quality",
)
IMAGE_CRITERIA = (
    "accuracy_to_ground_truth",
    "factual_groundedness",
    "creativity_originality",
    "visual_quality_realism",
    "consistency_cohesion",
    "emotional_thematic_resonance",
)
AUDIO_CRITERIA = (
    "semantic_alignment",
    "factual_groundedness",
    "noise_resilience",
    "intelligibility",
    "audio_quality",
    "relevance_focus",
)
CRITERIA_BY_KIND: dict[ModalityKind, tuple[str, ...]] = {
    ModalityKind.text: TEXT_CRITERIA,
    ModalityKind.image: IMAGE_CRITERIA,
    ModalityKind.audio: AUDIO_CRITERIA,
}


class JudgeReport(StrictModel):
    """Structured verifier scorecard: six criteria plus hallucination counts.

    ``overall_score`` must equal the arithmetic mean of the six criteria; the
    value a remote judge reports is advisory and recomputed by the parser.
    """

    criteria: dict[str, float]
    overall_score: float = Field(ge=0.0, le=5.0)
    hallucinated_count: int = Field(ge=0)
    total_assertions: int = Field(ge=0)
    noise_segments: int = Field(default=0, ge=0)
    justifications: dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _invariants(self) -> "JudgeReport":
        names = tuple(self.criteria)
        if len(names) != 6:
            raise ReportInvariantError(f"expected 6 criteria, got {len(names)}")
        if names not in (TEXT_CRITERIA, IMAGE_CRITERIA, AUDIO_CRITERIA):
            raise ReportInvariantError(f"criterion names {names} match no verification template")
        for name, score in self.criteria.items():
            if not 0.0 <= score <= 5.0:
                raise ReportInvariantError(f"criterion {name} score {score} outside [0, 5]")
        mean = sum(self.criteria.values()) / 6.0
        if abs(self.overall_score - mean) > 1e-6:
            raise ReportInvariantError(
                f"overall_score {self.overall_score} != criteria mean {mean}"
            )
        if self.total_assertions > 0 and self.hallucinated_count > self.total_assertions:
            raise ReportInvariantError(
                f"H={self.hallucinated_count} exceeds N={self.total_assertions}"
            )
        if names != AUDIO_CRITERIA and self.noise_segments != 0:
            raise ReportInvariantError("noise_segments applies to audio reports only")
        unknown = set(self.justifications) - set(names)
        if unknown:
            raise ReportInvariantError(f"justifications for unknown criteria: {sorted(unknown)}")
        return self


class Paradigm(str, Enum):
    p1 = "p1"
    p2 = "p2"
    p3 = "p3"
    afm2 = "afm2"


class Granularity(str, Enum):
    baseline = "baseline"
    object = "object"
    object_location = "object_location"
    object_color = "object_color"


class AgentRouting(StrictModel):
    """Backend ids filling each agent role of the afm2 pipeline."""

    reasoner: str
    miner: str
    judge: str
    language_model: str
    embedder: str
    image_generator: str
    audio_generator: str
    text_generator: str

    def generator_for(self, kind: ModalityKind) -> str:
        return {
            ModalityKind.image: self.image_generator,
            ModalityKind.audio: self.audio_generator,
            ModalityKind.text: self.text_generator,
        }[kind]


class PipelineConfig(StrictModel):
    paradigm: Paradigm
    variant: VariantSpec | None = None
    routing: AgentRouting | None = None
    params: GenerationParams = GenerationParams()
    threshold: float = Field(default=4.5, ge=0.0, le=5.0)
    penalty: float = Field(default=0.2, ge=0.0)
    penalty_cap: float = Field(default=1.0, gt=0.0, le=5.0)
    max_rounds: int = Field(default=5, ge=1)
    granularity: Granularity = Granularity.baseline
    enable_miner: bool = True
    enable_verifier: bool = True

    @model_validator(mode="after")
    def _paradigm_requirements(self) -> "PipelineConfig":
        if self.paradigm is Paradigm.afm2:
            if self.routing is None:
                raise ValueError("afm2 requires agent routing")
        else:
            if self.variant is None:
                raise ValueError(f"{self.paradigm.value} requires a variant spec")
            v = self.variant
            if self.paradigm is Paradigm.p1 and v.ranker is not RankerKind.none:
                raise ValueError("p1 variants use no ranking module")
            if self.paradigm is Paradigm.p2 and (
                v.ranker is RankerKind.none or v.miner is not MinerKind.none
            ):
                raise ValueError("p2 variants use a ranker and no miner")
            if self.paradigm is Paradigm.p3 and (
                v.ranker is RankerKind.none or v.miner is MinerKind.none
            ):
                raise ValueError("p3 variants use both a ranker and a miner")
        return self

    @property
    def pipeline_id(self) -> str:
        if self.paradigm is Paradigm.afm2:
            return "afm2"
        assert self.variant is not None
        return self.variant.variant_id


class Decision(str, Enum):
    accept = "accept"
    refine = "refine"
    force_accept = "force_accept"


class RefinementRound(StrictModel):
    round_index: int = Field(ge=1)
    guidance_text: str
    candidate_scores: tuple[float, ...]
    best_score: float
    feedbacks: tuple[str, ...] = ()
    decision: Decision


class RefinementTrace(StrictModel):
    rounds: tuple[RefinementRound, ...] = Field(min_length=1)
    final_candidate: Candidate

    @model_validator(mode="after")
    def _decision_shape(self) -> "RefinementTrace":
        for r in self.rounds[:-1]:
            if r.decision is not Decision.refine:
                raise ValueError("only the last round may accept or force-accept")
        if self.rounds[-1].decision is Decision.refine:
            raise ValueError("the last round must accept or force-accept")
        return self


class PayloadResolver:
    """Resolves blob references against an ordered list of data roots.

    Generated blobs live under a run's blob directory while ground-truth blobs
    live under the manifest's data root; resolution tries each root in order.
    """

    def __init__(self, roots: list[Path] | tuple[Path, ...]):
        self.roots = tuple(Path(r) for r in roots)

    def resolve(self, blob: BlobRef) -> Path:
        for root in self.roots:
            candidate = root / blob.path
            try:
                resolved = candidate.resolve()
                root_resolved = root.resolve()
            except OSError as exc:  # pragma: no cover - filesystem oddities
                raise MissingBlobError(f"cannot resolve {blob.path!r}: {exc}") from exc
            if not resolved.is_relative_to(root_resolved):
                raise PathEscapeError(f"{blob.path!r} escapes data root {root}")
            if resolved.is_file():
                return resolved
        raise MissingBlobError(f"blob {blob.path!r} not found under any data root")

    def bytes_of(self, payload: ModalityPayload) -> bytes:
        if payload.kind is ModalityKind.text:
            assert payload.text is not None
            return payload.text.encode("utf-8")
        assert payload.blob is not None
        return self.resolve(payload.blob).read_bytes()


def validate_sample(sample: Sample, data_root: Path) -> Sample:
    """Check that every blob reference resolves to a readable file of the declared length."""
    if not sample.payloads:
        raise EmptyPayloadsError(f"sample {sample.id!r} has no payloads")
    resolver = PayloadResolver([data_root])
    for payload in sample.payloads.values():
        if payload.blob is None:
            continue
        path = resolver.resolve(payload.blob)
        actual = path.stat().st_size
        if actual != payload.blob.byte_length:
            raise MissingBlobError(
                f"blob {payload.blob.path!r} is {actual} bytes, declared {payload.blob.byte_length}"
            )
    return sample


def stable_digest(*parts: bytes | str) -> bytes:
    """SHA-256 over the concatenation of parts; the seed source for all mock behavior."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, str):
            part = part.encode("utf-8")
        h.update(part)
        h.update(b"\x00")
    return h.digest()


def derive_seed(base_seed: int, *parts: str) -> int:
    """Mix a base seed with string parts into a new 63-bit seed, stable across runs."""
    d = stable_digest(str(base_seed), *parts)
    return int.from_bytes(d[:8], "big") % (2**63)
