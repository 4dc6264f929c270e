"""Manifest ingestion, missing-mask simulation, experiment runs, and aggregation.

Results are append-only line-delimited JSON so runs are resumable and diffable:
re-running against the same directory and config hash skips already-recorded
samples. With a fixed clock injected, (manifest, config, seed) fully determine
the bytes of every result file.
"""

from __future__ import annotations

import csv
import io
import json
import random
import time
import wave
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from pydantic import Field, model_validator

from .agents import AgentBackends, MiningStage, PipelinePartialFailure, run_afm2
from .backends import Backend, BackendDescriptor, make_backend
from .core import (
    BlobRef,
    Candidate,
    GenerationParams,
    MissingMask,
    ModalityKind,
    ModalityPayload,
    Paradigm,
    PayloadResolver,
    PipelineConfig,
    RefinementTrace,
    Sample,
    StrictModel,
    derive_seed,
    stable_digest,
    validate_sample,
)
from .errors import (
    FatalConfigError,
    ManifestParseError,
    ManifestValidationError,
    ModbenchError,
    SchemaVersionMismatchError,
)
from .metrics import SidecarMetricsClient, cosine_sim, mer_text, remote_metric, si_snr
from .paradigms import run_paradigm1, run_paradigm2, run_paradigm3

RESULTS_SCHEMA_VERSION = "1"
METRIC_NAMES = ("fid", "clip_i", "mer", "clip_t", "pesq", "si_snr")
_SAMPLE_FIELDS = {"id", "image", "text", "audio", "labels"}


class Manifest(StrictModel):
    dataset_name: str
    data_root: str
    samples: tuple[Sample, ...]

    @model_validator(mode="after")
    def _unique_ids(self) -> "Manifest":
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate sample ids: {dupes}")
        return self

    def sample_by_id(self, sample_id: str) -> Sample:
        for sample in self.samples:
            if sample.id == sample_id:
                return sample
        raise KeyError(sample_id)


class RoleMap(StrictModel):
    """Backend ids filling the non-generator roles of the baseline paradigms."""

    embedder: str | None = None
    judge: str | None = None
    miner_local: str | None = None
    miner_strong: str | None = None
    captioner: str | None = None


class RunConfig(StrictModel):
    manifest_path: str
    target_kind: ModalityKind
    missing_rate: float = Field(ge=0.0, le=1.0)
    mask_seed: int = Field(default=0, ge=0, lt=2**64)
    pipeline: PipelineConfig
    backends: dict[str, BackendDescriptor]
    roles: RoleMap = RoleMap()
    parallel: int = Field(default=4, ge=1)
    results_dir: str | None = None
    sidecar_url: str | None = None
    domain_description: str = ""

    @model_validator(mode="after")
    def _ids_match(self) -> "RunConfig":
        for backend_id, descriptor in self.backends.items():
            if descriptor.backend_id != backend_id:
                raise ValueError(
                    f"backend key {backend_id!r} does not match descriptor id {descriptor.backend_id!r}"
                )
        return self


class ExperimentRecord(StrictModel):
    schema_version: str = RESULTS_SCHEMA_VERSION
    sample_id: str
    pipeline_id: str
    target_kind: ModalityKind
    missing_rate: float
    candidate_count: int
    metrics: dict[str, float] = Field(default_factory=dict)
    wall_time_seconds: float = 0.0
    rounds_used: int | None = None
    artifacts: tuple[str, ...] = ()
    error: str | None = None

    @model_validator(mode="after")
    def _metric_names(self) -> "ExperimentRecord":
        for name in self.metrics:
            if name not in METRIC_NAMES:
                raise ValueError(f"unknown metric {name!r}")
            if name == "fid":
                raise ValueError("fid is corpus-level and never appears on per-sample records")
        return self


def _payload_from_field(kind: ModalityKind, value) -> ModalityPayload | None:
    if value is None:
        return None
    if kind is ModalityKind.text:
        if not isinstance(value, str):
            raise ValueError(f"text field must be a string, got {type(value).__name__}")
        return ModalityPayload(kind=kind, text=value)
    if not isinstance(value, dict):
        raise ValueError(f"{kind.value} field must be an object with path/media_type/bytes")
    extra = set(value) - {"path", "media_type", "bytes"}
    if extra:
        raise ValueError(f"unknown {kind.value} fields: {sorted(extra)}")
    blob = BlobRef(
        path=value.get("path", ""),
        media_type=value.get("media_type", ""),
        byte_length=value.get("bytes", -1),
    )
    return ModalityPayload(kind=kind, blob=blob)


def load_manifest(path: Path | str) -> Manifest:
    """Parse a line-delimited JSON manifest ({id, image, text, audio, labels} per line).

    Null modality fields mean absent. Every sample is validated, including blob
    resolution against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestParseError(0, f"manifest file not found: {path}")
    data_root = path.parent
    samples: list[Sample] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise ManifestParseError(line_no, "record is not an object")
            unknown = set(record) - _SAMPLE_FIELDS
            if unknown:
                raise ManifestParseError(line_no, f"unknown fields: {sorted(unknown)}")
            sample_id = record.get("id")
            if not isinstance(sample_id, str) or not sample_id:
                raise ManifestParseError(line_no, "missing or empty 'id'")
            if sample_id in seen:
                raise ManifestValidationError(sample_id, "duplicate sample id")
            seen.add(sample_id)
            try:
                payloads = {}
                for kind in ModalityKind:
                    payload = _payload_from_field(kind, record.get(kind.value))
                    if payload is not None:
                        payloads[kind] = payload
                labels = record.get("labels")
                if labels is not None and (
                    not isinstance(labels, list) or not all(isinstance(x, str) for x in labels)
                ):
                    raise ValueError("labels must be a list of strings")
                sample = Sample(id=sample_id, payloads=payloads, labels=labels)
                validate_sample(sample, data_root)
            except ModbenchError as exc:
                raise ManifestValidationError(sample_id, str(exc)) from exc
            except (ValueError, TypeError) as exc:
                raise ManifestValidationError(sample_id, str(exc)) from exc
            samples.append(sample)
    return Manifest(dataset_name=path.stem, data_root=str(data_root), samples=tuple(samples))


def _round_half_away(x: float) -> int:
    return int(x + 0.5) if x >= 0 else -int(-x + 0.5)


def apply_missing_mask(
    manifest: Manifest, target_kind: ModalityKind, rate: float, seed: int
) -> MissingMask:
    """Select round(rate * eligible) sample ids by seeded sampling without replacement."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate {rate} outside [0, 1]")
    eligible = [s.id for s in manifest.samples if target_kind in s.payloads]
    count = min(len(eligible), _round_half_away(rate * len(eligible)))
    rng = random.Random(seed)
    masked = rng.sample(eligible, count) if count else []
    return MissingMask(target_kind=target_kind, rate=rate, seed=seed, masked_ids=tuple(masked))


def mask_for_manifest(mask: MissingMask, manifest: Manifest) -> MissingMask:
    """Validate a mask against a manifest (ids exist and carried the target kind)."""
    for sample_id in mask.masked_ids:
        try:
            sample = manifest.sample_by_id(sample_id)
        except KeyError:
            raise ManifestValidationError(sample_id, "masked id not in manifest") from None
        if mask.target_kind not in sample.payloads:
            raise ManifestValidationError(
                sample_id, f"sample never had the {mask.target_kind.value} modality"
            )
    return mask


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(json.loads(config.model_dump_json()), sort_keys=True)
    return stable_digest(canonical).hex()[:16]


class _OrderedWriter:
    """Serialized appender that emits records in submission-index order."""

    def __init__(self, path: Path):
        self.path = path
        self._pending: dict[int, str | None] = {}
        self._next = 0

    def _drain(self) -> None:
        ready: list[str] = []
        while self._next in self._pending:
            line = self._pending.pop(self._next)
            if line is not None:
                ready.append(line)
            self._next += 1
        if ready:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write("".join(r + "\n" for r in ready))

    def put(self, index: int, line: str) -> None:
        self._pending[index] = line
        self._drain()

    def skip(self, index: int) -> None:
        # already-recorded samples advance the cursor without writing
        self._pending[index] = None
        self._drain()


def _read_records(path: Path) -> list[ExperimentRecord]:
    records = []
    if not path.is_file():
        return records
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = ExperimentRecord.model_validate_json(line)
        if record.schema_version != RESULTS_SCHEMA_VERSION:
            raise SchemaVersionMismatchError(
                f"record schema {record.schema_version!r} != {RESULTS_SCHEMA_VERSION!r}"
            )
        records.append(record)
    return records


class ExperimentRunner:
    """Executes one configured pipeline over every masked sample of a manifest."""

    def __init__(
        self,
        manifest: Manifest,
        mask: MissingMask,
        config: RunConfig,
        out_dir: Path | str,
        clock: Callable[[], float] | None = None,
        backends: dict[str, Backend] | None = None,
        metrics_client: SidecarMetricsClient | None = None,
    ):
        self.manifest = manifest
        self.mask = mask_for_manifest(mask, manifest)
        self.config = config
        self.clock = clock or time.monotonic
        self.run_dir = Path(out_dir) / f"run_{config_hash(config)}_{config.pipeline.params.seed}"
        self.blob_dir = self.run_dir / "blobs"
        self.trace_dir = self.run_dir / "traces"
        self.records_path = self.run_dir / "records.jsonl"
        self.summary_path = self.run_dir / "summary.json"
        self.resolver = PayloadResolver([self.blob_dir, Path(manifest.data_root)])
        self._rule_cache: dict = {}
        if backends is None:
            backends = {
                backend_id: make_backend(descriptor, self.resolver, self.blob_dir)
                for backend_id, descriptor in config.backends.items()
            }
        self.backends = backends
        self.metrics_client = metrics_client
        if self.metrics_client is None and config.sidecar_url:
            self.metrics_client = SidecarMetricsClient(config.sidecar_url)

    # -- backend lookup ----------------------------------------------------

    def _backend(self, backend_id: str | None, role: str) -> Backend:
        if not backend_id:
            raise FatalConfigError(f"no backend configured for the {role} role")
        try:
            return self.backends[backend_id]
        except KeyError:
            raise FatalConfigError(f"{role} backend {backend_id!r} not in the backend map") from None

    def _optional_backend(self, backend_id: str | None) -> Backend | None:
        return self.backends.get(backend_id) if backend_id else None

    def _agent_backends(self) -> AgentBackends:
        routing = self.config.pipeline.routing
        assert routing is not None
        return AgentBackends(
            reasoner=self._backend(routing.reasoner, "reasoner"),
            miner=self._backend(routing.miner, "miner"),
            judge=self._backend(routing.judge, "judge"),
            language_model=self._backend(routing.language_model, "language model"),
            embedder=self._backend(routing.embedder, "embedder"),
            generators={
                kind: self._backend(routing.generator_for(kind), f"{kind.value} generator")
                for kind in ModalityKind
            },
        )

    # -- per-sample pipeline -------------------------------------------------

    def _run_pipeline(
        self, masked_sample: Sample, params: GenerationParams
    ) -> tuple[Candidate, RefinementTrace | None, MiningStage | None]:
        cfg = self.config.pipeline
        pipeline_cfg = cfg.model_copy(update={"params": params})
        target = self.config.target_kind
        roles = self.config.roles
        if cfg.paradigm is Paradigm.afm2:
            final, trace, mining = run_afm2(
                masked_sample,
                target,
                pipeline_cfg,
                self._agent_backends(),
                domain_description=self.config.domain_description
                or f"the {self.manifest.dataset_name} tri-modal dataset",
                rule_cache=self._rule_cache,
                dataset_name=self.manifest.dataset_name,
                clock=self.clock,
            )
            return final, trace, mining

        variant = cfg.variant
        assert variant is not None
        generator = self._backend(variant.generator_id, "generator")
        captioner = self._optional_backend(roles.captioner or roles.miner_local)
        if cfg.paradigm is Paradigm.p1:
            final = run_paradigm1(masked_sample, target, generator, params, captioner)
            return final, None, None
        embedder = self._optional_backend(roles.embedder)
        judge_backend = self._optional_backend(roles.judge)
        if cfg.paradigm is Paradigm.p2:
            final, _ = run_paradigm2(
                masked_sample, target, variant, params, generator,
                embedder=embedder, judge_backend=judge_backend, captioner=captioner,
            )
            return final, None, None
        miner_id = roles.miner_strong if variant.miner.value == "strong_lmm" else roles.miner_local
        final, _, _mined = run_paradigm3(
            masked_sample, target, variant, params, generator,
            self._backend(miner_id, "miner"),
            embedder=embedder, judge_backend=judge_backend, captioner=captioner,
            granularity=cfg.granularity,
        )
        return final, None, None

    def _load_wav(self, payload: ModalityPayload) -> np.ndarray:
        data = self.resolver.bytes_of(payload)
        with wave.open(io.BytesIO(data), "rb") as handle:
            frames = handle.readframes(handle.getnframes())
        return np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0

    def _compute_metrics(
        self, candidate: Candidate, truth: ModalityPayload
    ) -> dict[str, float]:
        metrics: dict[str, float] = {}
        target = self.config.target_kind
        embedder = self._embedder_for_metrics()
        if target is ModalityKind.text:
            assert candidate.payload.text is not None and truth.text is not None
            metrics["mer"] = mer_text(candidate.payload.text, truth.text)
            if embedder is not None:
                metrics["clip_t"] = cosine_sim(
                    embedder.embed(candidate.payload), embedder.embed(truth)
                )
        elif target is ModalityKind.image:
            if embedder is not None:
                metrics["clip_i"] = cosine_sim(
                    embedder.embed(candidate.payload), embedder.embed(truth)
                )
        else:
            generated = self._load_wav(candidate.payload)
            reference = self._load_wav(truth)
            overlap = min(len(generated), len(reference))
            if overlap:
                metrics["si_snr"] = si_snr(generated[:overlap], reference[:overlap])
            if self.metrics_client is not None:
                assert candidate.payload.blob is not None and truth.blob is not None
                metrics["pesq"] = remote_metric(
                    "pesq",
                    [self.resolver.resolve(candidate.payload.blob)],
                    [self.resolver.resolve(truth.blob)],
                    self.metrics_client,
                )
        return metrics

    def _embedder_for_metrics(self) -> Backend | None:
        cfg = self.config.pipeline
        if cfg.paradigm is Paradigm.afm2 and cfg.routing is not None:
            return self._optional_backend(cfg.routing.embedder)
        return self._optional_backend(self.config.roles.embedder)

    def _write_partial_trace(self, sample_id: str, failure: PipelinePartialFailure) -> None:
        self.trace_dir.mkdir(parents=True, exist_ok=True)
        export = {
            "schema_version": RESULTS_SCHEMA_VERSION,
            "sample_id": sample_id,
            "pipeline_id": self.config.pipeline.pipeline_id,
            "partial": True,
            "error": str(failure),
            "mining": (
                json.loads(failure.mining.model_dump_json()) if failure.mining is not None else None
            ),
            "rounds": [json.loads(r.model_dump_json()) for r in failure.rounds],
        }
        (self.trace_dir / f"{sample_id}.json").write_text(
            json.dumps(export, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def _run_sample(self, sample: Sample) -> ExperimentRecord:
        cfg = self.config.pipeline
        started = self.clock()
        sample_seed = derive_seed(cfg.params.seed, sample.id)
        params = cfg.params.model_copy(update={"seed": sample_seed})
        truth = sample.payloads[self.config.target_kind]
        masked_sample = sample.without(self.config.target_kind)
        base = dict(
            sample_id=sample.id,
            pipeline_id=cfg.pipeline_id,
            target_kind=self.config.target_kind,
            missing_rate=self.config.missing_rate,
            candidate_count=cfg.params.candidate_count,
        )
        try:
            candidate, trace, mining = self._run_pipeline(masked_sample, params)
            metrics = self._compute_metrics(candidate, truth)
        except PipelinePartialFailure as exc:
            self._write_partial_trace(sample.id, exc)
            return ExperimentRecord(
                **base, error=str(exc),
                wall_time_seconds=self.clock() - started,
            )
        except ModbenchError as exc:
            return ExperimentRecord(
                **base, error=f"{type(exc).__name__}: {exc}",
                wall_time_seconds=self.clock() - started,
            )
        artifacts = ()
        if candidate.payload.blob is not None:
            artifacts = (f"blobs/{candidate.payload.blob.path}",)
        rounds_used = len(trace.rounds) if trace is not None else None
        if trace is not None:
            self.trace_dir.mkdir(parents=True, exist_ok=True)
            export = {
                "schema_version": RESULTS_SCHEMA_VERSION,
                "sample_id": sample.id,
                "pipeline_id": cfg.pipeline_id,
                "enable_miner": cfg.enable_miner,
                "enable_verifier": cfg.enable_verifier,
                "mining": json.loads(mining.model_dump_json()) if mining is not None else None,
                "trace": json.loads(trace.model_dump_json()),
            }
            (self.trace_dir / f"{sample.id}.json").write_text(
                json.dumps(export, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
        return ExperimentRecord(
            **base,
            metrics=metrics,
            wall_time_seconds=self.clock() - started,
            rounds_used=rounds_used,
            artifacts=artifacts,
        )

    # -- run loop -----------------------------------------------------------

    def run(self) -> Path:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.blob_dir.mkdir(parents=True, exist_ok=True)
        current_hash = config_hash(self.config)
        if self.summary_path.is_file():
            previous = json.loads(self.summary_path.read_text(encoding="utf-8"))
            if previous.get("config_hash") != current_hash:
                raise FatalConfigError(
                    f"run directory {self.run_dir} belongs to config {previous.get('config_hash')}"
                )
        done = {record.sample_id for record in _read_records(self.records_path)}

        masked = [s for s in self.manifest.samples if s.id in set(self.mask.masked_ids)]
        todo = [(i, s) for i, s in enumerate(masked) if s.id not in done]
        writer = _OrderedWriter(self.records_path)
        for index, sample in enumerate(masked):
            if sample.id in done:
                writer.skip(index)

        if todo:
            if self.config.parallel == 1:
                for index, sample in todo:
                    writer.put(index, self._run_sample(sample).model_dump_json())
            else:
                with ThreadPoolExecutor(max_workers=self.config.parallel) as pool:
                    futures = {
                        pool.submit(self._run_sample, sample): index for index, sample in todo
                    }
                    for future in as_completed(futures):
                        writer.put(futures[future], future.result().model_dump_json())

        records = _read_records(self.records_path)
        aggregate_metrics: dict[str, float] = {}
        if (
            self.config.target_kind is ModalityKind.image
            and self.metrics_client is not None
        ):
            generated = [
                self.run_dir / record.artifacts[0]
                for record in records
                if record.error is None and record.artifacts
            ]
            references = [
                self.resolver.resolve(
                    self.manifest.sample_by_id(record.sample_id).payloads[ModalityKind.image].blob
                )
                for record in records
                if record.error is None
            ]
            if generated and references:
                aggregate_metrics["fid"] = remote_metric(
                    "fid", generated, references, self.metrics_client
                )

        summary = {
            "schema_version": RESULTS_SCHEMA_VERSION,
            "config_hash": current_hash,
            "pipeline_id": self.config.pipeline.pipeline_id,
            "dataset": self.manifest.dataset_name,
            "target_kind": self.config.target_kind.value,
            "missing_rate": self.config.missing_rate,
            "mask_seed": self.mask.seed,
            "seed": self.config.pipeline.params.seed,
            "samples_masked": len(self.mask.masked_ids),
            "records": len(records),
            "errors": sum(1 for r in records if r.error is not None),
            "aggregate_metrics": aggregate_metrics,
            "backends": {
                backend_id: json.loads(descriptor.model_dump_json())
                for backend_id, descriptor in sorted(self.config.backends.items())
            },
            "config": json.loads(self.config.model_dump_json()),
        }
        self.summary_path.write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        return self.records_path


def run_experiment(
    manifest: Manifest,
    mask: MissingMask,
    config: RunConfig,
    out_dir: Path | str,
    clock: Callable[[], float] | None = None,
    backends: dict[str, Backend] | None = None,
    metrics_client: SidecarMetricsClient | None = None,
) -> Path:
    """Run every masked sample through the configured pipeline; returns the records path.

    Per-sample failures become error records and never abort the run; only an
    unusable configuration raises.
    """
    runner = ExperimentRunner(
        manifest, mask, config, out_dir,
        clock=clock, backends=backends, metrics_client=metrics_client,
    )
    return runner.run()


def aggregate(
    results_paths: Iterable[Path | str],
    group_by: tuple[str, ...] = ("pipeline_id", "missing_rate"),
) -> dict:
    """Arithmetic means per group and metric, with error records counted separately.

    Returns {"rows": [...], "csv": str, "table": str}; rows are grouped by the
    requested record fields (e.g. add "candidate_count" for best-of-N sweeps)
    and aggregation is invariant to record order.
    """
    paths = [Path(p) for p in results_paths]
    if not paths:
        raise ValueError("aggregate needs at least one results file")
    records: list[ExperimentRecord] = []
    for path in paths:
        records.extend(_read_records(path))

    allowed = set(ExperimentRecord.model_fields)
    for field_name in group_by:
        if field_name not in allowed:
            raise ValueError(f"unknown group-by field {field_name!r}")

    groups: dict[tuple, list[ExperimentRecord]] = {}
    for record in records:
        key = tuple(getattr(record, f) for f in group_by)
        groups.setdefault(key, []).append(record)

    def _key_order(key: tuple) -> tuple:
        return tuple(
            (0, value, "") if isinstance(value, (int, float)) and not isinstance(value, bool)
            else (1, 0, str(value.value if isinstance(value, ModalityKind) else value))
            for value in key
        )

    rows = []
    for key in sorted(groups, key=_key_order):
        members = groups[key]
        row: dict = {
            f: (v.value if isinstance(v, ModalityKind) else v) for f, v in zip(group_by, key)
        }
        row["n"] = sum(1 for m in members if m.error is None)
        row["errors"] = sum(1 for m in members if m.error is not None)
        for metric in METRIC_NAMES:
            values = [m.metrics[metric] for m in members if m.error is None and metric in m.metrics]
            if values:
                row[metric] = sum(values) / len(values)
        rows.append(row)

    columns = list(group_by) + ["n", "errors"] + [
        m for m in METRIC_NAMES if any(m in row for row in rows)
    ]
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: _fmt_cell(row.get(c)) for c in columns})
    csv_text = buffer.getvalue()

    widths = {c: max(len(c), *(len(_fmt_cell(row.get(c))) for row in rows)) if rows else len(c) for c in columns}
    lines = ["  ".join(c.ljust(widths[c]) for c in columns)]
    for row in rows:
        lines.append("  ".join(_fmt_cell(row.get(c)).ljust(widths[c]) for c in columns))
    table_text = "\n".join(lines)

    return {"rows": rows, "csv": csv_text, "table": table_text}


def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)
