"""FastAPI service wrapping the engine; the CLI is a thin client of these endpoints."""

from __future__ import annotations

import json
import os
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .core import JudgeReport, MissingMask, ModalityKind
from .demo import run_mock_demo
from .errors import FatalConfigError, ManifestParseError, ModbenchError
from .harness import RunConfig, aggregate, apply_missing_mask, load_manifest, run_experiment
from .paradigms import enumerate_variants
from .prompts import TEMPLATES, export_templates, parse_judge_report, render

RESULTS_DIR_ENV = "MB_RESULTS_DIR"


class VariantView(BaseModel):
    variant_id: str
    label: str
    paradigm: str
    generator_id: str
    ranker: str
    miner: str
    target_kind: ModalityKind


class VariantsResponse(BaseModel):
    variants: list[VariantView]
    partition: dict[str, int]


class MaskRequest(BaseModel):
    manifest_path: str
    target_kind: ModalityKind
    rate: float = Field(ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0)
    out_path: str | None = None


class MaskResponse(BaseModel):
    mask: MissingMask
    eligible: int
    out_path: str | None = None


class RunRequest(BaseModel):
    config: RunConfig
    out_dir: str | None = None
    overrides: dict[str, str] = Field(default_factory=dict)


class RunResponse(BaseModel):
    records_path: str
    summary: dict


class AggregateRequest(BaseModel):
    results: list[str] = Field(min_length=1)
    group_by: list[str] = Field(default_factory=lambda: ["pipeline_id", "missing_rate"])


class AggregateResponse(BaseModel):
    rows: list[dict]
    csv: str
    table: str


class TemplateView(BaseModel):
    template_id: str
    expected_output: str
    required_placeholders: list[str]


class TemplateBody(TemplateView):
    body: str


class RenderRequest(BaseModel):
    template_id: str
    bindings: dict[str, str] = Field(default_factory=dict)


class ExportTemplatesRequest(BaseModel):
    out_dir: str


class ParseJudgeRequest(BaseModel):
    raw: str
    kind: ModalityKind


class MockDemoRequest(BaseModel):
    out_dir: str
    seed: int = Field(default=7, ge=0)


def apply_overrides(config: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Dot-path overrides onto the config JSON (e.g. pipeline.threshold=4.0).

    Values parse as JSON when possible and fall back to plain strings.
    """
    if not overrides:
        return config
    data = json.loads(config.model_dump_json())
    for dotted, raw_value in overrides.items():
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        parts = dotted.split(".")
        node = data
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise FatalConfigError(f"override path {dotted!r} does not exist")
            node = node[part]
        if not isinstance(node, dict):
            raise FatalConfigError(f"override path {dotted!r} does not address a field")
        node[parts[-1]] = value
    return RunConfig.model_validate(data)


def _results_root(explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get(RESULTS_DIR_ENV)
    return Path(env) if env else Path("results")


def create_app() -> FastAPI:
    app = FastAPI(title="modbench", version=__version__)

    @app.exception_handler(ModbenchError)
    async def _engine_error(request, exc: ModbenchError):  # noqa: ANN001
        status = 404 if isinstance(exc, (ManifestParseError,)) else 400
        return JSONResponse(
            status_code=status, content={"error": type(exc).__name__, "detail": str(exc)}
        )

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.get("/v1/variants", response_model=VariantsResponse)
    def variants() -> VariantsResponse:
        specs = enumerate_variants()
        views = []
        partition = {"p1": 0, "p2": 0, "p3": 0}
        for spec in specs:
            if spec.miner.value != "none":
                paradigm = "p3"
            elif spec.ranker.value != "none":
                paradigm = "p2"
            else:
                paradigm = "p1"
            partition[paradigm] += 1
            views.append(
                VariantView(
                    variant_id=spec.variant_id,
                    label=spec.label,
                    paradigm=paradigm,
                    generator_id=spec.generator_id,
                    ranker=spec.ranker.value,
                    miner=spec.miner.value,
                    target_kind=spec.target_kind,
                )
            )
        return VariantsResponse(variants=views, partition=partition)

    @app.post("/v1/masks", response_model=MaskResponse)
    def make_mask(request: MaskRequest) -> MaskResponse:
        manifest = load_manifest(request.manifest_path)
        mask = apply_missing_mask(manifest, request.target_kind, request.rate, request.seed)
        eligible = sum(1 for s in manifest.samples if request.target_kind in s.payloads)
        out_path = None
        if request.out_path:
            path = Path(request.out_path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(mask.model_dump_json(indent=2) + "\n", encoding="utf-8")
            out_path = str(path)
        return MaskResponse(mask=mask, eligible=eligible, out_path=out_path)

    @app.post("/v1/runs", response_model=RunResponse)
    def run(request: RunRequest) -> RunResponse:
        config = apply_overrides(request.config, request.overrides)
        manifest = load_manifest(config.manifest_path)
        mask = apply_missing_mask(
            manifest, config.target_kind, config.missing_rate, config.mask_seed
        )
        out_dir = _results_root(request.out_dir or config.results_dir)
        records_path = run_experiment(manifest, mask, config, out_dir)
        summary = json.loads(
            (records_path.parent / "summary.json").read_text(encoding="utf-8")
        )
        return RunResponse(records_path=str(records_path), summary=summary)

    @app.post("/v1/aggregate", response_model=AggregateResponse)
    def run_aggregate(request: AggregateRequest) -> AggregateResponse:
        for path in request.results:
            if not Path(path).is_file():
                raise HTTPException(status_code=404, detail=f"results file not found: {path}")
        result = aggregate(request.results, tuple(request.group_by))
        return AggregateResponse(rows=result["rows"], csv=result["csv"], table=result["table"])

    @app.get("/v1/templates", response_model=list[TemplateView])
    def list_templates() -> list[TemplateView]:
        return [
            TemplateView(
                template_id=t.template_id,
                expected_output=t.expected_output.value,
                required_placeholders=sorted(t.required_placeholders),
            )
            for t in TEMPLATES.values()
        ]

    @app.get("/v1/templates/{template_id}", response_model=TemplateBody)
    def get_template(template_id: str) -> TemplateBody:
        template = TEMPLATES.get(template_id)
        if template is None:
            raise HTTPException(status_code=404, detail=f"unknown template {template_id!r}")
        return TemplateBody(
            template_id=template.template_id,
            expected_output=template.expected_output.value,
            required_placeholders=sorted(template.required_placeholders),
            body=template.body,
        )

    @app.post("/v1/templates/render")
    def render_template(request: RenderRequest) -> dict:
        return {"prompt": render(request.template_id, request.bindings)}

    @app.post("/v1/templates/export")
    def export(request: ExportTemplatesRequest) -> dict:
        written = export_templates(Path(request.out_dir))
        return {"written": [str(p) for p in written]}

    @app.post("/v1/parse/judge-report", response_model=JudgeReport)
    def parse_report(request: ParseJudgeRequest) -> JudgeReport:
        return parse_judge_report(request.raw, request.kind)

    @app.post("/v1/mock-demo")
    def mock_demo(request: MockDemoRequest) -> dict:
        return run_mock_demo(request.out_dir, seed=request.seed)

    return app


app = create_app()
