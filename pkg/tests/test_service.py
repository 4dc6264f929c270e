"""HTTP service surface: request/response contracts for every endpoint."""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from modbench.core import ModalityKind, Paradigm
from modbench.demo import build_toy_manifest, demo_run_config
from modbench.service import apply_overrides, create_app


@pytest.fixture()
def client():
    return TestClient(create_app())


class TestHealthAndVariants:
    def test_health(self, client):
        body = client.get("/v1/health").json()
        assert body["status"] == "ok"

    def test_variants_endpoint(self, client):
        body = client.get("/v1/variants").json()
        assert len(body["variants"]) == 42
        assert body["partition"] == {"p1": 6, "p2": 12, "p3": 24}


class TestTemplates:
    def test_listing_has_sixteen(self, client):
        body = client.get("/v1/templates").json()
        assert len(body) == 16

    def test_get_body(self, client):
        body = client.get("/v1/templates/verify-audio").json()
        assert "noise_resilience" in body["body"]

    def test_unknown_template_404(self, client):
        assert client.get("/v1/templates/nope").status_code == 404

    def test_render(self, client):
        body = client.post(
            "/v1/templates/render",
            json={"template_id": "mining-knowledge", "bindings": {"input_modality": "audio"}},
        ).json()
        assert "understand the audio provided by the user" in body["prompt"]

    def test_render_missing_binding_400(self, client):
        response = client.post(
            "/v1/templates/render", json={"template_id": "mining-knowledge", "bindings": {}}
        )
        assert response.status_code == 400
        assert response.json()["error"] == "MissingBindingError"

    def test_export(self, client, tmp_path):
        body = client.post("/v1/templates/export", json={"out_dir": str(tmp_path)}).json()
        assert len(body["written"]) == 16


class TestParseJudgeReport:
    def test_valid_report(self, client):
        raw = json.dumps(
            {
                "semantic_alignment": 5, "factual_groundedness": 5,
                "coherence_completeness": 4, "consistency": 5,
                "relevance_focus": 5, "language_quality": 4,
                "overall_score": 4.2, "hallucinated_assertions": 0, "total_assertions": 4,
            }
        )
        body = client.post("/v1/parse/judge-report", json={"raw": raw, "kind": "text"}).json()
        assert abs(body["overall_score"] - 28 / 6) < 1e-6

    def test_schema_mismatch_400(self, client):
        response = client.post("/v1/parse/judge-report", json={"raw": "{}", "kind": "text"})
        assert response.status_code == 400


class TestMaskEndpoint:
    def test_mask_and_write(self, client, tmp_path):
        manifest_path = build_toy_manifest(tmp_path / "toy")
        out = tmp_path / "mask.json"
        body = client.post(
            "/v1/masks",
            json={
                "manifest_path": str(manifest_path), "target_kind": "image",
                "rate": 0.3, "seed": 5, "out_path": str(out),
            },
        ).json()
        assert body["eligible"] == 20
        assert len(body["mask"]["masked_ids"]) == 6
        assert json.loads(out.read_text())["target_kind"] == "image"

    def test_missing_manifest_404(self, client):
        response = client.post(
            "/v1/masks",
            json={"manifest_path": "/nope.jsonl", "target_kind": "image", "rate": 0.3, "seed": 1},
        )
        assert response.status_code == 404


class TestRunEndpoint:
    def test_run_and_aggregate(self, client, tmp_path):
        manifest_path = build_toy_manifest(tmp_path / "toy")
        config = demo_run_config(manifest_path, Paradigm.p1, ModalityKind.image, 0.3, 5)
        body = client.post(
            "/v1/runs",
            json={"config": json.loads(config.model_dump_json()), "out_dir": str(tmp_path / "res")},
        ).json()
        assert body["summary"]["errors"] == 0
        assert body["summary"]["records"] == 6

        agg = client.post(
            "/v1/aggregate", json={"results": [body["records_path"]]}
        ).json()
        assert len(agg["rows"]) == 1
        assert agg["rows"][0]["n"] == 6

    def test_override_changes_config(self, client, tmp_path):
        manifest_path = build_toy_manifest(tmp_path / "toy")
        config = demo_run_config(manifest_path, Paradigm.p1, ModalityKind.image, 0.3, 5)
        body = client.post(
            "/v1/runs",
            json={
                "config": json.loads(config.model_dump_json()),
                "out_dir": str(tmp_path / "res"),
                "overrides": {"missing_rate": "0.5", "pipeline.params.candidate_count": "2"},
            },
        ).json()
        assert body["summary"]["missing_rate"] == 0.5
        assert body["summary"]["records"] == 10

    def test_aggregate_missing_file_404(self, client):
        response = client.post("/v1/aggregate", json={"results": ["/nope.jsonl"]})
        assert response.status_code == 404


class TestApplyOverrides:
    def test_typed_values(self, tmp_path):
        manifest_path = build_toy_manifest(tmp_path / "toy")
        config = demo_run_config(manifest_path, Paradigm.afm2, ModalityKind.image, 0.3, 5)
        updated = apply_overrides(
            config, {"pipeline.threshold": "4.0", "pipeline.enable_miner": "false"}
        )
        assert updated.pipeline.threshold == 4.0
        assert updated.pipeline.enable_miner is False

    def test_unknown_path_rejected(self, tmp_path):
        from modbench.errors import FatalConfigError

        manifest_path = build_toy_manifest(tmp_path / "toy")
        config = demo_run_config(manifest_path, Paradigm.p1, ModalityKind.image, 0.3, 5)
        with pytest.raises(FatalConfigError):
            apply_overrides(config, {"pipeline.niente.x": "1"})


def test_results_dir_env_override(tmp_path, monkeypatch):
    from modbench.service import _results_root

    monkeypatch.delenv("MB_RESULTS_DIR", raising=False)
    assert _results_root(None) == Path("results")
    assert _results_root(str(tmp_path / "explicit")) == tmp_path / "explicit"
    monkeypatch.setenv("MB_RESULTS_DIR", str(tmp_path / "env"))
    assert _results_root(None) == tmp_path / "env"
    assert _results_root(str(tmp_path / "explicit")) == tmp_path / "explicit"
