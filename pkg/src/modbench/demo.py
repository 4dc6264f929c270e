"""Bundled zero-network demo: a deterministic toy tri-modal dataset plus mock runs."""

from __future__ import annotations

import io
import json
import math
import wave
from pathlib import Path

import numpy as np
from PIL import Image

from .backends import BackendDescriptor, BackendRole, Transport
from .core import (
    AgentRouting,
    GenerationParams,
    Granularity,
    MinerKind,
    ModalityKind,
    Paradigm,
    PipelineConfig,
    RankerKind,
    VariantSpec,
    stable_digest,
)
from .harness import (
    RoleMap,
    RunConfig,
    aggregate,
    apply_missing_mask,
    load_manifest,
    run_experiment,
)

TOY_SAMPLE_COUNT = 20
_TOY_NOUNS = ("dog", "train", "violin", "river", "market", "engine", "owl", "bell",
              "kite", "drum", "fox", "wave", "clock", "gate", "horse", "fire",
              "cart", "crow", "mill", "lamp")
_TOY_VERBS = ("barks", "rattles", "plays", "flows", "bustles", "hums", "hoots", "rings",
              "soars", "beats", "darts", "crashes", "ticks", "creaks", "gallops", "crackles",
              "rolls", "calls", "turns", "glows")
_TOY_PLACES = ("in a park", "near the station", "on a stage", "under the bridge",
               "at noon", "in the garage", "at night", "above the square",
               "over the beach", "in the cellar", "by the fence", "along the shore",
               "in the hallway", "by the barn", "on the track", "in the camp",
               "down the lane", "on the roof", "by the pond", "at the corner")


def _toy_image(i: int) -> bytes:
    d = stable_digest("toy-image", str(i))
    img = Image.new("RGB", (48, 48), (d[0], d[1], d[2]))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _toy_audio(i: int, duration: float = 10.0, rate: int = 16000) -> bytes:
    d = stable_digest("toy-audio", str(i))
    freq = 100.0 + float(int.from_bytes(d[0:2], "big") % 600)
    t = np.arange(int(duration * rate), dtype=np.float64) / rate
    signal = (0.3 * np.sin(2.0 * math.pi * freq * t) * 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(rate)
        handle.writeframes(signal.tobytes())
    return buf.getvalue()


def build_toy_manifest(out_dir: Path | str, sample_count: int = TOY_SAMPLE_COUNT) -> Path:
    """Write a deterministic tri-modal toy manifest with images, texts, and audio."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(sample_count):
        image_bytes = _toy_image(i)
        audio_bytes = _toy_audio(i)
        image_path = f"images/toy_{i:03d}.png"
        audio_path = f"audio/toy_{i:03d}.wav"
        (out_dir / image_path).write_bytes(image_bytes)
        (out_dir / audio_path).write_bytes(audio_bytes)
        noun, verb, place = _TOY_NOUNS[i], _TOY_VERBS[i], _TOY_PLACES[i]
        lines.append(
            json.dumps(
                {
                    "id": f"toy-{i:03d}",
                    "image": {"path": image_path, "media_type": "image/png", "bytes": len(image_bytes)},
                    "text": f"a {noun} {verb} {place}",
                    "audio": {"path": audio_path, "media_type": "audio/wav", "bytes": len(audio_bytes)},
                    "labels": [noun],
                }
            )
        )
    manifest_path = out_dir / "toy.jsonl"
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_path


def _mock_descriptor(backend_id: str, role: BackendRole) -> BackendDescriptor:
    return BackendDescriptor(backend_id=backend_id, role=role, transport=Transport.mock)


def mock_backend_map() -> dict[str, BackendDescriptor]:
    """Mock descriptors for the full roster plus the shared LMM/embedder roles."""
    gen_roles = {
        "sd3.5": BackendRole.image_gen,
        "flux.1-dev": BackendRole.image_gen,
        "qwen2.5-vl-7b": BackendRole.text_gen,
        "qwen2.5-omni-7b": BackendRole.text_gen,
        "audioldm2": BackendRole.audio_gen,
        "sa1.0": BackendRole.audio_gen,
    }
    descriptors = {bid: _mock_descriptor(bid, role) for bid, role in gen_roles.items()}
    descriptors["mock-embedder"] = _mock_descriptor("mock-embedder", BackendRole.embedder)
    descriptors["mock-judge"] = _mock_descriptor("mock-judge", BackendRole.judge)
    descriptors["mock-miner"] = _mock_descriptor("mock-miner", BackendRole.miner)
    descriptors["mock-miner-strong"] = _mock_descriptor("mock-miner-strong", BackendRole.miner)
    descriptors["mock-reasoner"] = _mock_descriptor("mock-reasoner", BackendRole.reasoner)
    descriptors["mock-lm"] = _mock_descriptor("mock-lm", BackendRole.text_gen)
    return descriptors


DEMO_GENERATORS = {
    ModalityKind.image: "sd3.5",
    ModalityKind.text: "qwen2.5-vl-7b",
    ModalityKind.audio: "audioldm2",
}


def demo_pipeline_config(
    paradigm: Paradigm,
    target_kind: ModalityKind,
    seed: int,
    candidate_count: int = 3,
    max_rounds: int = 2,
) -> PipelineConfig:
    params = GenerationParams(candidate_count=candidate_count, seed=seed)
    generator = DEMO_GENERATORS[target_kind]
    if paradigm is Paradigm.afm2:
        routing = AgentRouting(
            reasoner="mock-reasoner",
            miner="mock-miner",
            judge="mock-judge",
            language_model="mock-lm",
            embedder="mock-embedder",
            image_generator=DEMO_GENERATORS[ModalityKind.image],
            audio_generator=DEMO_GENERATORS[ModalityKind.audio],
            text_generator=DEMO_GENERATORS[ModalityKind.text],
        )
        return PipelineConfig(
            paradigm=paradigm, routing=routing, params=params, max_rounds=max_rounds
        )
    ranker = {
        Paradigm.p1: RankerKind.none,
        Paradigm.p2: RankerKind.embedding,
        Paradigm.p3: RankerKind.judge,
    }[paradigm]
    miner = MinerKind.local_lmm if paradigm is Paradigm.p3 else MinerKind.none
    variant = VariantSpec(
        generator_id=generator, ranker=ranker, miner=miner, target_kind=target_kind
    )
    return PipelineConfig(
        paradigm=paradigm,
        variant=variant,
        params=params,
        granularity=Granularity.object_location if paradigm is Paradigm.p3 else Granularity.baseline,
    )


def demo_run_config(
    manifest_path: Path,
    paradigm: Paradigm,
    target_kind: ModalityKind,
    rate: float,
    seed: int,
    candidate_count: int = 3,
) -> RunConfig:
    return RunConfig(
        manifest_path=str(manifest_path),
        target_kind=target_kind,
        missing_rate=rate,
        mask_seed=seed,
        pipeline=demo_pipeline_config(paradigm, target_kind, seed, candidate_count),
        backends=mock_backend_map(),
        roles=RoleMap(
            embedder="mock-embedder",
            judge="mock-judge",
            miner_local="mock-miner",
            miner_strong="mock-miner-strong",
            captioner="mock-miner",
        ),
        parallel=1,
        domain_description="a small tri-modal demo dataset",
    )


def run_mock_demo(
    out_dir: Path | str,
    seed: int = 7,
    rates: tuple[float, ...] = (0.3, 0.5, 0.7),
    paradigms: tuple[Paradigm, ...] = (Paradigm.p1, Paradigm.p2, Paradigm.p3, Paradigm.afm2),
    kinds: tuple[ModalityKind, ...] = (ModalityKind.image, ModalityKind.text, ModalityKind.audio),
) -> dict:
    """End-to-end demo on the bundled toy data: every rate x paradigm x modality.

    Everything runs on mock backends with an injected constant clock, so two
    invocations with the same seed produce byte-identical result directories.
    """
    out_dir = Path(out_dir)
    manifest_path = build_toy_manifest(out_dir / "toy")
    manifest = load_manifest(manifest_path)
    clock = lambda: 0.0  # noqa: E731 - injected constant clock keeps outputs reproducible

    masks = {
        (kind, rate): apply_missing_mask(manifest, kind, rate, seed)
        for kind in kinds
        for rate in rates
    }
    results: list[Path] = []
    for paradigm in paradigms:
        for kind in kinds:
            for rate in rates:
                # config carries the out_dir-relative path so two demo runs in
                # different directories hash and serialize identically
                config = demo_run_config(Path("toy/toy.jsonl"), paradigm, kind, rate, seed)
                records_path = run_experiment(
                    manifest, masks[(kind, rate)], config, out_dir / "results", clock=clock
                )
                results.append(records_path)

    summary = aggregate(results, group_by=("pipeline_id", "target_kind", "missing_rate"))
    demo_summary = {
        "manifest": "toy/toy.jsonl",
        "runs": sorted(str(p.relative_to(out_dir)) for p in results),
        "rows": summary["rows"],
    }
    (out_dir / "demo_summary.json").write_text(
        json.dumps(demo_summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return {"summary_path": str(out_dir / "demo_summary.json"), **demo_summary, "table": summary["table"]}
