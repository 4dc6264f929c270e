"""Shared fixtures and scripted backends for the test suite."""

from __future__ import annotations

import json
import re

import pytest

from modbench.backends import Backend, BackendDescriptor, BackendRole, MockBackend, Transport
from modbench.core import (
    AUDIO_CRITERIA,
    BlobRef,
    IMAGE_CRITERIA,
    ModalityKind,
    ModalityPayload,
    PayloadResolver,
    Sample,
    TEXT_CRITERIA,
)
from modbench.demo import build_toy_manifest
from modbench.harness import load_manifest


def mock_descriptor(backend_id: str, role: BackendRole, **overrides) -> BackendDescriptor:
    return BackendDescriptor(
        backend_id=backend_id, role=role, transport=Transport.mock, **overrides
    )


def make_mock(backend_id: str, role: BackendRole, resolver=None, output_dir=None, **overrides):
    return MockBackend(mock_descriptor(backend_id, role, **overrides), resolver, output_dir)


@pytest.fixture()
def toy_manifest(tmp_path):
    path = build_toy_manifest(tmp_path / "toy")
    return load_manifest(path)


@pytest.fixture()
def text_sample():
    return Sample(
        id="s1",
        payloads={
            ModalityKind.text: ModalityPayload(kind=ModalityKind.text, text="a dog barks in a park")
        },
    )


def tri_modal_sample(tmp_path, sample_id="tri-1", text="a dog barks in a park"):
    """A sample with all three modalities, blobs written under tmp_path."""
    tmp_path.mkdir(parents=True, exist_ok=True)
    image_path = tmp_path / "img.png"
    audio_path = tmp_path / "aud.wav"
    image_path.write_bytes(b"\x89PNG-fake-" + sample_id.encode())
    audio_path.write_bytes(b"RIFF-fake-" + sample_id.encode())
    return Sample(
        id=sample_id,
        payloads={
            ModalityKind.image: ModalityPayload(
                kind=ModalityKind.image,
                blob=BlobRef(path="img.png", media_type="image/png",
                             byte_length=image_path.stat().st_size),
            ),
            ModalityKind.text: ModalityPayload(kind=ModalityKind.text, text=text),
            ModalityKind.audio: ModalityPayload(
                kind=ModalityKind.audio,
                blob=BlobRef(path="aud.wav", media_type="audio/wav",
                             byte_length=audio_path.stat().st_size),
            ),
        },
        labels=["dog"],
    )


_GENERATED_TEXT_RE = re.compile(r"- generated_text: (.*)")


class ScriptedJudgeBackend(Backend):
    """Judge whose per-(round, candidate) overall scores follow a fixed script.

    Calls arrive candidate-major, reference-minor, rounds strictly sequential,
    so a flat call counter addresses the script. Each reply sets all six
    criteria to the scripted value (mean == value) with zero hallucinations.
    The candidate text seen in each verify prompt is recorded for assertions.
    """

    def __init__(self, round_scores: list[list[float]], n_refs: int):
        descriptor = mock_descriptor("scripted-judge", BackendRole.judge)
        super().__init__(descriptor, PayloadResolver([]), None)
        self.round_scores = round_scores
        self.n_refs = n_refs
        self.calls = 0
        self.seen_texts: dict[tuple[int, int], str] = {}

    def complete_text(self, prompt, attachments=(), params=None, seed=0):
        flat = [
            (r, c, score)
            for r, scores in enumerate(self.round_scores)
            for c, score in enumerate(scores)
            for _ in range(self.n_refs)
        ]
        if self.calls >= len(flat):
            raise AssertionError(f"scripted judge exhausted after {len(flat)} calls")
        round_index, candidate_index, score = flat[self.calls]
        self.calls += 1
        found = _GENERATED_TEXT_RE.search(prompt)
        if found:
            self.seen_texts[(round_index, candidate_index)] = found.group(1).strip()
        if "accuracy_to_ground_truth" in prompt:
            names = IMAGE_CRITERIA
        elif "noise_resilience" in prompt:
            names = AUDIO_CRITERIA
        else:
            names = TEXT_CRITERIA
        body: dict = {name: score for name in names}
        body["overall_score"] = score
        if names is IMAGE_CRITERIA:
            body["hallucinated_elements"] = []
        else:
            body["hallucinated_assertions"] = 0
        body["total_assertions"] = 1
        return json.dumps(body)


class FixedReplyBackend(Backend):
    """Backend whose complete_text returns queued replies verbatim."""

    def __init__(self, replies: list[str], role: BackendRole = BackendRole.judge):
        super().__init__(mock_descriptor("fixed-reply", role), PayloadResolver([]), None)
        self.replies = list(replies)
        self.calls = 0

    def complete_text(self, prompt, attachments=(), params=None, seed=0):
        reply = self.replies[min(self.calls, len(self.replies) - 1)]
        self.calls += 1
        return reply
