"""Native metrics (MER, SI-SNR, embedding cosine) and the sidecar-backed ones (FID, PESQ)."""

from __future__ import annotations

import base64
import math
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from .core import EmbeddingVector, stable_digest
from .errors import (
    DimensionMismatchError,
    EmptySignalError,
    LengthMismatchError,
    RangeViolationError,
    SidecarUnavailableError,
)

_EPS = 1e-8
_SNR_CLAMP_DB = 100.0
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


@dataclass(frozen=True)
class AlignmentCounts:
    """Hit/substitution/deletion/insertion counts of a minimum-edit alignment."""

    hits: int
    substitutions: int
    deletions: int
    insertions: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def total(self) -> int:
        return self.hits + self.errors


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def align(hypothesis: Sequence[str], reference: Sequence[str]) -> AlignmentCounts:
    """Minimum-edit alignment with unit costs; ties broken toward more hits.

    DP state is the lexicographic minimum of (edits, -hits), which is well
    defined because both components accumulate additively along a path.
    """
    m, n = len(reference), len(hypothesis)
    # prev[j] = (edits, -hits) for aligning reference[:i] against hypothesis[:j]
    prev = [(j, 0) for j in range(n + 1)]
    for i in range(1, m + 1):
        cur = [(i, 0)] + [(0, 0)] * n
        ref_tok = reference[i - 1]
        for j in range(1, n + 1):
            if ref_tok == hypothesis[j - 1]:
                diag = (prev[j - 1][0], prev[j - 1][1] - 1)
            else:
                diag = (prev[j - 1][0] + 1, prev[j - 1][1])
            delete = (prev[j][0] + 1, prev[j][1])
            insert = (cur[j - 1][0] + 1, cur[j - 1][1])
            cur[j] = min(diag, delete, insert)
        prev = cur
    edits, neg_hits = prev[n]
    hits = -neg_hits
    substitutions = m + n - 2 * hits - edits
    deletions = m - hits - substitutions
    insertions = n - hits - substitutions
    return AlignmentCounts(hits, substitutions, deletions, insertions)


def mer(hypothesis: Sequence[str], reference: Sequence[str]) -> float:
    """Match error rate (S+D+I)/(H+S+D+I) in [0, 1]; two empty sequences score 0."""
    if not hypothesis and not reference:
        return 0.0
    counts = align(hypothesis, reference)
    return counts.errors / counts.total


def mer_text(hypothesis: str, reference: str) -> float:
    return mer(tokenize(hypothesis), tokenize(reference))


def si_snr(estimate: Sequence[float] | np.ndarray, reference: Sequence[float] | np.ndarray) -> float:
    """Scale-invariant SNR in dB, clamped to [-100, +100]."""
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.size == 0 or ref.size == 0:
        raise EmptySignalError("signals must be non-empty")
    if est.shape != ref.shape:
        raise LengthMismatchError(f"signal lengths differ: {est.shape} vs {ref.shape}")
    est = est - est.mean()
    ref = ref - ref.mean()
    target = (np.dot(est, ref) / (np.dot(ref, ref) + _EPS)) * ref
    noise = est - target
    ratio = (np.dot(target, target) + _EPS) / (np.dot(noise, noise) + _EPS)
    value = 10.0 * math.log10(ratio)
    return max(-_SNR_CLAMP_DB, min(_SNR_CLAMP_DB, value))


def cosine_sim(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity of unit vectors, floored at 0 to stay in [0, 1]."""
    if a.dimension != b.dimension:
        raise DimensionMismatchError(f"dimensions differ: {a.dimension} vs {b.dimension}")
    dot = float(np.dot(np.asarray(a.values), np.asarray(b.values)))
    return max(0.0, min(1.0, dot))


def groundedness_score(hallucinated: int, total: int) -> int:
    """Factual-groundedness rubric: 5 iff no hallucinations, else max(0, 5 - ceil(5H/N))."""
    if hallucinated < 0 or total < 0:
        raise ValueError("counts must be non-negative")
    if hallucinated == 0:
        return 5
    if total == 0:
        return 0
    return max(0, 5 - math.ceil(5 * hallucinated / total))


PESQ_RANGE = (-0.5, 4.5)


class SidecarMetricsClient:
    """Thin client for the sidecar's /v1/metric endpoints."""

    def __init__(self, base_url: str, client: httpx.Client | None = None, timeout: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)

    def _post(self, path: str, payload: dict) -> dict:
        try:
            response = self._client.post(f"{self.base_url}{path}", json=payload)
        except httpx.HTTPError as exc:
            raise SidecarUnavailableError(f"sidecar unreachable: {exc}") from exc
        if response.status_code >= 500 or response.status_code == 503:
            raise SidecarUnavailableError(f"sidecar returned {response.status_code}")
        if response.status_code != 200:
            raise SidecarUnavailableError(
                f"sidecar rejected request ({response.status_code}): {response.text[:200]}"
            )
        return response.json()

    @staticmethod
    def _blob(path: Path) -> dict:
        data = Path(path).read_bytes()
        suffix = Path(path).suffix.lower().lstrip(".") or "bin"
        media = {"png": "image/png", "wav": "audio/wav", "jpg": "image/jpeg"}.get(
            suffix, "application/octet-stream"
        )
        return {"data_b64": base64.b64encode(data).decode("ascii"), "media_type": media}

    def pesq(self, pairs: list[tuple[Path, Path]]) -> list[float]:
        payload = {
            "request_id": stable_digest("pesq", *(f"{r}|{d}" for r, d in pairs)).hex()[:32],
            "pairs": [
                {"reference": self._blob(ref), "degraded": self._blob(deg)} for ref, deg in pairs
            ],
        }
        body = self._post("/v1/metric/pesq", payload)
        scores = body.get("outputs", {}).get("scores")
        if not isinstance(scores, list) or len(scores) != len(pairs):
            raise SidecarUnavailableError("pesq response malformed")
        return [float(s) for s in scores]

    def fid(self, generated: list[Path], references: list[Path]) -> float:
        payload = {
            "request_id": stable_digest("fid", *map(str, generated), *map(str, references)).hex()[:32],
            "generated": [self._blob(p) for p in generated],
            "references": [self._blob(p) for p in references],
        }
        body = self._post("/v1/metric/fid", payload)
        value = body.get("outputs", {}).get("value")
        if not isinstance(value, (int, float)):
            raise SidecarUnavailableError("fid response malformed")
        return float(value)


def remote_metric(
    kind: str,
    generated: list[Path],
    references: list[Path],
    client: SidecarMetricsClient,
) -> float:
    """Sidecar-computed FID or PESQ, range-checked before being trusted.

    PESQ expects paired lists and returns the mean of the per-pair scores.
    """
    if kind not in ("fid", "pesq"):
        raise ValueError(f"unknown remote metric {kind!r}")
    if not generated or not references:
        raise ValueError("generated and reference lists must be non-empty")
    if kind == "pesq":
        if len(generated) != len(references):
            raise LengthMismatchError("pesq needs paired lists of equal length")
        scores = client.pesq(list(zip(references, generated)))
        lo, hi = PESQ_RANGE
        for score in scores:
            if not lo <= score <= hi:
                raise RangeViolationError(f"pesq score {score} outside [{lo}, {hi}]")
        return float(sum(scores) / len(scores))
    value = client.fid(generated, references)
    if value < 0 or math.isnan(value):
        raise RangeViolationError(f"fid value {value} must be non-negative")
    return value
