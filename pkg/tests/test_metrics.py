"""Metric implementations checked against independent brute-force oracles."""

from __future__ import annotations

import json
import random

import httpx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modbench.core import EmbeddingVector
from modbench.errors import (
    DimensionMismatchError,
    EmptySignalError,
    LengthMismatchError,
    RangeViolationError,
    SidecarUnavailableError,
)
from modbench.metrics import (
    AlignmentCounts,
    SidecarMetricsClient,
    align,
    cosine_sim,
    groundedness_score,
    mer,
    mer_text,
    remote_metric,
    si_snr,
    tokenize,
)

from oracles import all_sequences, oracle_mer


class TestTokenize:
    def test_normalization(self):
        assert tokenize("A Dog, barks!  twice") == ["a", "dog", "barks", "twice"]

    def test_empty(self):
        assert tokenize("  ...  ") == []


class TestAlign:
    def test_counts_partition_both_lengths(self):
        counts = align(["a", "x", "c"], ["a", "b", "c"])
        assert counts.hits + counts.substitutions + counts.deletions == 3
        assert counts.hits + counts.substitutions + counts.insertions == 3
        assert counts == AlignmentCounts(hits=2, substitutions=1, deletions=0, insertions=0)

    def test_pure_deletion(self):
        counts = align([], ["a", "b"])
        assert counts == AlignmentCounts(hits=0, substitutions=0, deletions=2, insertions=0)


class TestMer:
    def test_identical_sequences(self):
        assert mer(["a", "b", "c"], ["a", "b", "c"]) == 0.0

    def test_single_substitution_oracle_value(self):
        # frozen via the exhaustive alignment oracle: 1 sub, 2 hits
        assert oracle_mer(("a", "x", "c"), ("a", "b", "c")) == pytest.approx(1 / 3)
        assert mer(["a", "x", "c"], ["a", "b", "c"]) == pytest.approx(1 / 3)

    def test_empty_hypothesis_oracle_value(self):
        assert oracle_mer((), ("a", "b")) == 1.0
        assert mer([], ["a", "b"]) == 1.0

    def test_both_empty(self):
        assert mer([], []) == 0.0

    def test_exhaustive_agreement_short_sequences(self):
        alphabet = ("a", "b", "c")
        sequences = list(all_sequences(alphabet, 3))
        for hyp in sequences:
            for ref in sequences:
                assert mer(list(hyp), list(ref)) == pytest.approx(
                    oracle_mer(hyp, ref), abs=1e-12
                ), (hyp, ref)

    def test_symmetry_random_pairs(self):
        rng = random.Random(42)
        alphabet = "abcde"
        for _ in range(300):
            hyp = [rng.choice(alphabet) for _ in range(rng.randrange(0, 8))]
            ref = [rng.choice(alphabet) for _ in range(rng.randrange(0, 8))]
            assert mer(hyp, ref) == pytest.approx(mer(ref, hyp), abs=1e-12)

    def test_mer_text_uses_normalization(self):
        assert mer_text("A DOG barks.", "a dog barks") == 0.0


class TestSiSnr:
    def test_identical_high_energy_signal_clamps_high(self):
        t = np.arange(1000) / 100.0
        signal = np.sin(t) * 2.0
        assert si_snr(signal, signal) == 100.0

    def test_scale_invariance(self):
        rng = np.random.default_rng(7)
        reference = rng.standard_normal(512)
        estimate = reference + 0.1 * rng.standard_normal(512)
        base = si_snr(estimate, reference)
        assert -100.0 < base < 100.0
        for alpha in (0.1, 2.0, 10.0):
            assert abs(si_snr(alpha * estimate, reference) - base) < 1e-6

    def test_orthogonal_zero_mean_clamps_low(self):
        # hand-constructed: zero-mean, orthogonal, enough energy that the
        # epsilon-guarded ratio falls below the -100 dB clamp
        reference = np.array([10.0, -10.0, 10.0, -10.0])
        estimate = np.array([10.0, 10.0, -10.0, -10.0])
        assert float(np.dot(estimate - estimate.mean(), reference - reference.mean())) == 0.0
        assert si_snr(estimate, reference) == -100.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            si_snr([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_empty_signal(self):
        with pytest.raises(EmptySignalError):
            si_snr([], [])


class TestCosineSim:
    def test_self_similarity(self):
        vec = EmbeddingVector(values=(0.6, 0.8))
        assert cosine_sim(vec, vec) == pytest.approx(1.0, abs=1e-6)

    def test_negation_floors_at_zero(self):
        a = EmbeddingVector(values=(0.6, 0.8))
        b = EmbeddingVector(values=(-0.6, -0.8))
        assert cosine_sim(a, b) == 0.0

    def test_orthogonal_is_zero(self):
        a = EmbeddingVector(values=(1.0, 0.0))
        b = EmbeddingVector(values=(0.0, 1.0))
        assert cosine_sim(a, b) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cosine_sim(EmbeddingVector(values=(1.0,)), EmbeddingVector(values=(0.6, 0.8)))

    @settings(max_examples=50)
    @given(st.lists(st.floats(min_value=-10, max_value=10), min_size=2, max_size=8))
    def test_unit_self_similarity_property(self, values):
        if sum(v * v for v in values) < 1e-6:
            return
        vec = EmbeddingVector(values=tuple(values))
        assert cosine_sim(vec, vec) == pytest.approx(1.0, abs=1e-6)


class TestGroundednessScore:
    def test_zero_hallucinations_is_five(self):
        for total in range(0, 11):
            assert groundedness_score(0, total) == 5

    def test_saturates_at_zero(self):
        assert groundedness_score(10, 10) == 0
        assert groundedness_score(5, 5) == 0


def _fake_sidecar(handler):
    transport = httpx.MockTransport(handler)
    return SidecarMetricsClient("http://sidecar", client=httpx.Client(transport=transport))


def _blob_files(tmp_path, names):
    paths = []
    for name in names:
        path = tmp_path / name
        path.write_bytes(name.encode())
        paths.append(path)
    return paths


class TestRemoteMetric:
    def test_pesq_self_comparison(self, tmp_path):
        def handler(request):
            body = json.loads(request.content)
            assert len(body["pairs"]) == 1
            return httpx.Response(200, json={"request_id": body["request_id"],
                                             "status": "ok", "outputs": {"scores": [4.5]}})

        (clip,) = _blob_files(tmp_path, ["a.wav"])
        value = remote_metric("pesq", [clip], [clip], _fake_sidecar(handler))
        assert value == 4.5

    def test_pesq_out_of_range_rejected(self, tmp_path):
        def handler(request):
            return httpx.Response(200, json={"status": "ok", "outputs": {"scores": [9.0]}})

        (clip,) = _blob_files(tmp_path, ["a.wav"])
        with pytest.raises(RangeViolationError):
            remote_metric("pesq", [clip], [clip], _fake_sidecar(handler))

    def test_fid_non_negative_check(self, tmp_path):
        def handler(request):
            return httpx.Response(200, json={"status": "ok", "outputs": {"value": -1.0}})

        gen = _blob_files(tmp_path, ["g.png"])
        ref = _blob_files(tmp_path, ["r.png"])
        with pytest.raises(RangeViolationError):
            remote_metric("fid", gen, ref, _fake_sidecar(handler))

    def test_empty_lists_are_precondition_errors(self, tmp_path):
        client = _fake_sidecar(lambda request: httpx.Response(200, json={}))
        with pytest.raises(ValueError):
            remote_metric("fid", [], _blob_files(tmp_path, ["r.png"]), client)

    def test_pesq_unpaired_lists(self, tmp_path):
        client = _fake_sidecar(lambda request: httpx.Response(200, json={}))
        paths = _blob_files(tmp_path, ["a.wav", "b.wav", "c.wav"])
        with pytest.raises(LengthMismatchError):
            remote_metric("pesq", paths[:2], paths[2:], client)

    def test_unreachable_sidecar(self, tmp_path):
        def handler(request):
            raise httpx.ConnectError("refused")

        (clip,) = _blob_files(tmp_path, ["a.wav"])
        with pytest.raises(SidecarUnavailableError):
            remote_metric("pesq", [clip], [clip], _fake_sidecar(handler))
