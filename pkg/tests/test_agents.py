"""Agent pipeline: mining, verification scoring, refinement, and the full loop."""

from __future__ import annotations

import json

import pytest

from modbench.agents import (
    AgentBackends,
    Guidance,
    QAPair,
    infer_rules,
    mine,
    penalized_score,
    refine_guidance,
    run_afm2,
    score_candidate,
    summarize,
    synthesize_prompts,
    verify_batch,
)
from modbench.backends import BackendRole, MockBackend
from modbench.core import (
    AgentRouting,
    Candidate,
    Decision,
    GenerationParams,
    ImageParams,
    MinerKind,
    ModalityKind,
    ModalityPayload,
    Paradigm,
    PayloadResolver,
    PipelineConfig,
    RankerKind,
    VariantSpec,
)
from modbench.errors import (
    AllAnswersFailedError,
    InsufficientPromptsError,
    MalformedRefinementError,
    MalformedRulesError,
    NoUsableConditionError,
)
from modbench.paradigms import run_paradigm2

from conftest import FixedReplyBackend, ScriptedJudgeBackend, make_mock, tri_modal_sample

FULL_RULE_LISTING = {
    "image": [
        "What is the main object or subject in the image?",
        "How many people are present in the image?",
        "What colors dominate the image?",
        "Are there any text or symbols visible in the image? If so, what do they say?",
        "What is the spatial relationship between the foreground and background objects?",
        "Is there any notable action or activity occurring in the image?",
        "What type of environment or setting is depicted (e.g., indoor, outdoor, urban, natural)?",
        "Are there any animals or vehicles in the image? If so, what kinds?",
        "What emotions or moods are conveyed by the scene or subjects?",
    ],
    "text": ["What are the key entities mentioned?"],
    "audio": ["What type of sound or audio is this?"],
}


def text_payload(text):
    return ModalityPayload(kind=ModalityKind.text, text=text)


def make_candidate(text="a dog barks", prompt="p", ordinal=0):
    return Candidate(
        payload=text_payload(text), generation_prompt=prompt,
        generator_id="g", ordinal=ordinal, seed_used=ordinal,
    )


class TestInferRules:
    def test_parses_full_nine_question_listing(self):
        reasoner = FixedReplyBackend([json.dumps(FULL_RULE_LISTING)], role=BackendRole.reasoner)
        rules = infer_rules("street scenes", {ModalityKind.image}, reasoner)
        assert len(rules.questions[ModalityKind.image]) == 9
        assert "What is the main object or subject in the image?" in rules.questions[ModalityKind.image]

    def test_restricted_to_available_kinds(self):
        reasoner = make_mock("r", BackendRole.reasoner)
        rules = infer_rules("anything", {ModalityKind.text}, reasoner)
        assert set(rules.questions) == {ModalityKind.text}

    def test_cache_hits_once_per_dataset(self):
        class Counting(MockBackend):
            calls = 0

            def complete_text(self, *args, **kwargs):
                Counting.calls += 1
                return super().complete_text(*args, **kwargs)

        reasoner = Counting(make_mock("r", BackendRole.reasoner).descriptor, PayloadResolver([]), None)
        cache: dict = {}
        first = infer_rules("d", {ModalityKind.text}, reasoner, cache=cache, cache_key="set-a")
        second = infer_rules("d", {ModalityKind.text}, reasoner, cache=cache, cache_key="set-a")
        assert Counting.calls == 1
        assert first is second

    def test_malformed_twice(self):
        reasoner = FixedReplyBackend(["not json", "still not json"], role=BackendRole.reasoner)
        with pytest.raises(MalformedRulesError):
            infer_rules("d", {ModalityKind.text}, reasoner)
        assert reasoner.calls == 2


class TestMine:
    def test_answers_kept_in_question_order(self):
        miner = make_mock("m", BackendRole.miner)
        questions = [f"question {i}?" for i in range(9)]
        pairs, dropped = mine(text_payload("a dog"), questions, miner)
        assert [p.question for p in pairs] == questions
        assert dropped == []

    def test_drop_rule_keeps_rest(self):
        class Flaky(FixedReplyBackend):
            def complete_text(self, prompt, attachments=(), params=None, seed=0):
                self.calls += 1
                if "question 3?" in prompt:
                    return "no marker in this reply"
                return "[ANSWER]: fine."

        miner = Flaky([], role=BackendRole.miner)
        questions = [f"question {i}?" for i in range(9)]
        pairs, dropped = mine(text_payload("a dog"), questions, miner)
        assert len(pairs) == 8
        assert len(dropped) == 1 and "question 3?" in dropped[0]

    def test_all_failed(self):
        miner = FixedReplyBackend(["never an answer"], role=BackendRole.miner)
        with pytest.raises(AllAnswersFailedError):
            mine(text_payload("a dog"), ["q1?", "q2?"], miner)


class TestSummarize:
    def test_contains_an_answer_noun(self):
        lm = make_mock("lm", BackendRole.text_gen)
        pairs = [
            QAPair(question="What animal?", answer="a barking dog"),
            QAPair(question="Where?", answer="in a sunny park"),
        ]
        summary = summarize(ModalityKind.text, pairs, lm)
        assert "barking dog" in summary or "sunny park" in summary

    def test_single_pair(self):
        lm = make_mock("lm", BackendRole.text_gen)
        assert summarize(ModalityKind.audio, [QAPair(question="q", answer="a hum")], lm)

    def test_empty_pairs_rejected(self):
        lm = make_mock("lm", BackendRole.text_gen)
        with pytest.raises(NoUsableConditionError):
            summarize(ModalityKind.text, [], lm)


class TestSynthesizePrompts:
    SUMMARIES = {
        ModalityKind.image: "a rusty gate in an alley",
        ModalityKind.text: "wind moves through a quiet alley",
    }

    def _reply(self, prompts):
        return json.dumps({"candidates": [{"prompts": p} for p in prompts]})

    def test_canonical_audio_prompt_accepted(self):
        accepted = (
            "the sound of a rusted gate creaking open in the wind, echoing faintly "
            "in a silent alley under dim moonlight"
        )
        lm = FixedReplyBackend([self._reply([accepted])], role=BackendRole.text_gen)
        out = synthesize_prompts(self.SUMMARIES, ModalityKind.audio, lm, 1)
        assert out == [accepted]

    def test_audio_opening_rule_drops_and_reasks(self):
        bad = "birds chirp somewhere near the fence line as morning light arrives slowly"
        good = "the sound of a heavy gate swinging"
        lm = FixedReplyBackend(
            [self._reply([bad, bad]), self._reply([good, bad])], role=BackendRole.text_gen
        )
        out = synthesize_prompts(self.SUMMARIES, ModalityKind.audio, lm, 2)
        assert out == [good]
        assert lm.calls == 2

    def test_short_image_prompt_dropped(self):
        short = "a gate"
        long_enough = (
            "a weathered iron gate standing half open in a narrow brick alley, early "
            "morning light casting long soft shadows over damp cobblestones, moss creeping "
            "up the walls, muted earth tones, painterly realism"
        )
        assert len(long_enough) >= 150
        lm = FixedReplyBackend([self._reply([short, long_enough])], role=BackendRole.text_gen)
        out = synthesize_prompts(self.SUMMARIES, ModalityKind.image, lm, 2)
        assert out == [long_enough]

    def test_insufficient_after_reask(self):
        lm = FixedReplyBackend([self._reply(["tiny", "small"])], role=BackendRole.text_gen)
        with pytest.raises(InsufficientPromptsError):
            synthesize_prompts(self.SUMMARIES, ModalityKind.image, lm, 4)
        assert lm.calls == 2

    def test_candidate_count_is_bound(self):
        class Capture(FixedReplyBackend):
            seen = ""

            def complete_text(self, prompt, attachments=(), params=None, seed=0):
                Capture.seen = prompt
                self.calls += 1
                return json.dumps({"candidates": [{"text": "a dog sits quietly."}]})

        lm = Capture([], role=BackendRole.text_gen)
        synthesize_prompts(self.SUMMARIES, ModalityKind.text, lm, 1)
        assert "exactly 1 distinct" in Capture.seen


class TestPenaltyArithmetic:
    def test_worked_examples(self):
        assert penalized_score(4.8, 3, 0.2, 1.0) == pytest.approx(4.2, abs=1e-9)
        assert penalized_score(4.0, 10, 0.2, 1.0) == pytest.approx(3.0, abs=1e-9)

    def test_two_reference_mean(self, tmp_path):
        sample = tri_modal_sample(tmp_path)
        observed = [sample.payloads[ModalityKind.image], sample.payloads[ModalityKind.audio]]
        judge = ScriptedJudgeBackend([[5.0, 3.0]], n_refs=1)
        # one candidate judged against two references: scripted scores 5.0 then 3.0
        final, reports = score_candidate(make_candidate(), observed, judge, 0.2, 1.0)
        assert final == pytest.approx(4.0, abs=1e-9)
        assert len(reports) == 2

    def test_final_clamped_to_score_range(self):
        judge = ScriptedJudgeBackend([[0.2]], n_refs=1)

        class HallucinatingJudge(ScriptedJudgeBackend):
            def complete_text(self, prompt, attachments=(), params=None, seed=0):
                body = json.loads(super().complete_text(prompt, attachments, params, seed))
                body["hallucinated_assertions"] = 10
                body["total_assertions"] = 10
                return json.dumps(body)

        judge = HallucinatingJudge([[0.2]], n_refs=1)
        final, _ = score_candidate(make_candidate(), [text_payload("r")], judge, 0.5, 1.0)
        assert final == 0.0  # 0.2 - 1.0 clamps at the floor


class TestVerifyBatch:
    def _config(self, threshold=4.5):
        return PipelineConfig(
            paradigm=Paradigm.afm2,
            routing=AgentRouting(
                reasoner="r", miner="m", judge="j", language_model="l", embedder="e",
                image_generator="ig", audio_generator="ag", text_generator="tg",
            ),
            threshold=threshold,
        )

    def test_accept_above_threshold(self):
        judge = ScriptedJudgeBackend([[3.0, 4.6]], n_refs=1)
        outcome, _ = verify_batch(
            [make_candidate("a", ordinal=0), make_candidate("b", ordinal=1)],
            [text_payload("ref")], judge, self._config(),
        )
        assert outcome.best_index == 1
        assert outcome.decision is Decision.accept

    def test_tie_plus_threshold_refines(self):
        judge = ScriptedJudgeBackend([[4.4, 4.4]], n_refs=1)
        outcome, _ = verify_batch(
            [make_candidate("a", ordinal=0), make_candidate("b", ordinal=1)],
            [text_payload("ref")], judge, self._config(),
        )
        assert outcome.best_index == 0
        assert outcome.decision is Decision.refine

    def test_zero_threshold_always_accepts(self):
        judge = ScriptedJudgeBackend([[0.0, 0.0]], n_refs=1)
        outcome, _ = verify_batch(
            [make_candidate("a"), make_candidate("b", ordinal=1)],
            [text_payload("ref")], judge, self._config(threshold=0.0),
        )
        assert outcome.decision is Decision.accept


class TestRefineGuidance:
    def _guidance(self):
        return Guidance(
            summaries={ModalityKind.text: "t", ModalityKind.image: "i"},
            prompts=("original prompt",), revision=0,
        )

    def test_image_extracts_after_label(self):
        lm = FixedReplyBackend(
            ["Refined Prompt: a better, longer, more specific prompt"],
            role=BackendRole.text_gen,
        )
        refined = refine_guidance(
            self._guidance(), make_candidate(prompt="old"), ["add light"],
            ModalityKind.image, lm,
        )
        assert refined.prompts == ("a better, longer, more specific prompt",)
        assert refined.revision == 1

    def test_missing_label_exhausts_reask(self):
        lm = FixedReplyBackend(["no label here"], role=BackendRole.text_gen)
        with pytest.raises(MalformedRefinementError):
            refine_guidance(
                self._guidance(), make_candidate(prompt="old"), [], ModalityKind.image, lm
            )
        assert lm.calls == 2

    def test_empty_feedbacks_still_increment(self):
        lm = make_mock("lm", BackendRole.text_gen)
        refined = refine_guidance(
            self._guidance(), make_candidate(), [], ModalityKind.text, lm
        )
        assert refined.revision == 1
        assert refined.prompts[0]

    def test_audio_refinement_uses_raw_reply(self):
        lm = FixedReplyBackend(["the sound of rain on a tin roof"], role=BackendRole.text_gen)
        refined = refine_guidance(
            self._guidance(), make_candidate(prompt="old audio prompt"), ["too busy"],
            ModalityKind.audio, lm,
        )
        assert refined.prompts == ("the sound of rain on a tin roof",)


def agent_stack(tmp_path, judge=None, n_refs=2):
    data_dir = tmp_path / "data"
    out_dir = tmp_path / "out"
    sample = tri_modal_sample(data_dir)
    resolver = PayloadResolver([data_dir, out_dir])
    return sample, AgentBackends(
        reasoner=make_mock("reasoner", BackendRole.reasoner, resolver),
        miner=make_mock("miner", BackendRole.miner, resolver),
        judge=judge if judge is not None else make_mock("judge", BackendRole.judge, resolver),
        language_model=make_mock("lm", BackendRole.text_gen, resolver),
        embedder=make_mock("emb", BackendRole.embedder, resolver),
        generators={
            ModalityKind.image: make_mock("sd3.5", BackendRole.image_gen, resolver, out_dir),
            ModalityKind.audio: make_mock("audioldm2", BackendRole.audio_gen, resolver, out_dir),
            ModalityKind.text: make_mock("qwen2.5-vl-7b", BackendRole.text_gen, resolver, out_dir),
        },
    )


def afm2_config(n=1, max_rounds=5, threshold=4.5, enable_miner=True, enable_verifier=True,
                seed=9):
    return PipelineConfig(
        paradigm=Paradigm.afm2,
        routing=AgentRouting(
            reasoner="reasoner", miner="miner", judge="judge", language_model="lm",
            embedder="emb", image_generator="sd3.5", audio_generator="audioldm2",
            text_generator="qwen2.5-vl-7b",
        ),
        params=GenerationParams(candidate_count=n, seed=seed, image=ImageParams(width=16, height=16)),
        threshold=threshold,
        max_rounds=max_rounds,
        enable_miner=enable_miner,
        enable_verifier=enable_verifier,
    )


class TestRunAfm2:
    def test_early_exit_at_threshold(self, tmp_path):
        judge = ScriptedJudgeBackend([[3.0], [4.6]], n_refs=2)
        sample, backends = agent_stack(tmp_path, judge=judge)
        final, trace, mining = run_afm2(
            sample.without(ModalityKind.text), ModalityKind.text,
            afm2_config(enable_miner=False), backends,
        )
        assert len(trace.rounds) == 2
        assert trace.rounds[0].decision is Decision.refine
        assert trace.rounds[1].decision is Decision.accept
        assert trace.rounds[1].best_score == pytest.approx(4.6)
        assert mining is None

    def test_force_accept_returns_global_best(self, tmp_path):
        judge = ScriptedJudgeBackend([[3.0], [3.5], [3.2]], n_refs=2)
        sample, backends = agent_stack(tmp_path, judge=judge)
        final, trace, _ = run_afm2(
            sample.without(ModalityKind.text), ModalityKind.text,
            afm2_config(max_rounds=3, enable_miner=False), backends,
        )
        assert len(trace.rounds) == 3
        assert trace.rounds[-1].decision is Decision.force_accept
        assert [r.best_score for r in trace.rounds] == pytest.approx([3.0, 3.5, 3.2])
        assert final.payload.text == judge.seen_texts[(1, 0)]

    def test_miner_stage_present_by_default(self, tmp_path):
        sample, backends = agent_stack(tmp_path)
        _, trace, mining = run_afm2(
            sample.without(ModalityKind.image), ModalityKind.image,
            afm2_config(n=2, max_rounds=2, threshold=0.0), backends,
        )
        assert mining is not None
        assert set(mining.summaries) == {ModalityKind.text, ModalityKind.audio}
        assert all(mining.qa_pairs.values())

    def test_verifier_disabled_single_round_accept(self, tmp_path):
        sample, backends = agent_stack(tmp_path)
        _, trace, _ = run_afm2(
            sample.without(ModalityKind.image), ModalityKind.image,
            afm2_config(n=3, enable_verifier=False), backends,
        )
        assert len(trace.rounds) == 1
        assert trace.rounds[0].decision is Decision.accept
        assert len(trace.rounds[0].candidate_scores) == 3

    def test_both_disabled_reduces_to_paradigm2(self, tmp_path):
        sample, backends = agent_stack(tmp_path)
        config = afm2_config(n=4, enable_miner=False, enable_verifier=False)
        final, trace, mining = run_afm2(
            sample.without(ModalityKind.image), ModalityKind.image, config, backends
        )
        variant = VariantSpec(
            generator_id="sd3.5", ranker=RankerKind.embedding, miner=MinerKind.none,
            target_kind=ModalityKind.image,
        )
        p2_winner, p2_outcome = run_paradigm2(
            sample.without(ModalityKind.image), ModalityKind.image, variant, config.params,
            backends.generators[ModalityKind.image], embedder=backends.embedder,
            captioner=backends.miner,
        )
        assert mining is None
        assert final.payload == p2_winner.payload
        assert trace.rounds[0].candidate_scores == p2_outcome.scores

    def test_round_budget_bounds_trace(self, tmp_path):
        judge = ScriptedJudgeBackend([[1.0]] * 4, n_refs=2)
        sample, backends = agent_stack(tmp_path, judge=judge)
        _, trace, _ = run_afm2(
            sample.without(ModalityKind.text), ModalityKind.text,
            afm2_config(max_rounds=4, enable_miner=False), backends,
        )
        assert len(trace.rounds) == 4

    def test_target_present_rejected(self, tmp_path):
        sample, backends = agent_stack(tmp_path)
        with pytest.raises(NoUsableConditionError):
            run_afm2(sample, ModalityKind.text, afm2_config(), backends)


class TestPartialFailure:
    def test_mid_round_failure_preserves_completed_rounds(self, tmp_path):
        from modbench.agents import PipelinePartialFailure
        from modbench.errors import TransportError

        sample, backends = agent_stack(tmp_path)

        class DiesOnSecondRound(MockBackend):
            batches = 0

            def generate_image(self, prompt, params, count, base_seed):
                DiesOnSecondRound.batches += 1
                if DiesOnSecondRound.batches > 1:
                    raise TransportError("generator went away")
                return super().generate_image(prompt, params, count, base_seed)

        image_gen = backends.generators[ModalityKind.image]
        backends.generators[ModalityKind.image] = DiesOnSecondRound(
            image_gen.descriptor, image_gen.resolver, image_gen.output_dir
        )
        judge = ScriptedJudgeBackend([[1.0], [1.0]], n_refs=2)
        backends.judge = judge
        with pytest.raises(PipelinePartialFailure) as err:
            run_afm2(
                sample.without(ModalityKind.image), ModalityKind.image,
                afm2_config(enable_miner=False, max_rounds=3), backends,
            )
        assert len(err.value.rounds) == 1
        assert err.value.rounds[0].decision is Decision.refine
        assert "TransportError" in str(err.value)
