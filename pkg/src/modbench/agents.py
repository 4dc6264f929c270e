"""The agent pipeline: mining, guidance synthesis, verification, and self-refinement.

The miner agent turns a domain description into per-modality mining rules, asks
them against the observed payloads, and summarizes the answers. The verifier
agent scores generated candidates against the observed modalities with a
hallucination penalty and decides accept / refine / force-accept. The
generation agent synthesizes prompts from the guidance and produces candidate
batches with round-offset seeds so no round silently regenerates the last one.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

from pydantic import Field, model_validator

from .backends import Backend, judge
from .core import (
    Candidate,
    Decision,
    JudgeReport,
    ModalityKind,
    ModalityPayload,
    PipelineConfig,
    RefinementRound,
    RefinementTrace,
    Sample,
    StrictModel,
)
from .errors import (
    AllAnswersFailedError,
    ModbenchError,
    InsufficientPromptsError,
    MalformedRefinementError,
    MalformedRulesError,
    MalformedSummaryError,
    MarkerNotFoundError,
    NoJsonFoundError,
    NoUsableConditionError,
    SchemaMismatchError,
)
from .paradigms import (
    KIND_ORDER,
    build_direct_prompt,
    generate_candidates,
    observed_payloads,
    rank_by_embedding,
)
from .prompts import (
    AUDIO_PROMPT_OPENINGS,
    MIN_PROMPT_CHARS,
    REFINED_PROMPT_MARKER,
    extract_first_json,
    parse_answer_line,
    parse_candidates_json,
    render,
)

NOT_AVAILABLE = "not available"
RULES_REASK_LIMIT = 1
SUMMARY_REASK_LIMIT = 1
REFINE_REASK_LIMIT = 1
SYNTH_REASK_LIMIT = 1


class QAPair(StrictModel):
    question: str = Field(min_length=1)
    answer: str = Field(min_length=1)


class MiningRuleSet(StrictModel):
    questions: dict[ModalityKind, tuple[str, ...]]
    reasoner_id: str
    created_at: float

    @model_validator(mode="after")
    def _questions_sane(self) -> "MiningRuleSet":
        for kind, qs in self.questions.items():
            if not qs:
                raise ValueError(f"no questions for {kind.value}")
            if any(not q.strip() for q in qs):
                raise ValueError(f"empty question under {kind.value}")
            if len(set(qs)) != len(qs):
                raise ValueError(f"duplicate questions under {kind.value}")
        return self


class Guidance(StrictModel):
    summaries: dict[ModalityKind, str]
    prompts: tuple[str, ...] = Field(min_length=1)
    revision: int = Field(ge=0)


class MiningStage(StrictModel):
    rules: MiningRuleSet
    qa_pairs: dict[ModalityKind, tuple[QAPair, ...]]
    dropped: tuple[str, ...] = ()
    summaries: dict[ModalityKind, str]


class VerificationOutcome(StrictModel):
    best_index: int = Field(ge=0)
    scores: tuple[float, ...] = Field(min_length=1)
    decision: Decision
    feedbacks: tuple[str, ...] = ()


def infer_rules(
    domain_description: str,
    available_kinds: set[ModalityKind],
    reasoner: Backend,
    cache: dict | None = None,
    cache_key: str = "",
    clock: Callable[[], float] = time.time,
) -> MiningRuleSet:
    """Derive per-modality mining questions from the reasoner, once per dataset.

    Results are cached under (cache_key, domain_description) so rule inference
    runs per dataset rather than per sample.
    """
    if not available_kinds:
        raise NoUsableConditionError("rule inference needs at least one available modality")
    key = (cache_key, domain_description, tuple(sorted(k.value for k in available_kinds)))
    if cache is not None and key in cache:
        return cache[key]

    prompt = render("mining-rules", {"domain_description": domain_description})
    last: Exception | None = None
    rules = None
    for attempt in range(RULES_REASK_LIMIT + 1):
        ask = prompt if attempt == 0 else prompt + "\n\nREMINDER: Respond only with the JSON object."
        raw = reasoner.complete_text(ask, seed=attempt)
        try:
            obj = extract_first_json(raw)
        except NoJsonFoundError as exc:
            last = exc
            continue
        questions: dict[ModalityKind, tuple[str, ...]] = {}
        try:
            for kind in sorted(available_kinds, key=lambda k: KIND_ORDER.index(k)):
                entries = obj.get(kind.value)
                if not isinstance(entries, list) or not entries:
                    raise MalformedRulesError(f"no question list for {kind.value}")
                deduped = list(dict.fromkeys(q for q in entries if isinstance(q, str) and q.strip()))
                if not deduped:
                    raise MalformedRulesError(f"no usable questions for {kind.value}")
                questions[kind] = tuple(deduped)
            rules = MiningRuleSet(
                questions=questions,
                reasoner_id=reasoner.descriptor.backend_id,
                created_at=clock(),
            )
            break
        except MalformedRulesError as exc:
            last = exc
    if rules is None:
        raise MalformedRulesError(f"reasoner produced no usable rules after a re-ask: {last}")
    if cache is not None:
        cache[key] = rules
    return rules


def mine(
    payload: ModalityPayload,
    questions: list[str] | tuple[str, ...],
    miner_backend: Backend,
    seed: int = 0,
) -> tuple[list[QAPair], list[str]]:
    """Answer each mining question against the payload; unparseable answers are dropped.

    Returns the QA pairs in question order plus trace notes for dropped questions.
    """
    if not questions:
        raise NoUsableConditionError("mining needs at least one question")
    base = render("mining-knowledge", {"input_modality": payload.kind.value})
    pairs: list[QAPair] = []
    dropped: list[str] = []
    for i, question in enumerate(questions):
        prompt = f"{base}\n[QUESTION]: {question}"
        raw = miner_backend.complete_text(prompt, attachments=[payload], seed=seed + i)
        try:
            answer = parse_answer_line(raw)
        except MarkerNotFoundError:
            dropped.append(f"{payload.kind.value}: no answer marker for question {i}: {question!r}")
            continue
        if not answer:
            dropped.append(f"{payload.kind.value}: empty answer for question {i}: {question!r}")
            continue
        pairs.append(QAPair(question=question, answer=answer))
    if not pairs:
        raise AllAnswersFailedError(f"every {payload.kind.value} mining answer failed parsing")
    return pairs, dropped


def summarize(
    kind: ModalityKind,
    qa_pairs: list[QAPair] | tuple[QAPair, ...],
    lm_backend: Backend,
    seed: int = 0,
) -> str:
    """Collapse QA pairs into one guidance paragraph for a modality."""
    if not qa_pairs:
        raise NoUsableConditionError("summarize needs at least one QA pair")
    serialized = "\n".join(f"Q: {p.question}\nA: {p.answer}" for p in qa_pairs)
    prompt = render("knowledge-summary", {"input_modality": kind.value, "qa_pairs": serialized})
    last: Exception | None = None
    for attempt in range(SUMMARY_REASK_LIMIT + 1):
        ask = prompt if attempt == 0 else prompt + "\n\nREMINDER: Start your reply with [ANSWER]:"
        raw = lm_backend.complete_text(ask, seed=seed + attempt)
        try:
            summary = parse_answer_line(raw)
        except MarkerNotFoundError as exc:
            last = exc
            continue
        if summary:
            return summary
        last = MalformedSummaryError("summary was empty")
    raise MalformedSummaryError(f"summarizer produced no usable paragraph: {last}")


def _prompt_constraints_ok(prompt: str, target_kind: ModalityKind) -> bool:
    # image prompts carry the 150-character floor; audio prompts are gated on
    # the sound-source opening (the canonical audio exemplar is itself shorter
    # than 150 characters, so no length floor applies there)
    if target_kind is ModalityKind.text:
        return bool(prompt.strip())
    if target_kind is ModalityKind.audio:
        lowered = prompt.lstrip().lower()
        return bool(lowered) and lowered.startswith(AUDIO_PROMPT_OPENINGS)
    return len(prompt) >= MIN_PROMPT_CHARS


def _info_bindings(summaries: dict[ModalityKind, str], *kinds: ModalityKind) -> dict[str, str]:
    return {f"{k.value}_info": summaries.get(k, NOT_AVAILABLE) for k in kinds}


_GEN_TEMPLATE = {
    ModalityKind.text: ("gen-text", "text", (ModalityKind.image, ModalityKind.audio)),
    ModalityKind.image: ("gen-image", "prompts", (ModalityKind.text, ModalityKind.audio)),
    ModalityKind.audio: ("gen-audio", "prompts", (ModalityKind.image, ModalityKind.text)),
}


def synthesize_prompts(
    guidance_summaries: dict[ModalityKind, str],
    target_kind: ModalityKind,
    lm_backend: Backend,
    count: int,
    seed: int = 0,
) -> list[str]:
    """Generation prompts (or candidate texts, for the text modality) from guidance.

    Per-kind lexical constraints are enforced: image and audio prompts must be
    at least 150 characters and audio prompts must open with a sound-source
    phrase. If fewer than ceil(count/2) survive, the call is re-asked once.
    """
    if not guidance_summaries:
        raise NoUsableConditionError("prompt synthesis needs at least one guidance summary")
    template_id, fieldname, info_kinds = _GEN_TEMPLATE[target_kind]
    bindings = _info_bindings(guidance_summaries, *info_kinds)
    bindings["candidate_count"] = str(count)
    prompt = render(template_id, bindings)
    needed = math.ceil(count / 2)
    best: list[str] = []
    last: Exception | None = None
    for attempt in range(SYNTH_REASK_LIMIT + 1):
        ask = prompt if attempt == 0 else prompt + "\n\nREMINDER: Respond only with the JSON object."
        raw = lm_backend.complete_text(ask, seed=seed + attempt)
        try:
            raw_prompts = parse_candidates_json(raw, fieldname)
        except (NoJsonFoundError, SchemaMismatchError) as exc:
            last = exc
            continue
        kept = [p for p in raw_prompts if _prompt_constraints_ok(p, target_kind)]
        if len(kept) > len(best):
            best = kept
        if len(best) >= needed:
            return best[:count]
    raise InsufficientPromptsError(
        f"only {len(best)} of {count} synthesized prompts survived the constraints: {last}"
    )


def penalized_score(overall: float, hallucinated: int, penalty: float, cap: float) -> float:
    """Per-reference verifier score: overall minus the capped hallucination deduction."""
    return overall - min(hallucinated * penalty, cap)


def score_candidate(
    candidate: Candidate,
    observed: list[ModalityPayload],
    judge_backend: Backend,
    penalty: float,
    penalty_cap: float,
) -> tuple[float, list[JudgeReport]]:
    """Judge a candidate against each observed reference and average the penalized scores."""
    if not 1 <= len(observed) <= 2:
        raise NoUsableConditionError("scoring expects one or two observed references")
    kind = candidate.payload.kind
    reports: list[JudgeReport] = []
    values: list[float] = []
    for reference in observed:
        if kind is ModalityKind.text:
            bindings = {
                "generated_text": candidate.payload.text or "",
                "ground_truth_modality": reference.kind.value,
            }
        else:
            bindings = {
                "generated_prompt": candidate.generation_prompt,
                "ground_truth_modality": reference.kind.value,
            }
        report = judge(judge_backend, candidate.payload, [reference], f"verify-{kind.value}", bindings)
        reports.append(report)
        values.append(penalized_score(report.overall_score, report.hallucinated_count, penalty, penalty_cap))
    final = sum(values) / len(values)
    return max(0.0, min(5.0, final)), reports


def verify_batch(
    candidates: list[Candidate],
    observed: list[ModalityPayload],
    judge_backend: Backend,
    config: PipelineConfig,
) -> tuple[VerificationOutcome, list[list[JudgeReport]]]:
    """Score every candidate, pick the argmax, and decide accept vs refine."""
    if not candidates:
        raise NoUsableConditionError("verification needs at least one candidate")
    scores: list[float] = []
    feedbacks: list[str] = []
    all_reports: list[list[JudgeReport]] = []
    for candidate in candidates:
        score, reports = score_candidate(
            candidate, observed, judge_backend, config.penalty, config.penalty_cap
        )
        scores.append(score)
        all_reports.append(reports)
        for report in reports:
            feedbacks.extend(report.justifications.values())
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    decision = Decision.accept if scores[best] >= config.threshold else Decision.refine
    outcome = VerificationOutcome(
        best_index=best, scores=tuple(scores), decision=decision, feedbacks=tuple(feedbacks)
    )
    return outcome, all_reports


def refine_guidance(
    guidance: Guidance,
    best_candidate: Candidate,
    feedbacks: list[str] | tuple[str, ...],
    target_kind: ModalityKind,
    lm_backend: Backend,
    seed: int = 0,
) -> Guidance:
    """One refinement step: rewrite the generation prompt (or text) and bump the revision."""
    summaries = guidance.summaries
    feedback_text = "\n".join(feedbacks) if feedbacks else "(no feedback)"
    if target_kind is ModalityKind.image:
        prompt = render(
            "refine-image",
            {"original_prompt": best_candidate.generation_prompt, "feedback": feedback_text},
        )
    elif target_kind is ModalityKind.audio:
        bindings = _info_bindings(summaries, ModalityKind.text, ModalityKind.image)
        bindings["original_audio_prompt"] = best_candidate.generation_prompt
        prompt = render("refine-audio", bindings)
    else:
        bindings = _info_bindings(summaries, ModalityKind.image, ModalityKind.audio)
        bindings["original_text"] = best_candidate.payload.text or ""
        prompt = render("refine-text", bindings)

    last: Exception | None = None
    for attempt in range(REFINE_REASK_LIMIT + 1):
        raw = lm_backend.complete_text(prompt, seed=seed + attempt)
        refined = raw
        if target_kind is ModalityKind.image:
            idx = raw.rfind(REFINED_PROMPT_MARKER)
            if idx < 0:
                last = MalformedRefinementError("no 'Refined Prompt:' label in reply")
                continue
            refined = raw[idx + len(REFINED_PROMPT_MARKER):]
        refined = refined.strip()
        if refined:
            return Guidance(
                summaries=summaries, prompts=(refined,), revision=guidance.revision + 1
            )
        last = MalformedRefinementError("refinement reply was empty")
    raise MalformedRefinementError(f"refinement produced no usable prompt: {last}")


class PipelinePartialFailure(ModbenchError):
    """A backend failure mid-pipeline; carries whatever trace state accumulated."""

    def __init__(self, cause: Exception, rounds: list[RefinementRound], mining: "MiningStage | None"):
        super().__init__(f"{type(cause).__name__}: {cause}")
        self.cause = cause
        self.rounds = tuple(rounds)
        self.mining = mining


@dataclass
class AgentBackends:
    """Concrete backend handles filling each agent role."""

    reasoner: Backend
    miner: Backend
    judge: Backend
    language_model: Backend
    embedder: Backend
    generators: dict[ModalityKind, Backend] = field(default_factory=dict)

    def generator_for(self, kind: ModalityKind) -> Backend:
        try:
            return self.generators[kind]
        except KeyError:
            raise NoUsableConditionError(f"no generator configured for {kind.value}") from None


def _miner_disabled_summaries(sample: Sample, target_kind: ModalityKind) -> dict[ModalityKind, str]:
    """Ablation guidance: raw observed text, labels as a caption, or a fixed note."""
    summaries: dict[ModalityKind, str] = {}
    for payload in observed_payloads(sample, target_kind):
        if payload.kind is ModalityKind.text and payload.text:
            summaries[payload.kind] = payload.text.strip()
        elif sample.labels:
            summaries[payload.kind] = ", ".join(sample.labels)
        else:
            summaries[payload.kind] = f"({payload.kind.value} content provided without analysis)"
    return summaries


def _mining_stage(
    sample: Sample,
    config: PipelineConfig,
    backends: AgentBackends,
    observed: list[ModalityPayload],
    domain_description: str,
    rule_cache: dict | None,
    dataset_name: str,
    clock: Callable[[], float],
) -> MiningStage | None:
    if not config.enable_miner:
        return None
    rules = infer_rules(
        domain_description,
        {p.kind for p in observed},
        backends.reasoner,
        cache=rule_cache,
        cache_key=dataset_name,
        clock=clock,
    )
    qa_by_kind: dict[ModalityKind, tuple[QAPair, ...]] = {}
    dropped_notes: list[str] = []
    summaries: dict[ModalityKind, str] = {}
    seed = config.params.seed
    for payload in observed:
        pairs, dropped = mine(payload, rules.questions[payload.kind], backends.miner, seed=seed)
        qa_by_kind[payload.kind] = tuple(pairs)
        dropped_notes.extend(dropped)
        summaries[payload.kind] = summarize(payload.kind, pairs, backends.language_model, seed=seed)
    return MiningStage(
        rules=rules, qa_pairs=qa_by_kind, dropped=tuple(dropped_notes), summaries=summaries
    )


def _refinement_loop(
    sample: Sample,
    target_kind: ModalityKind,
    config: PipelineConfig,
    backends: AgentBackends,
    observed: list[ModalityPayload],
    summaries: dict[ModalityKind, str],
    rounds: list[RefinementRound],
) -> Candidate:
    """Generate / verify / refine until accept, force-accepting at the round budget.

    Appends every finished round into ``rounds`` so a mid-round failure still
    leaves the completed rounds behind for the trace.
    """
    params = config.params
    n = params.candidate_count
    generator = backends.generator_for(target_kind)
    bare_pipeline = not config.enable_miner and not config.enable_verifier
    guidance = Guidance(summaries=summaries, prompts=("(pending)",), revision=0)
    round_best: list[tuple[float, Candidate]] = []

    for round_index in range(1, config.max_rounds + 1):
        round_seed = params.seed + (round_index - 1) * n
        if round_index == 1:
            if bare_pipeline:
                pool = [build_direct_prompt(sample, target_kind, backends.miner, seed=params.seed)]
            else:
                pool = synthesize_prompts(
                    summaries, target_kind, backends.language_model, n, seed=round_seed
                )
        else:
            # refined prompt(s) carry over; text targets top the pool back up
            # with fresh synthesis so the refined text competes against new ones
            pool = list(guidance.prompts)
            if target_kind is ModalityKind.text and n > 1:
                fresh = synthesize_prompts(
                    summaries, target_kind, backends.language_model, n - 1, seed=round_seed
                )
                pool = pool + [p for p in fresh if p not in pool]

        if target_kind is ModalityKind.text:
            candidates = [
                Candidate(
                    payload=ModalityPayload(kind=ModalityKind.text, text=text),
                    generation_prompt=text,
                    generator_id=generator.descriptor.backend_id,
                    ordinal=i,
                    seed_used=round_seed + i,
                )
                for i, text in enumerate(pool[:n])
            ]
        else:
            candidates = generate_candidates(generator, target_kind, pool, n, params, round_seed)
        guidance_text = "\n".join(pool)

        if not config.enable_verifier:
            ranked = rank_by_embedding(candidates, observed, backends.embedder)
            rounds.append(
                RefinementRound(
                    round_index=round_index,
                    guidance_text=guidance_text,
                    candidate_scores=ranked.scores,
                    best_score=ranked.scores[ranked.best_index],
                    feedbacks=(),
                    decision=Decision.accept,
                )
            )
            return candidates[ranked.best_index]

        outcome, _reports = verify_batch(candidates, observed, backends.judge, config)
        best_candidate = candidates[outcome.best_index]
        best_score = outcome.scores[outcome.best_index]
        round_best.append((best_score, best_candidate))

        if outcome.decision is Decision.accept:
            decision = Decision.accept
        elif round_index == config.max_rounds:
            decision = Decision.force_accept
        else:
            decision = Decision.refine
        rounds.append(
            RefinementRound(
                round_index=round_index,
                guidance_text=guidance_text,
                candidate_scores=outcome.scores,
                best_score=best_score,
                feedbacks=outcome.feedbacks,
                decision=decision,
            )
        )
        if decision is Decision.accept:
            return best_candidate
        if decision is Decision.force_accept:
            scores = [score for score, _ in round_best]
            winner = max(range(len(scores)), key=lambda i: (scores[i], -i))
            return round_best[winner][1]
        guidance = refine_guidance(
            Guidance(summaries=summaries, prompts=tuple(pool), revision=guidance.revision),
            best_candidate,
            outcome.feedbacks,
            target_kind,
            backends.language_model,
            seed=round_seed,
        )
    raise AssertionError("unreachable: the loop always returns by the round budget")


def run_afm2(
    sample: Sample,
    target_kind: ModalityKind,
    config: PipelineConfig,
    backends: AgentBackends,
    domain_description: str = "a tri-modal dataset",
    rule_cache: dict | None = None,
    dataset_name: str = "",
    clock: Callable[[], float] = time.time,
) -> tuple[Candidate, RefinementTrace, MiningStage | None]:
    """Full agent pipeline for one sample: mine, generate, verify, refine.

    Runs at most ``config.max_rounds`` rounds and ``max_rounds * candidate_count``
    generator calls. If no round clears the threshold, the globally best-scoring
    candidate is force-accepted (earliest round wins ties). A backend failure
    mid-pipeline raises PipelinePartialFailure carrying the rounds and mining
    state accumulated so far.
    """
    if target_kind in sample.payloads:
        raise NoUsableConditionError(f"sample {sample.id!r} already has {target_kind.value}")
    observed = observed_payloads(sample, target_kind)
    if not observed:
        raise NoUsableConditionError(f"sample {sample.id!r} has no observed payloads")

    rounds: list[RefinementRound] = []
    mining: MiningStage | None = None
    try:
        mining = _mining_stage(
            sample, config, backends, observed, domain_description,
            rule_cache, dataset_name, clock,
        )
        summaries = (
            mining.summaries if mining is not None
            else _miner_disabled_summaries(sample, target_kind)
        )
        final = _refinement_loop(
            sample, target_kind, config, backends, observed, summaries, rounds
        )
    except ModbenchError as exc:
        raise PipelinePartialFailure(exc, rounds, mining) from exc
    trace = RefinementTrace(rounds=tuple(rounds), final_candidate=final)
    return final, trace, mining
