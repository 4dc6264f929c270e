"""The three baseline pipelines and the enumeration of all 42 variants.

Paradigm 1 generates directly from the available conditioning; Paradigm 2 adds
best-of-N candidate ranking (embedding- or judge-based); Paradigm 3 adds a
mining step that turns the observed modalities into richer generation prompts.
"""

from __future__ import annotations

from pydantic import Field, model_validator

from .backends import Backend
from .core import (
    Candidate,
    GENERATOR_ROSTER,
    GenerationParams,
    Granularity,
    MinerKind,
    ModalityKind,
    ModalityPayload,
    RankerKind,
    Sample,
    StrictModel,
    VariantSpec,
)
from .errors import (
    EmptyCandidatesError,
    MalformedJudgmentError,
    MinedPromptsEmptyError,
    NoJsonFoundError,
    NoUsableConditionError,
    SchemaMismatchError,
)
from .metrics import cosine_sim
from .prompts import granularity_suffix, parse_candidates_json, parse_ranking_scores, render

# Observed payloads are always consumed in this order so runs are reproducible.
KIND_ORDER = (ModalityKind.image, ModalityKind.text, ModalityKind.audio)

CAPTION_PROMPT = (
    "Describe the attached content in one concise sentence suitable as a "
    "generation prompt. Mention the main object and what it is doing."
)


class RankedOutcome(StrictModel):
    best_index: int = Field(ge=0)
    scores: tuple[float, ...] = Field(min_length=1)
    method: RankerKind

    @model_validator(mode="after")
    def _argmax_rule(self) -> "RankedOutcome":
        best = max(range(len(self.scores)), key=lambda i: (self.scores[i], -i))
        if self.best_index != best:
            raise ValueError(f"best_index {self.best_index} is not the lowest-ordinal argmax {best}")
        return self


def enumerate_variants() -> list[VariantSpec]:
    """All 42 baseline variants, partitioned 6 (direct) + 12 (+ranker) + 24 (+miner).

    The printed roster pairs the embedding ranker with all six generators and
    the judge ranker with five; the twelfth ranked variant completes the judge
    column so the miner tier can build on every generator/ranker combination.
    """
    specs: list[VariantSpec] = []
    roster = [(slug, kind) for slug, _, kind in GENERATOR_ROSTER]
    by_slug = dict(roster)

    for slug, kind in roster:
        specs.append(
            VariantSpec(generator_id=slug, ranker=RankerKind.none, miner=MinerKind.none, target_kind=kind)
        )

    ib_order = ["sd3.5", "flux.1-dev", "qwen2.5-omni-7b", "qwen2.5-vl-7b", "audioldm2", "sa1.0"]
    mj_order = ["sd3.5", "flux.1-dev", "qwen2.5-omni-7b", "audioldm2", "sa1.0", "qwen2.5-vl-7b"]
    for slug in ib_order:
        specs.append(
            VariantSpec(
                generator_id=slug, ranker=RankerKind.embedding, miner=MinerKind.none,
                target_kind=by_slug[slug],
            )
        )
    for slug in mj_order:
        specs.append(
            VariantSpec(
                generator_id=slug, ranker=RankerKind.judge, miner=MinerKind.none,
                target_kind=by_slug[slug],
            )
        )

    for ranker in (RankerKind.embedding, RankerKind.judge):
        for miner in (MinerKind.local_lmm, MinerKind.strong_lmm):
            for slug, kind in roster:
                specs.append(
                    VariantSpec(generator_id=slug, ranker=ranker, miner=miner, target_kind=kind)
                )
    return specs


def observed_payloads(sample: Sample, target_kind: ModalityKind) -> list[ModalityPayload]:
    return [sample.payloads[k] for k in KIND_ORDER if k is not target_kind and k in sample.payloads]


def build_direct_prompt(
    sample: Sample,
    target_kind: ModalityKind,
    captioner: Backend | None = None,
    seed: int = 0,
) -> str:
    """Paradigm-1 prompt: the raw observed text, or a one-shot caption of the blobs.

    Generators are text-conditioned, so image/audio-only samples need a single
    captioning call to a miner-role LMM to obtain a textual prompt.
    """
    if target_kind in sample.payloads:
        raise NoUsableConditionError(f"sample {sample.id!r} already has {target_kind.value}")
    observed = observed_payloads(sample, target_kind)
    if not observed:
        raise NoUsableConditionError(f"sample {sample.id!r} has no observed payloads")
    for payload in observed:
        if payload.kind is ModalityKind.text and payload.text and payload.text.strip():
            return payload.text.strip()
    if captioner is None:
        raise NoUsableConditionError(
            f"sample {sample.id!r} has no text payload and no captioner is configured"
        )
    caption = captioner.complete_text(CAPTION_PROMPT, attachments=observed, seed=seed).strip()
    if not caption:
        raise NoUsableConditionError(f"captioner returned an empty prompt for sample {sample.id!r}")
    return caption


def generate_candidates(
    generator: Backend,
    target_kind: ModalityKind,
    prompts: list[str],
    count: int,
    params: GenerationParams,
    base_seed: int,
) -> list[Candidate]:
    """N candidates distributed round-robin across prompts, seeds base_seed + ordinal.

    Candidate i always uses prompt i % len(prompts) and seed base_seed + i, so
    batch prefixes are stable: the first N candidates of a larger batch are
    byte-identical to an N-sized batch.
    """
    if count < 1:
        raise EmptyCandidatesError("candidate count must be >= 1")
    if not prompts:
        raise MinedPromptsEmptyError("no prompts to generate from")
    if len(prompts) == 1:
        prompt = prompts[0]
        if target_kind is ModalityKind.image:
            return generator.generate_image(prompt, params.image, count, base_seed)
        if target_kind is ModalityKind.audio:
            return generator.generate_audio(prompt, params.audio, count, base_seed)
        candidates = []
        for i in range(count):
            text = generator.complete_text(prompt, params=params.text, seed=base_seed + i)
            candidates.append(
                Candidate(
                    payload=ModalityPayload(kind=ModalityKind.text, text=text),
                    generation_prompt=prompt,
                    generator_id=generator.descriptor.backend_id,
                    ordinal=i,
                    seed_used=base_seed + i,
                )
            )
        return candidates

    candidates = []
    for i in range(count):
        prompt = prompts[i % len(prompts)]
        if target_kind is ModalityKind.image:
            made = generator.generate_image(prompt, params.image, 1, base_seed + i)[0]
        elif target_kind is ModalityKind.audio:
            made = generator.generate_audio(prompt, params.audio, 1, base_seed + i)[0]
        else:
            text = generator.complete_text(prompt, params=params.text, seed=base_seed + i)
            made = Candidate(
                payload=ModalityPayload(kind=ModalityKind.text, text=text),
                generation_prompt=prompt,
                generator_id=generator.descriptor.backend_id,
                ordinal=0,
                seed_used=base_seed + i,
            )
        candidates.append(made.model_copy(update={"ordinal": i}))
    return candidates


def rank_by_embedding(
    candidates: list[Candidate],
    observed: list[ModalityPayload],
    embedder: Backend,
) -> RankedOutcome:
    """Mean cosine similarity between each candidate and the observed payloads."""
    if not candidates:
        raise EmptyCandidatesError("cannot rank an empty candidate list")
    if not observed:
        raise NoUsableConditionError("embedding ranking needs at least one observed payload")
    observed_vecs = [embedder.embed(p) for p in observed]
    scores = []
    for candidate in candidates:
        vec = embedder.embed(candidate.payload)
        scores.append(sum(cosine_sim(vec, o) for o in observed_vecs) / len(observed_vecs))
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    return RankedOutcome(best_index=best, scores=tuple(scores), method=RankerKind.embedding)


RANKING_REASK_LIMIT = 2
_RANKING_REMINDER = "\n\nREMINDER: Reply with the Scores block exactly as specified."


def rank_by_judge(
    candidates: list[Candidate],
    generation_prompt: str,
    judge_backend: Backend,
) -> RankedOutcome:
    """Judge-ranked best-of-N: final score is the mean of accuracy and relevance."""
    if not candidates:
        raise EmptyCandidatesError("cannot rank an empty candidate list")
    scores = []
    for candidate in candidates:
        prompt = render("p2-judge-ranking", {"prompt": candidate.generation_prompt or generation_prompt})
        last: Exception | None = None
        final = None
        for attempt in range(RANKING_REASK_LIMIT + 1):
            ask = prompt if attempt == 0 else prompt + _RANKING_REMINDER
            raw = judge_backend.complete_text(ask, attachments=[candidate.payload], seed=attempt)
            try:
                accuracy, relevance = parse_ranking_scores(raw)
            except (SchemaMismatchError, NoJsonFoundError) as exc:
                last = exc
                continue
            final = (accuracy + relevance) / 2.0
            break
        if final is None:
            raise MalformedJudgmentError(f"ranking output unparseable after re-asks: {last}")
        scores.append(final)
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    return RankedOutcome(best_index=best, scores=tuple(scores), method=RankerKind.judge)


def run_paradigm1(
    sample: Sample,
    target_kind: ModalityKind,
    generator: Backend,
    params: GenerationParams,
    captioner: Backend | None = None,
) -> Candidate:
    """Direct generation: one candidate from the raw conditioning prompt."""
    prompt = build_direct_prompt(sample, target_kind, captioner, seed=params.seed)
    return generate_candidates(generator, target_kind, [prompt], 1, params, params.seed)[0]


def _rank(
    candidates: list[Candidate],
    variant: VariantSpec,
    observed: list[ModalityPayload],
    generation_prompt: str,
    embedder: Backend | None,
    judge_backend: Backend | None,
) -> RankedOutcome:
    if variant.ranker is RankerKind.embedding:
        if embedder is None:
            raise NoUsableConditionError("embedding ranking requires an embedder backend")
        return rank_by_embedding(candidates, observed, embedder)
    if judge_backend is None:
        raise NoUsableConditionError("judge ranking requires a judge backend")
    return rank_by_judge(candidates, generation_prompt, judge_backend)


def run_paradigm2(
    sample: Sample,
    target_kind: ModalityKind,
    variant: VariantSpec,
    params: GenerationParams,
    generator: Backend,
    embedder: Backend | None = None,
    judge_backend: Backend | None = None,
    captioner: Backend | None = None,
) -> tuple[Candidate, RankedOutcome]:
    """Best-of-N over the direct prompt, ranked by the variant's method."""
    if variant.ranker is RankerKind.none:
        raise NoUsableConditionError("paradigm 2 requires a ranking module")
    prompt = build_direct_prompt(sample, target_kind, captioner, seed=params.seed)
    candidates = generate_candidates(
        generator, target_kind, [prompt], params.candidate_count, params, params.seed
    )
    observed = observed_payloads(sample, target_kind)
    outcome = _rank(candidates, variant, observed, prompt, embedder, judge_backend)
    return candidates[outcome.best_index], outcome


MINER_REASK_LIMIT = 1
_MINER_REMINDER = '\n\nREMINDER: Respond only with the JSON object {\n  "candidates": [ { "prompts": "..." } ]\n}.'


def mine_prompts(
    sample: Sample,
    target_kind: ModalityKind,
    miner_backend: Backend,
    granularity: Granularity = Granularity.baseline,
    seed: int = 0,
) -> list[str]:
    """Ask the miner LMM for generation prompts extracted from an observed modality.

    Uses the text miner when text is observed, otherwise the image miner with
    the image attached; one masked modality of three always leaves one of them.
    """
    observed = {p.kind: p for p in observed_payloads(sample, target_kind)}
    suffix = granularity_suffix(granularity)
    if ModalityKind.text in observed:
        text_payload = observed[ModalityKind.text]
        assert text_payload.text is not None
        prompt = render(
            "p3-text-miner",
            {"input_text": text_payload.text, "granularity_suffix": suffix},
        )
        attachments: list[ModalityPayload] = []
    elif ModalityKind.image in observed:
        prompt = render("p3-image-miner", {"granularity_suffix": suffix})
        attachments = [observed[ModalityKind.image]]
    else:
        raise NoUsableConditionError("mining needs an observed text or image payload")

    last: Exception | None = None
    for attempt in range(MINER_REASK_LIMIT + 1):
        ask = prompt if attempt == 0 else prompt + _MINER_REMINDER
        raw = miner_backend.complete_text(ask, attachments=attachments, seed=seed + attempt)
        try:
            prompts = parse_candidates_json(raw, "prompts")
        except (NoJsonFoundError, SchemaMismatchError) as exc:
            last = exc
            continue
        if prompts:
            return prompts
        last = MinedPromptsEmptyError("miner returned an empty prompt list")
    raise MinedPromptsEmptyError(f"mining produced no prompts after a re-ask: {last}")


def run_paradigm3(
    sample: Sample,
    target_kind: ModalityKind,
    variant: VariantSpec,
    params: GenerationParams,
    generator: Backend,
    miner_backend: Backend,
    embedder: Backend | None = None,
    judge_backend: Backend | None = None,
    captioner: Backend | None = None,
    granularity: Granularity = Granularity.baseline,
) -> tuple[Candidate, RankedOutcome, list[str]]:
    """Mining-augmented best-of-N: candidates round-robin over the mined prompts."""
    if variant.miner is MinerKind.none or variant.ranker is RankerKind.none:
        raise NoUsableConditionError("paradigm 3 requires both a miner and a ranking module")
    mined = mine_prompts(sample, target_kind, miner_backend, granularity, seed=params.seed)
    candidates = generate_candidates(
        generator, target_kind, mined, params.candidate_count, params, params.seed
    )
    observed = observed_payloads(sample, target_kind)
    fallback_prompt = mined[0]
    outcome = _rank(candidates, variant, observed, fallback_prompt, embedder, judge_backend)
    return candidates[outcome.best_index], outcome, mined
