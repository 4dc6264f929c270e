"""Embedded prompt templates with placeholder substitution and strict output parsing.

Templates are read-only at runtime. Rendering is a single pass, so placeholder
syntax inside binding values is never re-expanded. Parsers tolerate prose and
code fences around JSON but validate the extracted object strictly.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .core import CRITERIA_BY_KIND, Granularity, JudgeReport, ModalityKind
from .errors import (
    ExtraneousBindingError,
    MarkerNotFoundError,
    MissingBindingError,
    NoJsonFoundError,
    SchemaMismatchError,
    UnknownTemplateError,
)

_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")
ANSWER_MARKER = "[ANSWER]:"
REFINED_PROMPT_MARKER = "Refined Prompt:"

# Lexical constraints the generation templates impose on synthesized prompts.
MIN_PROMPT_CHARS = 150
AUDIO_PROMPT_OPENINGS = ("the sound of", "a man", "a woman")


class ExpectedOutput(str, Enum):
    json_object = "json_object"
    answer_line = "answer_line"
    free_text = "free_text"


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    expected_output: ExpectedOutput
    required_placeholders: frozenset[str] = field(init=False)

    def __post_init__(self):
        names = frozenset(_PLACEHOLDER_RE.findall(self.body))
        object.__setattr__(self, "required_placeholders", names)


_MINING_RULES = """\
You can understand the content and relationships between multiple modalities, including images, text, and audio.

In the context of {domain_description}, you can call large models for different modalities to interpret their content and then mine the knowledge among modalities.

You need to provide query information specific to each modality, similar to the Visual Question Answering (VQA) format.

The questions should be designed to extract concrete and structured information (e.g., objects, counts, colors, relations, events, etc.) from the different modalities.

Return Format: a single JSON object mapping each modality name ("image", "text", "audio") to a list of question strings, for example:

{ "image": ["<question>", "..."], "text": ["<question>", "..."], "audio": ["<question>", "..."] }
"""

_MINING_KNOWLEDGE = """\
Instruction: You are a helpful AI agent aimed at understanding the {input_modality} provided by the user.

Task: Your task is to understand the {input_modality} provided by the user and answer the questions related to the {input_modality}. You should carefully review the answer and make sure the answer is in one sentence.

The user would provide the following format:

[QUESTION]: <<INSERT QUESTION HERE>>

Your return should be in the following format:

[ANSWER]: ...

Think carefully and provide the best answer to the user.
"""

_KNOWLEDGE_SUMMARY = """\
Instruction: Based on the {input_modality} provided by the user, and the QA pairs that were extracted from the {input_modality}, summarize a meaningful paragraph to describe the {input_modality}.

QA PAIRS:

{qa_pairs}

Your answer should be in the following format:

[ANSWER]: ...
"""

_GEN_TEXT = """\
Instruction: You are provided with multimodal observations that include an image and an audio clip.

[Image Information]

{image_info}

[Audio Information]

{audio_info}

NOTE: The audio may not contain any useful information for the text generation. In this case, you can pay more attention to the image information.

Task: Based on the provided details, generate a series of exactly {candidate_count} distinct candidate texts. Each text should:

1. Integrate both the visual and audio information seamlessly.
2. Highlight the interplay between the image and audio.
3. Present different stylistic or emotive perspectives.
4. Contain only one object and one action. Ensure that each candidate is a single, concise sentence that mentions exactly one object and one corresponding action.
5. Provide more details about the object and action in the candidate text.

[Output Format]

List the candidate texts as follows:

{ "candidates": [ { "text": "<candidate_1>" }, { "text": "<candidate_2>" }, ... ] }
"""

_GEN_IMAGE = """\
Instruction: You are provided with multimodal observations that include a text and an audio clip.

[Text Information]

{text_info}

[Audio Information]

{audio_info}

NOTE: The audio may not contain any useful information for the image generation. In this case, you can pay more attention to the text information.

Task: Based on the provided information, generate a series of exactly {candidate_count} distinct candidate prompts for image generation. Each prompt should:

1. Detail the visual elements (scene, characters, colors, style, etc.) informed by the audio and text.
2. Clearly bridge the auditory and narrative information to suggest a compelling visual outcome.
3. Offer varied creative interpretations for potential image outputs.
4. Ensure that the prompts are at least 150 characters in length.
5. Contain only one object and one action. Ensure each candidate is a single, concise sentence that includes exactly one object and one corresponding action.
6. Provide more vivid details about the object and action in the candidate prompt.

[Output Format]

List the candidate prompts as follows:

{ "candidates": [ { "prompts": "<candidate_1>" }, { "prompts": "<candidate_2>" }, ... ] }
"""

_GEN_AUDIO = """\
Instruction: You are provided with multimodal observations that include an image and a text.

[Image Information]

{image_info}

[Text Information]

{text_info}

Task: Using the above information, generate a series of exactly {candidate_count} distinct candidate prompts for synthesizing audio. Each candidate prompt should:

1. Integrate both the image and text details to guide the audio generation.
2. Clearly indicate the type of sound source:
   - For non-human sounds (e.g., from an animal or object): begin the prompt with "the sound of [object]" where [object] is the single object producing the sound.
   - For human speech: begin the prompt with "a man or a woman speak [action]" where [action] describes the single action (e.g., a greeting, a remark, or a statement).
3. Use diverse styles in the candidate prompts while following the above format.
4. Contain only one object and one action. Ensure that each candidate is a single, concise sentence that mentions exactly one object and one corresponding action.
5. Ensure that the prompts are at least 150 characters in length.

Output Format:

List the candidate prompts in JSON format, for example:

{ "candidates": [ { "prompts": "the sound of a rusted gate creaking open in the wind, echoing faintly in a silent alley under dim moonlight" }, { "prompts": "a woman speaks a warm greeting as she enters the sunlit courtyard, her voice soft and full of familiarity" } ] }
"""

_VERIFY_TEXT = """\
Instruction: You are a multimodal verifier. Your job is to evaluate a candidate text against a ground-truth modality (image or audio). You must rigorously detect and penalize any hallucinated or unsupported claims.

Inputs:
- generated_text: {generated_text}
- ground_truth_modality: {ground_truth_modality} (provided as an attachment)

Evaluation Procedure:

1. Claim Extraction & Fact-Checking
- Split the candidate text into discrete assertions or facts.
- For each assertion, check whether it is directly supported by the modality reference.
- Label any assertion with no grounding as a hallucination.

2. Evaluation Criteria (each scored 0-5)
- semantic_alignment: accuracy of referencing objects, actions, and attributes. Score = 5 only if all elements are correct and grounded.
- factual_groundedness: let N = total assertions and H = hallucinated assertions. Score = 5 if H = 0, otherwise max(0, 5 - ceil(5 * H / N)).
- coherence_completeness: logical progression plus coverage of all non-hallucinatory salient elements.
- consistency: internal consistency and modality compatibility.
- relevance_focus: topical relevance; avoid off-topic content.
- language_quality: grammar, fluency, and style appropriateness.

3. Overall Score
- Compute overall_score as the average of the six scores.

Output Format:
Return only the following JSON object.

{ "semantic_alignment": <0-5>, "factual_groundedness": <0-5>, "coherence_completeness": <0-5>, "consistency": <0-5>, "relevance_focus": <0-5>, "language_quality": <0-5>, "overall_score": <0-5>, "similarity_score": <float>, "hallucinated_assertions": <integer>, "total_assertions": <integer> }
"""

_VERIFY_IMAGE = """\
Instruction: You are a multimodal verifier. Your task is to evaluate a generated image against a ground-truth modality (either text or audio). You must assign six individual scores and one overall score, and provide 1-2 sentence justifications for each. You must also list any hallucinated elements detected in the image.

Inputs:
- generated_image: attached.
- generated_prompt: {generated_prompt}
- ground_truth_modality: {ground_truth_modality} (provided as an attachment)

Evaluation Procedure:

1. Claim Extraction
- Identify visual elements (objects, actions, colors, environments) in the generated image.
- Extract expected assertions from the ground truth modality.

2. Hallucination Detection
- Any image element not grounded in the ground truth is labeled as a hallucination.
- Record each hallucination in hallucinated_elements.

3. Prompt Alignment
- Ensure the image reflects the content of the generated prompt.

Evaluation Criteria (0-5 per item):
- accuracy_to_ground_truth: completeness and correctness of objects, actions, settings, and attributes.
- factual_groundedness: based on total assertions N and hallucinations H, score = 5 if H = 0, otherwise max(0, 5 - ceil(5 * H / N)).
- creativity_originality: artistic novelty and expressiveness within grounded limits.
- visual_quality_realism: image fidelity, detail, lighting, coherence.
- consistency_cohesion: internal consistency in perspective, scale, spatial relations.
- emotional_thematic_resonance: faithfulness to mood or theme implied in the ground truth.

Overall Score:
Average of the six individual scores.

Output Format:
Return only the following JSON object:

{ "accuracy_to_ground_truth": <0-5>, "factual_groundedness": <0-5>, "creativity_originality": <0-5>, "visual_quality_realism": <0-5>, "consistency_cohesion": <0-5>, "emotional_thematic_resonance": <0-5>, "overall_score": <0-5>, "hallucinated_elements": ["<element1>", "<element2>"], "justifications": { "accuracy_to_ground_truth": "<1-2 sentence justification>", "factual_groundedness": "<...>", "creativity_originality": "<...>", "visual_quality_realism": "<...>", "consistency_cohesion": "<...>", "emotional_thematic_resonance": "<...>" } }
"""

_VERIFY_AUDIO = """\
Instruction: You are a multimodal verifier. Your task is to evaluate a generated audio clip against a ground-truth text or image. You must assign six scores (0-5), compute an overall average, and return hallucination/noise stats. Each score must be supported by a 1-2 sentence justification. Return only the JSON object - no extra text.

Inputs:
- generated_audio: attached.
- generated_prompt: {generated_prompt}
- ground_truth_modality: {ground_truth_modality} (provided as an attachment)

Evaluation Procedure:

1. Claim Extraction
- Split the transcript into factual assertions (e.g., object/action/attribute descriptions).

2. Noise Detection
- Count non-meaningful segments (e.g., background noise, filler) as noise_segments; exclude from scoring.

3. Hallucination Detection
- If modality = text, match entities and actions explicitly.
- If modality = image, verify assertions against visible content.
- Unsupported assertions are counted in hallucinated_assertions.

Evaluation Criteria (0-5 each):
- semantic_alignment: correctness of assertions based on ground truth.
- factual_groundedness: score = 5 if H = 0, otherwise max(0, 5 - ceil(5 * H / N)).
- noise_resilience: proper handling of noise; no confusion or degradation of other scores.
- intelligibility: speech clarity, fluency, pronunciation.
- audio_quality: SNR, absence of distortion/artifacts, natural tone.
- relevance_focus: is the content fully on-topic and aligned with prompt/modality?

Overall Score:
Arithmetic average of the six individual criteria.

Output Format:
Return only the following JSON object:

{ "semantic_alignment": <0-5>, "factual_groundedness": <0-5>, "noise_resilience": <0-5>, "intelligibility": <0-5>, "audio_quality": <0-5>, "relevance_focus": <0-5>, "overall_score": <0-5>, "hallucinated_assertions": <integer>, "noise_segments": <integer>, "justifications": { "semantic_alignment": "<1-2 sentence justification>", "factual_groundedness": "<...>", "noise_resilience": "<...>", "intelligibility": "<...>", "audio_quality": "<...>", "relevance_focus": "<...>" } }
"""

_REFINE_TEXT = """\
Instruction: You are a multimodal text refinement agent. Your job is to take an existing piece of generated text and improve it by carefully cross-checking against the available modality information. Do not introduce any details not supported by the audio or image.

Inputs:

1. Original Text: {original_text}

2. Image Information: {image_info}

3. Audio Information: {audio_info}

Task:

1. Fact-check & Remove Hallucinations: identify any statements in the Original Text that are not supported by the audio or image, and remove or correct them.
2. Add Missing Details: if the audio or image contain salient facts or vivid details that the Original Text omits (objects, actions, emotions, ambience), integrate them naturally.
3. Ensure Semantic Alignment: verify that every claim in the refined text is grounded in the provided modalities.
4. Improve Clarity & Flow: reorganize sentences for logical progression, smooth transitions, and readability.
5. Match Tone & Style: align the refined text's tone with the audio's mood and the image's atmosphere (e.g., dramatic, serene, urgent).
6. Polish Language: correct grammar, tighten phrasing, and eliminate redundancy.

Output:
Return only the fully refined text, as a single coherent passage - no commentary or metadata.
"""

_REFINE_IMAGE = """\
Instruction: You are an expert image generation agent. Your job is to take an existing prompt and its reviewer feedback, then produce a single, improved prompt that:

- Keeps all the artistically valuable elements from the Original Prompt.
- Applies or corrects details according to the Feedback.
- Enhances clarity, composition, and style to better achieve the user's vision.

Inputs:

Original Prompt: "{original_prompt}"

Feedback: "{feedback}"

Task:

1. Read the Original Prompt and identify its core elements (subject, setting, style, mood, color palette, perspective, etc.).
2. Read each piece of Feedback and note:
   - Which details to add (e.g., "more dramatic lighting," "include a solitary tree silhouette").
   - Which details to remove or tone down (e.g., "avoid busy backgrounds," "less saturated colors").
   - Any stylistic shifts requested (e.g., "make it more atmospheric," "lean toward a painterly look").
3. Merge these into one concise, coherent prompt that:
   - Clearly enumerates the final composition instructions.
   - Specifies style, mood, and technical details (angle, lighting, color scheme, resolution hints).
   - Uses vivid, image-generation-friendly language.
4. Ensure that the prompt is at least 150 characters in length.

Output:

Produce exactly one block labeled "Refined Prompt:" followed by the new prompt.

Example:

Original Prompt:
A misty forest at dawn, with a lone deer drinking from a stream, soft pastel colors.

Feedback:
Make the scene feel more mystical - add shafts of light through the trees. Reduce pastel tones and use deeper greens. Emphasize texture on the deer's fur.

Refined Prompt:
An enchanted forest at first light, deep emerald foliage pierced by golden light shafts, a solitary deer with richly textured fur drinking from a gentle stream, subtle mist curling among mossy stones, painterly realism, high resolution, soft directional lighting.
"""

_REFINE_AUDIO = """\
Instruction: You are a multimodal audio-generation agent. Your job is to take an existing audio generation prompt and refine it by carefully cross-checking against a provided text passage and an image description. Do not introduce any content not supported by the text or image.

Inputs:

Original Audio Prompt: "{original_audio_prompt}"

Text Information: "{text_info}"

Image Information: "{image_info}"

Task:

1. Fact-check & Remove Unsupported Content: identify any instructions or details in the Original Audio Prompt that are not grounded in the text or image information, and remove or correct them.
2. Integrate Missing Modal Details: if the text or image contain important details - such as setting, character actions, mood descriptors, or ambient cues - that are missing from the prompt, weave them in naturally.
3. Specify Sound Source & Format: clearly state who or what is producing the sound (e.g., "the sound of [object/action]" for non-speech, or "a man/woman speaks [text]" for dialogue). Indicate the desired acoustic environment (e.g., "with soft background rain," "echoing in a cathedral," "quiet studio tone").
4. Set Tone, Pacing & Emotion: based on the mood conveyed by the text and image, prescribe pacing (e.g., slow, measured; quick, urgent), emotional tone (e.g., calm, anxious), and any emphasis or pauses.
5. Enhance Clarity & Conciseness: rewrite for brevity and precision so that the audio generation engine receives a clear, unambiguous instruction.
6. Polish Language & Structure: use vivid, action-oriented language suitable for audio synthesis, and organize details in logical order (source, content, tone, setting).

Output:
Return only the fully refined audio prompt as a single, self-contained instruction - no commentary or metadata.
"""

_P2_JUDGE_RANKING = """\
Instruction: Given a generation prompt and a generated modality output (text, image, or audio), evaluate the following:

1. Matching Accuracy (0-5): how well does the output literally match specific elements from the prompt (objects, actions, context)?
2. Semantic Relevance (0-5): how well does the output convey the overall meaning or intent of the prompt?

Each score ranges from 0 (poor) to 5 (excellent).

Prompt: {prompt}

Generated Output: provided as an attachment.

Scores:
- Matching Accuracy: <0-5>
- Semantic Relevance: <0-5>
- Final Score: (Accuracy + Relevance) / 2 = <X.X>
"""

_P3_TEXT_MINER = """\
Objective: Extract visual elements from the input text to generate 5 prompts suitable for image generation models. NOTE: keep all of the generated prompts unique and plausible.

Inference Strategy:
- Object Identification: use Named Entity Recognition (NER) and Part-of-Speech (POS) tagging to identify nouns and noun phrases representing tangible objects.
- Scene and Environment Extraction: analyze adjectives and prepositional phrases to determine settings, time of day, weather, and other environmental factors.
- Action and Event Detection: identify verbs and verb phrases that describe actions or events occurring in the scene.
- Stylistic and Aesthetic Details: detect descriptors related to art styles, color schemes, lighting, and visual aesthetics.

Prompt Construction: combine the extracted elements into coherent prompts, ensuring clarity and specificity to guide the generation model effectively.{granularity_suffix}

Respond only in JSON format:

{ "candidates": [ { "prompts": "<prompt_1>" }, { "prompts": "<prompt_2>" }, ... ] }

Input: {input_text}
"""

_P3_IMAGE_MINER = """\
Objective: Analyze an image to generate 5 plausible textual descriptions that could have been used to create it. NOTE: ensure that all generated prompts are unique and contextually plausible.

Inference Strategy:
1. Object Detection: identify and label all visible objects.
2. Scene Understanding: analyze background layout, spatial relationships, and environmental cues to infer the setting.
3. Activity Recognition: detect actions or events occurring in the scene using pose or visual motion cues.
4. Emotional and Stylistic Analysis: assess facial expressions, color palettes, and artistic filters to determine emotion and aesthetic style.

Prompt Generation: integrate the extracted elements into coherent and descriptive prompts that reflect the image's semantic content.{granularity_suffix}

Respond only in JSON format:

{ "candidates": [ { "prompts": "<prompt_1>" }, { "prompts": "<prompt_2>" }, ... ] }

Input: the image is provided as an attachment.
"""

_GRANULARITY_SUFFIX = """\
Additional extraction requirements:
{extraction_clauses}
"""


def _t(template_id: str, body: str, expected: ExpectedOutput) -> PromptTemplate:
    return PromptTemplate(template_id=template_id, body=body, expected_output=expected)


TEMPLATES: dict[str, PromptTemplate] = {
    t.template_id: t
    for t in (
        _t("mining-rules", _MINING_RULES, ExpectedOutput.json_object),
        _t("mining-knowledge", _MINING_KNOWLEDGE, ExpectedOutput.answer_line),
        _t("knowledge-summary", _KNOWLEDGE_SUMMARY, ExpectedOutput.answer_line),
        _t("gen-text", _GEN_TEXT, ExpectedOutput.json_object),
        _t("gen-image", _GEN_IMAGE, ExpectedOutput.json_object),
        _t("gen-audio", _GEN_AUDIO, ExpectedOutput.json_object),
        _t("verify-text", _VERIFY_TEXT, ExpectedOutput.json_object),
        _t("verify-image", _VERIFY_IMAGE, ExpectedOutput.json_object),
        _t("verify-audio", _VERIFY_AUDIO, ExpectedOutput.json_object),
        _t("refine-text", _REFINE_TEXT, ExpectedOutput.free_text),
        _t("refine-image", _REFINE_IMAGE, ExpectedOutput.free_text),
        _t("refine-audio", _REFINE_AUDIO, ExpectedOutput.free_text),
        _t("p2-judge-ranking", _P2_JUDGE_RANKING, ExpectedOutput.free_text),
        _t("p3-text-miner", _P3_TEXT_MINER, ExpectedOutput.json_object),
        _t("p3-image-miner", _P3_IMAGE_MINER, ExpectedOutput.json_object),
        _t("granularity-suffix", _GRANULARITY_SUFFIX, ExpectedOutput.free_text),
    )
}

TEMPLATE_IDS: tuple[str, ...] = tuple(TEMPLATES)

_GRANULARITY_CLAUSES: dict[Granularity, tuple[str, ...]] = {
    Granularity.baseline: (),
    Granularity.object: (
        "- Explicitly identify every distinct object and name it in each prompt.",
    ),
    Granularity.object_location: (
        "- Explicitly identify every distinct object and name it in each prompt.",
        "- For every object, state its spatial location within the scene.",
    ),
    Granularity.object_color: (
        "- Explicitly identify every distinct object and name it in each prompt.",
        "- For every object, state its dominant color attributes.",
    ),
}


def render(template_id: str, bindings: dict[str, str]) -> str:
    """Substitute every placeholder in the template with its binding.

    Bindings must cover the template's placeholders exactly: a missing one
    raises, and so does an extraneous key. Substitution is single-pass.
    """
    template = TEMPLATES.get(template_id)
    if template is None:
        raise UnknownTemplateError(f"no template with id {template_id!r}")
    extraneous = set(bindings) - template.required_placeholders
    if extraneous:
        raise ExtraneousBindingError(sorted(extraneous)[0])
    missing = template.required_placeholders - set(bindings)
    if missing:
        raise MissingBindingError(sorted(missing)[0])

    def _sub(match: re.Match) -> str:
        return bindings[match.group(1)]

    return _PLACEHOLDER_RE.sub(_sub, template.body)


def granularity_suffix(level: Granularity) -> str:
    """Extraction-clause fragment appended to the miner templates; empty at baseline."""
    clauses = _GRANULARITY_CLAUSES[level]
    if not clauses:
        return ""
    return "\n\n" + render("granularity-suffix", {"extraction_clauses": "\n".join(clauses)})


def parse_answer_line(raw: str) -> str:
    """Text after the first ``[ANSWER]:`` marker, whitespace-collapsed to one line."""
    idx = raw.find(ANSWER_MARKER)
    if idx < 0:
        raise MarkerNotFoundError(f"no {ANSWER_MARKER!r} marker in reply")
    tail = raw[idx + len(ANSWER_MARKER):]
    return " ".join(tail.split())


_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def extract_first_json(raw: str) -> dict:
    """First well-formed JSON object in raw, tolerating prose and code fences."""
    fenced = _FENCE_RE.search(raw)
    texts = [fenced.group(1)] if fenced else []
    texts.append(raw)
    decoder = json.JSONDecoder()
    for text in texts:
        start = text.find("{")
        while start >= 0:
            try:
                obj, _ = decoder.raw_decode(text[start:])
            except json.JSONDecodeError:
                obj = None
            if isinstance(obj, dict):
                return obj
            start = text.find("{", start + 1)
    raise NoJsonFoundError("no JSON object found in reply")


def parse_candidates_json(raw: str, fieldname: str) -> list[str]:
    """Ordered candidate strings from a ``{"candidates": [{field: str}, ...]}`` reply.

    Empty strings are dropped; an empty candidates array is the caller's problem.
    """
    if fieldname not in ("text", "prompts"):
        raise ValueError(f"fieldname must be 'text' or 'prompts', not {fieldname!r}")
    obj = extract_first_json(raw)
    candidates = obj.get("candidates")
    if not isinstance(candidates, list):
        raise SchemaMismatchError("reply has no 'candidates' array")
    out: list[str] = []
    for item in candidates:
        if not isinstance(item, dict) or fieldname not in item:
            raise SchemaMismatchError(f"candidate item lacks the {fieldname!r} field: {item!r}")
        value = item[fieldname]
        if not isinstance(value, str):
            raise SchemaMismatchError(f"candidate {fieldname} is not a string: {value!r}")
        if value.strip():
            out.append(value)
    return out


def _as_score(obj: dict, name: str) -> float:
    value = obj.get(name)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise SchemaMismatchError(f"criterion {name!r} missing or not numeric")
    value = float(value)
    if not 0.0 <= value <= 5.0:
        raise SchemaMismatchError(f"criterion {name!r} score {value} outside [0, 5]")
    return value


def _as_count(obj: dict, name: str, default: int | None = None) -> int:
    value = obj.get(name, default)
    if value is None or isinstance(value, bool) or not isinstance(value, int):
        raise SchemaMismatchError(f"field {name!r} missing or not an integer")
    if value < 0:
        raise SchemaMismatchError(f"field {name!r} must be non-negative")
    return value


def parse_judge_report(raw: str, kind: ModalityKind) -> JudgeReport:
    """Validate a verifier reply against the modality-specific scorecard schema.

    ``overall_score`` is recomputed as the mean of the six criteria; image
    reports map ``len(hallucinated_elements)`` to H, text/audio reports read
    ``hallucinated_assertions`` directly.
    """
    obj = extract_first_json(raw)
    names = CRITERIA_BY_KIND[kind]
    criteria = {name: _as_score(obj, name) for name in names}

    if kind is ModalityKind.image:
        elements = obj.get("hallucinated_elements")
        if not isinstance(elements, list) or not all(isinstance(e, str) for e in elements):
            raise SchemaMismatchError("image report needs a 'hallucinated_elements' string list")
        hallucinated = len(elements)
        total = _as_count(obj, "total_assertions", default=0)
    else:
        hallucinated = _as_count(obj, "hallucinated_assertions")
        default_total = None if kind is ModalityKind.text else 0
        total = _as_count(obj, "total_assertions", default=default_total)

    noise = _as_count(obj, "noise_segments", default=0) if kind is ModalityKind.audio else 0

    justifications: dict[str, str] = {}
    raw_just = obj.get("justifications", {})
    if raw_just:
        if not isinstance(raw_just, dict):
            raise SchemaMismatchError("'justifications' must be an object")
        for name in names:
            note = raw_just.get(name)
            if isinstance(note, str) and note.strip():
                justifications[name] = note

    return JudgeReport(
        criteria=criteria,
        overall_score=sum(criteria.values()) / 6.0,
        hallucinated_count=hallucinated,
        total_assertions=total,
        noise_segments=noise,
        justifications=justifications,
    )


_ACCURACY_RE = re.compile(r"Matching Accuracy\s*[:=]\s*([0-9]+(?:\.[0-9]+)?)")
_RELEVANCE_RE = re.compile(r"Semantic Relevance\s*[:=]\s*([0-9]+(?:\.[0-9]+)?)")


def parse_ranking_scores(raw: str) -> tuple[float, float]:
    """(matching accuracy, semantic relevance) from a ranking reply; both in [0, 5]."""
    acc = _ACCURACY_RE.search(raw)
    rel = _RELEVANCE_RE.search(raw)
    if acc is None or rel is None:
        raise SchemaMismatchError("reply lacks Matching Accuracy / Semantic Relevance scores")
    accuracy, relevance = float(acc.group(1)), float(rel.group(1))
    for value in (accuracy, relevance):
        if not 0.0 <= value <= 5.0:
            raise SchemaMismatchError(f"ranking score {value} outside [0, 5]")
    return accuracy, relevance


def export_templates(out_dir: Path) -> list[Path]:
    """Write each template body to ``<out_dir>/<template_id>.txt`` for audit."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for template_id, template in TEMPLATES.items():
        path = out_dir / f"{template_id}.txt"
        path.write_text(template.body, encoding="utf-8")
        written.append(path)
    return written
