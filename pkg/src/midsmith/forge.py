"""Offline data pipelines.

Covers the benchmark-generation side (composition enumeration, meta-prompt
assembly, intent-mismatch filtering) and the training-data side
(re-captioning, ICL sample selection, pseudo-multi-turn mixing,
error-correction dataset construction, training-mix export).

All pipelines are deterministic given their inputs, an rng seed, and
content-keyed mock backends. Batch jobs quarantine per-item failures and
keep going; large offline runs must survive partial backend flakiness.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .backends import BackendError, ChatBackend, ChatRequest, Message, Part, text_message
from .model import (
    Modality,
    ModalityScenario,
    SCENARIO_ORDER,
    ConversationRecord,
    UserTurnInput,
    Vocabulary,
    scenario_of,
)
from .protocol import (
    CorrectionVerdict,
    PromptTemplates,
    ProtocolError,
    build_teacher_request,
    parse_output,
    parse_teacher_verdict,
)


class ForgeError(Exception):
    pass


class VocabularyMiss(ForgeError):
    def __init__(self, kind: str, value: str):
        super().__init__(f"{kind} {value!r} is not in the vocabulary")


class InsufficientCorpus(ForgeError):
    pass


class PoolTooSmall(ForgeError):
    pass


# --- composition enumeration -------------------------------------------------

@dataclass(frozen=True)
class CompositionId:
    """A conversation flow: the tuple of per-turn modality scenarios."""

    turns: tuple[ModalityScenario, ...]

    def code(self) -> str:
        return ",".join(s.value for s in self.turns)

    @classmethod
    def parse(cls, code: str) -> "CompositionId":
        return cls(turns=tuple(ModalityScenario.parse(c.strip()) for c in code.split(",")))


def enumerate_compositions(turn_count: int) -> list[CompositionId]:
    """All 4^turn_count scenario tuples, in canonical lexicographic order."""
    if not (1 <= turn_count <= 6):
        raise ForgeError("turn_count must be between 1 and 6")
    return [
        CompositionId(turns=combo)
        for combo in itertools.product(SCENARIO_ORDER, repeat=turn_count)
    ]


# --- meta prompts -------------------------------------------------------------

@dataclass(frozen=True)
class CaptionedPair:
    image_ref: str
    caption: str

    def __post_init__(self):
        if not self.caption:
            raise ValueError("caption must be non-empty")


@dataclass(frozen=True)
class MetaPromptSpec:
    composition: CompositionId
    topic: str
    language: str = "en"
    edit_type: str | None = None
    icl_samples: tuple[CaptionedPair, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "icl_samples", tuple(self.icl_samples))


_SCENARIO_DESCRIPTIONS = {
    ModalityScenario.T_TO_T: "text-only user input, text answer expected",
    ModalityScenario.T_TO_I: "text-only user input, image generation expected",
    ModalityScenario.IT_TO_T: "user input with an image, text answer expected",
    ModalityScenario.IT_TO_I: "user input with an image, image generation expected",
}

OBJECT_CONSISTENCY_CLAUSE = (
    "For image turns that build on an image produced in a previous turn, the "
    "drawing prompt must satisfy the new demand while being altered as "
    "little as possible from the drawing prompt used for the previous image."
)


def build_meta_prompt(spec: MetaPromptSpec, vocab: Vocabulary) -> str:
    """Deterministic generation prompt for one conversation composition."""
    if spec.topic not in vocab.topics:
        raise VocabularyMiss("topic", spec.topic)
    if spec.edit_type is not None and spec.edit_type not in vocab.edit_types:
        raise VocabularyMiss("edit_type", spec.edit_type)

    lines = [
        "Generate one multi-turn conversation between a user and a "
        "multi-modal assistant that can answer in text or emit a drawing "
        "prompt for an image generator.",
        f"Language: {spec.language}.",
        f"Topic: {spec.topic}.",
    ]
    if spec.edit_type is not None:
        lines.append(
            f"At least one image turn must apply this edit method: {spec.edit_type}."
        )
    lines.append("The conversation has exactly these turns, in order:")
    for i, scenario in enumerate(spec.composition.turns, start=1):
        lines.append(f"  Turn {i}: {scenario.value} ({_SCENARIO_DESCRIPTIONS[scenario]})")
    lines.append(OBJECT_CONSISTENCY_CLAUSE)
    if spec.icl_samples:
        lines.append(
            "Write drawing prompts in the same style as these caption examples:"
        )
        for pair in spec.icl_samples:
            lines.append(f"  caption -> drawing prompt: {pair.caption}")
    return "\n".join(lines)


# --- re-captioning and ICL selection -------------------------------------------

@dataclass(frozen=True)
class RecaptionResult:
    pairs: tuple[CaptionedPair, ...]
    failures: tuple[tuple[str, str], ...]  # (image_ref, error)


def caption_request(caption_prompt: str, image_ref: str) -> ChatRequest:
    return ChatRequest(
        messages=(
            Message(role="user", parts=(Part("text", caption_prompt), Part("image", image_ref))),
        )
    )


def recaption_corpus(
    image_refs: list[str],
    chat_backend: ChatBackend,
    caption_prompt: str | None = None,
) -> RecaptionResult:
    """Caption every image; per-item failures are collected, not fatal."""
    prompt = caption_prompt if caption_prompt is not None else PromptTemplates().caption_prompt
    pairs: list[CaptionedPair] = []
    failures: list[tuple[str, str]] = []
    for ref in image_refs:
        try:
            caption = chat_backend.complete(caption_request(prompt, ref))
            pairs.append(CaptionedPair(image_ref=ref, caption=caption))
        except (BackendError, ValueError) as exc:
            failures.append((ref, str(exc)))
    return RecaptionResult(pairs=tuple(pairs), failures=tuple(failures))


def select_icl_samples(
    corpus: list[CaptionedPair], n: int, rng_seed: int
) -> list[CaptionedPair]:
    """Uniform sample without replacement, deterministic for a given seed."""
    if n > len(corpus):
        raise InsufficientCorpus(f"asked for {n} samples from a corpus of {len(corpus)}")
    return random.Random(rng_seed).sample(corpus, n)


# --- instruction samples and the pseudo-multi-turn mixer -----------------------

SOURCES = ("d_o", "d_p", "d_pm", "dialogben_train")


@dataclass(frozen=True)
class InstructionTurn:
    user: UserTurnInput
    assistant_raw: str

    def __post_init__(self):
        parse_output(self.assistant_raw)  # must be parseable


@dataclass(frozen=True)
class InstructionSample:
    turns: tuple[InstructionTurn, ...]
    source: str

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.turns:
            raise ValueError("an instruction sample needs at least one turn")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")


def instruction_sample_to_dict(sample: InstructionSample) -> dict:
    return {
        "source": sample.source,
        "turns": [
            {
                "user": {"text": t.user.text, "image_ref": t.user.image_ref},
                "assistant_raw": t.assistant_raw,
            }
            for t in sample.turns
        ],
    }


def instruction_sample_from_dict(d: dict) -> InstructionSample:
    return InstructionSample(
        source=d["source"],
        turns=tuple(
            InstructionTurn(
                user=UserTurnInput(text=t["user"]["text"], image_ref=t["user"].get("image_ref")),
                assistant_raw=t["assistant_raw"],
            )
            for t in d["turns"]
        ),
    )


def load_instruction_samples(path: str | Path) -> list[InstructionSample]:
    samples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                samples.append(instruction_sample_from_dict(json.loads(line)))
    return samples


def save_instruction_samples(samples: list[InstructionSample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(instruction_sample_to_dict(sample), ensure_ascii=False))
            fh.write("\n")


def mix_pseudo_multiturn(
    d_o: list[InstructionSample],
    d_p: list[InstructionSample],
    conversations: int,
    turns_per_conv: int,
    rng_seed: int,
) -> list[InstructionSample]:
    """Shuffle the single-turn pool and concatenate consecutive groups into
    multi-turn conversations. No input sample is used twice; semantic
    coherence across the stitched turns is deliberately not required."""
    pool = list(d_o) + list(d_p)
    for sample in pool:
        if len(sample.turns) != 1:
            raise ForgeError("mixer inputs must be single-turn samples")
    needed = conversations * turns_per_conv
    if needed > len(pool):
        raise PoolTooSmall(f"need {needed} single-turn samples, pool has {len(pool)}")
    random.Random(rng_seed).shuffle(pool)
    mixed: list[InstructionSample] = []
    for c in range(conversations):
        group = pool[c * turns_per_conv : (c + 1) * turns_per_conv]
        mixed.append(
            InstructionSample(
                turns=tuple(turn for s in group for turn in s.turns), source="d_pm"
            )
        )
    return mixed


# --- intent-mismatch filter ------------------------------------------------------

JUDGE_TEMPLATE = (
    "Does the following user instruction ask the assistant to produce an "
    "image, or a text answer? Reply with exactly one word: IMAGE or TEXT.\n\n"
    "Instruction: {text}"
)


def judge_request(turn_text: str, has_image: bool) -> ChatRequest:
    text = turn_text if not has_image else f"(an image is attached) {turn_text}"
    return ChatRequest(messages=(text_message("user", JUDGE_TEMPLATE.format(text=text)),))


@dataclass(frozen=True)
class RejectionReason:
    turn_index: int
    judged: Modality
    expected: Modality


@dataclass(frozen=True)
class FilterResult:
    kept: tuple[ConversationRecord, ...]
    rejected: tuple[tuple[ConversationRecord, tuple[RejectionReason, ...]], ...]
    undecided: tuple[tuple[ConversationRecord, str], ...]


def _parse_judge_answer(raw: str) -> Modality | None:
    word = raw.strip().upper()
    if word.startswith("IMAGE"):
        return Modality.IMAGE
    if word.startswith("TEXT"):
        return Modality.TEXT
    return None


def filter_intent_mismatch(
    records: list[ConversationRecord], judge_backend: ChatBackend
) -> FilterResult:
    """Partition records by whether a judge model agrees with every turn's
    expected modality. Backend failures route the whole record to an
    undecided bucket instead of guessing."""
    kept: list[ConversationRecord] = []
    rejected: list[tuple[ConversationRecord, tuple[RejectionReason, ...]]] = []
    undecided: list[tuple[ConversationRecord, str]] = []
    for record in records:
        reasons: list[RejectionReason] = []
        error: str | None = None
        for i, turn in enumerate(record.turns):
            try:
                raw = judge_backend.complete(
                    judge_request(turn.user.text, turn.user.image_ref is not None)
                )
            except BackendError as exc:
                error = str(exc)
                break
            judged = _parse_judge_answer(raw)
            if judged is None:
                error = f"unparseable judge answer on turn {i}: {raw[:60]!r}"
                break
            if judged is not turn.expected_modality:
                reasons.append(
                    RejectionReason(turn_index=i, judged=judged, expected=turn.expected_modality)
                )
        if error is not None:
            undecided.append((record, error))
        elif reasons:
            rejected.append((record, tuple(reasons)))
        else:
            kept.append(record)
    return FilterResult(kept=tuple(kept), rejected=tuple(rejected), undecided=tuple(undecided))


# --- error-correction dataset ------------------------------------------------------

@dataclass(frozen=True)
class CorrectionSample:
    history: str
    question: str
    original_output: str
    verdict: CorrectionVerdict


@dataclass(frozen=True)
class CorrectionResult:
    samples: tuple[CorrectionSample, ...]
    quarantined: tuple[dict, ...]  # {question, original_output, raw, error}


def build_correction_dataset(
    samples: list[tuple[str, str]],
    teacher_backend: ChatBackend,
    templates: PromptTemplates,
) -> CorrectionResult:
    """Ask the teacher for a verdict on each (question, output) pair.

    Both correct and wrong verdicts are retained; unparseable teacher
    completions are quarantined with their raw text so the dataset stays
    clean without losing evidence.
    """
    out: list[CorrectionSample] = []
    quarantine: list[dict] = []
    for q, r in samples:
        try:
            raw = teacher_backend.complete(build_teacher_request(templates, q, r))
        except BackendError as exc:
            quarantine.append(
                {"question": q, "original_output": r, "raw": None, "error": str(exc)}
            )
            continue
        try:
            verdict = parse_teacher_verdict(raw)
        except ProtocolError as exc:
            quarantine.append(
                {"question": q, "original_output": r, "raw": raw, "error": str(exc)}
            )
            continue
        out.append(
            CorrectionSample(history="", question=q, original_output=r, verdict=verdict)
        )
    return CorrectionResult(samples=tuple(out), quarantined=tuple(quarantine))


def correction_sample_to_dict(sample: CorrectionSample) -> dict:
    v = sample.verdict
    return {
        "history": sample.history,
        "question": sample.question,
        "original_output": sample.original_output,
        "verdict": {
            "kind": v.kind,
            "violated_rule": v.violated_rule,
            "explanation": v.explanation,
            "corrected_output": v.corrected_output,
        },
    }


# --- training-mix export --------------------------------------------------------------

def export_training_mix(
    parts: dict[str, list[InstructionSample]],
    include_dialogben: bool,
    path: str | Path,
) -> dict[str, int]:
    """Write the union of the named parts as source-tagged JSONL, plus a
    sidecar manifest of per-source counts. Without include_dialogben the
    dialogben_train part is excluded (the smaller training mix)."""
    path = Path(path)
    counts: dict[str, int] = {}
    with path.open("w", encoding="utf-8") as fh:
        for source in SOURCES:
            samples = parts.get(source, [])
            if source == "dialogben_train" and not include_dialogben:
                continue
            counts[source] = len(samples)
            for sample in samples:
                if sample.source != source:
                    raise ForgeError(
                        f"sample tagged {sample.source!r} found in part {source!r}"
                    )
                fh.write(json.dumps(instruction_sample_to_dict(sample), ensure_ascii=False))
                fh.write("\n")
    manifest_path = path.with_name(path.name + ".manifest.json")
    manifest = {"include_dialogben": include_dialogben, "counts": counts}
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return counts
