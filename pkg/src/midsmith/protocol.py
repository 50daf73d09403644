"""Token grammar and prompt assembly.

Everything connecting the user's turns to the chat backend, the teacher
corrector, and the image generator is string-level: the start-anchored
"<draw>" intent token, the fixed prompt templates, and the
"###Correct" / "###Wrong###" verdict grammar used by the teacher and by
two-step self-correction.

The concatenation of prompt, question, and original output is realized as
labeled sections ("Question:" / "Original Output:") separated by blank
lines.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .backends import ChatRequest, Message, Part, text_message
from .model import Modality, UserTurnInput

DRAW_TOKEN = "<draw>"
CORRECT_MARKER = "###Correct"
WRONG_MARKER = "###Wrong###"

_RULE_RE = re.compile(r"rule\s*([1-3])", re.IGNORECASE)
_SOLUTION_RE = re.compile(r"Correct [Ss]olution:\s*")


class ProtocolError(Exception):
    """Base class for grammar/prompt failures."""


class EmptyOutput(ProtocolError):
    pass


class NonAlternatingHistory(ProtocolError):
    pass


class UnrecognizedVerdict(ProtocolError):
    def __init__(self, raw: str):
        super().__init__(f"neither verdict marker leads: {raw[:80]!r}")
        self.raw = raw


class MissingCorrection(ProtocolError):
    def __init__(self, detail: str):
        super().__init__(detail)


DEFAULT_TRAINING_PROMPT = (
    "Please first identify the intention of the user, if it is to draw "
    "please append <draw> before the output"
)

DEFAULT_CAPTION_PROMPT = "Please describe this image in detail."

DEFAULT_CORRECTION_PROMPT = (
    "Review the assistant output below against these rules:\n"
    "1. The assistant must correctly identify whether the user's intention "
    "is to draw or to talk.\n"
    "2. If the intention is to talk, the output must answer the user query "
    "coherently.\n"
    "3. If the intention is to draw, the output must start with <draw> "
    "followed by a descriptive prompt suitable for an image generation "
    "model.\n"
    "If the output satisfies all three rules, output '###Correct'. "
    "Otherwise output '###Wrong###', name the violated rule with an "
    "explanation, then provide the fixed output after a 'Correct Solution:' "
    "header."
)

_TEACHER_RULES = (
    "You are an expert in providing feedback on the output of an "
    "Multi-modal Large Language Model that supports multi-turn multi-modal "
    "dialog and image generation, the behaviour of the assistant is listed "
    "as follows:\n\n"
    "1. The input may contains images. It is specially identified by <img> "
    "and </img> where the detailed description of the image lies between "
    "them.\n\n"
    "2. For the input of an user, it will first identify the whether the "
    "intention of the user is draw or talk, if it is to draw it will append "
    "<draw> before the output.\n\n"
    "3. If the user intention is to talk, then the output of the assistant "
    "in current turn should be coherent in response to the user query.\n\n"
    "4. If the user intention is to draw, then the output of the assistant "
    "in current turn should be <draw> and a detailed description prompt in "
    "response to the user's need. The prompt should be able to be directly "
    "sent into the image generation model to produce high quality image.\n\n"
    "You are given the history conversation H, user query in current turn Q "
    "and output of the assistant in current turn.\n\n"
    "You need to make the judgements as following rules:\n\n"
    "1. According to the history and the current user query, make "
    "judgements on whether the model correctly identifies the use's "
    "intention.\n\n"
    "2. If the intention of the user is to talk, make judgements on whether "
    "the output of the assistant following the instructions of the user "
    "coherently.\n\n"
    "3. If the intention of the user is to draw, make judgements on whether "
    "the output prompt is indeed a descriptive text that is suitable for a "
    "image generation model to generate images.\n\n"
    "If the output satisfy all the three criteria, output '###Correct'. If "
    "not, output '###Wrong###' and the specific criteria it violates "
    "followed by an explanation and provide a correct output for current "
    "user query."
)

# Three in-context correction examples embedded in the teacher prompt. The
# first mirrors a missed drawing intention; the other two cover a correct
# output and an incoherent talk reply.
_TEACHER_EXAMPLES = (
    "Example 1:\n"
    "History: (empty)\n"
    "Question: I'd like to know more about rockets. Could you draw me a "
    "picture of rockets?\n"
    "Original Output: A rocket is a large, powerful, and complex machine "
    "that is used to transport people and goods into space. It is usually "
    "made of steel and aluminum and is equipped with engines, fuel tanks, "
    "guidance systems, and other equipment. The picture shows a large "
    "rocket with a long tail, flying high in the sky.\n"
    "Correction: ###Wrong### The output violates rule 3. The assistant's "
    "description misses the main point of the asking for a visual image of "
    "a rocket. Correct Solution: <draw>A rocket propelled upward by "
    "burning flames is moving through space, the Milky Way and stars in "
    "the background, the shot is panoramic, and the style is cartoonish.\n\n"
    "Example 2:\n"
    "History: (empty)\n"
    "Question: What is the capital of France?\n"
    "Original Output: The capital of France is Paris, which is also its "
    "largest city.\n"
    "Correction: ###Correct\n\n"
    "Example 3:\n"
    "History: (empty)\n"
    "Question: Can you explain why the sky is blue?\n"
    "Original Output: <draw>A bright blue sky over a grassy field, the "
    "style is realistic.\n"
    "Correction: ###Wrong### The output violates rule 1. The user asked "
    "for an explanation, not an image, so the assistant should answer in "
    "text. Correct Solution: The sky looks blue because air molecules "
    "scatter short blue wavelengths of sunlight more strongly than longer "
    "red wavelengths."
)

DEFAULT_TEACHER_FEWSHOT_PROMPT = _TEACHER_RULES + "\n\n" + _TEACHER_EXAMPLES


@dataclass(frozen=True)
class PromptTemplates:
    """The fixed prompt texts; inference and training share one prompt.

    All four are overridable via a JSON object file (template name ->
    string) for the Chinese variant or custom deployments.
    """

    training_prompt: str = DEFAULT_TRAINING_PROMPT
    correction_prompt: str = DEFAULT_CORRECTION_PROMPT
    caption_prompt: str = DEFAULT_CAPTION_PROMPT
    teacher_fewshot_prompt: str = DEFAULT_TEACHER_FEWSHOT_PROMPT

    def __post_init__(self):
        if DRAW_TOKEN not in self.training_prompt:
            raise ValueError(f"training_prompt must mention the {DRAW_TOKEN} token")
        if CORRECT_MARKER not in self.teacher_fewshot_prompt or WRONG_MARKER not in self.teacher_fewshot_prompt:
            raise ValueError(
                "teacher_fewshot_prompt must contain both verdict markers"
            )

    @classmethod
    def load_overrides(cls, path: str | Path) -> "PromptTemplates":
        overrides = json.loads(Path(path).read_text(encoding="utf-8"))
        base = cls()
        return cls(
            training_prompt=overrides.get("training_prompt", base.training_prompt),
            correction_prompt=overrides.get("correction_prompt", base.correction_prompt),
            caption_prompt=overrides.get("caption_prompt", base.caption_prompt),
            teacher_fewshot_prompt=overrides.get(
                "teacher_fewshot_prompt", base.teacher_fewshot_prompt
            ),
        )


@dataclass(frozen=True)
class ParsedAssistantOutput:
    """A chat completion decomposed into modality + payload text.

    For IMAGE the text is the drawing prompt with the leading draw token
    stripped; for TEXT it is the talk reply. `warning` carries parse
    diagnostics (e.g. a non-leading draw token) and is excluded from
    equality so round-trip properties hold.
    """

    modality: Modality
    text: str
    warning: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.text:
            raise ValueError("parsed output text must be non-empty")
        if self.text != self.text.strip():
            raise ValueError("parsed output text must be whitespace-trimmed")
        if self.text.startswith(DRAW_TOKEN):
            raise ValueError("parsed output text must not retain a leading draw token")


def parse_output(raw: str) -> ParsedAssistantOutput:
    """Classify a raw completion as draw (IMAGE) or talk (TEXT).

    Only a draw token at the very start (after trimming) switches modality;
    a token elsewhere stays in the text and attaches a warning.
    """
    trimmed = raw.strip()
    if not trimmed:
        raise EmptyOutput("assistant output is empty after trimming")
    if trimmed.startswith(DRAW_TOKEN):
        prompt = trimmed[len(DRAW_TOKEN):].strip()
        if not prompt:
            raise EmptyOutput("draw output carries no drawing prompt")
        return ParsedAssistantOutput(modality=Modality.IMAGE, text=prompt)
    warning = None
    if DRAW_TOKEN in trimmed:
        warning = "draw token found mid-output; classified as text"
    return ParsedAssistantOutput(modality=Modality.TEXT, text=trimmed, warning=warning)


def render_output(parsed: ParsedAssistantOutput) -> str:
    """Inverse of parse_output."""
    if parsed.modality is Modality.IMAGE:
        return DRAW_TOKEN + parsed.text
    return parsed.text


def build_inference_request(
    templates: PromptTemplates,
    history: list[Message],
    user: UserTurnInput,
) -> ChatRequest:
    """System prompt + prior exchanges verbatim + the new user message."""
    for i, msg in enumerate(history):
        expected = "user" if i % 2 == 0 else "assistant"
        if msg.role != expected:
            raise NonAlternatingHistory(
                f"history message {i} has role {msg.role!r}, expected {expected!r}"
            )
    if len(history) % 2 != 0:
        raise NonAlternatingHistory("history must end with an assistant message")
    parts: list[Part] = [Part("text", user.text)]
    if user.image_ref is not None:
        parts.append(Part("image", user.image_ref))
    return ChatRequest(
        system=templates.training_prompt,
        messages=tuple(history) + (Message(role="user", parts=tuple(parts)),),
    )


def _composite(prompt: str, q: str, r: str) -> ChatRequest:
    if not q or not r:
        raise ValueError("question and original output must be non-empty")
    body = f"{prompt}\n\nQuestion: {q}\n\nOriginal Output: {r}"
    return ChatRequest(messages=(text_message("user", body),))


def build_correction_request(templates: PromptTemplates, q: str, r: str) -> ChatRequest:
    """Self-correction prompt: correction prompt, then question, then the
    first-pass output, as labeled sections."""
    return _composite(templates.correction_prompt, q, r)


def build_teacher_request(templates: PromptTemplates, q: str, r: str) -> ChatRequest:
    """Teacher-corrector prompt: few-shot prompt, then question, then output."""
    return _composite(templates.teacher_fewshot_prompt, q, r)


@dataclass(frozen=True)
class CorrectionVerdict:
    """Outcome of a correction pass: Correct, or Wrong with the violated
    rule, an explanation, and a corrected raw output."""

    kind: str  # "correct" | "wrong"
    violated_rule: int | None = None
    explanation: str | None = None
    corrected_output: str | None = None

    def __post_init__(self):
        if self.kind not in ("correct", "wrong"):
            raise ValueError(f"unknown verdict kind {self.kind!r}")
        wrong_fields = (self.violated_rule, self.explanation, self.corrected_output)
        if self.kind == "wrong":
            if any(f is None for f in wrong_fields):
                raise ValueError("wrong verdicts need rule, explanation, and correction")
            if self.violated_rule not in (1, 2, 3):
                raise ValueError("violated_rule must be 1, 2, or 3")
        else:
            if any(f is not None for f in wrong_fields):
                raise ValueError("correct verdicts carry no correction fields")


def parse_teacher_verdict(raw: str) -> CorrectionVerdict:
    """Parse a '###Correct' / '###Wrong###' completion.

    Wrong verdicts must cite "rule <n>" and carry a 'Correct Solution:'
    header; anything else is an error, never silently coerced.
    """
    trimmed = raw.strip()
    if not trimmed:
        raise UnrecognizedVerdict(raw)
    if trimmed.startswith(CORRECT_MARKER):
        return CorrectionVerdict(kind="correct")
    if not trimmed.startswith(WRONG_MARKER):
        raise UnrecognizedVerdict(raw)
    body = trimmed[len(WRONG_MARKER):]
    rule_match = _RULE_RE.search(body)
    if rule_match is None:
        raise MissingCorrection("wrong verdict does not cite a violated rule")
    solution_match = _SOLUTION_RE.search(body)
    if solution_match is None:
        raise MissingCorrection("wrong verdict has no 'Correct Solution:' header")
    corrected = body[solution_match.end():].strip()
    if not corrected:
        raise MissingCorrection("'Correct Solution:' header carries no output")
    explanation = body[rule_match.end(): solution_match.start()].strip().lstrip(".").strip()
    return CorrectionVerdict(
        kind="wrong",
        violated_rule=int(rule_match.group(1)),
        explanation=explanation,
        corrected_output=corrected,
    )
