"""Domain types and the JSONL benchmark conversation format.

This module is the single source of truth for the record schema shared by
the session engine, the data pipelines, and the metrics. Records are
newline-delimited JSON with a fixed key order so dataset files and reports
stay byte-stable and diffable. Image payloads never live inside records;
records carry content-address strings resolved against an image store or
asset directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class Modality(str, Enum):
    """Output modality of a single assistant turn."""

    TEXT = "text"
    IMAGE = "image"


class ModalityScenario(str, Enum):
    """Per-turn input/output modality combination.

    The declaration order is the canonical ordering used everywhere a
    stable ordering is needed (composition enumeration, report columns).
    """

    T_TO_T = "T->T"
    T_TO_I = "T->I"
    IT_TO_T = "IT->T"
    IT_TO_I = "IT->I"

    @property
    def input_has_image(self) -> bool:
        return self.value.startswith("IT")

    @property
    def output(self) -> Modality:
        return Modality.IMAGE if self.value.endswith("I") else Modality.TEXT

    @classmethod
    def parse(cls, code: str) -> "ModalityScenario":
        try:
            return cls(code)
        except ValueError:
            raise InvariantError("scenario", f"unknown scenario code {code!r}") from None


SCENARIO_ORDER: tuple[ModalityScenario, ...] = tuple(ModalityScenario)

LANGUAGES = ("en", "cn")


class DatasetError(Exception):
    """Base class for dataset loading/validation failures."""


class InvariantError(DatasetError):
    """A domain-type invariant was violated."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class MalformedLine(DatasetError):
    def __init__(self, line_no: int, cause: str):
        super().__init__(f"line {line_no}: {cause}")
        self.line_no = line_no
        self.cause = cause


class DuplicateId(DatasetError):
    def __init__(self, record_id: str):
        super().__init__(f"duplicate record id {record_id!r}")
        self.record_id = record_id


class InvariantViolation(DatasetError):
    def __init__(self, record_id: str, field_name: str, message: str = ""):
        super().__init__(f"record {record_id!r}, field {field_name!r}: {message}")
        self.record_id = record_id
        self.field = field_name


@dataclass(frozen=True)
class UserTurnInput:
    """One user turn: text plus an optional content-addressed image.

    `image_ref` resolution against the store/asset directory happens at
    use time, not at parse time.
    """

    text: str
    image_ref: str | None = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise InvariantError("text", "user turn text must be non-empty")
        if self.image_ref is not None and not self.image_ref:
            raise InvariantError("image_ref", "image_ref must be non-empty when present")


@dataclass(frozen=True)
class VqaItem:
    """A probe question about an expected image, with its canonical answer."""

    question: str
    expected_answer: str

    def __post_init__(self):
        if not self.question.endswith("?"):
            raise InvariantError("question", "question must end with '?'")
        if not self.expected_answer:
            raise InvariantError("expected_answer", "expected answer must be non-empty")


@dataclass(frozen=True)
class TurnSpec:
    """One benchmark turn: user input plus the expected assistant behaviour."""

    user: UserTurnInput
    expected_modality: Modality
    reference_response: str | None = None
    vqa_items: tuple[VqaItem, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "vqa_items", tuple(self.vqa_items))
        if self.vqa_items and self.expected_modality is not Modality.IMAGE:
            raise InvariantError(
                "vqa_items", "vqa_items are only allowed on expected-image turns"
            )


@dataclass(frozen=True)
class ConversationRecord:
    """One benchmark conversation (fixtures use exactly 3 turns)."""

    id: str
    language: str
    topic: str
    turns: tuple[TurnSpec, ...]
    edit_type: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.id:
            raise InvariantError("id", "record id must be non-empty")
        if self.language not in LANGUAGES:
            raise InvariantError("language", f"language must be one of {LANGUAGES}")
        if not self.topic:
            raise InvariantError("topic", "topic must be non-empty")
        if len(self.turns) < 1:
            raise InvariantError("turns", "a conversation needs at least one turn")

    def composition(self) -> tuple[ModalityScenario, ...]:
        return tuple(scenario_of(t) for t in self.turns)


def scenario_of(turn: TurnSpec) -> ModalityScenario:
    """Classify a turn into one of the four modality switching scenarios."""
    has_image = turn.user.image_ref is not None
    if turn.expected_modality is Modality.IMAGE:
        return ModalityScenario.IT_TO_I if has_image else ModalityScenario.T_TO_I
    return ModalityScenario.IT_TO_T if has_image else ModalityScenario.T_TO_T


# --- JSON (de)serialization ------------------------------------------------
# Key order is fixed and documented in docs/dataset-format.md.

def turn_to_dict(turn: TurnSpec) -> dict:
    return {
        "user": {"text": turn.user.text, "image_ref": turn.user.image_ref},
        "expected_modality": turn.expected_modality.value,
        "reference_response": turn.reference_response,
        "vqa_items": [
            {"question": q.question, "expected_answer": q.expected_answer}
            for q in turn.vqa_items
        ],
    }


def record_to_dict(record: ConversationRecord) -> dict:
    return {
        "id": record.id,
        "language": record.language,
        "topic": record.topic,
        "edit_type": record.edit_type,
        "turns": [turn_to_dict(t) for t in record.turns],
    }


def turn_from_dict(d: dict) -> TurnSpec:
    user = d["user"]
    return TurnSpec(
        user=UserTurnInput(text=user["text"], image_ref=user.get("image_ref")),
        expected_modality=Modality(d["expected_modality"]),
        reference_response=d.get("reference_response"),
        vqa_items=tuple(
            VqaItem(question=v["question"], expected_answer=v["expected_answer"])
            for v in d.get("vqa_items", [])
        ),
    )


def record_from_dict(d: dict) -> ConversationRecord:
    return ConversationRecord(
        id=d["id"],
        language=d["language"],
        topic=d["topic"],
        edit_type=d.get("edit_type"),
        turns=tuple(turn_from_dict(t) for t in d["turns"]),
    )


def load_dataset(path: str | Path) -> list[ConversationRecord]:
    """Load a JSONL dataset, validating every record invariant.

    Raises MalformedLine for unparseable lines, DuplicateId for repeated
    ids, and InvariantViolation when a record breaks a type invariant.
    Ordering is preserved.
    """
    path = Path(path)
    records: list[ConversationRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(line_no, str(exc)) from exc
            record_id = raw.get("id", f"<line {line_no}>") if isinstance(raw, dict) else f"<line {line_no}>"
            try:
                record = record_from_dict(raw)
            except InvariantError as exc:
                raise InvariantViolation(record_id, exc.field, str(exc)) from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedLine(line_no, f"bad record shape: {exc}") from exc
            if record.id in seen:
                raise DuplicateId(record.id)
            seen.add(record.id)
            records.append(record)
    return records


def save_dataset(records: list[ConversationRecord], path: str | Path) -> None:
    """Write records as JSONL: one object per line, fixed key order,
    "\\n" terminators, no trailing blank line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), ensure_ascii=False))
            fh.write("\n")


@dataclass(frozen=True)
class Vocabulary:
    """Topic and edit-type vocabularies, loaded from a JSON file.

    The file is a JSON object with "topics" and "edit_types" arrays of
    strings; vocabularies are configuration, not hard-coded enums.
    """

    topics: tuple[str, ...] = ()
    edit_types: tuple[str, ...] = ()

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(topics=tuple(raw["topics"]), edit_types=tuple(raw["edit_types"]))
