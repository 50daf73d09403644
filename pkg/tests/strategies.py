"""Hypothesis strategies for domain values."""

from __future__ import annotations

from hypothesis import strategies as st

from midsmith.model import (
    ConversationRecord,
    Modality,
    ModalityScenario,
    SCENARIO_ORDER,
    TurnSpec,
    UserTurnInput,
    VqaItem,
)
from midsmith.protocol import DRAW_TOKEN, ParsedAssistantOutput

_ALPHABET = "abcdefgh XYZ09汉é!,"


def plain_text(min_size=1, max_size=40):
    return (
        st.text(alphabet=_ALPHABET, min_size=min_size, max_size=max_size)
        .filter(lambda s: s.strip() == s and s)
        .filter(lambda s: not s.startswith(DRAW_TOKEN))
    )


scenarios = st.sampled_from(SCENARIO_ORDER)


@st.composite
def turn_specs(draw):
    scenario = draw(scenarios)
    user = UserTurnInput(
        text=draw(plain_text()),
        image_ref=draw(st.text(alphabet="0123456789abcdef", min_size=8, max_size=8))
        if scenario.input_has_image
        else None,
    )
    vqa_items = ()
    if scenario.output is Modality.IMAGE and draw(st.booleans()):
        vqa_items = tuple(
            VqaItem(question=draw(plain_text()) + "?", expected_answer=draw(plain_text(max_size=10)))
            for _ in range(draw(st.integers(1, 3)))
        )
    return TurnSpec(
        user=user,
        expected_modality=scenario.output,
        reference_response=draw(st.none() | plain_text()),
        vqa_items=vqa_items,
    )


@st.composite
def conversation_records(draw, record_id=None):
    return ConversationRecord(
        id=record_id if record_id is not None else draw(st.uuids()).hex,
        language=draw(st.sampled_from(["en", "cn"])),
        topic=draw(plain_text(max_size=15)),
        edit_type=draw(st.none() | plain_text(max_size=15)),
        turns=tuple(draw(st.lists(turn_specs(), min_size=1, max_size=4))),
    )


@st.composite
def parsed_outputs(draw):
    return ParsedAssistantOutput(
        modality=draw(st.sampled_from([Modality.TEXT, Modality.IMAGE])),
        text=draw(plain_text(max_size=60)),
    )
