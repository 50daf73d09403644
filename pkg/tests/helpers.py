"""Shared test machinery: scripted-run construction and counting oracles.

The scripting helpers pre-register every chat request a run will make, by
replaying the same pure request-building functions the engine uses. The
metric oracles are written independently of the production code paths
(plain dict tallies, plain float means).
"""

from __future__ import annotations

from fractions import Fraction

from midsmith.backends import MockChatBackend
from midsmith.engine import build_history_messages, render_user_query
from midsmith.model import ConversationRecord, Modality, TurnSpec
from midsmith.protocol import (
    PromptTemplates,
    ProtocolError,
    build_correction_request,
    build_inference_request,
    parse_output,
    parse_teacher_verdict,
)


def perfect_responder(record: ConversationRecord, i: int, turn: TurnSpec) -> str:
    """Raw completion with the correct modality for the turn."""
    if turn.expected_modality is Modality.IMAGE:
        return f"<draw>A detailed picture for {record.id} turn {i + 1}."
    return f"A text answer for {record.id} turn {i + 1}."


def wrong_modality_responder(record, i, turn) -> str:
    if turn.expected_modality is Modality.IMAGE:
        return f"A text answer instead of a drawing for {record.id} turn {i + 1}."
    return f"<draw>An unwanted drawing for {record.id} turn {i + 1}."


def script_conversation(
    chat: MockChatBackend,
    templates: PromptTemplates,
    record: ConversationRecord,
    responder,
    include_image_parts: bool = False,
) -> list[str]:
    """Script the one-step chat requests for a whole conversation."""
    exchanges = []
    raws = []
    for i, turn in enumerate(record.turns):
        history = build_history_messages(exchanges, include_image_parts)
        request = build_inference_request(templates, history, turn.user)
        raw = responder(record, i, turn)
        chat.script(request, raw)
        raws.append(raw)
        exchanges.append((turn.user, parse_output(raw), None))
    return raws


def script_conversation_two_step(
    chat: MockChatBackend,
    templates: PromptTemplates,
    record: ConversationRecord,
    responder,
) -> None:
    """Script both chat calls per turn; responder returns (first, second)."""
    exchanges = []
    for i, turn in enumerate(record.turns):
        history = build_history_messages(exchanges)
        first, second = responder(record, i, turn)
        chat.script(build_inference_request(templates, history, turn.user), first)
        chat.script(
            build_correction_request(templates, render_user_query(turn.user), first), second
        )
        try:
            verdict = parse_teacher_verdict(second)
            final = first if verdict.kind == "correct" else verdict.corrected_output
        except ProtocolError:
            final = first
        exchanges.append((turn.user, parse_output(final), None))


def script_dataset(chat, templates, dataset, responder, **kwargs) -> None:
    for record in dataset:
        script_conversation(chat, templates, record, responder, **kwargs)


# --- independent metric oracles -------------------------------------------------

def ms_counting_oracle(logs):
    """Brute-force tally of per-cell accuracy; independent of evalbench."""
    n: dict = {}
    correct: dict = {}
    for log in logs:
        key = (log.round, log.scenario)
        n[key] = n.get(key, 0) + 1
        if log.predicted_modality == log.expected_modality:
            correct[key] = correct.get(key, 0) + 1
    cells = {key: Fraction(correct.get(key, 0), n[key]) for key in n}
    rounds = sorted({r for r, _ in cells})
    round_avgs = {}
    for r in rounds:
        accs = [acc for (rr, _), acc in cells.items() if rr == r]
        round_avgs[r] = sum(accs, Fraction(0)) / len(accs)
    overall_unweighted = sum(cells.values(), Fraction(0)) / len(cells)
    overall_weighted = Fraction(
        sum(correct.get(k, 0) for k in n), sum(n.values())
    )
    return cells, round_avgs, overall_unweighted, overall_weighted


def coherence_oracle(per_image_probs: dict) -> tuple[dict, float]:
    """Recompute image scores and the overall mean from raw probabilities.

    per_image_probs maps key -> list of probabilities (empty list means the
    system produced no image: score 0).
    """
    scores = {
        key: (sum(probs) / len(probs) if probs else 0.0)
        for key, probs in per_image_probs.items()
    }
    ordered = [scores[k] for k in sorted(scores)]
    return scores, sum(ordered) / len(ordered)
