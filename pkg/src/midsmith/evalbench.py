"""Benchmark metrics and the evaluation runner.

Two metrics over per-turn logs: modality switching accuracy (per round ×
scenario cell, exact rational arithmetic) and the generation-coherence VQA
score (mean correct-answer probability per generated image). The runner
drives a system-under-test over a dataset with bounded parallelism and can
export logs for offline re-scoring.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .backends import BackendError, VqaBackend
from .engine import Engine, derive_seed
from .model import (
    Modality,
    ModalityScenario,
    SCENARIO_ORDER,
    ConversationRecord,
    scenario_of,
)
from .protocol import ProtocolError


class EmptyLogs(ValueError):
    pass


@dataclass(frozen=True)
class TurnLog:
    conversation_id: str
    round: int  # 1-based
    scenario: ModalityScenario
    predicted_modality: Modality
    expected_modality: Modality
    image_ref: str | None = None
    drawing_prompt: str | None = None

    @property
    def correct(self) -> bool:
        return self.predicted_modality is self.expected_modality


def turn_log_to_dict(log: TurnLog) -> dict:
    return {
        "conversation_id": log.conversation_id,
        "round": log.round,
        "scenario": log.scenario.value,
        "predicted_modality": log.predicted_modality.value,
        "expected_modality": log.expected_modality.value,
        "correct": log.correct,
        "image_ref": log.image_ref,
        "drawing_prompt": log.drawing_prompt,
    }


def turn_log_from_dict(d: dict) -> TurnLog:
    return TurnLog(
        conversation_id=d["conversation_id"],
        round=d["round"],
        scenario=ModalityScenario(d["scenario"]),
        predicted_modality=Modality(d["predicted_modality"]),
        expected_modality=Modality(d["expected_modality"]),
        image_ref=d.get("image_ref"),
        drawing_prompt=d.get("drawing_prompt"),
    )


def save_turn_logs(logs: list[TurnLog], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for log in logs:
            fh.write(json.dumps(turn_log_to_dict(log), ensure_ascii=False))
            fh.write("\n")


def load_turn_logs(path: str | Path) -> list[TurnLog]:
    logs = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                logs.append(turn_log_from_dict(json.loads(line)))
    return logs


@dataclass(frozen=True)
class EvalRun:
    logs: tuple[TurnLog, ...]
    failures: tuple[tuple[str, str], ...]  # (conversation_id, error)


def _run_conversation(engine: Engine, record: ConversationRecord) -> list[TurnLog]:
    session = engine.new_session(seed_override=derive_seed(record.id))
    logs: list[TurnLog] = []
    for i, turn in enumerate(record.turns, start=1):
        result = engine.run_turn(session, turn.user)
        logs.append(
            TurnLog(
                conversation_id=record.id,
                round=i,
                scenario=scenario_of(turn),
                predicted_modality=result.modality,
                expected_modality=turn.expected_modality,
                image_ref=result.image.content_address if result.image else None,
                drawing_prompt=result.text if result.modality is Modality.IMAGE else None,
            )
        )
    return logs


def run_inference(
    dataset: list[ConversationRecord], engine: Engine, parallelism: int = 1
) -> EvalRun:
    """One fresh session per conversation (seed derived from the record id),
    turns fed in order, at most `parallelism` conversations in flight.

    A failed conversation is excluded from the logs and reported in
    `failures`; output ordering is (dataset order, round) regardless of
    parallelism.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    def one(record: ConversationRecord):
        try:
            return _run_conversation(engine, record), None
        except (BackendError, ProtocolError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    logs: list[TurnLog] = []
    failures: list[tuple[str, str]] = []
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        for record, (conv_logs, error) in zip(dataset, pool.map(one, dataset)):
            if error is not None:
                failures.append((record.id, error))
            else:
                logs.extend(conv_logs)
    return EvalRun(logs=tuple(logs), failures=tuple(failures))


# --- modality switching accuracy ------------------------------------------------

@dataclass(frozen=True)
class CellStats:
    n: int
    correct: int

    @property
    def acc(self) -> Fraction:
        return Fraction(self.correct, self.n)


@dataclass(frozen=True)
class MsReport:
    cells: dict[tuple[int, ModalityScenario], CellStats]
    round_avgs: dict[int, Fraction]
    overall_unweighted: Fraction
    overall_weighted: Fraction


def ms_accuracy(logs: list[TurnLog]) -> MsReport:
    """Per-cell accuracy (correct / n, exact rationals), round averages as
    unweighted means over that round's populated cells, and both
    unweighted-cell and sample-weighted overall averages."""
    if not logs:
        raise EmptyLogs("no turn logs to score")
    counts: dict[tuple[int, ModalityScenario], list[int]] = {}
    for log in logs:
        cell = counts.setdefault((log.round, log.scenario), [0, 0])
        cell[0] += 1
        cell[1] += int(log.correct)
    cells = {key: CellStats(n=n, correct=c) for key, (n, c) in counts.items()}
    rounds = sorted({r for r, _ in cells})
    round_avgs: dict[int, Fraction] = {}
    for r in rounds:
        accs = [cells[(r, s)].acc for s in SCENARIO_ORDER if (r, s) in cells]
        round_avgs[r] = sum(accs, Fraction(0)) / len(accs)
    all_accs = [stats.acc for stats in cells.values()]
    overall_unweighted = sum(all_accs, Fraction(0)) / len(all_accs)
    total_n = sum(stats.n for stats in cells.values())
    total_correct = sum(stats.correct for stats in cells.values())
    return MsReport(
        cells=cells,
        round_avgs=round_avgs,
        overall_unweighted=overall_unweighted,
        overall_weighted=Fraction(total_correct, total_n),
    )


# --- generation coherence ----------------------------------------------------------

@dataclass(frozen=True)
class CoherenceReport:
    per_image: dict[tuple[str, int], float]
    per_question: dict[tuple[str, int, str], float]
    overall: float
    breakdowns: dict[str, dict[str, float]]  # "topic" | "edit_type" | "scenario"
    flags: tuple[str, ...]


def _mean_over(values: dict, keys) -> float:
    keys = sorted(keys)
    return sum(values[k] for k in keys) / len(keys)


def coherence_score(
    logs: list[TurnLog],
    dataset: list[ConversationRecord],
    vqa_backend: VqaBackend,
) -> CoherenceReport:
    """Mean correct-answer probability per generated image.

    Expected-image turns where the system produced the wrong modality score
    0 and stay in the overall mean; excluding them would reward refusing to
    draw. Per-question backend failures skip the question with a flag; an
    image whose every question failed is excluded with a flag.
    """
    by_key = {(log.conversation_id, log.round): log for log in logs}
    per_image: dict[tuple[str, int], float] = {}
    per_question: dict[tuple[str, int, str], float] = {}
    flags: list[str] = []
    groups: dict[str, dict[tuple[str, int], None]] = {}  # breakdown -> keys

    def tag(kind: str, value: str | None, key: tuple[str, int]) -> None:
        if value is not None:
            groups.setdefault(f"{kind}:{value}", {})[key] = None

    for record in dataset:
        for i, turn in enumerate(record.turns, start=1):
            if turn.expected_modality is not Modality.IMAGE or not turn.vqa_items:
                continue
            key = (record.id, i)
            log = by_key.get(key)
            if log is None:
                continue
            if log.predicted_modality is not Modality.IMAGE or log.image_ref is None:
                per_image[key] = 0.0
            else:
                probs: list[float] = []
                for item in turn.vqa_items:
                    try:
                        p = vqa_backend.probability(log.image_ref, item)
                    except (BackendError, KeyError) as exc:
                        flags.append(
                            f"{record.id} round {i}: question {item.question!r} skipped ({exc})"
                        )
                        continue
                    probs.append(p)
                    per_question[(record.id, i, item.question)] = p
                if not probs:
                    flags.append(f"{record.id} round {i}: all questions failed, image excluded")
                    continue
                per_image[key] = sum(probs) / len(probs)
            tag("topic", record.topic, key)
            tag("edit_type", record.edit_type, key)
            tag("scenario", log.scenario.value, key)

    if not per_image:
        raise EmptyLogs("no scoreable expected-image turns")
    overall = _mean_over(per_image, per_image.keys())
    breakdowns: dict[str, dict[str, float]] = {"topic": {}, "edit_type": {}, "scenario": {}}
    for group_key, keys in groups.items():
        kind, value = group_key.split(":", 1)
        breakdowns[kind][value] = _mean_over(per_image, keys.keys())
    return CoherenceReport(
        per_image=per_image,
        per_question=per_question,
        overall=overall,
        breakdowns=breakdowns,
        flags=tuple(flags),
    )


# --- prompt drift ---------------------------------------------------------------------

def levenshtein(a: str, b: str) -> int:
    """Classic two-row edit distance."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        previous = current
    return previous[-1]


def prompt_drift(logs: list[TurnLog]) -> dict[tuple[str, int], float]:
    """Normalized edit distance between consecutive drawing prompts within
    each conversation; an observability aid for object consistency."""
    drift: dict[tuple[str, int], float] = {}
    last_prompt: dict[str, str] = {}
    for log in logs:
        if log.drawing_prompt is None:
            continue
        prev = last_prompt.get(log.conversation_id)
        if prev is not None:
            denom = max(len(prev), len(log.drawing_prompt))
            drift[(log.conversation_id, log.round)] = (
                levenshtein(prev, log.drawing_prompt) / denom if denom else 0.0
            )
        last_prompt[log.conversation_id] = log.drawing_prompt
    return drift


# --- report rendering -------------------------------------------------------------------

def _fmt(x) -> str:
    return f"{float(x):.4f}"


def ms_report_to_dict(ms: MsReport) -> dict:
    return {
        "cells": {
            f"{r}|{s.value}": {"n": stats.n, "correct": stats.correct, "acc": _fmt(stats.acc)}
            for (r, s), stats in ms.cells.items()
        },
        "round_avgs": {str(r): _fmt(v) for r, v in ms.round_avgs.items()},
        "overall_unweighted": _fmt(ms.overall_unweighted),
        "overall_weighted": _fmt(ms.overall_weighted),
    }


def coherence_report_to_dict(coh: CoherenceReport) -> dict:
    return {
        "per_image": {f"{cid}|{r}": _fmt(v) for (cid, r), v in coh.per_image.items()},
        "overall": _fmt(coh.overall),
        "breakdowns": {
            kind: {k: _fmt(v) for k, v in values.items()}
            for kind, values in coh.breakdowns.items()
        },
        "flags": sorted(coh.flags),
    }


def _ms_table(ms: MsReport) -> str:
    rounds = sorted(ms.round_avgs)
    header = ["Round"] + [s.value for s in SCENARIO_ORDER] + ["Avg"]
    widths = [max(8, len(h) + 2) for h in header]
    lines = ["".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in rounds:
        row = [str(r)]
        for s in SCENARIO_ORDER:
            stats = ms.cells.get((r, s))
            row.append(_fmt(stats.acc) if stats else "-")
        row.append(_fmt(ms.round_avgs[r]))
        lines.append("".join(c.ljust(w) for c, w in zip(row, widths)))
    lines.append("")
    lines.append(f"Overall (unweighted cells): {_fmt(ms.overall_unweighted)}")
    lines.append(f"Overall (sample weighted):  {_fmt(ms.overall_weighted)}")
    return "\n".join(lines)


def write_report(
    ms: MsReport,
    coherence: CoherenceReport | None,
    out_dir: str | Path,
    failed_conversations: int = 0,
) -> tuple[Path, Path]:
    """Write a deterministic report.json (sorted keys, fixed 4-decimal
    rendering) and a plain-text report.txt; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload: dict = {"ms": ms_report_to_dict(ms)}
    if coherence is not None:
        payload["coherence"] = coherence_report_to_dict(coherence)
    if failed_conversations:
        payload["failed_conversations"] = failed_conversations
    json_path = out_dir / "report.json"
    json_path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    text_lines = ["Modality Switching Accuracy", "", _ms_table(ms)]
    if coherence is not None:
        text_lines += ["", "Generation Coherence", "", f"Overall: {_fmt(coherence.overall)}"]
    if failed_conversations:
        text_lines += ["", f"Failed conversations: {failed_conversations}"]
    text_path = out_dir / "report.txt"
    text_path.write_text("\n".join(text_lines) + "\n", encoding="utf-8")
    return json_path, text_path
