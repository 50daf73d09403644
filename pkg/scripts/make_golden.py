"""Regenerate the golden re-scoring fixtures under fixtures/golden/.

The turn logs describe one deterministic run over the mini dataset in which
every IT->I turn predicted the wrong modality and everything else was right.
The committed report is what `midsmith eval --score-only` must reproduce
byte for byte.
"""

from pathlib import Path

from midsmith.evalbench import TurnLog, ms_accuracy, save_turn_logs, write_report
from midsmith.model import Modality, ModalityScenario, load_dataset, scenario_of

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "fixtures" / "golden"


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    logs = []
    for record in load_dataset(ROOT / "fixtures" / "dialogben_mini.jsonl"):
        for i, turn in enumerate(record.turns, start=1):
            scenario = scenario_of(turn)
            wrong = scenario is ModalityScenario.IT_TO_I
            predicted = Modality.TEXT if wrong else turn.expected_modality
            logs.append(
                TurnLog(
                    conversation_id=record.id,
                    round=i,
                    scenario=scenario,
                    predicted_modality=predicted,
                    expected_modality=turn.expected_modality,
                    image_ref=None,
                    drawing_prompt=None,
                )
            )
    save_turn_logs(logs, OUT / "turn_logs.jsonl")
    write_report(ms_accuracy(logs), None, OUT)
    print(f"wrote {len(logs)} logs and the report to {OUT}")


if __name__ == "__main__":
    main()
