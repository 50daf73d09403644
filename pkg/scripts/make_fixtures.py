#!/usr/bin/env python3
"""Regenerate the checked-in fixtures.

Produces the 12-record mini benchmark (one record per scenario per round
position), the topic/edit-type vocabulary file, the content-addressed
image assets the mini benchmark references, and the ten seed
text-to-drawing-prompt labels. Deterministic; safe to re-run.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from midsmith.backends import synthesize_png  # noqa: E402
from midsmith.model import (  # noqa: E402
    ConversationRecord,
    Modality,
    ModalityScenario,
    SCENARIO_ORDER,
    TurnSpec,
    UserTurnInput,
    VqaItem,
    save_dataset,
)
from midsmith.store import content_address  # noqa: E402

FIXTURES = ROOT / "fixtures"

TOPICS = [
    "animals", "vehicles", "food", "architecture", "nature", "sports",
    "technology", "fashion", "art", "music", "space", "household", "people",
]
EDIT_TYPES = [
    "color change", "style transfer", "object addition", "object removal",
    "background change", "viewpoint change", "text overlay",
]

# Ten seed text-to-drawing-prompt labels for the single-turn prompt dataset.
# Written for this repo; not taken from any external dataset.
SEED_LABELS = [
    ("I want to see a lighthouse at night.",
     "A white lighthouse on a rocky shore at night, beam sweeping over dark "
     "waves, the shot is wide, the style is realistic."),
    ("Show me a cozy reading corner.",
     "A cozy reading corner with an armchair, a warm lamp and stacked books, "
     "the lens is close-up, the style is watercolor."),
    ("Can you draw a festival in a mountain village?",
     "A mountain village festival with lanterns strung between wooden houses, "
     "villagers dancing in the square, the shot is panoramic, the style is "
     "folk art."),
    ("I'd love a picture of a robot gardener.",
     "A friendly robot watering sunflowers in a greenhouse, morning light "
     "through glass panels, the lens is middle ground, the style is cartoon."),
    ("Paint a quiet winter river for me.",
     "A quiet river winding through snow-covered banks, bare trees and soft "
     "grey sky, the shot is wide, the style is oil painting."),
    ("Draw a chef tossing noodles.",
     "A chef tossing fresh noodles in a steamy kitchen, flour dust in the "
     "air, the lens is close-up, the style is realistic."),
    ("I want an underwater city.",
     "An underwater city with glass domes and fish swimming between towers, "
     "rays of light from the surface, the shot is panoramic, the style is "
     "science fiction."),
    ("Could you sketch a sleeping fox?",
     "A red fox curled up asleep on autumn leaves, tail over its nose, the "
     "lens is close-up, the style is pencil sketch."),
    ("Show a hot air balloon race.",
     "Dozens of colorful hot air balloons racing over patchwork farmland at "
     "dawn, the shot is aerial, the style is vibrant illustration."),
    ("Draw me a desert caravan.",
     "A camel caravan crossing rolling sand dunes at sunset, long shadows on "
     "the sand, the shot is wide, the style is cinematic."),
]


def make_assets() -> list[str]:
    assets_dir = FIXTURES / "assets"
    assets_dir.mkdir(parents=True, exist_ok=True)
    addresses = []
    for i in range(2):
        data = synthesize_png(f"fixture asset {i}", seed=1000 + i)
        addr = content_address(data)
        (assets_dir / addr).write_bytes(data)
        addresses.append(addr)
    return addresses


def turn_for(scenario: ModalityScenario, topic: str, asset: str, tag: str) -> TurnSpec:
    if scenario is ModalityScenario.T_TO_T:
        return TurnSpec(
            user=UserTurnInput(text=f"Tell me an interesting fact about {topic}. ({tag})"),
            expected_modality=Modality.TEXT,
            reference_response=f"Here is a fact about {topic}.",
        )
    if scenario is ModalityScenario.T_TO_I:
        return TurnSpec(
            user=UserTurnInput(text=f"Please draw a picture about {topic}. ({tag})"),
            expected_modality=Modality.IMAGE,
            vqa_items=(
                VqaItem(question=f"Is the picture about {topic}?", expected_answer="yes"),
                VqaItem(question="Is the style of the picture realistic?", expected_answer="yes"),
            ),
        )
    if scenario is ModalityScenario.IT_TO_T:
        return TurnSpec(
            user=UserTurnInput(
                text=f"What do you see in this image related to {topic}? ({tag})",
                image_ref=asset,
            ),
            expected_modality=Modality.TEXT,
            reference_response=f"The image shows something about {topic}.",
        )
    return TurnSpec(
        user=UserTurnInput(
            text=f"Please redraw this image with a {topic} theme. ({tag})",
            image_ref=asset,
        ),
        expected_modality=Modality.IMAGE,
        vqa_items=(
            VqaItem(question=f"Does the picture show a {topic} theme?", expected_answer="yes"),
        ),
    )


def make_mini_dataset(assets: list[str]) -> None:
    records = []
    idx = 0
    for round_pos in range(3):
        for scenario in SCENARIO_ORDER:
            composition = [ModalityScenario.T_TO_T] * 3
            composition[round_pos] = scenario
            topic = TOPICS[idx % len(TOPICS)]
            has_edit = any(s is ModalityScenario.IT_TO_I for s in composition)
            turns = tuple(
                turn_for(s, topic, assets[i % len(assets)], tag=f"r{i + 1}")
                for i, s in enumerate(composition)
            )
            scenario_slug = scenario.value.replace("->", "2").replace("+", "").lower()
            records.append(
                ConversationRecord(
                    id=f"mini-{round_pos + 1}-{scenario_slug}",
                    language="en",
                    topic=topic,
                    edit_type=EDIT_TYPES[idx % len(EDIT_TYPES)] if has_edit else None,
                    turns=turns,
                )
            )
            idx += 1
    save_dataset(records, FIXTURES / "dialogben_mini.jsonl")


def main() -> None:
    FIXTURES.mkdir(exist_ok=True)
    (FIXTURES / "vocab.json").write_text(
        json.dumps({"topics": TOPICS, "edit_types": EDIT_TYPES}, indent=2) + "\n"
    )
    with (FIXTURES / "seed_prompt_labels.jsonl").open("w", encoding="utf-8") as fh:
        for text, prompt in SEED_LABELS:
            fh.write(json.dumps({"text": text, "drawing_prompt": prompt},
                                ensure_ascii=False) + "\n")
    assets = make_assets()
    make_mini_dataset(assets)
    print("fixtures written to", FIXTURES)


if __name__ == "__main__":
    main()
