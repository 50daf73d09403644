import json
from pathlib import Path

import pytest

from midsmith.cli import cli_dispatch
from midsmith.forge import InstructionSample, InstructionTurn, save_instruction_samples
from midsmith.model import UserTurnInput

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
DATASET = str(FIXTURES / "dialogben_mini.jsonl")
GOLDEN = FIXTURES / "golden"


def _single_turn(text: str, source: str) -> InstructionSample:
    return InstructionSample(
        turns=(InstructionTurn(user=UserTurnInput(text=text), assistant_raw=f"reply to {text}"),),
        source=source,
    )


class TestExitCodes:
    def test_help_is_success(self, capsys):
        assert cli_dispatch(["--help"]) == 0
        assert "Usage" in capsys.readouterr().out

    def test_unknown_command_is_usage_error(self):
        assert cli_dispatch(["frobnicate"]) == 1

    def test_missing_required_option_is_usage_error(self):
        assert cli_dispatch(["eval"]) == 1

    def test_missing_dataset_file_is_usage_error(self):
        assert cli_dispatch(["eval", "--dataset", "/no/such.jsonl"]) == 1

    def test_runtime_failure_is_two(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("not json\n")
        assert cli_dispatch(["report", "--in", str(bad), "--out", str(tmp_path / "r")]) == 2


class TestCompositions:
    def test_three_turns_yield_64_lines(self, capsys):
        assert cli_dispatch(["forge", "compositions", "--turns", "3"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 64
        assert len(set(lines)) == 64
        assert lines[0] == "T->T,T->T,T->T"
        assert all(len(line.split(",")) == 3 for line in lines)

    def test_zero_turns_is_usage_error(self):
        assert cli_dispatch(["forge", "compositions", "--turns", "0"]) == 1


class TestMeta:
    def test_prompt_covers_composition_and_topic(self, capsys):
        code = cli_dispatch([
            "forge", "meta", "--composition", "T->I,IT->I,IT->T",
            "--topic", "animals", "--edit-type", "color change",
            "--vocab", str(FIXTURES / "vocab.json"),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "Topic: animals." in out
        assert "Turn 1: T->I" in out and "Turn 3: IT->T" in out
        assert "color change" in out
        assert "altered as little as possible" in out

    def test_unknown_topic_is_runtime_failure(self):
        assert cli_dispatch([
            "forge", "meta", "--composition", "T->T",
            "--topic", "nonexistent-topic",
            "--vocab", str(FIXTURES / "vocab.json"),
        ]) == 2


class TestScoreOnly:
    def test_matches_committed_golden_report(self, tmp_path, capsys):
        out_dir = tmp_path / "out"
        code = cli_dispatch([
            "eval", "--dataset", DATASET,
            "--score-only", str(GOLDEN / "turn_logs.jsonl"),
            "--out", str(out_dir),
        ])
        assert code == 0
        produced = (out_dir / "report.json").read_bytes()
        assert produced == (GOLDEN / "report.json").read_bytes()
        assert capsys.readouterr().out.strip() == str(out_dir / "report.json")

    def test_report_command_agrees(self, tmp_path):
        out_dir = tmp_path / "r"
        assert cli_dispatch([
            "report", "--in", str(GOLDEN / "turn_logs.jsonl"), "--out", str(out_dir)
        ]) == 0
        assert (out_dir / "report.txt").read_bytes() == (GOLDEN / "report.txt").read_bytes()


class TestMixAndExport:
    def test_mix_round_trips_through_files(self, tmp_path, capsys):
        d_o = tmp_path / "d_o.jsonl"
        d_p = tmp_path / "d_p.jsonl"
        save_instruction_samples([_single_turn(f"o{i}", "d_o") for i in range(4)], d_o)
        save_instruction_samples([_single_turn(f"p{i}", "d_p") for i in range(2)], d_p)
        out = tmp_path / "mix.jsonl"
        code = cli_dispatch([
            "forge", "mix", "--d-o", str(d_o), "--d-p", str(d_p),
            "--conversations", "2", "--turns", "3", "--seed", "5", "--out", str(out),
        ])
        assert code == 0
        assert "wrote 2 conversations" in capsys.readouterr().out
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 2
        assert all(json.loads(line)["source"] == "d_pm" for line in lines)

    def test_mix_pool_too_small_is_runtime_failure(self, tmp_path):
        d_o = tmp_path / "d_o.jsonl"
        save_instruction_samples([_single_turn("only", "d_o")], d_o)
        assert cli_dispatch([
            "forge", "mix", "--d-o", str(d_o), "--d-p", str(d_o),
            "--conversations", "5", "--turns", "3", "--out", str(tmp_path / "x.jsonl"),
        ]) == 2

    def test_export_mix_writes_manifest(self, tmp_path, capsys):
        d_o = tmp_path / "d_o.jsonl"
        save_instruction_samples([_single_turn(f"o{i}", "d_o") for i in range(3)], d_o)
        out = tmp_path / "train.jsonl"
        code = cli_dispatch(["forge", "export-mix", "--d-o", str(d_o), "--out", str(out)])
        assert code == 0
        assert json.loads(capsys.readouterr().out) == {"d_o": 3, "d_p": 0, "d_pm": 0}
        manifest = json.loads((tmp_path / "train.jsonl.manifest.json").read_text())
        assert manifest["include_dialogben"] is False
        assert manifest["counts"]["d_o"] == 3
