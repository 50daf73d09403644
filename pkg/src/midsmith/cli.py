"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from .backends import BackendError, make_chat_backend, make_vqa_backend
from .config import AppConfig, load_app_config
from .engine import Engine
from .evalbench import (
    coherence_score,
    load_turn_logs,
    ms_accuracy,
    run_inference,
    save_turn_logs,
    write_report,
)
from .forge import (
    CaptionedPair,
    CompositionId,
    ForgeError,
    MetaPromptSpec,
    build_correction_dataset,
    build_meta_prompt,
    correction_sample_to_dict,
    enumerate_compositions,
    export_training_mix,
    filter_intent_mismatch,
    load_instruction_samples,
    mix_pseudo_multiturn,
    save_instruction_samples,
)
from .model import DatasetError, Vocabulary, load_dataset, record_to_dict, save_dataset
from .protocol import ProtocolError
from .store import ImageStore


class RuntimeFailure(click.ClickException):
    exit_code = 2


def _config_from(path: str | None) -> AppConfig:
    return load_app_config(path)


@click.group()
def cli():
    """Multi-turn text+image dialogue orchestration and evaluation."""


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def serve(config_path):
    """Run the HTTP gateway."""
    from .gateway import serve as run_server

    run_server(_config_from(config_path))


@cli.command()
@click.option("--url", default="http://127.0.0.1:8080", show_default=True)
@click.option("--seed", type=int, default=None, help="Fixed generation seed for the session.")
def chat(url, seed):
    """Terminal REPL against a running gateway."""
    import httpx

    with httpx.Client(base_url=url, timeout=120) as client:
        body = {} if seed is None else {"seed": seed}
        resp = client.post("/v1/sessions", json=body)
        resp.raise_for_status()
        info = resp.json()
        click.echo(f"session {info['session_id']} (seed {info['seed']}); empty line to quit")
        while True:
            try:
                text = input("> ").strip()
            except EOFError:
                break
            if not text:
                break
            reply = client.post(f"/v1/sessions/{info['session_id']}/messages", json={"text": text})
            if reply.status_code != 200:
                click.echo(f"error {reply.status_code}: {reply.text}")
                continue
            payload = reply.json()
            if payload["modality"] == "image":
                click.echo(f"[image] {url}{payload['image_url']}")
                click.echo(f"[prompt] {payload['drawing_prompt']}")
            else:
                click.echo(payload["text"])


@cli.command("eval")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--score-only", "logs_path", type=click.Path(exists=True), default=None,
              help="Score recorded turn logs without re-running inference.")
@click.option("--coherence", is_flag=True, default=False)
@click.option("--two-step", is_flag=True, default=False)
@click.option("--out", "out_dir", type=click.Path(), default="reports/latest", show_default=True)
@click.option("--parallelism", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def eval_cmd(dataset_path, logs_path, coherence, two_step, out_dir, parallelism, config_path):
    """Run (or re-score) an evaluation and write the report."""
    config = _config_from(config_path)
    store = ImageStore(config.image_store_dir)
    out = _ensure_dir(out_dir)
    try:
        dataset = load_dataset(dataset_path)
        if logs_path is not None:
            logs = load_turn_logs(logs_path)
            failures = 0
        else:
            engine_cfg = dataclasses.replace(config.engine, two_step=two_step)
            engine = Engine.from_config(engine_cfg, store)
            run = run_inference(dataset, engine,
                                parallelism=parallelism or config.parallelism)
            logs = list(run.logs)
            failures = len(run.failures)
            save_turn_logs(logs, out / "turn_logs.jsonl")
        ms = ms_accuracy(logs)
        coh = None
        if coherence:
            vqa = make_vqa_backend(config.vqa, store)
            coh = coherence_score(logs, dataset, vqa)
        json_path, _ = write_report(ms, coh, out_dir, failed_conversations=failures)
        click.echo(str(json_path))
    except (DatasetError, BackendError, ProtocolError, OSError) as exc:
        raise RuntimeFailure(f"{type(exc).__name__}: {exc}") from exc


def _ensure_dir(path: str | Path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


@cli.command()
@click.option("--in", "logs_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def report(logs_path, out_dir):
    """Recompute the modality switching report from recorded turn logs."""
    try:
        logs = load_turn_logs(logs_path)
        ms = ms_accuracy(logs)
        json_path, _ = write_report(ms, None, out_dir)
        click.echo(str(json_path))
    except (DatasetError, OSError, KeyError, ValueError) as exc:
        raise RuntimeFailure(f"{type(exc).__name__}: {exc}") from exc


@cli.group()
def forge():
    """Offline data pipelines."""


@forge.command()
@click.option("--turns", type=int, default=3, show_default=True)
def compositions(turns):
    """Print every conversation composition, one per line."""
    try:
        for comp in enumerate_compositions(turns):
            click.echo(comp.code())
    except ForgeError as exc:
        raise click.UsageError(str(exc)) from exc


@forge.command()
@click.option("--composition", "composition_code", required=True,
              help='Comma-joined scenario codes, e.g. "T->I,IT->I,IT->T".')
@click.option("--topic", required=True)
@click.option("--edit-type", default=None)
@click.option("--language", type=click.Choice(["en", "cn"]), default="en", show_default=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), required=True)
@click.option("--icl", "icl_path", type=click.Path(exists=True), default=None,
              help="JSONL of {image_ref, caption} pairs.")
@click.option("--icl-n", type=int, default=0)
@click.option("--seed", type=int, default=0, show_default=True)
def meta(composition_code, topic, edit_type, language, vocab_path, icl_path, icl_n, seed):
    """Assemble the generation meta-prompt for one composition."""
    try:
        comp = CompositionId.parse(composition_code)
    except DatasetError as exc:
        raise click.UsageError(str(exc)) from exc
    vocab = Vocabulary.load(vocab_path)
    icl: list[CaptionedPair] = []
    if icl_path and icl_n:
        from .forge import select_icl_samples

        corpus = [
            CaptionedPair(image_ref=d["image_ref"], caption=d["caption"])
            for d in (json.loads(line) for line in Path(icl_path).read_text().splitlines() if line)
        ]
        icl = select_icl_samples(corpus, icl_n, seed)
    try:
        spec = MetaPromptSpec(composition=comp, topic=topic, edit_type=edit_type,
                              language=language, icl_samples=tuple(icl))
        click.echo(build_meta_prompt(spec, vocab))
    except ForgeError as exc:
        raise RuntimeFailure(str(exc)) from exc


@forge.command()
@click.option("--d-o", "d_o_path", type=click.Path(exists=True), required=True)
@click.option("--d-p", "d_p_path", type=click.Path(exists=True), required=True)
@click.option("--conversations", type=int, required=True)
@click.option("--turns", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def mix(d_o_path, d_p_path, conversations, turns, seed, out_path):
    """Build the pseudo-multi-turn mix from single-turn pools."""
    try:
        mixed = mix_pseudo_multiturn(
            load_instruction_samples(d_o_path),
            load_instruction_samples(d_p_path),
            conversations=conversations,
            turns_per_conv=turns,
            rng_seed=seed,
        )
        save_instruction_samples(mixed, out_path)
        click.echo(f"wrote {len(mixed)} conversations to {out_path}")
    except ForgeError as exc:
        raise RuntimeFailure(str(exc)) from exc


@forge.command()
@click.option("--images", "images_path", type=click.Path(exists=True), required=True,
              help="Text file with one image content address per line.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def recaption(images_path, out_path, config_path):
    """Caption a corpus of images with the chat backend."""
    from .forge import recaption_corpus

    config = _config_from(config_path)
    backend = make_chat_backend(config.engine.chat)
    refs = [line.strip() for line in Path(images_path).read_text().splitlines() if line.strip()]
    result = recaption_corpus(refs, backend, config.engine.templates.caption_prompt)
    with Path(out_path).open("w", encoding="utf-8") as fh:
        for pair in result.pairs:
            fh.write(json.dumps({"image_ref": pair.image_ref, "caption": pair.caption},
                                ensure_ascii=False) + "\n")
    click.echo(f"captioned {len(result.pairs)}, failed {len(result.failures)}")


@forge.command("filter")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--out-kept", type=click.Path(), required=True)
@click.option("--out-rejected", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def filter_cmd(dataset_path, out_kept, out_rejected, config_path):
    """Drop records whose judged intent disagrees with the expected modality."""
    config = _config_from(config_path)
    judge = make_chat_backend(config.engine.chat)
    try:
        records = load_dataset(dataset_path)
    except DatasetError as exc:
        raise RuntimeFailure(str(exc)) from exc
    result = filter_intent_mismatch(records, judge)
    save_dataset(list(result.kept), out_kept)
    with Path(out_rejected).open("w", encoding="utf-8") as fh:
        for record, reasons in result.rejected:
            fh.write(json.dumps({
                "record": record_to_dict(record),
                "reasons": [
                    {"turn_index": r.turn_index, "judged": r.judged.value,
                     "expected": r.expected.value}
                    for r in reasons
                ],
            }, ensure_ascii=False) + "\n")
    click.echo(
        f"kept {len(result.kept)}, rejected {len(result.rejected)}, "
        f"undecided {len(result.undecided)}"
    )


@forge.command()
@click.option("--pairs", "pairs_path", type=click.Path(exists=True), required=True,
              help="JSONL of {question, original_output}.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--quarantine", "quarantine_path", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def corrections(pairs_path, out_path, quarantine_path, config_path):
    """Build the error-correction dataset with the teacher backend."""
    config = _config_from(config_path)
    teacher = make_chat_backend(config.teacher)
    pairs = [
        (d["question"], d["original_output"])
        for d in (json.loads(line) for line in Path(pairs_path).read_text().splitlines() if line)
    ]
    result = build_correction_dataset(pairs, teacher, config.engine.templates)
    with Path(out_path).open("w", encoding="utf-8") as fh:
        for sample in result.samples:
            fh.write(json.dumps(correction_sample_to_dict(sample), ensure_ascii=False) + "\n")
    with Path(quarantine_path).open("w", encoding="utf-8") as fh:
        for item in result.quarantined:
            fh.write(json.dumps(item, ensure_ascii=False) + "\n")
    click.echo(f"corrections {len(result.samples)}, quarantined {len(result.quarantined)}")


@forge.command("export-mix")
@click.option("--d-o", "d_o_path", type=click.Path(exists=True), default=None)
@click.option("--d-p", "d_p_path", type=click.Path(exists=True), default=None)
@click.option("--d-pm", "d_pm_path", type=click.Path(exists=True), default=None)
@click.option("--d-t", "d_t_path", type=click.Path(exists=True), default=None)
@click.option("--include-dialogben/--no-include-dialogben", default=False)
@click.option("--out", "out_path", type=click.Path(), required=True)
def export_mix(d_o_path, d_p_path, d_pm_path, d_t_path, include_dialogben, out_path):
    """Export a tagged training mix plus a count manifest."""
    parts = {}
    for source, p in (("d_o", d_o_path), ("d_p", d_p_path),
                      ("d_pm", d_pm_path), ("dialogben_train", d_t_path)):
        if p is not None:
            parts[source] = load_instruction_samples(p)
    try:
        counts = export_training_mix(parts, include_dialogben, out_path)
    except ForgeError as exc:
        raise RuntimeFailure(str(exc)) from exc
    click.echo(json.dumps(counts, sort_keys=True))


def cli_dispatch(argv: list[str] | None = None) -> int:
    """Dispatch argv and return the process exit code."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.Abort:
        return 1
    except RuntimeFailure as exc:
        exc.show(file=sys.stderr)
        return 2
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 2
    except (BackendError, ProtocolError, DatasetError, ForgeError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


def entrypoint() -> None:
    sys.exit(cli_dispatch())
