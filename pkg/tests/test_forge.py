import itertools
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from midsmith.backends import MockChatBackend
from midsmith.forge import (
    CaptionedPair,
    CompositionId,
    InstructionSample,
    InstructionTurn,
    InsufficientCorpus,
    MetaPromptSpec,
    PoolTooSmall,
    VocabularyMiss,
    build_correction_dataset,
    build_meta_prompt,
    build_teacher_request,
    caption_request,
    enumerate_compositions,
    export_training_mix,
    filter_intent_mismatch,
    instruction_sample_from_dict,
    instruction_sample_to_dict,
    judge_request,
    mix_pseudo_multiturn,
    recaption_corpus,
    select_icl_samples,
)
from midsmith.model import Modality, ModalityScenario, SCENARIO_ORDER, UserTurnInput
from midsmith.protocol import PromptTemplates


class TestEnumerateCompositions:
    def test_three_turns_gives_64(self):
        comps = enumerate_compositions(3)
        assert len(comps) == 64
        assert len(set(comps)) == 64

    def test_one_turn_gives_scenarios_in_order(self):
        assert [c.turns for c in enumerate_compositions(1)] == [(s,) for s in SCENARIO_ORDER]

    def test_two_turns_match_nested_loop_oracle(self):
        # independent brute-force oracle
        expected = []
        for a in SCENARIO_ORDER:
            for b in SCENARIO_ORDER:
                expected.append((a, b))
        comps = enumerate_compositions(2)
        assert [c.turns for c in comps] == expected
        assert comps[0].turns == (ModalityScenario.T_TO_T, ModalityScenario.T_TO_T)
        assert comps[-1].turns == (ModalityScenario.IT_TO_I, ModalityScenario.IT_TO_I)

    @given(st.integers(1, 5))
    @settings(deadline=None)
    def test_bijection_cardinality(self, n):
        comps = enumerate_compositions(n)
        assert len(set(comps)) == len(comps) == 4 ** n


class TestMetaPrompt:
    def _spec(self, vocab, **kw):
        defaults = dict(
            composition=CompositionId.parse("T->I,IT->I,IT->T"),
            topic=vocab.topics[0],
            icl_samples=(CaptionedPair(image_ref="aa11", caption="a cat on a mat"),),
        )
        defaults.update(kw)
        return MetaPromptSpec(**defaults)

    def test_contains_scenario_labels_in_order_and_icl(self, vocab):
        prompt = build_meta_prompt(self._spec(vocab), vocab)
        i1 = prompt.find("T->I")
        i2 = prompt.find("IT->I")
        i3 = prompt.find("IT->T")
        assert 0 < i1 < i2 < i3
        assert "a cat on a mat" in prompt
        assert vocab.topics[0] in prompt
        assert "altered as little as possible" in prompt

    def test_deterministic(self, vocab):
        spec = self._spec(vocab)
        assert build_meta_prompt(spec, vocab) == build_meta_prompt(spec, vocab)

    def test_edit_type_clause(self, vocab):
        prompt = build_meta_prompt(self._spec(vocab, edit_type=vocab.edit_types[2]), vocab)
        assert vocab.edit_types[2] in prompt

    def test_unknown_topic_rejected(self, vocab):
        with pytest.raises(VocabularyMiss):
            build_meta_prompt(self._spec(vocab, topic="not-a-topic"), vocab)


class TestRecaption:
    def test_fixed_caption_pair(self, templates):
        chat = MockChatBackend()
        chat.script(caption_request(templates.caption_prompt, "img_a"), "a sunny beach")
        result = recaption_corpus(["img_a"], chat, templates.caption_prompt)
        assert result.pairs == (CaptionedPair(image_ref="img_a", caption="a sunny beach"),)
        assert result.failures == ()

    def test_batch_with_one_failure(self, templates):
        chat = MockChatBackend()
        chat.script(caption_request(templates.caption_prompt, "img_a"), "caption a")
        chat.script(caption_request(templates.caption_prompt, "img_c"), "caption c")
        result = recaption_corpus(["img_a", "img_b", "img_c"], chat, templates.caption_prompt)
        assert [p.image_ref for p in result.pairs] == ["img_a", "img_c"]
        assert len(result.failures) == 1 and result.failures[0][0] == "img_b"

    def test_default_caption_prompt_text(self):
        assert PromptTemplates().caption_prompt == "Please describe this image in detail."


class TestIclSelection:
    CORPUS = [CaptionedPair(image_ref=f"i{k}", caption=f"c{k}") for k in range(4)]

    def test_full_corpus_selection(self):
        out = select_icl_samples(self.CORPUS, 4, rng_seed=3)
        assert sorted(out, key=lambda p: p.image_ref) == self.CORPUS

    def test_same_seed_same_selection(self):
        assert select_icl_samples(self.CORPUS, 2, 9) == select_icl_samples(self.CORPUS, 2, 9)

    def test_too_large_n(self):
        with pytest.raises(InsufficientCorpus):
            select_icl_samples(self.CORPUS, 5, 0)

    def test_uniformity_chi_square(self):
        # 10k draws of n=1 from 4 items: each count within 3 sigma of 2500
        draws = 10_000
        counts = {p.image_ref: 0 for p in self.CORPUS}
        for seed in range(draws):
            counts[select_icl_samples(self.CORPUS, 1, seed)[0].image_ref] += 1
        expected = draws / 4
        sigma = (draws * 0.25 * 0.75) ** 0.5
        for count in counts.values():
            assert abs(count - expected) < 3 * sigma


def _single(text: str, reply: str) -> InstructionSample:
    return InstructionSample(
        turns=(InstructionTurn(user=UserTurnInput(text=text), assistant_raw=reply),),
        source="d_o",
    )


def _turn_texts(sample: InstructionSample) -> list[str]:
    return [t.user.text for t in sample.turns]


class TestMixer:
    def test_two_plus_two_covers_all_inputs_once(self):
        d_o = [_single("o1", "a1"), _single("o2", "a2")]
        d_p = [_single("p1", "<draw>x"), _single("p2", "<draw>y")]
        mixed = mix_pseudo_multiturn(d_o, d_p, conversations=2, turns_per_conv=2, rng_seed=0)
        assert len(mixed) == 2
        assert all(s.source == "d_pm" for s in mixed)
        used = [t for s in mixed for t in _turn_texts(s)]
        assert sorted(used) == ["o1", "o2", "p1", "p2"]

    def test_seed_determinism_and_variation(self):
        d_o = [_single(f"o{k}", "a") for k in range(6)]
        d_p = [_single(f"p{k}", "<draw>x") for k in range(6)]
        a = mix_pseudo_multiturn(d_o, d_p, 4, 3, rng_seed=1)
        b = mix_pseudo_multiturn(d_o, d_p, 4, 3, rng_seed=1)
        c = mix_pseudo_multiturn(d_o, d_p, 4, 3, rng_seed=2)
        assert a == b
        assert a != c

    def test_pool_too_small(self):
        with pytest.raises(PoolTooSmall):
            mix_pseudo_multiturn([_single("o", "a")], [], 1, 2, 0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2 ** 32), st.integers(1, 5), st.integers(1, 4))
    def test_conservation_property(self, seed, conversations, turns_per_conv):
        rng = random.Random(seed)
        pool_size = conversations * turns_per_conv + rng.randint(0, 5)
        pool = [_single(f"t{k}", "a") for k in range(pool_size)]
        split = rng.randint(0, pool_size)
        mixed = mix_pseudo_multiturn(pool[:split], pool[split:],
                                     conversations, turns_per_conv, seed)
        used = [t for s in mixed for t in _turn_texts(s)]
        assert len(used) == len(set(used)) == conversations * turns_per_conv
        assert set(used) <= {f"t{k}" for k in range(pool_size)}


class TestIntentFilter:
    def _agreeing_judge(self, dataset) -> MockChatBackend:
        chat = MockChatBackend()
        for record in dataset:
            for turn in record.turns:
                answer = "IMAGE" if turn.expected_modality is Modality.IMAGE else "TEXT"
                chat.script(judge_request(turn.user.text, turn.user.image_ref is not None), answer)
        return chat

    def test_agreeing_judge_keeps_everything(self, mini_dataset):
        result = filter_intent_mismatch(list(mini_dataset), self._agreeing_judge(mini_dataset))
        assert len(result.kept) == 12
        assert result.rejected == () and result.undecided == ()

    def test_flipped_turn_rejects_with_reason(self, mini_dataset):
        chat = self._agreeing_judge(mini_dataset)
        target = mini_dataset[1]  # mini-1-t2i: turn 1 expects IMAGE
        turn = target.turns[0]
        chat.script(judge_request(turn.user.text, False), "TEXT")
        result = filter_intent_mismatch(list(mini_dataset), chat)
        rejected_ids = [r.id for r, _ in result.rejected]
        assert rejected_ids == [target.id]
        reason = result.rejected[0][1][0]
        assert (reason.turn_index, reason.judged, reason.expected) == (
            0, Modality.TEXT, Modality.IMAGE,
        )
        assert len(result.kept) == 11

    def test_hand_labeled_mini_partition(self, mini_dataset):
        # hand labeling: the judge disagrees on every record whose round-2
        # turn expects an image; those are mini-2-t2i and mini-2-it2i
        chat = self._agreeing_judge(mini_dataset)
        expected_rejected = set()
        for record in mini_dataset:
            turn = record.turns[1]
            if turn.expected_modality is Modality.IMAGE:
                chat.script(judge_request(turn.user.text, turn.user.image_ref is not None), "TEXT")
                expected_rejected.add(record.id)
        assert expected_rejected == {"mini-2-t2i", "mini-2-it2i"}
        result = filter_intent_mismatch(list(mini_dataset), chat)
        assert {r.id for r, _ in result.rejected} == expected_rejected
        assert {r.id for r in result.kept} == {r.id for r in mini_dataset} - expected_rejected

    def test_backend_error_goes_undecided(self, mini_dataset):
        chat = MockChatBackend()  # everything unscripted -> ScriptMiss
        result = filter_intent_mismatch(list(mini_dataset)[:2], chat)
        assert result.kept == () and result.rejected == ()
        assert len(result.undecided) == 2


class TestCorrectionDataset:
    ROCKET = (
        "###Wrong### The output violates rule 3. The assistant's description "
        "misses the main point of the asking for a visual image of a rocket. "
        "Correct Solution: A rocket propelled upward by burning flames is "
        "moving through space, the style is cartoonish."
    )

    def _teacher(self, templates, mapping):
        chat = MockChatBackend()
        for (q, r), verdict in mapping.items():
            chat.script(build_teacher_request(templates, q, r), verdict)
        return chat

    def test_correct_verdict_retained(self, templates):
        teacher = self._teacher(templates, {("q1", "r1"): "###Correct"})
        result = build_correction_dataset([("q1", "r1")], teacher, templates)
        assert len(result.samples) == 1
        assert result.samples[0].verdict.kind == "correct"

    def test_rocket_correction(self, templates):
        q = "Could you draw me a picture of rockets?"
        r = "A rocket is a large machine used to reach space."
        teacher = self._teacher(templates, {(q, r): self.ROCKET})
        result = build_correction_dataset([(q, r)], teacher, templates)
        verdict = result.samples[0].verdict
        assert verdict.violated_rule == 3
        assert verdict.corrected_output.startswith("A rocket propelled upward")

    def test_malformed_completion_quarantined(self, templates):
        mapping = {
            ("q1", "r1"): "###Correct",
            ("q2", "r2"): "looks fine to me",
            ("q3", "r3"): "###Correct",
        }
        teacher = self._teacher(templates, mapping)
        result = build_correction_dataset(list(mapping.keys()), teacher, templates)
        assert len(result.samples) == 2
        assert len(result.quarantined) == 1
        assert result.quarantined[0]["question"] == "q2"


class TestExportMix:
    def _parts(self):
        def sample(source):
            return InstructionSample(
                turns=(InstructionTurn(user=UserTurnInput(text=f"u-{source}"),
                                       assistant_raw="ok"),),
                source=source,
            )

        return {
            "d_o": [sample("d_o")] * 2,
            "d_p": [sample("d_p")],
            "d_pm": [sample("d_pm")] * 3,
            "dialogben_train": [sample("dialogben_train")] * 2,
        }

    def test_smaller_mix_excludes_dialogben(self, tmp_path):
        path = tmp_path / "mix.jsonl"
        counts = export_training_mix(self._parts(), include_dialogben=False, path=path)
        assert "dialogben_train" not in counts
        sources = [json.loads(line)["source"] for line in path.read_text().splitlines()]
        assert "dialogben_train" not in sources
        assert len(sources) == 6

    def test_manifest_counts(self, tmp_path):
        path = tmp_path / "mix.jsonl"
        export_training_mix(self._parts(), include_dialogben=True, path=path)
        manifest = json.loads((tmp_path / "mix.jsonl.manifest.json").read_text())
        assert manifest["counts"] == {"d_o": 2, "d_p": 1, "d_pm": 3, "dialogben_train": 2}

    def test_sample_serialization_round_trip(self):
        sample = InstructionSample(
            turns=(InstructionTurn(user=UserTurnInput(text="hi", image_ref="aa"),
                                   assistant_raw="<draw>a cat"),),
            source="d_p",
        )
        assert instruction_sample_from_dict(instruction_sample_to_dict(sample)) == sample
