import io
import json
import random

import pytest

from medaid.corpus import (
    CorpusStats,
    Dialogue,
    DiseaseCatalog,
    Exchange,
    Role,
    Source,
    Utterance,
    compute_stats,
    default_catalog,
    dialogue_from_dict,
    dialogue_to_dict,
    merge_corpora,
    parse_mddial,
    read_jsonl,
    to_mddial,
    to_sharegpt,
    write_jsonl,
)
from medaid.errors import (
    CatalogError,
    CorpusParseError,
    CorpusStructureError,
    MedaidError,
    ValidationError,
)

from oracles import random_dialogue, recount_stats, sharegpt_to_dialogue


def d(did="d1", pairs=(("I have a cough", "How long?"),), diagnosis=None):
    return Dialogue(
        id=did,
        exchanges=[Exchange.of(p, r) for p, r in pairs],
        diagnosis=diagnosis,
    )


class TestDomainTypes:
    def test_utterance_trims_and_rejects_empty(self):
        assert Utterance(Role.PATIENT, "  hi  ").text == "hi"
        with pytest.raises(ValidationError):
            Utterance(Role.DOCTOR, "   ")

    def test_exchange_roles_fixed(self):
        with pytest.raises(ValidationError):
            Exchange(
                patient=Utterance(Role.DOCTOR, "x"),
                doctor=Utterance(Role.DOCTOR, "y"),
            )

    def test_dialogue_needs_exchanges(self):
        with pytest.raises(ValidationError):
            Dialogue(id="empty", exchanges=[])

    def test_default_catalog_shape(self, catalog):
        assert len(catalog) == 12
        assert len(catalog.all_symptoms()) == 118
        for disease in catalog.labels():
            assert catalog.symptoms(disease)

    def test_catalog_lookup_case_insensitive(self, catalog):
        assert catalog.canonical("rhinitis") == "Rhinitis"
        assert "ASTHMA" in catalog
        with pytest.raises(CatalogError):
            catalog.symptoms("Common cold")

    def test_catalog_longest_match_extraction(self):
        catalog = DiseaseCatalog({"Otitis": ["ear pain"], "External otitis": ["ear pain"]})
        assert catalog.extract_diagnosis("you have external otitis") == "External otitis"

    def test_catalog_rejects_empty_symptom_list(self):
        with pytest.raises(CatalogError):
            DiseaseCatalog({"X": []})


class TestParseMddial:
    def test_minimal_valid_instance(self):
        out = parse_mddial('{"Dialog 1":[{"patient":"I have a cough","doctor":"How long?"}]}')
        assert len(out) == 1
        assert out[0].id == "Dialog 1"
        assert out[0].turns == 1
        assert out[0].exchanges[0].patient.text == "I have a cough"

    def test_diagnosis_extracted_from_final_doctor_turn(self, catalog):
        text = json.dumps(
            {"Dialog 9": [
                {"patient": "my eyes are red", "doctor": "Anything else?"},
                {"patient": "they itch", "doctor": "This looks like conjunctivitis."},
            ]}
        )
        (dialogue,) = parse_mddial(text, catalog)
        assert dialogue.diagnosis == "Conjunctivitis"

    def test_no_catalog_disease_leaves_diagnosis_unset(self):
        (dialogue,) = parse_mddial('{"Dialog 1":[{"patient":"a","doctor":"rest and fluids"}]}')
        assert dialogue.diagnosis is None

    def test_malformed_json_reports_byte_offset(self):
        with pytest.raises(CorpusParseError) as err:
            parse_mddial('{"Dialog 1": [}')
        assert err.value.offset is not None
        assert err.value.offset >= 0

    def test_missing_pair_key_names_dialog(self):
        with pytest.raises(CorpusStructureError) as err:
            parse_mddial('{"Dialog 7":[{"patient":"hello"}]}')
        assert err.value.dialog_key == "Dialog 7"

    def test_empty_utterance_rejected(self):
        with pytest.raises(ValidationError):
            parse_mddial('{"Dialog 1":[{"patient":"", "doctor":"hm"}]}')

    def test_zero_exchanges_rejected(self):
        with pytest.raises(ValidationError):
            parse_mddial('{"Dialog 1":[]}')

    def test_round_trip_preserves_texts(self, fixture_corpus_path):
        text = fixture_corpus_path.read_text(encoding="utf-8")
        parsed = parse_mddial(text)
        assert to_mddial(parsed) == json.loads(text)


class TestShareGPT:
    def test_single_exchange_gives_three_entries(self):
        conv = to_sharegpt(d(), "sys")
        kinds = [e.from_ for e in conv.conversations]
        assert kinds == ["system", "human", "gpt"]
        assert conv.conversations[0].value == "sys"

    def test_four_exchanges_give_nine_entries(self):
        pairs = tuple((f"p{i}", f"r{i}") for i in range(4))
        conv = to_sharegpt(d(pairs=pairs), "sys")
        assert len(conv.conversations) == 9
        for i, entry in enumerate(conv.conversations[1:]):
            assert entry.from_ == ("human" if i % 2 == 0 else "gpt")
        assert conv.conversations[-1].from_ == "gpt"
        assert conv.conversations[-1].value == "r3"

    def test_round_trip_on_random_dialogues(self, catalog):
        rng = random.Random(11)
        for i in range(100):
            original = random_dialogue(rng, f"rt-{i}", catalog)
            conv = to_sharegpt(original, "system message")
            rebuilt = sharegpt_to_dialogue(conv, original.id, original.diagnosis)
            assert [
                (e.patient.text, e.doctor.text) for e in rebuilt.exchanges
            ] == [(e.patient.text, e.doctor.text) for e in original.exchanges]


class TestStats:
    def test_hand_counted_example(self):
        stats = compute_stats([d(pairs=(("a b c", "d e"),))])
        assert stats.avg_turns == 1.0
        assert stats.avg_words_per_dialogue == 5.0
        assert stats.avg_words_patient_utterance == 3.0
        assert stats.avg_words_doctor_utterance == 2.0

    def test_empty_corpus_is_domain_error(self):
        with pytest.raises(MedaidError):
            compute_stats([])

    def test_matches_bruteforce_recount_on_random_corpus(self, catalog):
        rng = random.Random(5)
        dialogues = [random_dialogue(rng, f"s-{i}", catalog) for i in range(50)]
        stats = compute_stats(dialogues)
        expected = recount_stats(dialogues)
        for key, value in expected.items():
            assert getattr(stats, key) == pytest.approx(value, abs=1e-12), key

    def test_permutation_invariant(self, catalog):
        rng = random.Random(6)
        dialogues = [random_dialogue(rng, f"p-{i}", catalog) for i in range(30)]
        shuffled = dialogues[:]
        rng.shuffle(shuffled)
        assert compute_stats(dialogues) == compute_stats(shuffled)

    def test_invariant_min_avg_max(self, fixture_corpus_path):
        stats = compute_stats(parse_mddial(fixture_corpus_path.read_text(encoding="utf-8")))
        assert stats.min_turns <= stats.avg_turns <= stats.max_turns
        assert isinstance(stats, CorpusStats)


class TestMerge:
    def test_sizes_add_up(self, catalog):
        rng = random.Random(7)
        a = [random_dialogue(rng, f"a-{i}", catalog) for i in range(10)]
        b = [random_dialogue(rng, f"b-{i}", catalog) for i in range(15)]
        assert len(merge_corpora(a, b)) == 25

    def test_empty_is_identity(self):
        x = [d("only")]
        merged = merge_corpora([], x)
        assert [m.id for m in merged] == ["only"]

    def test_id_collision_suffixed(self):
        merged = merge_corpora([d("Dialog 1")], [d("Dialog 1")])
        assert [m.id for m in merged] == ["Dialog 1", "Dialog 1#2"]

    def test_preserves_exchange_diagnosis_multiset(self, catalog):
        rng = random.Random(8)
        a = [random_dialogue(rng, "same-id", catalog) for _ in range(5)]
        b = [random_dialogue(rng, "same-id", catalog) for _ in range(5)]
        merged = merge_corpora(a, b)
        assert len(merged) == 10
        key = lambda dia: (tuple((e.patient.text, e.doctor.text) for e in dia.exchanges), dia.diagnosis)
        assert sorted(map(key, merged)) == sorted(map(key, a + b))


class TestJsonl:
    def test_round_trip_empty(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        write_jsonl([], path)
        assert read_jsonl(path) == []

    def test_round_trip_single(self, tmp_path):
        path = tmp_path / "one.jsonl"
        original = d(diagnosis="Asthma")
        write_jsonl([original], path)
        (loaded,) = read_jsonl(path)
        assert dialogue_to_dict(loaded) == dialogue_to_dict(original)

    def test_round_trip_500_random(self, tmp_path, catalog):
        rng = random.Random(9)
        dialogues = [random_dialogue(rng, f"j-{i}", catalog) for i in range(500)]
        path = tmp_path / "many.jsonl"
        write_jsonl(dialogues, path)
        loaded = read_jsonl(path)
        assert [dialogue_to_dict(x) for x in loaded] == [dialogue_to_dict(x) for x in dialogues]

    def test_parse_error_carries_line_number(self):
        stream = io.StringIO('{"id": "a", "exchanges": [{"patient": "p", "doctor": "d"}]}\nnot json\n')
        with pytest.raises(CorpusParseError) as err:
            read_jsonl(stream)
        assert "line 2" in str(err.value)

    def test_source_and_language_round_trip(self):
        raw = {
            "id": "x",
            "language": "hi",
            "source": "translated",
            "diagnosis": "Asthma",
            "exchanges": [{"patient": "p", "doctor": "d"}],
        }
        dialogue = dialogue_from_dict(raw)
        assert dialogue.source is Source.TRANSLATED
        assert dialogue.language.value == "hi"
        assert dialogue_to_dict(dialogue) == raw
