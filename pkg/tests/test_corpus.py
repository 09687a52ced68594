import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from htencoder.config import tiny
from htencoder.corpus import (
    CLS,
    EOS,
    PAD,
    RESERVED,
    SOS,
    UNK,
    Dialog,
    Example,
    Turn,
    Vocab,
    act_vector,
    batch_examples,
    build_vocab,
    default_act_labels,
    dialog_to_line,
    load_dialogs,
    make_batch,
    make_examples,
    parse_dialog,
    save_dialogs,
)
from htencoder.errors import AnnotationError, CorpusError
from htencoder.metrics import extract_entities
from htencoder.models import DialogModel
from htencoder.synthetic import SynthConfig, generate_synthetic_corpus, oracle_self_check
from htencoder.tensor import no_grad

FIXTURE = {
    "id": "d1",
    "turns": [
        {"spk": "user", "text": ["i", "want", "food"], "goal_entities": ["[value_food]"], "requested": ["phone"]},
        {"spk": "sys", "text": ["[value_food]", "it", "is"], "belief": ["food", "[value_food]"], "act": ["inform"]},
        {"spk": "user", "text": ["phone", "?"]},
        {"spk": "sys", "text": ["[restaurant_phone]"]},
    ],
}


def dialog(*utterances):
    turns = [Turn("user" if i % 2 == 0 else "sys", u.split()) for i, u in enumerate(utterances)]
    return Dialog("x", turns)


class TestLoading:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text("")
        assert load_dialogs(p) == []

    def test_round_trip(self, tmp_path):
        p = tmp_path / "c.jsonl"
        line = json.dumps(FIXTURE, ensure_ascii=False)
        p.write_text(line + "\n")
        dialogs = load_dialogs(p)
        assert dialog_to_line(dialogs[0]) == line
        q = tmp_path / "d.jsonl"
        save_dialogs(dialogs, q)
        assert q.read_text() == p.read_text()

    def test_string_text_is_split(self):
        d = parse_dialog({"id": 3, "turns": [{"spk": "user", "text": "a  b c"}]})
        assert d.turns[0].text == ["a", "b", "c"] and d.id == "3"

    def test_system_first_rejected(self):
        with pytest.raises(CorpusError, match="user first"):
            parse_dialog({"id": "d", "turns": [{"spk": "sys", "text": ["hi"]}]})

    def test_empty_utterance_rejected(self):
        with pytest.raises(CorpusError, match="empty"):
            parse_dialog({"id": "d", "turns": [{"spk": "user", "text": []}]})

    def test_line_number_in_error(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text(json.dumps(FIXTURE) + "\n{not json\n")
        with pytest.raises(CorpusError, match=":2:"):
            load_dialogs(p)

    def test_unknown_keys(self):
        with pytest.raises(CorpusError):
            parse_dialog({"id": "d", "turns": [{"spk": "user", "text": ["a"], "mood": "x"}]})

    def test_dialog_annotations(self):
        d = parse_dialog(FIXTURE)
        assert d.goal_entities == {"[value_food]"}
        assert d.requested == {"phone"}
        assert dialog("a", "b").goal_entities is None


@settings(max_examples=50)
@given(st.lists(st.lists(st.text("abc[]_", min_size=1, max_size=5), min_size=1, max_size=4), min_size=1, max_size=6))
def test_save_load_round_trip(tmp_path_factory, utterances):
    d = Dialog("p", [Turn("user" if i % 2 == 0 else "sys", u) for i, u in enumerate(utterances)])
    p = tmp_path_factory.mktemp("rt") / "c.jsonl"
    save_dialogs([d], p)
    assert load_dialogs(p) == [d]


class TestVocab:
    def test_three_tokens(self):
        v = build_vocab([dialog("a b", "b c")])
        assert len(v) == 8 and v.itos[:5] == list(RESERVED)

    def test_cap_keeps_most_frequent(self):
        v = build_vocab([dialog("a b b", "c b c")], max_size=6)
        assert v.itos[5:] == ["b"]

    def test_tie_lexicographic(self):
        v = build_vocab([dialog("z y", "y z x")], max_size=7)
        assert v.itos[5:] == ["y", "z"]

    def test_unknown_maps_to_unk(self):
        v = build_vocab([dialog("a")])
        assert v.encode(["a", "q"]) == [5, UNK]
        assert v.decode([SOS, 5, UNK, EOS, 5]) == ["a", "[UNK]"]

    def test_cap_too_small(self):
        with pytest.raises(CorpusError):
            build_vocab([dialog("a")], max_size=5)

    def test_reserved_ids_fixed(self):
        assert (PAD, SOS, EOS, UNK, CLS) == (0, 1, 2, 3, 4)
        with pytest.raises(CorpusError):
            Vocab(["a"] + list(RESERVED))


class TestExamples:
    def test_single_exchange(self):
        ex = make_examples(dialog("hi", "hello"))
        assert len(ex) == 1 and ex[0].context == [["hi"]] and ex[0].response == ["hello"]

    def test_nested_contexts(self):
        ex = make_examples(dialog("u1", "s1", "u2", "s2"))
        assert [e.context for e in ex] == [[["u1"]], [["u1"], ["s1"], ["u2"]]]
        assert [e.turn for e in ex] == [1, 3]

    def test_trailing_user_turn(self):
        assert len(make_examples(dialog("u1", "s1", "u2"))) == 1

    def test_turn_cutoff(self):
        assert len(make_examples(dialog("u1", "s1", "u2", "s2"), turn_cutoff=1)) == 1

    def test_annotations_carried(self):
        ex = make_examples(parse_dialog(FIXTURE))[0]
        assert ex.belief == ["food", "[value_food]"] and ex.act == ["inform"]


VOCAB = Vocab(list(RESERVED) + list("abcdefghijklmno"))


def ex(*utts, resp="a b"):
    return Example("d", 1, [u.split() for u in utts], resp.split(), ["c"], ["inform"])


class TestBatching:
    def test_single_no_padding(self):
        b = make_batch([ex("a b", "c")], VOCAB, "HIER")
        assert b.ids.shape == (1, 3) and not (b.ids == PAD).any()
        assert_array_equal(b.response_in[0], [SOS, 5, 6])
        assert_array_equal(b.response_out[0], [5, 6, EOS])

    def test_padding_and_masks(self):
        b = make_batch([ex("a b c", "d e"), ex("a", "b c")], VOCAB, "HIER")
        assert b.ids.shape == (2, 5)
        assert_array_equal(b.ids[1, 3:], [PAD, PAD])
        for scheme in (None, "HIER"):
            m = b.masks(scheme)[1]
            assert not m[:3, 3:].any()
            assert not m[3:, :3].any()
        assert_array_equal(b.key_valid[1], [1, 1, 1, 0, 0])

    def test_cls_per_utterance(self):
        b = make_batch([ex("a b", "c")], VOCAB, "HIER-CLS")
        assert_array_equal(b.ids[0], [CLS, 5, 6, CLS, 7])
        assert b.layouts[0].lengths == (3, 2)

    def test_truncation_drops_oldest(self, caplog):
        with caplog.at_level(logging.WARNING):
            b = make_batch([ex("a b c", "d e", "f")], VOCAB, "HIER", max_context_len=3)
        assert_array_equal(b.ids[0], [8, 9, 10])
        assert "truncated" in caplog.text

    def test_act_vectors(self):
        labels = default_act_labels()
        b = make_batch([ex("a")], VOCAB, "HIER++", act_labels=labels)
        assert b.acts.shape == (1, 44) and b.acts[0, labels.index("inform")] == 1 and b.acts.sum() == 1
        with pytest.raises(AnnotationError):
            act_vector(["teleport"], labels)

    def test_batch_sizes(self):
        batches = batch_examples([ex("a")] * 5, 2, VOCAB, "HIER")
        assert [len(b) for b in batches] == [2, 2, 1]

    def test_take_strips_padding(self):
        b = make_batch([ex("a b c", "d e", resp="a b c d"), ex("a", resp="b")], VOCAB, "HIER")
        one = b.take(1)
        assert one.ids.shape == (1, 1)
        assert_array_equal(one.response_in, [[SOS, 6]])

    @pytest.mark.parametrize("variant", ["SET", "MAT", "HIER", "HIER++", "HIER-CLS", "HIER-Joint"])
    def test_batched_equals_unbatched(self, variant):
        m = DialogModel(tiny(variant, act_dim=44, embed=12 if variant in ("HIER++", "HIER-CLS") else 8), seed=1)
        exs = [ex("a b c", "d e", "f g"), ex("h", "i j"), ex("k l m n o")]
        b = make_batch(exs, VOCAB, variant, act_labels=default_act_labels())
        with no_grad():
            enc = m.encode(b).hidden.data
            for i in range(len(exs)):
                single = b.take(i)
                alone = m.encode(single).hidden.data[0]
                n = b.layouts[i].total
                assert np.abs(enc[i, :n] - alone).max() < 1e-9
                if not m.cfg.variant.joint:
                    full = m.forward_response(b).data[i, : single.response_in.shape[1]]
                    assert np.abs(full - m.forward_response(single).data[0]).max() < 1e-9


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic_corpus(3, 20)
        b = generate_synthetic_corpus(3, 20)
        assert [dialog_to_line(d) for d in a] == [dialog_to_line(d) for d in b]
        assert a != generate_synthetic_corpus(4, 20)

    def test_size_and_exchanges(self):
        dialogs = generate_synthetic_corpus(0, 50)
        assert len(dialogs) == 50
        for d in dialogs:
            assert len(d.turns) % 2 == 0 and 2 <= len(d.turns) // 2 <= 4
            parse_dialog(d.to_json())

    def test_oracle_informs_fully(self):
        dialogs = generate_synthetic_corpus(1, 100)
        assert oracle_self_check(dialogs)
        for d in dialogs:
            ents = {e for t in d.turns if t.spk == "sys" for e in extract_entities(t.text)}
            assert d.goal_entities <= ents

    def test_response_is_function_of_last_user_turn(self):
        seen = {}
        for d in generate_synthetic_corpus(2, 200):
            for e in make_examples(d):
                key = " ".join(e.context[-1])
                seen.setdefault(key, set()).add(" ".join(e.response))
        assert all(len(v) == 1 for v in seen.values())

    def test_grammar_file(self, tmp_path):
        p = tmp_path / "g.json"
        p.write_text(json.dumps({"domains": {"taxi": {"informable": ["departure"], "requestable": ["phone"],
                                                       "bookable": False}}, "max_exchanges": 2}))
        dialogs = generate_synthetic_corpus(0, 5, SynthConfig.from_json(str(p)))
        assert all("taxi" in d.turns[0].text and len(d.turns) == 4 for d in dialogs)

    def test_needs_a_dialog(self):
        with pytest.raises(ValueError):
            generate_synthetic_corpus(0, 0)
