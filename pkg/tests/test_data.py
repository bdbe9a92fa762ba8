import json

import pytest

from paradiff.data import (
    CorpusError,
    ParaphraseRecord,
    family_templates,
    load_corpus,
    make_toy_corpus,
    save_corpus,
    toy_vocabulary,
)


def test_load_single_record(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps({"source": "a b", "target": "c d"}) + "\n")
    records = load_corpus(p)
    assert records == [ParaphraseRecord("a b", "c d")]


def test_missing_key_names_line(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"source": "a", "target": "b"}\n{"source": "x"}\n')
    with pytest.raises(CorpusError, match=":2"):
        load_corpus(p)


def test_invalid_json_names_line(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"source": "a", "target": "b"}\nnot json\n')
    with pytest.raises(CorpusError, match=":2"):
        load_corpus(p)


def test_empty_corpus_rejected(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text("")
    with pytest.raises(CorpusError, match="empty"):
        load_corpus(p)


def test_empty_fields_rejected(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"source": "", "target": "b"}\n')
    with pytest.raises(CorpusError, match=":1"):
        load_corpus(p)


def test_save_load_roundtrip(tmp_path):
    records = make_toy_corpus(3, 25, "A") + make_toy_corpus(4, 25, "B")
    p = tmp_path / "c.jsonl"
    save_corpus(records, p)
    assert load_corpus(p) == records


def test_toy_corpus_deterministic():
    assert make_toy_corpus(11, 100) == make_toy_corpus(11, 100)
    assert make_toy_corpus(11, 100) != make_toy_corpus(12, 100)


def test_toy_pairs_share_slot_content_words():
    vocab_words = set(toy_vocabulary())
    for rec in make_toy_corpus(0, 200, "A") + make_toy_corpus(0, 200, "B"):
        src_words = set(rec.source.split())
        tgt_words = set(rec.target.split())
        assert src_words <= vocab_words and tgt_words <= vocab_words
        # the filled (verb, noun) slots appear on both sides
        shared = src_words & tgt_words
        assert len(shared) >= 2


def test_families_share_vocab_but_no_templates():
    a_src, a_tgt = family_templates("A")
    b_src, b_tgt = family_templates("B")
    assert not (set(a_src + a_tgt) & set(b_src + b_tgt))
    a_words = {w for r in make_toy_corpus(0, 300, "A") for w in (r.source + " " + r.target).split()}
    b_words = {w for r in make_toy_corpus(0, 300, "B") for w in (r.source + " " + r.target).split()}
    assert a_words & b_words  # shared slot vocabulary


def test_domain_tags():
    assert all(r.domain == "A" for r in make_toy_corpus(0, 10, "A"))
    assert all(r.domain == "B" for r in make_toy_corpus(0, 10, "B"))


def test_make_toy_corpus_validation():
    with pytest.raises(ValueError):
        make_toy_corpus(0, 0)
    with pytest.raises(ValueError):
        make_toy_corpus(0, 5, "C")
