import pytest

from posechat.corpus import corpus_path, default_vocab
from posechat.errors import EmptyCorpus
from posechat.tok import (
    EOS,
    MAX_VOCAB,
    POSE,
    RESERVED_TOKENS,
    UNK,
    Vocab,
    build_vocab,
    decode,
    encode,
    tokenize,
)


def test_reserved_ids_pinned(vocab):
    assert vocab.tokens[:8] == RESERVED_TOKENS
    assert vocab.index["<pose>"] == POSE


def test_frequency_then_lex_order(tmp_path):
    p = tmp_path / "corpus.txt"
    p.write_text("a a b\n")
    v = build_vocab([p])
    assert v.index["a"] == 8
    assert v.index["b"] == 9


def test_build_is_deterministic(tmp_path, vocab):
    v2 = default_vocab()
    assert v2.tokens == vocab.tokens
    assert v2.sha256() == vocab.sha256()


def test_empty_corpus_raises(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("")
    with pytest.raises(EmptyCorpus):
        build_vocab([p])


def test_shipped_corpus_fits_budget(vocab):
    assert len(vocab) <= MAX_VOCAB


def test_pose_placeholder_maps_to_reserved_id(vocab):
    ids = encode("The SMPL pose is <POSE> .", vocab)
    assert ids[-2] == POSE
    assert vocab.tokens[ids[-1]] == "."
    assert EOS not in ids


def test_unknown_word_maps_to_unk(vocab):
    ids = encode("xylophone", vocab)
    assert ids == [UNK]


def test_round_trip_on_corpus(vocab):
    with open(corpus_path(), "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            ids = encode(line, vocab)
            assert UNK not in ids, line
            # round trip up to whitespace/case normalization
            assert encode(decode(ids, vocab), vocab) == ids


def test_pose_bearing_answers_have_exactly_one_pose_id(vocab):
    from posechat.data.records import POSE_ANSWERS

    for answer in POSE_ANSWERS:
        ids = encode(answer, vocab)
        assert sum(1 for i in ids if i == POSE) == 1


def test_vocab_file_round_trip(tmp_path, vocab):
    path = tmp_path / "vocab.tsv"
    vocab.save(path)
    loaded = Vocab.load(path)
    assert loaded.tokens == vocab.tokens
    assert loaded.sha256() == vocab.sha256()


def test_tokenize_specials_and_punct():
    assert tokenize("Sure, it is <POSE>.") == ["sure", ",", "it", "is", "<pose>", "."]
    assert tokenize("<obs> hello?") == ["<obs>", "hello", "?"]
