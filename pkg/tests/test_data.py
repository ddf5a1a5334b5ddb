import logging

import numpy as np
import pytest

from src.data.corpus import (
    copy_task_corpus,
    corpus_text,
    markov_corpus,
    prepare_sequences,
    read_corpus,
    split_documents,
    token_counts,
    train_valid_split,
)
from src.data.mlm import apply_mlm_masking, make_mlm_batch
from src.data.packing import PackedSequence, pack_sequences, pad_to_block_multiple, sliding_window_split
from src.data.vocab import MASK_ID, NUM_RESERVED, PAD_ID, UNK_ID, Vocab, build_vocab
from src.errors import ArgumentError, DimensionError, MaskingError


def plain_sequence(length, valid=None, start=NUM_RESERVED):
    ids = np.arange(length, dtype=np.int64) % 50 + start
    allowed = np.ones(length, dtype=bool) if valid is None else np.arange(length) < valid
    ids[~allowed] = PAD_ID
    return PackedSequence(ids, allowed)


def test_build_vocab_orders_by_frequency_then_token():
    vocab = build_vocab("b a a c c c d", 8)
    assert vocab.tokens[NUM_RESERVED:] == ("c", "a", "b")
    assert vocab.id_of("c") == NUM_RESERVED
    assert vocab.id_of("zzz") == UNK_ID


def test_build_vocab_truncates_to_max_size():
    vocab = build_vocab("b a a c c c", 7)
    assert len(vocab) == 7
    assert vocab.id_of("b") == UNK_ID
    np.testing.assert_array_equal(vocab.encode(["c", "b", "a"]), [5, UNK_ID, 6])
    assert vocab.decode([5, 6]) == ["c", "a"]


def test_build_vocab_errors():
    with pytest.raises(ArgumentError):
        build_vocab("a b", NUM_RESERVED)
    with pytest.raises(ArgumentError):
        build_vocab("   \n", 10)
    with pytest.raises(ArgumentError):
        Vocab(("x", "x"))


def test_vocab_save_and_load(tmp_path):
    vocab = build_vocab("x y y z z z", 20)
    vocab.save(tmp_path / "vocab.txt")
    assert (tmp_path / "vocab.txt").read_text().splitlines() == ["z", "y", "x"]
    assert Vocab.load(tmp_path / "vocab.txt") == vocab


def test_pack_sequences_never_crosses_documents():
    seqs = pack_sequences([[5, 6, 7], [8]], 2)
    assert [s.ids.tolist() for s in seqs] == [[5, 6], [7, PAD_ID], [8, PAD_ID]]
    assert [s.doc_index for s in seqs] == [0, 0, 1]
    np.testing.assert_array_equal(token_counts(seqs), [2, 1, 1])
    assert seqs[1].attention_allowed.tolist() == [True, False]


def test_pack_sequences_rejects_tiny_length():
    with pytest.raises(ArgumentError):
        pack_sequences([[5, 6]], 1)


def test_packed_sequence_shape_check():
    with pytest.raises(DimensionError):
        PackedSequence(np.zeros(3), np.ones(4, dtype=bool))


def test_pad_to_block_multiple():
    seq = plain_sequence(5)
    padded = pad_to_block_multiple(seq, 4)
    assert len(padded) == 8
    assert padded.num_tokens == 5
    assert padded.ids[5:].tolist() == [PAD_ID] * 3
    assert pad_to_block_multiple(seq, 5) is seq


def test_sliding_window_split_clamps_last_window():
    windows = sliding_window_split(list(range(300)), 128, stride=128)
    assert [w.start for w in windows] == [0, 128, 172]
    assert all(w.tokens.size == 128 for w in windows)
    assert windows[-1].tokens[-1] == 299


def test_sliding_window_split_short_input_and_errors():
    windows = sliding_window_split([1, 2, 3], 8)
    assert len(windows) == 1 and windows[0].tokens.tolist() == [1, 2, 3]
    with pytest.raises(ArgumentError):
        sliding_window_split([1, 2, 3], 8, stride=0)
    with pytest.raises(ArgumentError):
        sliding_window_split([1, 2, 3], 8, stride=9)


def test_mlm_masking_is_deterministic_and_keeps_targets():
    seq = plain_sequence(64)
    a = apply_mlm_masking(seq, 0.15, 3, 100)
    b = apply_mlm_masking(seq, 0.15, 3, 100)
    np.testing.assert_array_equal(a.input_ids, b.input_ids)
    np.testing.assert_array_equal(a.loss_mask, b.loss_mask)
    np.testing.assert_array_equal(a.targets, seq.ids)
    np.testing.assert_array_equal(a.input_ids[~a.loss_mask], seq.ids[~a.loss_mask])


def test_mlm_masking_proportions():
    seq = plain_sequence(20000)
    row = apply_mlm_masking(seq, 0.15, 0, 100)
    selected = row.loss_mask
    assert selected.mean() == pytest.approx(0.15, abs=0.01)
    masked = (row.input_ids == MASK_ID) & selected
    unchanged = (row.input_ids == seq.ids) & selected
    assert masked.sum() / selected.sum() == pytest.approx(0.8, abs=0.03)
    # kept tokens plus random draws that happen to hit the original id
    assert unchanged.sum() / selected.sum() == pytest.approx(0.1, abs=0.03)
    replaced = row.input_ids[selected & ~masked]
    assert replaced.min() >= NUM_RESERVED and replaced.max() < 100


def test_mlm_masking_skips_pad_and_special_tokens():
    seq = plain_sequence(400, valid=200)
    row = apply_mlm_masking(seq, 0.5, 1, 100)
    assert not row.loss_mask[200:].any()
    np.testing.assert_array_equal(row.input_ids[200:], PAD_ID)

    ids = np.full(10, MASK_ID, dtype=np.int64)
    with pytest.raises(MaskingError):
        apply_mlm_masking(PackedSequence(ids, np.ones(10, dtype=bool)), 0.5, 0, 100)


def test_mlm_masking_argument_checks():
    with pytest.raises(ArgumentError):
        apply_mlm_masking(plain_sequence(8), 0.0, 0, 100)
    with pytest.raises(ArgumentError):
        apply_mlm_masking(plain_sequence(8), 0.15, 0, NUM_RESERVED)


def test_make_mlm_batch_skips_unmaskable_rows(caplog):
    good = plain_sequence(32)
    empty = PackedSequence(np.zeros(32, dtype=np.int64), np.zeros(32, dtype=bool))
    with caplog.at_level(logging.WARNING):
        batch = make_mlm_batch([good, empty, good], 0.3, 5, 100)
    assert batch.batch_size == 2 and batch.seq_len == 32
    assert batch.num_predictions == int(batch.loss_mask.sum()) > 0
    assert "skipping sequence 1" in caplog.text
    # rows use distinct seeds
    assert not np.array_equal(batch.loss_mask[0], batch.loss_mask[1])

    with pytest.raises(MaskingError):
        make_mlm_batch([empty], 0.3, 5, 100)


def test_split_documents_and_corpus_text():
    docs = split_documents("a b\nc\n\n\nd e\n")
    assert docs == [["a", "b", "c"], ["d", "e"]]
    assert split_documents(corpus_text(docs)) == docs


def test_read_corpus_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.txt"):
        read_corpus(tmp_path / "nope.txt")


def test_prepare_sequences_pads_to_blocks():
    docs = [["a", "b", "c", "d", "e"]]
    vocab = build_vocab(corpus_text(docs), 20)
    seqs = prepare_sequences(docs, vocab, seq_len=4, num_blocks=3)
    assert [len(s) for s in seqs] == [6, 6]
    assert [s.num_tokens for s in seqs] == [4, 1]


def test_train_valid_split_is_deterministic_and_disjoint():
    seqs = [plain_sequence(4, start=5 + i) for i in range(10)]
    train, valid = train_valid_split(seqs, 0.2, seed=4)
    assert len(train) == 8 and len(valid) == 2
    again_train, again_valid = train_valid_split(seqs, 0.2, seed=4)
    assert [id(s) for s in valid] == [id(s) for s in again_valid]
    assert {id(s) for s in train}.isdisjoint({id(s) for s in valid})
    with pytest.raises(ArgumentError):
        train_valid_split(seqs, 1.0)


def test_markov_corpus_is_reproducible():
    a = markov_corpus(3, 20, alphabet_size=8, seed=1)
    assert a == markov_corpus(3, 20, alphabet_size=8, seed=1)
    assert [len(d) for d in a] == [20, 20, 20]
    assert all(tok.startswith("w") for doc in a for tok in doc)
    with pytest.raises(ArgumentError):
        markov_corpus(0, 20)


def test_copy_task_corpus_repeats_first_half():
    docs = copy_task_corpus(4, 16, seed=2)
    for doc in docs:
        assert len(doc) == 16
        assert doc[:8] == doc[8:]
    with pytest.raises(ArgumentError):
        copy_task_corpus(4, 15)


def test_copy_task_corpus_repeats_once_per_block():
    docs = copy_task_corpus(3, 16, seed=5, period=4)
    for doc in docs:
        assert len(doc) == 16
        assert doc[0:4] == doc[4:8] == doc[8:12] == doc[12:16]
    with pytest.raises(ArgumentError):
        copy_task_corpus(3, 16, period=5)
    with pytest.raises(ArgumentError):
        copy_task_corpus(3, 16, period=16)
