import json
from collections import Counter

import numpy as np
import pytest

from conftest import fit
from dafe.data import (BACK_TRANSLATED, COPIED, MonolingualCorpus, ParallelCorpus,
                       UntrainedModelError, Vocabulary, back_translate, build_vocab, collate,
                       copy_corpus, load_parallel, make_batches, write_parallel)
from dafe.model import BOS, EOS, PAD, UNK
from dafe.toy import random_sentences, reversal_task


# --- vocabulary ---------------------------------------------------------------

def test_vocab_frequency_order():
    v = build_vocab([["a a b"]], max_size=6)
    assert v.to_list() == ["a", "b"] and v.stoi["a"] < v.stoi["b"]


def test_vocab_ties_and_cut():
    v = build_vocab([["c b a", "d d"]], max_size=6)
    assert v.to_list() == ["d", "a"]


def test_vocab_is_stable():
    lines = ["x y z y", "z q"]
    assert build_vocab([lines], 10) == build_vocab([list(lines)], 10)


def test_unknown_word_maps_to_unk():
    assert Vocabulary(["a"]).encode("a zzz") == [4, UNK]


def test_encode_decode_round_trip():
    v = Vocabulary(["the", "cat", "sat"])
    assert v.decode(v.encode("the cat sat the")) == "the cat sat the"


def test_empty_streams_rejected():
    with pytest.raises(ValueError):
        build_vocab([[]], 10)


# --- copy -----------------------------------------------------------------------

def test_copy_corpus_pairs_sentences_with_themselves():
    mono = MonolingualCorpus([[5, 6], [7]], domain="in")
    out = copy_corpus(mono)
    assert out.pairs == [((5, 6), (5, 6)), ((7,), (7,))]
    assert out.provenance == COPIED and out.domain == "in"


def test_copy_corpus_is_idempotent():
    mono = MonolingualCorpus([[5, 6, 7], [8, 9]])
    once = copy_corpus(mono)
    assert copy_corpus(once.target_side()) == once


def test_corpus_validation():
    with pytest.raises(ValueError):
        ParallelCorpus([[5]], [[6], [7]])


# --- back-translation ---------------------------------------------------------

@pytest.fixture(scope="module")
def reversal_model():
    return fit(reversal_task(seed=0, n=400), epochs=80)


def test_back_translate_refuses_untrained_model(tiny_model):
    mono = MonolingualCorpus([[5, 6]])
    with pytest.warns(UserWarning), pytest.raises(UntrainedModelError):
        back_translate(mono, tiny_model)


def test_back_translate_with_identity_model(copy_model):
    corpus, model = copy_model
    mono = corpus.target_side()
    out = back_translate(mono, model)
    assert out.sources == out.targets == mono.sentences
    assert out.provenance == BACK_TRANSLATED


def test_back_translate_learns_reversal(reversal_model):
    held_out = MonolingualCorpus(random_sentences(np.random.default_rng(99), 100, 20))
    out = back_translate(held_out, reversal_model, checkpoint_id="rev-1")
    assert out.targets == held_out.sentences
    assert out.meta == {"generator": "rev-1"}
    right = total = 0
    for src, tgt in zip(out.sources, out.targets):
        want = tgt[::-1]
        total += len(want)
        right += sum(a == b for a, b in zip(src, want))
    assert right / total >= 0.95


# --- batching -----------------------------------------------------------------

def _corpus(n=37, seed=0):
    rng = np.random.default_rng(seed)
    return ParallelCorpus(random_sentences(rng, n, 30), random_sentences(rng, n, 30))


def test_collate_layout():
    batch, trunc = collate([([5, 6, 7], [8, 9]), ([5], [8, 9, 10])], max_len=8)
    assert trunc == 0
    assert batch.src.tolist() == [[5, 6, 7], [5, PAD, PAD]]
    assert batch.tgt_in.tolist() == [[BOS, 8, 9, PAD], [BOS, 8, 9, 10]]
    assert batch.tgt_out.tolist() == [[8, 9, EOS, PAD], [8, 9, 10, EOS]]


def test_batch_size_one_has_no_padding():
    for batch in make_batches(_corpus(), 1, seed=0):
        assert len(batch) == 1 and not (batch.src == PAD).any() and not (batch.tgt_out == PAD).any()


def test_epoch_conserves_tokens():
    corpus = _corpus()
    src, tgt = Counter(), Counter()
    for batch in make_batches(corpus, 8, seed=3):
        src.update(batch.src[batch.src_mask].tolist())
        tgt.update(batch.tgt_in[:, 1:][batch.tgt_in[:, 1:] != PAD].tolist())
    assert src == Counter(t for s in corpus.sources for t in s)
    assert tgt == Counter(t for s in corpus.targets for t in s)


def test_batch_order_is_seeded():
    corpus = _corpus()
    a = [b.src.tobytes() for b in make_batches(corpus, 4, seed=1)]
    b = [b.src.tobytes() for b in make_batches(corpus, 4, seed=1)]
    c = [b.src.tobytes() for b in make_batches(corpus, 4, seed=2)]
    assert a == b and a != c


def test_truncation_is_logged(caplog):
    corpus = ParallelCorpus([[5] * 20, [6]], [[7] * 20, [8]])
    with caplog.at_level("INFO", logger="dafe.data"):
        batches = list(make_batches(corpus, 2, seed=0, max_len=10))
    assert batches[0].src.shape[1] == 10 and batches[0].tgt_out.shape[1] == 10
    assert "truncated 1" in caplog.text


def test_bad_batch_size():
    with pytest.raises(ValueError):
        next(make_batches(_corpus(), 0, seed=0))


# --- files --------------------------------------------------------------------

def test_parallel_files_round_trip(tmp_path):
    v = Vocabulary(["a", "b", "c"])
    corpus = ParallelCorpus([v.encode("a b"), v.encode("c")], [v.encode("b"), v.encode("c a")],
                            "in", BACK_TRANSLATED, {"generator": "ck-7"})
    write_parallel(tmp_path / "syn", corpus, v)
    loaded = load_parallel(tmp_path / "syn", v, "in")
    assert loaded.pairs == corpus.pairs
    meta = json.loads((tmp_path / "syn.meta").read_text())
    assert meta["generator"] == "ck-7" and meta["provenance"] == BACK_TRANSLATED
