import numpy as np
import pytest

from sefun.classify import train_cfm
from sefun.corpus import segment
from sefun.generate import (
    GenExample,
    MissingSentenceFunction,
    Seq2SeqModel,
    beam_search,
    detokenize,
    greedy_decode,
    sequence_logp,
    train_cseq2seq,
    train_seq2seq,
)
from sefun.harness.synthetic import CONTROL_LABELS, gen_control_corpus, gen_synthetic_corpus
from sefun.nncore import TrainConfig
from sefun.taxonomy import Level2, SentenceFunction
from sefun.vocab import UNK_ID, EmptyCorpus, Vocabulary, build_vocab

from _gentasks import COPY_CONFIG, copy_examples, exact_match, random_queries

SMALL = TrainConfig.desk(hidden_dim=16, emb_dim=8, max_epochs=2, batch_size=8, learning_rate=0.01, seed=0)


@pytest.fixture(scope="module")
def copy_model():
    return train_seq2seq(copy_examples(), COPY_CONFIG)


@pytest.fixture(scope="module")
def half_trained():
    return train_seq2seq(copy_examples(40, seed=3), SMALL)


# --- vocabulary ------------------------------------------------------------

def test_build_vocab(tmp_path):
    v = build_vocab([["b", "a", "b"], ["c"]])
    assert v.tokens[4:] == ["b", "a", "c"] and v.coverage == 1.0
    capped = build_vocab([["b", "a", "b"], ["c"]], cap=1)
    assert capped.encode(["b", "a", "c"]) == [4, UNK_ID, UNK_ID]
    v.save(tmp_path / "v")
    assert (tmp_path / "v").read_text(encoding="utf-8").startswith("#sefun-vocab v1\n")
    assert Vocabulary.load(tmp_path / "v") == Vocabulary(v.tokens, v.freqs)
    with pytest.raises(EmptyCorpus):
        build_vocab([[]])


# --- training --------------------------------------------------------------

def test_copy_task(copy_model):
    assert exact_match(copy_model, copy_examples()) >= 0.95
    assert copy_model.history[0] < copy_model.initial_loss


def test_beam_on_copy_task(copy_model):
    ex = copy_examples()
    assert exact_match(copy_model, ex, beam_search, beam=5) >= exact_match(copy_model, ex)
    # a sharply trained model: beam and greedy often find the same sequence
    for q in random_queries(100, seed=9):
        assert beam_search(copy_model, q, beam=5).hypothesis.score >= greedy_decode(copy_model, q).hypothesis.score


def test_beam_one_is_greedy(half_trained):
    for q in random_queries(30, seed=1):
        g = greedy_decode(half_trained, q)
        b = beam_search(half_trained, q, beam=1)
        assert b.tokens == g.tokens and b.hypothesis == g.hypothesis


def test_beam_never_below_greedy(half_trained):
    for q in random_queries(30, seed=2):
        g = greedy_decode(half_trained, q)
        b = beam_search(half_trained, q, beam=5)
        assert b.hypothesis.score >= g.hypothesis.score
        # scores are recomputable from the model
        assert abs(sequence_logp(half_trained, q, b.hypothesis.tokens) - b.hypothesis.logp) < 1e-9


def test_decoding_invariants(half_trained):
    q = ["a", "b", "c"]
    g = greedy_decode(half_trained, q, max_len=7)
    assert len(g.hypothesis.tokens) <= 7
    for a in g.attention:
        assert abs(a.sum() - 1) < 1e-9
    assert not half_trained.allow_unk
    for h in beam_search(half_trained, q, beam=4).nbest:
        assert UNK_ID not in h.tokens


def test_training_deterministic(tmp_path):
    ex = copy_examples(20, seed=4)
    train_seq2seq(ex, SMALL).save(tmp_path / "a")
    train_seq2seq(ex, SMALL).save(tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    m = Seq2SeqModel.load(tmp_path / "a")
    assert greedy_decode(m, ["a", "b"]).tokens == greedy_decode(train_seq2seq(ex, SMALL), ["a", "b"]).tokens


def test_conditioning_errors():
    ex = copy_examples(10)
    with pytest.raises(MissingSentenceFunction):
        train_cseq2seq(ex, SMALL)
    ex_sf = [GenExample(e.query, e.response, 0) for e in ex]
    m = train_cseq2seq(ex_sf, SMALL)
    with pytest.raises(MissingSentenceFunction):
        greedy_decode(m, ["a"])
    assert greedy_decode(m, ["a"], SentenceFunction.of(Level2.POSITIVE_DE)).tokens == \
        greedy_decode(m, ["a"], int(Level2.POSITIVE_DE)).tokens
    with pytest.raises(EmptyCorpus):
        train_seq2seq([], SMALL)


def test_zero_sf_table_degenerates_to_baseline():
    vocab = build_vocab([list("abcdefghij")])
    cfg = TrainConfig.desk(hidden_dim=8, emb_dim=6, seed=3)
    base = Seq2SeqModel(vocab, cfg, conditioned=False)
    cond = Seq2SeqModel(vocab, cfg, conditioned=True)
    cond.P["gen.sf.E"][...] = 0.0
    for k in base.P:
        np.testing.assert_array_equal(base.P[k], cond.P[k])
    for q in random_queries(20, seed=5):
        for code in (0, 7, 19):
            a = beam_search(base, q, beam=3)
            b = beam_search(cond, q, code, beam=3)
            assert a.tokens == b.tokens and a.hypothesis.logp == b.hypothesis.logp


def test_detokenize():
    assert detokenize(["你", "好", "hello", "world", "!"]) == "你好hello world!"


# --- controllability -------------------------------------------------------

@pytest.fixture(scope="module")
def control_models():
    train = gen_control_corpus(400, seed=2, n_words=8)
    cfg = TrainConfig.desk(seed=0, hidden_dim=32, emb_dim=16, max_epochs=12, batch_size=20, learning_rate=0.01)
    cfm = train_cfm(gen_synthetic_corpus(n_pairs=800, seed=1), "joint", "cnn", TrainConfig.desk(seed=0))
    return cfm, train_cseq2seq(train, cfg), train_seq2seq(train, cfg)


def test_changing_target_changes_output(control_models):
    cfm, cond, _ = control_models
    q = segment("你喜欢苹果吗？")[0].tokens
    outs = {greedy_decode(cond, q, int(l2)).text for l2 in CONTROL_LABELS}
    assert len(outs) == len(CONTROL_LABELS)
    for l2 in CONTROL_LABELS:
        text = greedy_decode(cond, q, int(l2)).text
        assert cfm.predict_batch([segment(text)[0]])[0].level2 is l2
