import json

import pytest
from hypothesis import given, settings, strategies as st

from sefun.corpus import (
    CORPUS_HEADER,
    Accepted,
    AnnotationRecord,
    ConversationPair,
    Dropped,
    EmptyInput,
    InvalidState,
    NeedsConfirmation,
    ParseError,
    RecordCountMismatch,
    SchemaVersionMismatch,
    Segment,
    SegmentAnnotation,
    SegmentMismatch,
    adjudicate_file,
    aggregate_annotations,
    confirm_annotation,
    contains_any,
    corpus_stats,
    filter_pairs,
    load_corpus,
    make_pair,
    save_corpus,
    segment,
    tokenize,
)
from sefun.taxonomy import Level1, Level2, SentenceFunction, parse_label

from _adjudication_oracle import TOY, all_assignments, reference

L2 = Level2


def sf(l2):
    return SentenceFunction.of(l2)


# --- segmentation -----------------------------------------------------------

def test_segment_examples():
    assert [s.text for s in segment("你好。吃了吗?")] == ["你好。", "吃了吗?"]
    assert [s.text for s in segment("hello")] == ["hello"]
    assert [s.text for s in segment("？？")] == ["？", "？"]
    assert [s.text for s in segment("好，走吧！ ")] == ["好，", "走吧！"]


@pytest.mark.parametrize("text", ["", "   ", "\n"])
def test_segment_empty(text):
    with pytest.raises(EmptyInput):
        segment(text)


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="你好ab 。！？!?；;…，,\t", min_size=1, max_size=30))
def test_segment_reconstructs(text):
    if not text.strip():
        return
    pieces = [s.text for s in segment(text)]
    joined = "".join(pieces)
    # only whitespace-only fragments may be lost
    assert "".join(text.split()) == "".join(joined.split())
    assert all(p.strip() for p in pieces)


def test_tokenize():
    assert tokenize("我爱NLP models!") == ["我", "爱", "NLP", "models", "!"]


# --- data model ------------------------------------------------------------

def test_segment_label_constraints():
    with pytest.raises(ValueError):
        Segment("x", ["x"], [sf(L2.POSITIVE_DE), sf(L2.YES_NO_IN)])
    s = Segment("x", ["x"], [sf(L2.POSITIVE_DE), sf(L2.NEGATIVE_DE)])
    assert s.function == sf(L2.POSITIVE_DE)


def test_dirty_word_hook():
    pairs = [make_pair("你好。", "坏蛋！"), make_pair("早。", "早！")]
    kept = list(filter_pairs(pairs, contains_any(["坏蛋"])))
    assert [p.query_text for p in kept] == ["早。"]


# --- adjudication ----------------------------------------------------------

def _pair(nq=1, nr=1):
    return ConversationPair([Segment("问？", ["问", "？"])] * nq, [Segment("答。", ["答", "。"])] * nr)


def _ann(labels):
    l2 = tuple(TOY[c] for c in sorted(labels))
    return SegmentAnnotation(None, l2)


def _records(assignment, nq=1):
    """``assignment`` lists, for each annotator, one label set per segment."""
    return [AnnotationRecord(f"ann{i}", tuple(_ann(s) for s in segs[:nq]), tuple(_ann(s) for s in segs[nq:]))
            for i, segs in enumerate(assignment)]


def _normalise(outcome):
    inv = {v: k for k, v in TOY.items()}
    conv = lambda ms: tuple(frozenset(inv[x] for x in m) for m in ms)  # noqa: E731
    if isinstance(outcome, Accepted):
        return ("accepted", conv(outcome.labels))
    if isinstance(outcome, Dropped):
        return ("dropped", outcome.reason)
    return ("confirm", conv(outcome.majority), int(outcome.dissenter[3:]))


def run_oracle_comparison():
    """Compare against the reference on every assignment; returns (n, mismatches)."""
    pair = _pair()
    n, bad = 0, []
    for flat in all_assignments(2):
        # flat = (a0s0, a0s1, a1s0, a1s1, a2s0, a2s1)
        per_ann = [flat[0:2], flat[2:4], flat[4:6]]
        got = _normalise(aggregate_annotations(pair, _records(per_ann)))
        want = reference([(per_ann[0][s], per_ann[1][s], per_ann[2][s]) for s in range(2)])
        n += 1
        if got != want:
            bad.append((per_ann, got, want))
    return n, bad


def test_adjudication_examples():
    pair = _pair()
    same = _records([["a", "c"]] * 3)
    assert isinstance(aggregate_annotations(pair, same), Accepted)
    disjoint = _records([["a", "c"], ["b", "c"], ["c", "c"]])
    assert aggregate_annotations(pair, disjoint) == Dropped("labels from all annotators have no overlap")
    maj = aggregate_annotations(pair, _records([["a", "c"], ["a", "c"], ["b", "c"]]))
    assert isinstance(maj, NeedsConfirmation) and maj.dissenter == "ann2"
    assert maj.majority == (frozenset({L2.POSITIVE_DE}), frozenset({L2.WH_STYLE_IN}))


def test_adjudication_matches_reference_single_segment():
    pair = ConversationPair([Segment("问？", ["问", "？"])], [Segment("答。", ["答", "。"])])
    for flat in all_assignments(1):
        # the response segment is unanimous, so the query segment decides
        recs = _records([[s, "a"] for s in flat])
        want = reference([tuple(flat), tuple(frozenset("a") for _ in range(3))])
        assert _normalise(aggregate_annotations(pair, recs)) == want, flat


def test_adjudication_errors():
    pair = _pair()
    with pytest.raises(RecordCountMismatch):
        aggregate_annotations(pair, _records([["a", "a"]] * 2))
    with pytest.raises(SegmentMismatch):
        aggregate_annotations(pair, _records([["a", "a", "a"]] * 3, nq=2))


def test_confirm():
    nc = NeedsConfirmation((frozenset({L2.POSITIVE_DE}),), "x")
    assert confirm_annotation(nc, True) == Accepted(nc.majority)
    assert isinstance(confirm_annotation(nc, False), Dropped)
    with pytest.raises(InvalidState):
        confirm_annotation(Accepted(()), True)


def test_annotation_record_invariants():
    with pytest.raises(ValueError):
        SegmentAnnotation(Level1.DE, (L2.YES_NO_IN,))
    with pytest.raises(ValueError):
        SegmentAnnotation(None, (L2.POSITIVE_DE, L2.YES_NO_IN))
    with pytest.raises(ValueError):
        SegmentAnnotation(None, (L2.POSITIVE_DE, L2.NEGATIVE_DE, L2.OTHER_DE))


def test_adjudicate_file(tmp_path):
    pairs = [make_pair("你好吗？", "很好。"), make_pair("去吗？", "去。"), make_pair("走！", "好。")]
    save_corpus(pairs, tmp_path / "p.jsonl")
    lab = lambda *xs: [{"sf2": list(xs)}]  # noqa: E731
    recs = []
    for a in ("a1", "a2", "a3"):
        recs.append({"pair": 0, "annotator": a, "query": lab("IN:Yes-no IN"), "response": lab("DE:Positive DE")})
        recs.append({"pair": 1, "annotator": a, "query": lab("IN:Yes-no IN"),
                     "response": lab("DE:Positive DE" if a != "a3" else "DE:Negative DE")})
        recs.append({"pair": 2, "annotator": a, "query": lab(), "response": lab("DE:Positive DE")})
    (tmp_path / "r.jsonl").write_text("\n".join(json.dumps(r) for r in recs), encoding="utf-8")
    counts = adjudicate_file(tmp_path / "p.jsonl", tmp_path / "r.jsonl", tmp_path / "out.jsonl")
    assert counts == {"accepted": 1, "needs_confirmation": 1, "dropped": 1}
    out = load_corpus(tmp_path / "out.jsonl")
    assert out[0].query[0].function == parse_label("IN:Yes-no IN")
    pend = json.loads((tmp_path / "out.jsonl.pending.jsonl").read_text(encoding="utf-8"))
    assert pend["dissenter"] == "a3" and pend["pair"] == 1


# --- statistics ------------------------------------------------------------

def test_corpus_stats_hand_counted():
    lab = lambda t, l2: Segment(t, tokenize(t), [sf(l2)])  # noqa: E731
    pairs = [
        ConversationPair([lab("好吗？", L2.YES_NO_IN)], [lab("好。", L2.POSITIVE_DE)]),
        ConversationPair([lab("为什么？", L2.WH_STYLE_IN), lab("好吗？", L2.YES_NO_IN)], [lab("不好。", L2.NEGATIVE_DE)]),
        ConversationPair([lab("走！", L2.IM_WITH_COMMAND)], [lab("好。", L2.POSITIVE_DE), lab("哇！", L2.EX_WITH_INTERJECTIONS)]),
    ]
    st_ = corpus_stats(pairs)
    assert (st_.n_pairs, st_.query_segments, st_.response_segments) == (3, 4, 4)
    assert st_.query_counts[L2.YES_NO_IN] == 2 and st_.response_counts[L2.POSITIVE_DE] == 2
    assert st_.percent("query", L2.YES_NO_IN) == 50.0
    assert sum(st_.query_counts.values()) == st_.query_segments
    assert sum(st_.response_counts.values()) == st_.response_segments


def test_corpus_stats_empty():
    s = corpus_stats([])
    assert s.n_pairs == s.total_segments == 0 and not any(s.query_counts.values())


# --- file I/O --------------------------------------------------------------

def test_round_trip(tmp_path):
    pairs = [
        ConversationPair([Segment("你好吗？", tokenize("你好吗？"), [sf(L2.YES_NO_IN)])],
                         [Segment("好。", ["好", "。"], [sf(L2.POSITIVE_DE), sf(L2.OTHER_DE)], (0.9, 0.5))], "s1"),
        make_pair("无标签。", "也没有！", "s2"),
    ]
    save_corpus(pairs, tmp_path / "c.jsonl")
    assert load_corpus(tmp_path / "c.jsonl") == pairs


def _write(tmp_path, lines):
    p = tmp_path / "c.jsonl"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def test_parse_errors(tmp_path):
    good = json.dumps({"query": [{"text": "好？"}], "response": [{"text": "好。"}], "source": ""})
    with pytest.raises(ParseError) as e:
        load_corpus(_write(tmp_path, [CORPUS_HEADER, good, good[:-5]]))
    assert e.value.line == 3
    bad_label = json.dumps({"query": [{"text": "好？", "sf2": "IN:Maybe IN"}], "response": [{"text": "好。"}]})
    with pytest.raises(ParseError, match="Maybe IN") as e:
        load_corpus(_write(tmp_path, [CORPUS_HEADER, bad_label]))
    assert e.value.line == 2
    with pytest.raises(SchemaVersionMismatch):
        load_corpus(_write(tmp_path, ["#sefun-corpus v9", good]))
    with pytest.raises(ParseError):
        load_corpus(_write(tmp_path, [good]))
