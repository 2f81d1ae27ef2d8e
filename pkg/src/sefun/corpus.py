"""Conversation corpus: segmentation, tokenization, adjudication, stats and I/O."""
from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from .taxonomy import (
    Level1,
    Level2,
    SentenceFunction,
    UnknownLabel,
    level1_of,
    parse_label,
    parse_level1,
    serialize_label,
)

log = logging.getLogger(__name__)

CORPUS_HEADER = "#sefun-corpus v1"

# Each of these closes the segment it follows.  Full-width and ASCII forms
# of the same mark are both listed.
DELIMITERS = frozenset("。！？!?；;…，,")

_CJK = "㐀-䶿一-鿿豈-﫿"
_TOKEN_RE = re.compile(rf"[{_CJK}]|[^\W{_CJK}]+|\S")


class EmptyInput(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaVersionMismatch(ParseError):
    pass


class RecordCountMismatch(ValueError):
    pass


class SegmentMismatch(ValueError):
    pass


class InvalidState(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Default tokenizer: one token per CJK character, word runs for Latin
    script, one token per remaining symbol."""
    return _TOKEN_RE.findall(text)


Tokenizer = Callable[[str], list[str]]


@dataclass
class Segment:
    text: str
    tokens: list[str] = field(default_factory=list)
    functions: list[SentenceFunction] = field(default_factory=list)
    # (p_level1, p_level2) when the labels came from a classifier
    confidence: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise EmptyInput("segment text is empty")
        if len(self.functions) > 2:
            raise ValueError("a segment carries at most two sentence functions")
        if len(self.functions) == 2 and self.functions[0].level1 != self.functions[1].level1:
            raise ValueError("both level-2 labels of a segment must share a level-1 parent")

    @property
    def function(self) -> SentenceFunction | None:
        """Primary label (the first one), used wherever a single label is needed."""
        return self.functions[0] if self.functions else None

    @property
    def labeled(self) -> bool:
        return bool(self.functions)


@dataclass
class ConversationPair:
    query: list[Segment]
    response: list[Segment]
    source: str = ""

    def __post_init__(self):
        if not self.query or not self.response:
            raise ValueError("a pair needs at least one query and one response segment")

    @property
    def labeled(self) -> bool:
        return all(s.labeled for s in self.query) and all(s.labeled for s in self.response)

    @property
    def query_text(self) -> str:
        return "".join(s.text for s in self.query)

    @property
    def response_text(self) -> str:
        return "".join(s.text for s in self.response)

    def query_tokens(self) -> list[str]:
        return [t for s in self.query for t in s.tokens]

    def response_tokens(self) -> list[str]:
        return [t for s in self.response for t in s.tokens]


def segment(text: str, tokenizer: Tokenizer = tokenize) -> list[Segment]:
    """Split ``text`` after every delimiter; whitespace-only pieces are dropped."""
    if not text or not text.strip():
        raise EmptyInput("cannot segment empty text")
    pieces: list[str] = []
    start = 0
    for i, ch in enumerate(text):
        if ch in DELIMITERS:
            pieces.append(text[start : i + 1])
            start = i + 1
    pieces.append(text[start:])
    return [Segment(p, tokenizer(p)) for p in pieces if p.strip()]


def make_pair(query: str, response: str, source: str = "", tokenizer: Tokenizer = tokenize) -> ConversationPair:
    return ConversationPair(segment(query, tokenizer), segment(response, tokenizer), source)


def filter_pairs(
    pairs: Iterable[ConversationPair], reject: Callable[[ConversationPair], bool]
) -> Iterator[ConversationPair]:
    """Drop pairs for which ``reject`` is true (dirty-word or quality filters)."""
    for p in pairs:
        if not reject(p):
            yield p


def contains_any(words: Iterable[str]) -> Callable[[ConversationPair], bool]:
    """Build a reject predicate matching pairs that mention any of ``words``."""
    words = [w for w in words if w]

    def reject(pair: ConversationPair) -> bool:
        text = pair.query_text + "\n" + pair.response_text
        return any(w in text for w in words)

    return reject


# ---------------------------------------------------------------------------
# Adjudication


@dataclass(frozen=True)
class SegmentAnnotation:
    """One annotator's labels on one segment: at most one level-1 and two level-2."""

    level1: Level1 | None = None
    level2: tuple[Level2, ...] = ()

    def __post_init__(self):
        if len(self.level2) > 2:
            raise ValueError("at most two level-2 labels per segment")
        if len(set(self.level2)) != len(self.level2):
            raise ValueError("duplicate level-2 label")
        parents = {level1_of(l2) for l2 in self.level2}
        if len(parents) > 1:
            raise ValueError("level-2 labels of one segment must share a level-1 parent")
        if self.level1 is not None and parents and parents != {self.level1}:
            raise ValueError("level-2 labels disagree with the chosen level-1 label")

    def label_set(self) -> frozenset:
        return frozenset(self.level2)


@dataclass(frozen=True)
class AnnotationRecord:
    annotator_id: str
    query: tuple[SegmentAnnotation, ...]
    response: tuple[SegmentAnnotation, ...]

    def label_sets(self) -> list[frozenset]:
        return [a.label_set() for a in self.query + self.response]


@dataclass(frozen=True)
class Accepted:
    labels: tuple[frozenset, ...]


@dataclass(frozen=True)
class Dropped:
    reason: str


@dataclass(frozen=True)
class NeedsConfirmation:
    majority: tuple[frozenset, ...]
    dissenter: str


AggregationOutcome = Accepted | Dropped | NeedsConfirmation

NO_OVERLAP = "labels from all annotators have no overlap"
NO_LABEL = "no annotated label at all"
NO_MAJORITY = "no majority label set"
NO_SINGLE_DISSENTER = "more than one annotator dissents"


def _segment_majority(sets: Sequence[frozenset]) -> tuple[frozenset | None, set[int]]:
    """Majority label set of one segment and the indices of dissenting annotators.

    Two identical sets win outright.  Otherwise the labels with the highest
    vote count form the majority, and dissenters are the annotators sharing
    nothing with it (or, if every annotator shares something, those whose set
    differs from it).
    """
    for i in range(3):
        for j in range(i + 1, 3):
            if sets[i] == sets[j] and sets[i]:
                k = 3 - i - j
                return sets[i], (set() if sets[k] == sets[i] else {k})
    votes = Counter(label for s in sets for label in s)
    top = max(votes.values())
    majority = frozenset(label for label, c in votes.items() if c == top)
    disjoint = {i for i, s in enumerate(sets) if not (s & majority)}
    return majority, (disjoint or {i for i, s in enumerate(sets) if s != majority})


def aggregate_label_sets(per_annotator: Sequence[Sequence[frozenset]], annotator_ids: Sequence[str],
                         max_labels: int = 2,
                         consistent: Callable[[frozenset], bool] | None = None) -> AggregationOutcome:
    """Adjudicate three annotators' per-segment label sets.

    Works for any hashable label type; :func:`aggregate_annotations` is the
    taxonomy-level entry point.
    """
    if len(per_annotator) != 3:
        raise RecordCountMismatch(f"expected exactly 3 annotation records, got {len(per_annotator)}")
    n = len(per_annotator[0])
    if any(len(r) != n for r in per_annotator):
        raise SegmentMismatch("annotation records cover different segment counts")

    columns = [[frozenset(r[i]) for r in per_annotator] for i in range(n)]
    for sets in columns:
        if not any(sets):
            return Dropped(NO_LABEL)
        if all(not (sets[a] & sets[b]) for a, b in ((0, 1), (0, 2), (1, 2))):
            return Dropped(NO_OVERLAP)
    if all(sets[0] == sets[1] == sets[2] for sets in columns):
        return Accepted(tuple(sets[0] for sets in columns))

    majority: list[frozenset] = []
    dissenters: set[int] = set()
    for sets in columns:
        m, d = _segment_majority(sets)
        if len(m) > max_labels or (consistent is not None and not consistent(m)):
            return Dropped(NO_MAJORITY)
        majority.append(m)
        dissenters |= d
    if len(dissenters) != 1:
        return Dropped(NO_SINGLE_DISSENTER)
    return NeedsConfirmation(tuple(majority), annotator_ids[dissenters.pop()])


def _same_parent(labels: frozenset) -> bool:
    return len({level1_of(l2) for l2 in labels}) <= 1


def aggregate_annotations(pair: ConversationPair, records: Sequence[AnnotationRecord]) -> AggregationOutcome:
    """Adjudicate three annotators' labels for ``pair``.

    Accepted/majority label sets are given per segment, query segments first.
    """
    if len(records) != 3:
        raise RecordCountMismatch(f"expected exactly 3 annotation records, got {len(records)}")
    for r in records:
        if len(r.query) != len(pair.query) or len(r.response) != len(pair.response):
            raise SegmentMismatch(
                f"annotator {r.annotator_id} labelled {len(r.query)}+{len(r.response)} segments, "
                f"pair has {len(pair.query)}+{len(pair.response)}"
            )
    return aggregate_label_sets(
        [r.label_sets() for r in records],
        [r.annotator_id for r in records],
        consistent=_same_parent,
    )


def confirm_annotation(outcome: AggregationOutcome, dissenter_agrees: bool) -> Accepted | Dropped:
    if not isinstance(outcome, NeedsConfirmation):
        raise InvalidState(f"only NeedsConfirmation outcomes can be confirmed, got {type(outcome).__name__}")
    if dissenter_agrees:
        return Accepted(outcome.majority)
    return Dropped(f"annotator {outcome.dissenter} rejected the majority labels")


def apply_labels(pair: ConversationPair, labels: Sequence[frozenset]) -> ConversationPair:
    """Return a copy of ``pair`` carrying adjudicated level-2 label sets."""
    segs = pair.query + pair.response
    if len(labels) != len(segs):
        raise SegmentMismatch("label count does not match segment count")
    out = []
    for s, ls in zip(segs, labels):
        fns = [SentenceFunction.of(l2) for l2 in sorted(ls)]
        out.append(Segment(s.text, list(s.tokens), fns))
    n = len(pair.query)
    return ConversationPair(out[:n], out[n:], pair.source)


# ---------------------------------------------------------------------------
# Statistics


@dataclass
class CorpusStats:
    n_pairs: int
    query_counts: dict[Level2, int]
    response_counts: dict[Level2, int]
    query_segments: int
    response_segments: int
    unlabeled_query: int = 0
    unlabeled_response: int = 0

    @property
    def total_segments(self) -> int:
        return self.query_segments + self.response_segments

    def percent(self, side: str, l2: Level2) -> float:
        counts, total = (
            (self.query_counts, self.query_segments) if side == "query"
            else (self.response_counts, self.response_segments)
        )
        labeled = total - (self.unlabeled_query if side == "query" else self.unlabeled_response)
        return 100.0 * counts[l2] / labeled if labeled else 0.0

    def rows(self) -> list[dict]:
        rows = []
        for l2 in Level2:
            rows.append({
                "level1": l2.parent.name,
                "level2": l2.name_en,
                "query": self.query_counts[l2],
                "query_pct": round(self.percent("query", l2), 4),
                "response": self.response_counts[l2],
                "response_pct": round(self.percent("response", l2), 4),
            })
        return rows


def corpus_stats(pairs: Iterable[ConversationPair]) -> CorpusStats:
    """Per-label segment counts by side.  Segments are counted under their
    primary label only."""
    q = Counter()
    r = Counter()
    n = nq = nr = uq = ur = 0
    for pair in pairs:
        n += 1
        for s in pair.query:
            nq += 1
            if s.function is None:
                uq += 1
            else:
                q[s.function.level2] += 1
        for s in pair.response:
            nr += 1
            if s.function is None:
                ur += 1
            else:
                r[s.function.level2] += 1
    return CorpusStats(
        n_pairs=n,
        query_counts={l2: q[l2] for l2 in Level2},
        response_counts={l2: r[l2] for l2 in Level2},
        query_segments=nq,
        response_segments=nr,
        unlabeled_query=uq,
        unlabeled_response=ur,
    )


# ---------------------------------------------------------------------------
# File I/O


def _segment_to_obj(s: Segment) -> dict:
    obj: dict = {"text": s.text, "tokens": s.tokens}
    if s.functions:
        obj["sf1"] = s.functions[0].level1.name
        obj["sf2"] = serialize_label(s.functions[0])
        if len(s.functions) > 1:
            obj["sf2_alt"] = serialize_label(s.functions[1])
    if s.confidence is not None:
        obj["p1"], obj["p2"] = s.confidence
    return obj


def pair_to_obj(pair: ConversationPair) -> dict:
    return {
        "query": [_segment_to_obj(s) for s in pair.query],
        "response": [_segment_to_obj(s) for s in pair.response],
        "source": pair.source,
    }


def dump_pair(pair: ConversationPair) -> str:
    return json.dumps(pair_to_obj(pair), ensure_ascii=False, sort_keys=True)


def _segment_from_obj(obj: dict, tokenizer: Tokenizer) -> Segment:
    text = obj["text"]
    if not isinstance(text, str):
        raise ValueError("segment text must be a string")
    tokens = obj.get("tokens")
    if tokens is None:
        tokens = tokenizer(text)
    fns: list[SentenceFunction] = []
    if obj.get("sf2"):
        fns.append(parse_label(obj["sf2"]))
        if obj.get("sf1") and parse_level1(obj["sf1"]) != fns[0].level1:
            raise UnknownLabel(f"sf1 {obj['sf1']!r} disagrees with sf2 {obj['sf2']!r}")
    elif obj.get("sf1"):
        raise UnknownLabel(f"sf1 {obj['sf1']!r} given without a level-2 label")
    if obj.get("sf2_alt"):
        if not fns:
            raise UnknownLabel("sf2_alt given without sf2")
        fns.append(parse_label(obj["sf2_alt"]))
    conf = None
    if "p1" in obj or "p2" in obj:
        conf = (float(obj["p1"]), float(obj["p2"]))
    return Segment(text, list(tokens), fns, conf)


def pair_from_obj(obj: dict, tokenizer: Tokenizer = tokenize) -> ConversationPair:
    return ConversationPair(
        [_segment_from_obj(s, tokenizer) for s in obj["query"]],
        [_segment_from_obj(s, tokenizer) for s in obj["response"]],
        obj.get("source", ""),
    )


def iter_corpus(path: str | Path, tokenizer: Tokenizer = tokenize) -> Iterator[ConversationPair]:
    """Stream pairs from a corpus file; memory use does not grow with file size."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise ParseError("missing header line", 1)
        if header.rstrip("\n") != CORPUS_HEADER:
            if header.startswith("#sefun-corpus"):
                raise SchemaVersionMismatch(f"unsupported corpus version {header.strip()!r}", 1)
            raise ParseError(f"expected header {CORPUS_HEADER!r}", 1)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                yield pair_from_obj(obj, tokenizer)
            except UnknownLabel as e:
                raise ParseError(str(e), lineno) from e
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ParseError(f"malformed record: {e}", lineno) from e


def load_corpus(path: str | Path, tokenizer: Tokenizer = tokenize) -> list[ConversationPair]:
    return list(iter_corpus(path, tokenizer))


class CorpusWriter:
    """Line-at-a-time corpus writer (context manager)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.count = 0

    def __enter__(self):
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")
        self._fh.write(CORPUS_HEADER + "\n")
        return self

    def write(self, pair: ConversationPair) -> None:
        self._fh.write(dump_pair(pair) + "\n")
        self.count += 1

    def __exit__(self, *exc):
        self._fh.close()


def save_corpus(pairs: Iterable[ConversationPair], path: str | Path) -> int:
    with CorpusWriter(path) as w:
        for p in pairs:
            w.write(p)
    return w.count


# Annotation record files: one JSON object per line,
#   {"pair": 0, "annotator": "a1",
#    "query": [{"sf1": "IN", "sf2": ["IN:Yes-no IN"]}, ...], "response": [...]}


def _annotation_from_obj(obj: dict) -> SegmentAnnotation:
    l1 = parse_level1(obj["sf1"]) if obj.get("sf1") else None
    l2s = obj.get("sf2") or []
    if isinstance(l2s, str):
        l2s = [l2s]
    return SegmentAnnotation(l1, tuple(parse_label(x).level2 for x in l2s))


def load_annotation_records(path: str | Path) -> dict[int, list[AnnotationRecord]]:
    out: dict[int, list[AnnotationRecord]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                rec = AnnotationRecord(
                    str(obj["annotator"]),
                    tuple(_annotation_from_obj(a) for a in obj["query"]),
                    tuple(_annotation_from_obj(a) for a in obj["response"]),
                )
                out.setdefault(int(obj["pair"]), []).append(rec)
            except UnknownLabel as e:
                raise ParseError(str(e), lineno) from e
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ParseError(f"malformed annotation record: {e}", lineno) from e
    return out


def adjudicate_file(pairs_path, records_path, out_path) -> dict[str, int]:
    """Run adjudication over a corpus file and its annotation records.

    Accepted pairs go to ``out_path``; pairs needing confirmation go to
    ``<out_path>.pending.jsonl`` for the dissenting annotator to review.
    """
    records = load_annotation_records(records_path)
    pending_path = Path(str(out_path) + ".pending.jsonl")
    counts = Counter()
    with CorpusWriter(out_path) as w, open(pending_path, "w", encoding="utf-8", newline="\n") as pend:
        for idx, pair in enumerate(iter_corpus(pairs_path)):
            outcome = aggregate_annotations(pair, records.get(idx, []))
            if isinstance(outcome, Accepted):
                w.write(apply_labels(pair, outcome.labels))
                counts["accepted"] += 1
            elif isinstance(outcome, NeedsConfirmation):
                pend.write(json.dumps({
                    "pair": idx,
                    "dissenter": outcome.dissenter,
                    "majority": [[serialize_label(SentenceFunction.of(l2)) for l2 in sorted(m)]
                                 for m in outcome.majority],
                }, ensure_ascii=False) + "\n")
                counts["needs_confirmation"] += 1
            else:
                log.debug("pair %d dropped: %s", idx, outcome.reason)
                counts["dropped"] += 1
    return {k: counts[k] for k in ("accepted", "needs_confirmation", "dropped")}


def side_segments(pairs: Iterable[ConversationPair], side: str) -> Iterator[Segment]:
    for p in pairs:
        yield from (p.query if side == "query" else p.response)

