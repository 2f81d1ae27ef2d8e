"""Jaccard retrieval over stored queries, with sentence-function re-ranking.

Ordering rules (all deterministic):

* retrieval: base score descending, then pair id ascending;
* re-ranking: re-rank score descending, then unpenalised before penalised,
  then pair id ascending.

Re-rank scores are computed in exact rational arithmetic from the float
inputs and rounded once, so ``s - (s - t)`` comes out as exactly ``t``.
"""
from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .classify import CfMModel, CfTModel, predict_response_sf
from .corpus import ConversationPair, Tokenizer, segment, tokenize
from .vocab import EmptyCorpus

INDEX_MAGIC = b"SEFUNIDX"
INDEX_VERSION = 1


class EmptyCandidate(ValueError):
    pass


class EmptyCandidateList(ValueError):
    pass


class NoCandidates(LookupError):
    pass


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def jaccard_multiset(a: Iterable[str], b: Iterable[str]) -> float:
    """Bag-of-words variant: sum of min counts over sum of max counts."""
    ca, cb = Counter(a), Counter(b)
    union = sum((ca | cb).values())
    return sum((ca & cb).values()) / union if union else 0.0


@dataclass(frozen=True)
class RankedCandidate:
    pair_id: int
    response: str
    score: float
    predicted: int | None = None  # predicted function code at the re-rank level
    probability: float | None = None
    penalty: float | None = None
    rerank_score: float | None = None

    @property
    def active_score(self) -> float:
        return self.score if self.rerank_score is None else self.rerank_score


class RetrievalIndex:
    """Inverted index from query tokens to sorted pair ids."""

    def __init__(self, postings: dict[str, np.ndarray], sizes: np.ndarray,
                 responses: list[str], queries: list[str]):
        self.postings = postings
        self.sizes = sizes  # distinct query tokens per pair
        self.responses = responses
        self.queries = queries

    def __len__(self) -> int:
        return len(self.responses)

    def save(self, path) -> None:
        tokens = sorted(self.postings)
        header = {
            "tokens": tokens,
            "lengths": [int(len(self.postings[t])) for t in tokens],
            "responses": self.responses,
            "queries": self.queries,
        }
        blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(struct.pack("<IQ", INDEX_VERSION, len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(self.sizes, dtype="<u4").tobytes())
            for t in tokens:
                fh.write(np.ascontiguousarray(self.postings[t], dtype="<u4").tobytes())

    @classmethod
    def load(cls, path) -> "RetrievalIndex":
        data = Path(path).read_bytes()
        if data[:8] != INDEX_MAGIC:
            raise ValueError(f"{path}: not a sefun index file")
        version, n = struct.unpack_from("<IQ", data, 8)
        if version != INDEX_VERSION:
            raise ValueError(f"{path}: unsupported index version {version}")
        off = 8 + struct.calcsize("<IQ")
        header = json.loads(data[off:off + n].decode("utf-8"))
        off += n
        n_pairs = len(header["responses"])
        sizes = np.frombuffer(data, dtype="<u4", count=n_pairs, offset=off).astype(np.int64)
        off += 4 * n_pairs
        postings = {}
        for tok, ln in zip(header["tokens"], header["lengths"]):
            postings[tok] = np.frombuffer(data, dtype="<u4", count=ln, offset=off).astype(np.int64)
            off += 4 * ln
        return cls(postings, sizes, header["responses"], header["queries"])


def build_index(pairs: Iterable[ConversationPair], tokenizer: Tokenizer | None = None) -> RetrievalIndex:
    """Index the query side of ``pairs``; pair ids are positions in the input.

    Queries are tokenized with ``tokenizer`` when given, otherwise the
    stored segment tokens are used.
    """
    lists: dict[str, list[int]] = {}
    sizes, responses, queries = [], [], []
    for pid, pair in enumerate(pairs):
        toks = (tokenizer(pair.query_text) if tokenizer else pair.query_tokens())
        tset = sorted(set(toks))
        for t in tset:
            lists.setdefault(t, []).append(pid)
        sizes.append(len(tset))
        responses.append(pair.response_text)
        queries.append(pair.query_text)
    if not responses:
        raise EmptyCorpus("cannot index an empty corpus")
    postings = {t: np.asarray(ids, dtype=np.int64) for t, ids in lists.items()}
    return RetrievalIndex(postings, np.asarray(sizes, dtype=np.int64), responses, queries)


def _ranked(index: RetrievalIndex, scored: Sequence[tuple[float, int]], k: int) -> list[RankedCandidate]:
    top = sorted(scored, key=lambda x: (-x[0], x[1]))[:k]
    return [RankedCandidate(pid, index.responses[pid], s) for s, pid in top]


def retrieve_topk(index: RetrievalIndex, query, k: int = 20) -> list[RankedCandidate]:
    """Top-``k`` stored pairs by Jaccard similarity of query token sets.

    Candidates come from the posting lists of the query tokens; if fewer than
    ``k`` pairs share a token, zero-score pairs fill the list in id order,
    exactly as a full scan would rank them.
    """
    qset = set(tokenize(query) if isinstance(query, str) else query)
    hits: Counter = Counter()
    for t in qset:
        ids = index.postings.get(t)
        if ids is not None:
            hits.update(ids.tolist())
    scored = []
    for pid, inter in hits.items():
        union = len(qset) + int(index.sizes[pid]) - inter
        scored.append((inter / union, pid))
    out = _ranked(index, scored, k)
    if len(out) < k:
        for pid in range(len(index)):
            if len(out) >= k:
                break
            if pid not in hits:
                out.append(RankedCandidate(pid, index.responses[pid], 0.0))
    return out


def brute_force_topk(pairs: Sequence[ConversationPair], query, k: int = 20,
                     tokenizer: Tokenizer | None = None) -> list[RankedCandidate]:
    """Reference ranking: score every pair of the corpus directly."""
    qset = set(tokenize(query) if isinstance(query, str) else query)
    scored = []
    for pid, pair in enumerate(pairs):
        toks = tokenizer(pair.query_text) if tokenizer else pair.query_tokens()
        scored.append((jaccard(qset, toks), pid, pair.response_text))
    scored.sort(key=lambda x: (-x[0], x[1]))
    return [RankedCandidate(pid, resp, sc) for sc, pid, resp in scored[:k]]


# ---------------------------------------------------------------------------
# Re-ranking


def penalty(candidate: RankedCandidate, target: int, cfm: CfMModel | None = None,
            level: int = 2) -> float:
    """0 when the candidate's predicted function is ``target``, otherwise the
    classifier's probability for its (wrong) prediction."""
    if candidate is None or not candidate.response.strip():
        raise EmptyCandidate("candidate has no response text")
    if candidate.predicted is None:
        if cfm is None:
            raise ValueError("candidate carries no prediction and no classifier was given")
        candidate = tag_candidates([candidate], cfm, level)[0]
    return 0.0 if candidate.predicted == int(target) else float(candidate.probability)


def tag_candidates(cands: Sequence[RankedCandidate], cfm: CfMModel, level: int) -> list[RankedCandidate]:
    """Attach the classifier's prediction for each candidate's first response segment."""
    firsts = [segment(c.response)[0] for c in cands]
    preds = cfm.predict_batch(firsts)
    out = []
    for c, p in zip(cands, preds):
        code, prob = p.at_level(level)
        out.append(replace(c, predicted=code, probability=prob))
    return out


def rerank(candidates: Sequence[RankedCandidate], target: int, cfm: CfMModel | None = None,
           lam: float = 1.0, k: int = 20, level: int = 2) -> list[RankedCandidate]:
    """Demote candidates whose function differs from ``target``.

    ``rerank = s_i - lam * (s_1 - s_k) * penalty_i`` with ``s_1``/``s_k`` read
    from the incoming (score-sorted) list; ``k`` is capped at its length.
    When the penalty term vanishes (``lam == 0`` or ``s_1 == s_k``) the input
    order is returned as is.
    """
    if not candidates:
        raise EmptyCandidateList("nothing to re-rank")
    cands = list(candidates)
    if any(c.predicted is None for c in cands):
        if cfm is None:
            raise ValueError("candidates carry no predictions and no classifier was given")
        cands = tag_candidates(cands, cfm, level)
    k = min(k, len(cands))
    s1, sk = Fraction(cands[0].score), Fraction(cands[k - 1].score)
    spread = Fraction(lam) * (s1 - sk)
    keyed = []
    for pos, c in enumerate(cands):
        pen = penalty(c, target)
        exact = Fraction(c.score) - spread * Fraction(pen)
        keyed.append(((-exact, pen > 0, c.pair_id, pos), replace(c, penalty=pen, rerank_score=float(exact))))
    if spread != 0:
        keyed.sort(key=lambda x: x[0])
    return [c for _, c in keyed]


@dataclass
class IRResponse:
    response: str
    target: int
    level: int
    candidates: list[RankedCandidate]
    query_functions: list[int]

    def to_dict(self) -> dict:
        return {
            "response": self.response,
            "target": self.target,
            "level": self.level,
            "query_functions": self.query_functions,
            "candidates": [c.__dict__ for c in self.candidates],
        }


def respond_ir(index: RetrievalIndex, cfm: CfMModel, cft: CfTModel, query: str, level: int = 2,
               rerank_enabled: bool = True, lam: float = 1.0, k: int = 20,
               target: int | None = None) -> IRResponse:
    """Segment the query, predict the target response function, retrieve,
    optionally re-rank, and return the top response with full diagnostics."""
    segs = segment(query)
    qpreds = cfm.predict_batch(segs)
    qfuncs = [int(p.level2) for p in qpreds]
    if target is None:
        p1, p2 = predict_response_sf(cft, segs, qfuncs)
        target = int((p1 if level == 1 else p2).argmax())
    cands = retrieve_topk(index, [t for s in segs for t in s.tokens], k)
    if not cands:
        raise NoCandidates(f"no candidates for query {query!r}")
    cands = tag_candidates(cands, cfm, level)
    if rerank_enabled:
        cands = rerank(cands, target, lam=lam, k=k, level=level)
    return IRResponse(cands[0].response, target, level, cands, qfuncs)
