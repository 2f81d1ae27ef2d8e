"""Sentence-function classifiers.

``CfMModel`` labels individual segments hierarchically: a level-1 head on the
sentence vector, then a level-2 head on the sentence vector plus an
embedding of the level-1 label.  ``CfTModel`` predicts the function a
response should have, from the query text and (optionally) the functions of
the query segments.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import ConversationPair, CorpusWriter, Segment, tokenize
from .nncore import (
    BiGRU,
    CNNEncoder,
    Embedding,
    Linear,
    ParameterSet,
    TrainConfig,
    load_model,
    save_model,
    softmax,
    softmax_xent,
)
from .nncore.train import fit, pad_batch, split_holdout
from .taxonomy import N_LEVEL1, N_LEVEL2, Level1, Level2, SentenceFunction
from .vocab import PAD_ID, EmptyCorpus, Vocabulary, build_vocab

log = logging.getLogger(__name__)


class UnlabeledSegment(ValueError):
    pass


class EmptySegment(ValueError):
    pass


class EmptyQuery(ValueError):
    pass


class AnnotationError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        self.index = index
        super().__init__(f"record {index}: {cause}")


class Setup(str, enum.Enum):
    QUERY = "query"
    RESPONSE = "response"
    JOINT = "joint"


class EncoderKind(str, enum.Enum):
    CNN = "cnn"
    RNN = "rnn"


@dataclass(frozen=True)
class Prediction:
    level1: Level1
    level2: Level2
    prob_level1: float
    prob_level2: float

    @property
    def function(self) -> SentenceFunction:
        """The level-2 prediction with its own parent.  The two heads are
        independent, so ``level1`` may differ from this function's parent."""
        return SentenceFunction.of(self.level2)

    def at_level(self, level: int) -> tuple[int, float]:
        if level == 1:
            return int(self.level1), self.prob_level1
        return int(self.level2), self.prob_level2


def _tokens_of(x) -> list[str]:
    if isinstance(x, Segment):
        return x.tokens or tokenize(x.text)
    if isinstance(x, str):
        return tokenize(x)
    return list(x)


class SentenceEncoder:
    """Word embedding followed by a CNN or bi-GRU, producing ``hidden_dim`` vectors."""

    def __init__(self, prefix: str, kind: EncoderKind, vocab_size: int, config: TrainConfig):
        self.kind = EncoderKind(kind)
        self.emb = Embedding(f"{prefix}.emb", vocab_size, config.embedding_dim)
        if self.kind is EncoderKind.RNN:
            self.enc = BiGRU(f"{prefix}.rnn", config.embedding_dim, config.hidden_dim, config.hidden_dim)
        else:
            self.enc = CNNEncoder(f"{prefix}.cnn", config.embedding_dim, config.hidden_dim, config.cnn_widths)

    def init(self, ps: ParameterSet, seed: int) -> None:
        self.emb.init(ps, seed)
        self.enc.init(ps, seed)

    def forward(self, P, ids, mask):
        X, ce = self.emb.forward(P, ids)
        if self.kind is EncoderKind.RNN:
            _, v, c = self.enc.forward(P, X, mask)
        else:
            v, c = self.enc.forward(P, X, mask)
        return v, (ce, c)

    def backward(self, P, G, cache, dv) -> None:
        ce, c = cache
        if self.kind is EncoderKind.RNN:
            dX = self.enc.backward(P, G, c, None, dv)
        else:
            dX = self.enc.backward(P, G, c, dv)
        self.emb.backward(P, G, ce, dX)


# ---------------------------------------------------------------------------
# Classification-for-Modeling


class CfMModel:
    KIND = "cfm"

    def __init__(self, vocab: Vocabulary, encoder: EncoderKind | str, config: TrainConfig,
                 setup: Setup | str = Setup.JOINT, ps: ParameterSet | None = None):
        self.vocab = vocab
        self.config = config
        self.setup = Setup(setup)
        self.encoder = SentenceEncoder("cfm", encoder, len(vocab), config)
        H = config.hidden_dim
        self.head1 = Linear("cfm.head1", H, N_LEVEL1)
        self.l1_emb = Embedding("cfm.l1emb", N_LEVEL1, H)
        self.head2 = Linear("cfm.head2", H, N_LEVEL2)
        if ps is None:
            ps = ParameterSet()
            self.encoder.init(ps, config.seed)
            self.head1.init(ps, config.seed)
            self.l1_emb.init(ps, config.seed)
            self.head2.init(ps, config.seed)
        self.ps = ps

    @property
    def P(self) -> dict:
        return self.ps.params

    def encode_ids(self, token_lists: Sequence[Sequence[str]]):
        seqs = [self.vocab.encode(t) for t in token_lists]
        if any(len(s) == 0 for s in seqs):
            raise EmptySegment("cannot classify an empty segment")
        return pad_batch(seqs, PAD_ID)

    # forward pieces -------------------------------------------------------

    def _forward(self, ids, mask, d_l1):
        P = self.P
        v, ce = self.encoder.forward(P, ids, mask)
        logits1, c1 = self.head1.forward(P, v)
        if d_l1 is None:
            d_l1 = logits1.argmax(axis=1)
        e, cemb = self.l1_emb.forward(P, d_l1)
        logits2, c2 = self.head2.forward(P, v + e)
        return logits1, logits2, (ce, c1, cemb, c2)

    def level1_probs_ids(self, ids, mask) -> np.ndarray:
        v, _ = self.encoder.forward(self.P, ids, mask)
        return softmax(self.head1.forward(self.P, v)[0])

    def level1_probs(self, token_lists) -> np.ndarray:
        return self.level1_probs_ids(*self.encode_ids(token_lists))

    def level2_probs(self, token_lists, d_l1) -> np.ndarray:
        ids, mask = self.encode_ids(token_lists)
        d = np.broadcast_to(np.asarray(d_l1, dtype=np.int64), (len(token_lists),))
        return softmax(self._forward(ids, mask, d)[1])

    def predict_batch(self, items: Sequence) -> list[Prediction]:
        token_lists = [_tokens_of(x) for x in items]
        if not token_lists:
            return []
        ids, mask = self.encode_ids(token_lists)
        logits1, logits2, _ = self._forward(ids, mask, None)
        p1, p2 = softmax(logits1), softmax(logits2)
        a1, a2 = p1.argmax(axis=1), p2.argmax(axis=1)
        rows = np.arange(len(token_lists))
        return [
            Prediction(Level1(int(i)), Level2(int(j)), float(x), float(y))
            for i, j, x, y in zip(a1, a2, p1[rows, a1], p2[rows, a2])
        ]

    # training -------------------------------------------------------------

    def loss_phase1(self, ids, mask, gold1):
        P, G = self.P, {}
        v, ce = self.encoder.forward(P, ids, mask)
        logits1, c1 = self.head1.forward(P, v)
        loss, d1 = softmax_xent(logits1, gold1)
        dv = self.head1.backward(P, G, c1, d1)
        self.encoder.backward(P, G, ce, dv)
        return loss, G

    def loss_phase2(self, ids, mask, gold1, gold2, d_l1):
        P, G = self.P, {}
        logits1, logits2, (ce, c1, cemb, c2) = self._forward(ids, mask, d_l1)
        l1, d1 = softmax_xent(logits1, gold1)
        l2, d2 = softmax_xent(logits2, gold2)
        dsum = self.head2.backward(P, G, c2, d2)
        self.l1_emb.backward(P, G, cemb, dsum)
        dv = dsum + self.head1.backward(P, G, c1, d1)
        self.encoder.backward(P, G, ce, dv)
        return l1 + l2, G

    def save(self, path) -> None:
        meta = {
            "config": self.config.to_dict(),
            "encoder": self.encoder.kind.value,
            "setup": self.setup.value,
            "vocab": self.vocab.tokens,
            "vocab_freqs": self.vocab.freqs,
        }
        save_model(path, self.KIND, meta, self.P)

    @classmethod
    def load(cls, path) -> "CfMModel":
        _, meta, params = load_model(path, cls.KIND)
        return cls(
            Vocabulary(meta["vocab"], meta["vocab_freqs"]),
            meta["encoder"],
            TrainConfig.from_dict(meta["config"]),
            meta["setup"],
            _param_set(params),
        )


def _param_set(params: dict) -> ParameterSet:
    ps = ParameterSet()
    for k in sorted(params):
        ps.add(k, params[k])
    return ps


def cfm_examples(pairs: Iterable[ConversationPair], setup: Setup | str) -> list[Segment]:
    setup = Setup(setup)
    segs: list[Segment] = []
    for p in pairs:
        if setup in (Setup.QUERY, Setup.JOINT):
            segs.extend(p.query)
        if setup in (Setup.RESPONSE, Setup.JOINT):
            segs.extend(p.response)
    return segs


def _accuracy(pred: np.ndarray, gold: np.ndarray) -> float:
    return float(np.mean(pred == gold)) if len(gold) else 0.0


def train_cfm(pairs: Iterable[ConversationPair], setup: Setup | str = Setup.JOINT,
              encoder: EncoderKind | str = EncoderKind.RNN, config: TrainConfig | None = None,
              segments: Sequence[Segment] | None = None) -> CfMModel:
    """Two-phase hierarchical training.

    Phase 1 fits the encoder and level-1 head, stopping early on held-out
    level-1 accuracy.  Phase 2 freezes the level-1 decisions of that
    converged model for every training segment and fits the level-2 head
    on ``v + e[d_l1]`` (the level-1 loss stays in the objective so the
    level-1 head keeps working as the encoder moves).
    """
    config = config or TrainConfig()
    segs = list(segments) if segments is not None else cfm_examples(pairs, setup)
    if not segs:
        raise EmptyCorpus("no segments to train on")
    for i, s in enumerate(segs):
        if not s.labeled:
            raise UnlabeledSegment(f"segment {i} ({s.text!r}) has no sentence function")
    tokens = [_tokens_of(s) for s in segs]
    if any(not t for t in tokens):
        raise EmptySegment("a training segment has no tokens")
    gold1 = np.array([int(s.function.level1) for s in segs])
    gold2 = np.array([int(s.function.level2) for s in segs])

    tr, va = split_holdout(len(segs), config.val_fraction, config.seed)
    vocab = build_vocab(tokens[i] for i in tr)
    model = CfMModel(vocab, encoder, config, setup)
    ids, mask = model.encode_ids(tokens)

    def batch(ix):
        T = int(mask[ix].sum(axis=1).max())
        return ids[ix, :T], mask[ix, :T]

    def val_level1() -> float:
        b_ids, b_mask = batch(va)
        return _accuracy(model.level1_probs_ids(b_ids, b_mask).argmax(axis=1), gold1[va])

    def phase1(ix):
        b_ids, b_mask = batch(tr[ix])
        return model.loss_phase1(b_ids, b_mask, gold1[tr[ix]])

    hist1 = fit(model.ps, len(tr), phase1, config, val_level1 if len(va) else None,
                rng_salt=1, label="cfm-l1")

    # level-1 decisions of the converged model, frozen for phase 2
    d_l1 = np.empty(len(segs), dtype=np.int64)
    for start in range(0, len(segs), 512):
        ix = np.arange(start, min(start + 512, len(segs)))
        b_ids, b_mask = batch(ix)
        d_l1[ix] = model.level1_probs_ids(b_ids, b_mask).argmax(axis=1)

    def val_level2() -> float:
        b_ids, b_mask = batch(va)
        _, logits2, _ = model._forward(b_ids, b_mask, None)
        return _accuracy(logits2.argmax(axis=1), gold2[va])

    def phase2(ix):
        j = tr[ix]
        b_ids, b_mask = batch(j)
        return model.loss_phase2(b_ids, b_mask, gold1[j], gold2[j], d_l1[j])

    model.ps.step = 0
    for k in model.ps.params:
        model.ps.m[k][...] = 0.0
        model.ps.v[k][...] = 0.0
    fit(model.ps, len(tr), phase2, config, val_level2 if len(va) else None, rng_salt=2, label="cfm-l2")
    model.history = hist1
    return model


def predict_level1(model: CfMModel, segment) -> np.ndarray:
    return model.level1_probs([_tokens_of(segment)])[0]


def predict_level2(model: CfMModel, segment, d_l1: Level1 | int) -> np.ndarray:
    return model.level2_probs([_tokens_of(segment)], int(d_l1))[0]


def predict_sf(model: CfMModel, segment) -> Prediction:
    return model.predict_batch([segment])[0]


def annotate_pair(model: CfMModel, pair: ConversationPair) -> ConversationPair:
    segs = pair.query + pair.response
    preds = model.predict_batch(segs)
    out = [Segment(s.text, list(s.tokens), [p.function], (p.prob_level1, p.prob_level2))
           for s, p in zip(segs, preds)]
    n = len(pair.query)
    return ConversationPair(out[:n], out[n:], pair.source)


def annotate_corpus(model: CfMModel, pairs: Iterable[ConversationPair], out: str | Path) -> int:
    """Tag every segment of every pair and stream the result to ``out``.

    The stored label is the level-2 prediction (with its parent); ``p1``/``p2``
    hold the two heads' top probabilities.
    """
    with CorpusWriter(out) as w:
        index = -1
        try:
            for index, pair in enumerate(pairs):
                w.write(annotate_pair(model, pair))
        except (OSError, ValueError) as e:
            raise AnnotationError(index + 1 if index >= 0 else 0, e) from e
    return w.count


# ---------------------------------------------------------------------------
# Classification-for-Testing


class CfTModel:
    KIND = "cft"

    def __init__(self, vocab: Vocabulary, encoder: EncoderKind | str, config: TrainConfig,
                 with_query_sf: bool = True, ps: ParameterSet | None = None):
        self.vocab = vocab
        self.config = config
        self.with_query_sf = bool(with_query_sf)
        H = config.hidden_dim
        self.encoder = SentenceEncoder("cft", encoder, len(vocab), config)
        self.sf_emb = Embedding("cft.sfemb", N_LEVEL2, H) if self.with_query_sf else None
        self.head1 = Linear("cft.head1", H, N_LEVEL1)
        self.head2 = Linear("cft.head2", H, N_LEVEL2)
        if ps is None:
            ps = ParameterSet()
            self.encoder.init(ps, config.seed)
            if self.sf_emb:
                self.sf_emb.init(ps, config.seed)
            self.head1.init(ps, config.seed)
            self.head2.init(ps, config.seed)
        self.ps = ps

    @property
    def P(self) -> dict:
        return self.ps.params

    def _bag(self, sf_lists: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        """Sum of query-function embeddings per row, as a count matrix product."""
        counts = np.zeros((len(sf_lists), N_LEVEL2))
        for i, sfs in enumerate(sf_lists):
            for c in sfs:
                counts[i, int(c)] += 1.0
        return counts @ self.P[self.sf_emb.E], counts

    def _forward(self, ids, mask, sf_lists):
        P = self.P
        v, ce = self.encoder.forward(P, ids, mask)
        h = v
        counts = None
        if self.with_query_sf:
            bag, counts = self._bag(sf_lists)
            h = v + bag
        l1, c1 = self.head1.forward(P, h)
        l2, c2 = self.head2.forward(P, h)
        return l1, l2, (ce, counts, c1, c2)

    def loss(self, ids, mask, sf_lists, gold1, gold2):
        P, G = self.P, {}
        l1, l2, (ce, counts, c1, c2) = self._forward(ids, mask, sf_lists)
        loss1, d1 = softmax_xent(l1, gold1)
        loss2, d2 = softmax_xent(l2, gold2)
        dh = self.head1.backward(P, G, c1, d1) + self.head2.backward(P, G, c2, d2)
        if self.with_query_sf:
            G[self.sf_emb.E] = counts.T @ dh
        self.encoder.backward(P, G, ce, dh)
        return loss1 + loss2, G

    def probs(self, token_lists, sf_lists) -> tuple[np.ndarray, np.ndarray]:
        seqs = [self.vocab.encode(t) for t in token_lists]
        if any(len(s) == 0 for s in seqs):
            raise EmptyQuery("query has no tokens")
        ids, mask = pad_batch(seqs, PAD_ID)
        l1, l2, _ = self._forward(ids, mask, sf_lists)
        return softmax(l1), softmax(l2)

    def save(self, path) -> None:
        meta = {
            "config": self.config.to_dict(),
            "encoder": self.encoder.kind.value,
            "with_query_sf": self.with_query_sf,
            "vocab": self.vocab.tokens,
            "vocab_freqs": self.vocab.freqs,
        }
        save_model(path, self.KIND, meta, self.P)

    @classmethod
    def load(cls, path) -> "CfTModel":
        _, meta, params = load_model(path, cls.KIND)
        return cls(
            Vocabulary(meta["vocab"], meta["vocab_freqs"]),
            meta["encoder"],
            TrainConfig.from_dict(meta["config"]),
            meta["with_query_sf"],
            _param_set(params),
        )


def query_functions(pair: ConversationPair) -> list[int]:
    return [int(s.function.level2) for s in pair.query if s.function is not None]


def response_target(pair: ConversationPair) -> SentenceFunction:
    """Training/evaluation target: the first response segment's primary label."""
    sf = pair.response[0].function
    if sf is None:
        raise UnlabeledSegment("response has no sentence function")
    return sf


def train_cft(pairs: Iterable[ConversationPair], with_query_sf: bool = True,
              encoder: EncoderKind | str = EncoderKind.RNN,
              config: TrainConfig | None = None) -> CfTModel:
    config = config or TrainConfig()
    pairs = [p for p in pairs]
    if not pairs:
        raise EmptyCorpus("no conversation pairs to train on")
    tokens = [p.query_tokens() for p in pairs]
    sfs = [query_functions(p) for p in pairs]
    targets = [response_target(p) for p in pairs]
    gold1 = np.array([int(t.level1) for t in targets])
    gold2 = np.array([int(t.level2) for t in targets])

    tr, va = split_holdout(len(pairs), config.val_fraction, config.seed)
    vocab = build_vocab(tokens[i] for i in tr)
    model = CfTModel(vocab, encoder, config, with_query_sf)
    ids, mask = pad_batch([vocab.encode(t) for t in tokens], PAD_ID)
    if mask.sum(axis=1).min() == 0:
        raise EmptyQuery("a training query has no tokens")

    def batch(ix):
        T = int(mask[ix].sum(axis=1).max())
        return ids[ix, :T], mask[ix, :T], [sfs[i] for i in ix]

    def step(ix):
        j = tr[ix]
        b_ids, b_mask, b_sfs = batch(j)
        return model.loss(b_ids, b_mask, b_sfs, gold1[j], gold2[j])

    def val() -> float:
        b_ids, b_mask, b_sfs = batch(va)
        l1, l2, _ = model._forward(b_ids, b_mask, b_sfs)
        return 0.5 * (_accuracy(l1.argmax(axis=1), gold1[va]) + _accuracy(l2.argmax(axis=1), gold2[va]))

    model.history = fit(model.ps, len(tr), step, config, val if len(va) else None,
                        rng_salt=3, label="cft")
    return model


def predict_response_sf(model: CfTModel, query, query_sfs: Sequence | None = None):
    """(level-1 distribution, level-2 distribution) for the target response function.

    ``query`` is text, a token list, or a list of segments.  ``query_sfs`` may
    hold SentenceFunctions, Level2 values or codes; it is ignored by models
    trained without query functions, and treated as empty when omitted.
    """
    if isinstance(query, (list, tuple)) and query and isinstance(query[0], Segment):
        tokens = [t for s in query for t in _tokens_of(s)]
    else:
        tokens = _tokens_of(query)
    if not tokens:
        raise EmptyQuery("query has no tokens")
    codes = []
    for sf in query_sfs or ():
        codes.append(int(sf.level2) if isinstance(sf, SentenceFunction) else int(sf))
    p1, p2 = model.probs([tokens], [codes])
    return p1[0], p2[0]


def target_function(model: CfTModel, query, query_sfs=None, level: int = 2) -> int:
    """Argmax code of the predicted response function at ``level``."""
    p1, p2 = predict_response_sf(model, query, query_sfs)
    return int((p1 if level == 1 else p2).argmax())
