"""Attention sequence-to-sequence generators, optionally conditioned on a
target sentence function, with greedy and beam-search decoding.

Decoder step ``t`` (previous token ``y``, previous state ``s``)::

    c, a   = attention(s, encoder states)
    s'     = GRU([emb(y); c; sf], s)        # sf block only when conditioned
    logits = W_out [s'; c] + b_out
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import ConversationPair
from .nncore import (
    Attention,
    BiGRU,
    Embedding,
    GRUCell,
    Linear,
    ParameterSet,
    TrainConfig,
    load_model,
    save_model,
    softmax_xent,
)
from .nncore.layers import log_softmax
from .nncore.train import fit, pad_batch
from .taxonomy import SentenceFunction, n_classes
from .vocab import BOS_ID, EOS_ID, PAD_ID, UNK_ID, EmptyCorpus, Vocabulary, build_vocab

log = logging.getLogger(__name__)

DEFAULT_MAX_LEN = 30


class MissingSentenceFunction(ValueError):
    pass


def _sf_code(sf, level: int) -> int:
    if isinstance(sf, SentenceFunction):
        return sf.at_level(level)
    return int(sf)


class Seq2SeqModel:
    KIND = "seq2seq"

    def __init__(self, vocab: Vocabulary, config: TrainConfig, conditioned: bool = False,
                 sf_level: int = 2, allow_unk: bool = True, ps: ParameterSet | None = None):
        self.vocab = vocab
        self.config = config
        self.conditioned = bool(conditioned)
        self.sf_level = int(sf_level)
        self.allow_unk = bool(allow_unk)
        V, E, H = len(vocab), config.embedding_dim, config.hidden_dim
        self.enc_emb = Embedding("gen.enc_emb", V, E)
        self.dec_emb = Embedding("gen.dec_emb", V, E)
        self.encoder = BiGRU("gen.enc", E, H)
        self.init_state = Linear("gen.init", 2 * H, H)
        self.att = Attention("gen.att", H, 2 * H, H)
        blocks = {"word": E, "ctx": 2 * H}
        if self.conditioned:
            blocks["sf"] = E
        self.dec = GRUCell("gen.dec", blocks, H)
        self.sf_emb = Embedding("gen.sf", n_classes(self.sf_level), E) if self.conditioned else None
        self.out = Linear("gen.out", 3 * H, V)
        if ps is None:
            ps = ParameterSet()
            for layer in (self.enc_emb, self.dec_emb, self.encoder, self.init_state, self.att,
                          self.dec, self.out):
                layer.init(ps, config.seed)
            if self.sf_emb:
                self.sf_emb.init(ps, config.seed)
        self.ps = ps

    @property
    def P(self) -> dict:
        return self.ps.params

    # encoder --------------------------------------------------------------

    def encode(self, src_ids, src_mask):
        P = self.P
        X, ce = self.enc_emb.forward(P, src_ids)
        Hm, final, cenc = self.encoder.forward(P, X, src_mask)
        a0, cinit = self.init_state.forward(P, final)
        s0 = np.tanh(a0)
        keys = self.att.keys(P, Hm)
        return Hm, keys, s0, (ce, cenc, cinit, s0)

    def _sf_vectors(self, sf_codes, n):
        if not self.conditioned:
            return None, None
        if sf_codes is None:
            raise MissingSentenceFunction("a conditioned model needs a target sentence function")
        codes = np.broadcast_to(np.asarray(sf_codes, dtype=np.int64), (n,))
        vec, c = self.sf_emb.forward(self.P, codes)
        return vec, c

    def step(self, prev_ids, s, Hm, keys, mask, sf_vec):
        P = self.P
        ctx, a, catt = self.att.forward(P, s, Hm, keys, mask)
        w, cw = self.dec_emb.forward(P, prev_ids)
        xs = {"word": w, "ctx": ctx}
        if self.conditioned:
            xs["sf"] = sf_vec
        xp = self.dec.project(P, xs)
        s_new, cg = self.dec.step(P, xp, s)
        logits, co = self.out.forward(P, np.concatenate([s_new, ctx], axis=1))
        return logits, s_new, a, (catt, cw, xs, cg, co)

    # training -------------------------------------------------------------

    def loss(self, src_ids, src_mask, tgt_in, tgt_out, tgt_mask, sf_codes=None):
        """Mean token cross-entropy under teacher forcing, plus gradients."""
        P, G = self.P, {}
        B, T = tgt_in.shape
        H = self.config.hidden_dim
        Hm, keys, s, (ce, cenc, cinit, s0) = self.encode(src_ids, src_mask)
        sf_vec, csf = self._sf_vectors(sf_codes, B)
        weights = tgt_mask.reshape(-1)
        caches, logits_all = [], []
        for t in range(T):
            logits, s, _, c = self.step(tgt_in[:, t], s, Hm, keys, src_mask, sf_vec)
            caches.append(c)
            logits_all.append(logits)
        logits_all = np.stack(logits_all, axis=1).reshape(B * T, -1)
        loss, dlog = softmax_xent(logits_all, tgt_out.reshape(-1), weights)
        dlog = dlog.reshape(B, T, -1)

        dHm = np.zeros_like(Hm)
        dkeys = np.zeros_like(keys)
        dsf = np.zeros_like(sf_vec) if self.conditioned else None
        ds = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            catt, cw, xs, cg, co = caches[t]
            dcat = self.out.backward(P, G, co, dlog[:, t])
            ds = ds + dcat[:, :H]
            dctx = dcat[:, H:]
            dxp, ds = self.dec.step_backward(P, G, cg, ds)
            dxs = self.dec.project_backward(P, G, xs, dxp)
            self.dec_emb.backward(P, G, cw, dxs["word"])
            if self.conditioned:
                dsf += dxs["sf"]
            dq, dH_att, dk = self.att.backward(P, G, catt, dctx + dxs["ctx"])
            ds = ds + dq
            dHm += dH_att
            dkeys += dk
        if self.conditioned:
            self.sf_emb.backward(P, G, csf, dsf)
        dHm += self.att.keys_backward(P, G, Hm, dkeys)
        dfinal = self.init_state.backward(P, G, cinit, ds * (1.0 - s0 * s0))
        dX = self.encoder.backward(P, G, cenc, dHm, dfinal)
        self.enc_emb.backward(P, G, ce, dX)
        return loss, G

    # decoding -------------------------------------------------------------

    def _mask_logp(self, lp):
        lp[:, PAD_ID] = -np.inf
        lp[:, BOS_ID] = -np.inf
        if not self.allow_unk:
            lp[:, UNK_ID] = -np.inf
        return lp

    def _prepare(self, query_tokens, target_sf):
        src = self.vocab.encode(query_tokens)
        if not src:
            raise ValueError("cannot decode from an empty query")
        if self.conditioned and target_sf is None:
            raise MissingSentenceFunction("a conditioned model needs a target sentence function")
        if not self.conditioned and target_sf is not None:
            raise ValueError("target_sf given to an unconditioned model")
        ids, mask = pad_batch([src])
        Hm, keys, s0, _ = self.encode(ids, mask)
        code = _sf_code(target_sf, self.sf_level) if self.conditioned else None
        return Hm, keys, s0, mask, code

    def next_logp(self, prev, s, Hm, keys, mask, code):
        n = len(prev)
        sf_vec, _ = self._sf_vectors(code, n) if self.conditioned else (None, None)
        logits, s_new, a, _ = self.step(np.asarray(prev), s, np.repeat(Hm, n, 0),
                                        np.repeat(keys, n, 0), np.repeat(mask, n, 0), sf_vec)
        return self._mask_logp(log_softmax(logits)), s_new, a

    def save(self, path) -> None:
        meta = {
            "config": self.config.to_dict(),
            "conditioned": self.conditioned,
            "sf_level": self.sf_level,
            "allow_unk": self.allow_unk,
            "vocab": self.vocab.tokens,
            "vocab_freqs": self.vocab.freqs,
        }
        save_model(path, self.KIND, meta, self.P)

    @classmethod
    def load(cls, path) -> "Seq2SeqModel":
        _, meta, params = load_model(path, cls.KIND)
        ps = ParameterSet()
        for k in sorted(params):
            ps.add(k, params[k])
        return cls(Vocabulary(meta["vocab"], meta["vocab_freqs"]), TrainConfig.from_dict(meta["config"]),
                   meta["conditioned"], meta["sf_level"], meta["allow_unk"], ps)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logp: float
    finished: bool

    @property
    def score(self) -> float:
        """Length-normalised log-probability (EOS counts as a token)."""
        return self.logp / max(len(self.tokens), 1)

    def sort_key(self):
        return (-self.score, self.tokens)


@dataclass
class DecodeResult:
    tokens: list[str]
    hypothesis: Hypothesis
    nbest: list[Hypothesis]
    attention: list[np.ndarray]

    @property
    def text(self) -> str:
        return detokenize(self.tokens)


def detokenize(tokens: Sequence[str]) -> str:
    out = []
    for t in tokens:
        if out and t.isascii() and t[:1].isalnum() and out[-1][-1:].isascii() and out[-1][-1:].isalnum():
            out.append(" ")
        out.append(t)
    return "".join(out)


def greedy_decode(model: Seq2SeqModel, query_tokens: Sequence[str], target_sf=None,
                  max_len: int = DEFAULT_MAX_LEN) -> DecodeResult:
    Hm, keys, s, mask, code = model._prepare(query_tokens, target_sf)
    prev, toks, logp, atts = BOS_ID, [], 0.0, []
    for _ in range(max_len):
        lp, s, a = model.next_logp([prev], s, Hm, keys, mask, code)
        nxt = int(np.argmax(lp[0]))
        logp += float(lp[0, nxt])
        toks.append(nxt)
        atts.append(a[0])
        if nxt == EOS_ID:
            break
        prev = nxt
    hyp = Hypothesis(tuple(toks), logp, toks[-1] == EOS_ID)
    return DecodeResult(model.vocab.decode(toks), hyp, [hyp], atts)


def beam_search(model: Seq2SeqModel, query_tokens: Sequence[str], target_sf=None, beam: int = 5,
                max_len: int = DEFAULT_MAX_LEN) -> DecodeResult:
    """Beam search ranked by length-normalised log-probability.

    Each step keeps the ``beam`` best expansions by cumulative log-prob
    (ties: lexicographic token ids); expansions ending in EOS leave the beam.
    Hypotheses still open at ``max_len`` are closed there.  The greedy
    hypothesis always competes in the final ranking, so the result never
    scores below greedy decoding.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    Hm, keys, s0, mask, code = model._prepare(query_tokens, target_sf)
    live = [Hypothesis((), 0.0, False)]
    states = s0
    finished: list[Hypothesis] = []
    for step in range(max_len):
        prev = [h.tokens[-1] if h.tokens else BOS_ID for h in live]
        lp, s_new, _ = model.next_logp(prev, states, Hm, keys, mask, code)
        cands = []
        for i, h in enumerate(live):
            row = lp[i]
            for tok in np.flatnonzero(np.isfinite(row)):
                cands.append((h.logp + float(row[tok]), h.tokens + (int(tok),), i))
        cands.sort(key=lambda c: (-c[0], c[1]))
        nxt, rows = [], []
        for logp, toks, i in cands[:beam]:
            done = toks[-1] == EOS_ID
            hyp = Hypothesis(toks, logp, done)
            if done or step == max_len - 1:
                finished.append(hyp)
            else:
                nxt.append(hyp)
                rows.append(i)
        if not nxt:
            break
        live, states = nxt, s_new[rows]
    greedy = greedy_decode(model, query_tokens, target_sf, max_len)
    pool = {h.tokens: h for h in finished}
    # same tokens scored batched vs single-row can differ in the last ulp
    pool[greedy.hypothesis.tokens] = greedy.hypothesis
    ranked = sorted(pool.values(), key=Hypothesis.sort_key)
    best = ranked[0]
    return DecodeResult(model.vocab.decode(best.tokens), best, ranked, [])


def sequence_logp(model: Seq2SeqModel, query_tokens, out_ids: Sequence[int], target_sf=None) -> float:
    """Log-probability the model assigns to ``out_ids`` (scoring helper)."""
    Hm, keys, s, mask, code = model._prepare(query_tokens, target_sf)
    prev, total = BOS_ID, 0.0
    for tok in out_ids:
        lp, s, _ = model.next_logp([prev], s, Hm, keys, mask, code)
        total += float(lp[0, tok])
        prev = tok
    return total


# ---------------------------------------------------------------------------
# Training


@dataclass
class GenExample:
    query: list[str]
    response: list[str]
    sf: int | None = None


def examples_from_pairs(pairs: Iterable[ConversationPair], sf_level: int | None = None) -> list[GenExample]:
    out = []
    for p in pairs:
        sf = None
        if sf_level is not None:
            fn = p.response[0].function
            if fn is None:
                raise MissingSentenceFunction(f"pair {p.source!r} has no response sentence function")
            sf = fn.at_level(sf_level)
        out.append(GenExample(p.query_tokens(), p.response_tokens(), sf))
    return out


def _train(examples: list[GenExample], config: TrainConfig, conditioned: bool, sf_level: int,
           vocab: Vocabulary | None, cap: int) -> Seq2SeqModel:
    if not examples:
        raise EmptyCorpus("no training pairs")
    if conditioned and any(e.sf is None for e in examples):
        raise MissingSentenceFunction("every pair needs a response sentence function")
    if vocab is None:
        vocab = build_vocab((t for e in examples for t in (e.query, e.response)), cap)
    src = [vocab.encode(e.query) for e in examples]
    tgt = [vocab.encode(e.response) for e in examples]
    allow_unk = any(UNK_ID in t for t in tgt)
    model = Seq2SeqModel(vocab, config, conditioned, sf_level, allow_unk)
    codes = np.array([e.sf if e.sf is not None else 0 for e in examples])

    def batch(ix):
        s_ids, s_mask = pad_batch([src[i] for i in ix])
        t_in, t_mask = pad_batch([[BOS_ID] + tgt[i] for i in ix])
        t_out, _ = pad_batch([tgt[i] + [EOS_ID] for i in ix])
        return s_ids, s_mask, t_in, t_out, t_mask, (codes[ix] if conditioned else None)

    def step(ix):
        return model.loss(*batch(ix))

    model.initial_loss = model.loss(*batch(np.arange(min(len(examples), 256))))[0]
    model.history = fit(model.ps, len(examples), step, config, None, rng_salt=5, label="gen")
    return model


def train_seq2seq(pairs_or_examples, config: TrainConfig | None = None, vocab: Vocabulary | None = None,
                  cap: int = 50000) -> Seq2SeqModel:
    config = config or TrainConfig()
    ex = _as_examples(pairs_or_examples, None)
    for e in ex:
        e.sf = None
    return _train(ex, config, False, 2, vocab, cap)


def train_cseq2seq(pairs_or_examples, config: TrainConfig | None = None, sf_level: int = 2,
                   vocab: Vocabulary | None = None, cap: int = 50000) -> Seq2SeqModel:
    config = config or TrainConfig()
    return _train(_as_examples(pairs_or_examples, sf_level), config, True, sf_level, vocab, cap)


def _as_examples(items, sf_level) -> list[GenExample]:
    items = list(items)
    if items and isinstance(items[0], ConversationPair):
        return examples_from_pairs(items, sf_level)
    return [GenExample(list(e.query), list(e.response), e.sf) for e in items]
