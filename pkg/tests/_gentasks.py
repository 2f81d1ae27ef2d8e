"""Toy generation tasks shared by the generator tests and the acceptance run."""
import numpy as np

from sefun.generate import GenExample, greedy_decode
from sefun.nncore import TrainConfig

SYMBOLS = [chr(ord("a") + i) for i in range(10)]


def copy_examples(n=50, seed=0, lo=3, hi=6):
    rng = np.random.default_rng([seed, 11])
    out = []
    for _ in range(n):
        seq = [SYMBOLS[i] for i in rng.integers(0, len(SYMBOLS), size=int(rng.integers(lo, hi + 1)))]
        out.append(GenExample(seq, list(seq)))
    return out


COPY_CONFIG = TrainConfig.desk(hidden_dim=32, emb_dim=16, learning_rate=0.01, max_epochs=100, batch_size=10, seed=0)


def exact_match(model, examples, decode=greedy_decode, **kw):
    return sum(decode(model, e.query, **kw).tokens == e.response for e in examples) / len(examples)


def random_queries(n, seed=0):
    rng = np.random.default_rng([seed, 12])
    return [[SYMBOLS[i] for i in rng.integers(0, len(SYMBOLS), size=int(rng.integers(1, 8)))] for _ in range(n)]
