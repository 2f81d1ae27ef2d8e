"""Token vocabulary shared by the classifiers and the generators."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

VOCAB_HEADER = "#sefun-vocab v1"
PAD, UNK, BOS, EOS = "<PAD>", "<UNK>", "<BOS>", "<EOS>"
RESERVED = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3


class EmptyCorpus(ValueError):
    pass


@dataclass
class Vocabulary:
    tokens: list[str]
    freqs: list[int] = field(default_factory=list)
    coverage: float = 1.0

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        if not self.freqs:
            self.freqs = [0] * len(self.tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip and i == EOS_ID:
                break
            if strip and i in (PAD_ID, BOS_ID):
                continue
            out.append(self.tokens[i])
        return out

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(VOCAB_HEADER + "\n")
            for t, f in zip(self.tokens, self.freqs):
                fh.write(f"{t}\t{f}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            if fh.readline().rstrip("\n") != VOCAB_HEADER:
                raise ValueError(f"{path}: missing {VOCAB_HEADER!r} header")
            tokens, freqs = [], []
            for line in fh:
                tok, _, f = line.rstrip("\n").rpartition("\t")
                tokens.append(tok)
                freqs.append(int(f))
        return cls(tokens, freqs)


def build_vocab(sequences: Iterable[Iterable[str]], cap: int = 50000) -> Vocabulary:
    """Keep the ``cap`` most frequent tokens (ties broken by first occurrence).

    ``cap`` counts ordinary tokens; the four reserved tokens come on top.
    """
    counts: Counter = Counter()
    first: dict[str, int] = {}
    n_tokens = 0
    for seq in sequences:
        for t in seq:
            if t not in first:
                first[t] = len(first)
            counts[t] += 1
            n_tokens += 1
    if n_tokens == 0:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    ranked = sorted((t for t in counts if t not in RESERVED), key=lambda t: (-counts[t], first[t]))
    kept = ranked[:cap]
    covered = sum(counts[t] for t in kept)
    return Vocabulary(list(RESERVED) + kept, [0] * 4 + [counts[t] for t in kept], covered / n_tokens)
