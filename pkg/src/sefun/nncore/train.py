"""Small helpers shared by the training loops."""
from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from .params import ParameterSet, TrainConfig, adam_step, clip_gradients

log = logging.getLogger(__name__)


def pad_batch(seqs: list[list[int]], pad_id: int = 0, min_len: int = 1):
    """Right-pad id lists into (B, T) ids and a float 0/1 mask."""
    T = max(min_len, max((len(s) for s in seqs), default=0))
    ids = np.full((len(seqs), T), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), T))
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = 1.0
    return ids, mask


def minibatches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def split_holdout(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (train, held-out) index split."""
    order = np.random.default_rng([seed, 7919]).permutation(n)
    k = int(round(n * fraction))
    if n - k < 1:
        k = n - 1
    return np.sort(order[k:]), np.sort(order[:k])


def fit(ps: ParameterSet, n: int, batch_loss: Callable[[np.ndarray], tuple[float, dict]],
        config: TrainConfig, evaluate: Callable[[], float] | None = None,
        frozen: frozenset[str] = frozenset(), rng_salt: int = 0, label: str = "train") -> list[float]:
    """Adam training with global-norm clipping and optional early stopping.

    ``batch_loss(indices)`` returns the mean loss and gradients for a batch.
    With ``evaluate`` (higher is better) training stops once it has not
    improved for ``config.patience`` epochs and the best weights are kept.
    Returns the per-epoch mean training losses.
    """
    rng = np.random.default_rng([config.seed, rng_salt])
    history: list[float] = []
    best, best_snap, bad = -np.inf, None, 0
    for epoch in range(config.max_epochs):
        total, count = 0.0, 0
        for idx in minibatches(n, config.batch_size, rng):
            loss, grads = batch_loss(idx)
            grads = {k: g for k, g in grads.items() if k not in frozen}
            adam_step(ps, clip_gradients(grads, config.clip), config)
            total += loss * len(idx)
            count += len(idx)
        history.append(total / max(count, 1))
        if evaluate is None:
            log.debug("%s epoch %d loss %.6f", label, epoch + 1, history[-1])
            continue
        score = evaluate()
        log.debug("%s epoch %d loss %.6f val %.4f", label, epoch + 1, history[-1], score)
        if score > best:
            best, best_snap, bad = score, ps.snapshot(), 0
        else:
            bad += 1
            if bad >= config.patience:
                break
        if best >= 1.0:
            break
    if best_snap is not None:
        ps.restore(best_snap)
    return history
