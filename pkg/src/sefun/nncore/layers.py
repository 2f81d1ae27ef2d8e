"""Layers with hand-written backward passes.

Every layer is a small descriptor holding parameter names and sizes.  The
arrays themselves live in a plain ``dict`` (``P``) and gradients are
accumulated into a second dict (``G``) with the same keys, so the same code
serves training, inference and finite-difference checks.

Batched inputs use shape (batch, time, features) with a 0/1 ``mask`` of
shape (batch, time); valid positions always come first.
"""
from __future__ import annotations

import numpy as np

from .params import ParameterSet, init_uniform


class EmptySequence(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


def _acc(G: dict, name: str, value: np.ndarray) -> None:
    if name in G:
        G[name] += value
    else:
        G[name] = value.copy()


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# softmax / cross-entropy


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("softmax received non-finite logits")
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("log_softmax received non-finite logits")
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


PROB_FLOOR = 1e-300


def cross_entropy(probs: np.ndarray, gold) -> float:
    """Mean negative log-likelihood of ``gold`` indices under ``probs``."""
    probs = np.atleast_2d(probs)
    gold = np.atleast_1d(np.asarray(gold))
    picked = probs[np.arange(len(gold)), gold]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def softmax_xent(logits: np.ndarray, gold: np.ndarray, weights: np.ndarray | None = None):
    """Loss and d(loss)/d(logits) for rows of ``logits``.

    ``weights`` (same length as ``gold``) scales each row's contribution;
    the loss is the weighted sum divided by the total weight.
    """
    n = logits.shape[0]
    if weights is None:
        weights = np.ones(n)
    total = float(weights.sum())
    if total == 0:
        return 0.0, np.zeros_like(logits)
    lp = log_softmax(logits)
    rows = np.arange(n)
    loss = float(-np.sum(weights * lp[rows, gold]) / total)
    d = np.exp(lp)
    d[rows, gold] -= 1.0
    d *= (weights / total)[:, None]
    return loss, d


# ---------------------------------------------------------------------------
# Embedding and Linear


class Embedding:
    def __init__(self, name: str, n_rows: int, dim: int):
        self.name, self.n_rows, self.dim = name, n_rows, dim
        self.E = f"{name}.E"

    def init(self, ps: ParameterSet, seed: int) -> None:
        ps.add(self.E, init_uniform((self.n_rows, self.dim), seed, self.E))

    def forward(self, P, ids):
        ids = np.asarray(ids)
        return P[self.E][ids], ids

    def backward(self, P, G, ids, dout) -> None:
        dE = np.zeros_like(P[self.E])
        np.add.at(dE, ids.reshape(-1), dout.reshape(-1, self.dim))
        _acc(G, self.E, dE)


class Linear:
    def __init__(self, name: str, n_in: int, n_out: int, bias: bool = True):
        self.name, self.n_in, self.n_out, self.bias = name, n_in, n_out, bias
        self.W = f"{name}.W"
        self.b = f"{name}.b"

    def init(self, ps: ParameterSet, seed: int) -> None:
        ps.add(self.W, init_uniform((self.n_in, self.n_out), seed, self.W))
        if self.bias:
            ps.add(self.b, init_uniform((self.n_out,), seed, self.b))

    def forward(self, P, x):
        y = x @ P[self.W]
        if self.bias:
            y = y + P[self.b]
        return y, x

    def backward(self, P, G, x, dy):
        x2 = x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        _acc(G, self.W, x2.T @ dy2)
        if self.bias:
            _acc(G, self.b, dy2.sum(axis=0))
        return dy @ P[self.W].T


# ---------------------------------------------------------------------------
# GRU


class GRUCell:
    """GRU cell whose input may arrive as several named blocks.

    Each block has its own input weight matrix (``<name>.Wx.<block>``), so a
    block can be added to an existing architecture without disturbing the
    initial values of the others.

        z = sigma(x Wz + h Uz + bz)
        r = sigma(x Wr + h Ur + br)
        n = tanh(x Wn + bn + r * (h Un + cn))
        h' = (1 - z) * n + z * h
    """

    def __init__(self, name: str, input_dims: dict[str, int], hidden: int):
        self.name, self.input_dims, self.H = name, dict(input_dims), hidden
        self.Wx = {blk: f"{name}.Wx.{blk}" for blk in self.input_dims}
        self.bx = f"{name}.bx"
        self.Wh = f"{name}.Wh"
        self.bh = f"{name}.bh"

    def init(self, ps: ParameterSet, seed: int) -> None:
        H = self.H
        for blk, d in self.input_dims.items():
            ps.add(self.Wx[blk], init_uniform((d, 3 * H), seed, self.Wx[blk]))
        ps.add(self.bx, init_uniform((3 * H,), seed, self.bx))
        ps.add(self.Wh, init_uniform((H, 3 * H), seed, self.Wh))
        ps.add(self.bh, init_uniform((3 * H,), seed, self.bh))

    def project(self, P, xs: dict[str, np.ndarray]) -> np.ndarray:
        out = P[self.bx]
        for blk in self.input_dims:
            out = out + xs[blk] @ P[self.Wx[blk]]
        return out

    def project_backward(self, P, G, xs, dxp) -> dict[str, np.ndarray]:
        dxp2 = dxp.reshape(-1, 3 * self.H)
        _acc(G, self.bx, dxp2.sum(axis=0))
        dxs = {}
        for blk, d in self.input_dims.items():
            _acc(G, self.Wx[blk], xs[blk].reshape(-1, d).T @ dxp2)
            dxs[blk] = dxp @ P[self.Wx[blk]].T
        return dxs

    def step(self, P, xp: np.ndarray, h: np.ndarray, m: np.ndarray | None = None):
        """One step from a projected input ``xp`` (batch, 3H)."""
        H = self.H
        hp = h @ P[self.Wh] + P[self.bh]
        z = sigmoid(xp[:, :H] + hp[:, :H])
        r = sigmoid(xp[:, H:2 * H] + hp[:, H:2 * H])
        n = np.tanh(xp[:, 2 * H:] + r * hp[:, 2 * H:])
        h_new = (1.0 - z) * n + z * h
        if m is not None:
            h_new = m[:, None] * h_new + (1.0 - m[:, None]) * h
        return h_new, (h, hp, z, r, n, m)

    def step_backward(self, P, G, cache, dh_new):
        """Return (d xp, d h_prev); parameter grads go to ``G``."""
        h, hp, z, r, n, m = cache
        H = self.H
        if m is not None:
            dh_pass = (1.0 - m[:, None]) * dh_new
            dh_new = m[:, None] * dh_new
        else:
            dh_pass = 0.0
        dn = dh_new * (1.0 - z)
        dz = dh_new * (h - n)
        dh = dh_new * z + dh_pass
        da_n = dn * (1.0 - n * n)
        dr = da_n * hp[:, 2 * H:]
        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        dxp = np.concatenate([da_z, da_r, da_n], axis=1)
        dhp = np.concatenate([da_z, da_r, da_n * r], axis=1)
        _acc(G, self.Wh, h.T @ dhp)
        _acc(G, self.bh, dhp.sum(axis=0))
        dh = dh + dhp @ P[self.Wh].T
        return dxp, dh

    def run(self, P, X: np.ndarray, mask: np.ndarray, h0: np.ndarray | None = None):
        """Run over (B, T, D) input with a single block named ``"x"``."""
        B, T, _ = X.shape
        XP = self.project(P, {"x": X})
        h = np.zeros((B, self.H)) if h0 is None else h0
        states = np.empty((B, T, self.H))
        caches = []
        for t in range(T):
            h, c = self.step(P, XP[:, t], h, mask[:, t])
            states[:, t] = h
            caches.append(c)
        return states, h, (X, caches)

    def run_backward(self, P, G, cache, dstates: np.ndarray | None, dh_final: np.ndarray):
        X, caches = cache
        B, T, _ = X.shape
        dXP = np.empty((B, T, 3 * self.H))
        dh = dh_final.copy()
        for t in range(T - 1, -1, -1):
            if dstates is not None:
                dh = dh + dstates[:, t]
            dxp, dh = self.step_backward(P, G, caches[t], dh)
            dXP[:, t] = dxp
        dX = self.project_backward(P, G, {"x": X}, dXP)["x"]
        return dX, dh


def reverse_index(mask: np.ndarray) -> np.ndarray:
    """Per-row index that reverses the valid prefix and leaves padding in place."""
    B, T = mask.shape
    lengths = mask.sum(axis=1).astype(int)
    t = np.arange(T)[None, :]
    return np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)


def _gather_time(X, idx):
    return np.take_along_axis(X, idx[:, :, None], axis=1)


class BiGRU:
    """Bidirectional GRU encoder.

    ``forward`` returns per-position states (B, T, 2H) and a sentence vector
    made by projecting the concatenated final forward/backward states to
    ``out_dim``.
    """

    def __init__(self, name: str, n_in: int, hidden: int, out_dim: int | None = None):
        self.name, self.n_in, self.H = name, n_in, hidden
        self.fwd = GRUCell(f"{name}.fwd", {"x": n_in}, hidden)
        self.bwd = GRUCell(f"{name}.bwd", {"x": n_in}, hidden)
        self.proj = Linear(f"{name}.proj", 2 * hidden, out_dim) if out_dim else None

    def init(self, ps: ParameterSet, seed: int) -> None:
        self.fwd.init(ps, seed)
        self.bwd.init(ps, seed)
        if self.proj:
            self.proj.init(ps, seed)

    def forward(self, P, X, mask):
        if X.shape[1] == 0 or not np.all(mask.sum(axis=1) > 0):
            raise EmptySequence("BiGRU needs at least one token per row")
        ridx = reverse_index(mask)
        Sf, hf, cf = self.fwd.run(P, X, mask)
        Sb_rev, hb, cb = self.bwd.run(P, _gather_time(X, ridx), mask)
        Sb = _gather_time(Sb_rev, ridx)
        states = np.concatenate([Sf, Sb], axis=2)
        final = np.concatenate([hf, hb], axis=1)
        vec, cp = self.proj.forward(P, final) if self.proj else (final, None)
        return states, vec, (ridx, cf, cb, cp)

    def backward(self, P, G, cache, dstates, dvec):
        ridx, cf, cb, cp = cache
        H = self.H
        dfinal = self.proj.backward(P, G, cp, dvec) if self.proj else dvec
        if dstates is None:
            dSf = dSb_rev = None
        else:
            dSf = dstates[:, :, :H]
            dSb_rev = _gather_time(dstates[:, :, H:], ridx)
        dXf, _ = self.fwd.run_backward(P, G, cf, dSf, dfinal[:, :H])
        dXb_rev, _ = self.bwd.run_backward(P, G, cb, dSb_rev, dfinal[:, H:])
        return dXf + _gather_time(dXb_rev, ridx)


# ---------------------------------------------------------------------------
# CNN


def split_filters(total: int, n: int) -> list[int]:
    base, extra = divmod(total, n)
    return [base + (1 if i < extra else 0) for i in range(n)]


class CNNEncoder:
    """Multi-width 1-D convolution, tanh, max-over-time pooling, concatenation.

    Filter counts are split across widths so the pooled vector has exactly
    ``out_dim`` entries.  Rows shorter than a filter are zero-padded.
    """

    def __init__(self, name: str, n_in: int, out_dim: int, widths=(1, 2, 3)):
        self.name, self.n_in, self.out_dim = name, n_in, out_dim
        self.widths = tuple(widths)
        self.counts = split_filters(out_dim, len(self.widths))
        if min(self.counts) == 0:
            raise ValueError("out_dim must be at least the number of filter widths")
        self.convs = [
            Linear(f"{name}.conv{w}", w * n_in, f) for w, f in zip(self.widths, self.counts)
        ]

    def init(self, ps: ParameterSet, seed: int) -> None:
        for c in self.convs:
            c.init(ps, seed)

    def forward(self, P, X, mask):
        lengths = mask.sum(axis=1).astype(int)
        if X.shape[1] == 0 or lengths.min() <= 0:
            raise EmptySequence("CNN encoder needs at least one token per row")
        B, T, D = X.shape
        Tp = max(T, max(self.widths))
        Xp = np.zeros((B, Tp, D))
        Xp[:, :T] = X * mask[:, :, None]
        outs, caches, ties = [], [], False
        for w, conv in zip(self.widths, self.convs):
            nwin = Tp - w + 1
            win = np.stack([Xp[:, t:t + w].reshape(B, w * D) for t in range(nwin)], axis=1)
            a, _ = conv.forward(P, win)
            act = np.tanh(a)
            valid = np.arange(nwin)[None, :] < np.maximum(lengths, w)[:, None] - w + 1
            masked = np.where(valid[:, :, None], act, -np.inf)
            arg = masked.argmax(axis=1)  # (B, F)
            pooled = np.take_along_axis(act, arg[:, None, :], axis=1)[:, 0]
            n_at_max = (masked == pooled[:, None, :]).sum(axis=1)
            ties = ties or bool(np.any(n_at_max > 1))
            outs.append(pooled)
            caches.append((win, act, arg, nwin))
        return np.concatenate(outs, axis=1), (X.shape, Tp, caches, ties, mask)

    @staticmethod
    def has_tie(cache) -> bool:
        return cache[3]

    def backward(self, P, G, cache, dvec):
        (B, T, D), Tp, caches, _, mask = cache
        dXp = np.zeros((B, Tp, D))
        off = 0
        for (w, conv), (win, act, arg, nwin) in zip(zip(self.widths, self.convs), caches):
            f = conv.n_out
            dpool = dvec[:, off:off + f]
            off += f
            dact = np.zeros_like(act)
            np.put_along_axis(dact, arg[:, None, :], dpool[:, None, :], axis=1)
            da = dact * (1.0 - act * act)
            dwin = conv.backward(P, G, win, da)
            for t in range(nwin):
                dXp[:, t:t + w] += dwin[:, t].reshape(B, w, D)
        return dXp[:, :T] * mask[:, :, None]


# ---------------------------------------------------------------------------
# Additive attention


class Attention:
    """Additive (concat-score) attention.

        score_t = v . tanh(s Ws + k_t),   k_t = h_t Wk + b
        a = softmax(score over valid t),  context = sum_t a_t h_t

    Keys depend only on the encoder states, so callers compute them once per
    sequence with :meth:`keys` and push their gradient back with
    :meth:`keys_backward`.
    """

    def __init__(self, name: str, query_dim: int, mem_dim: int, att_dim: int):
        self.name, self.q_dim, self.m_dim, self.A = name, query_dim, mem_dim, att_dim
        self.Ws = f"{name}.Ws"
        self.Wk = f"{name}.Wk"
        self.b = f"{name}.b"
        self.v = f"{name}.v"

    def init(self, ps: ParameterSet, seed: int) -> None:
        ps.add(self.Ws, init_uniform((self.q_dim, self.A), seed, self.Ws))
        ps.add(self.Wk, init_uniform((self.m_dim, self.A), seed, self.Wk))
        ps.add(self.b, init_uniform((self.A,), seed, self.b))
        ps.add(self.v, init_uniform((self.A,), seed, self.v))

    def keys(self, P, Hm):
        return Hm @ P[self.Wk] + P[self.b]

    def keys_backward(self, P, G, Hm, dkeys):
        _acc(G, self.Wk, Hm.reshape(-1, self.m_dim).T @ dkeys.reshape(-1, self.A))
        _acc(G, self.b, dkeys.reshape(-1, self.A).sum(axis=0))
        return dkeys @ P[self.Wk].T

    def forward(self, P, s, Hm, keys, mask):
        if Hm.shape[1] == 0:
            raise EmptySequence("attention over an empty memory")
        u = np.tanh((s @ P[self.Ws])[:, None, :] + keys)  # (B, T, A)
        scores = u @ P[self.v]
        scores = np.where(mask > 0, scores, -np.inf)
        scores = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        a = e / e.sum(axis=1, keepdims=True)
        ctx = np.einsum("bt,btd->bd", a, Hm)
        return ctx, a, (s, Hm, u, a)

    def backward(self, P, G, cache, dctx, da_extra=None):
        """Return (d s, d Hm, d keys)."""
        s, Hm, u, a = cache
        da = np.einsum("bd,btd->bt", dctx, Hm)
        if da_extra is not None:
            da = da + da_extra
        dHm = a[:, :, None] * dctx[:, None, :]
        dscore = a * (da - np.sum(da * a, axis=1, keepdims=True))
        _acc(G, self.v, np.einsum("bt,bta->a", dscore, u))
        du = dscore[:, :, None] * P[self.v]
        dpre = du * (1.0 - u * u)
        dkeys = dpre
        dq = dpre.sum(axis=1)  # (B, A)
        _acc(G, self.Ws, s.T @ dq)
        ds = dq @ P[self.Ws].T
        return ds, dHm, dkeys
