"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# loss_fn(P) -> (loss, grads, signature).  ``signature`` identifies the
# piecewise-smooth region (e.g. max-pool argmaxes); a coordinate whose +h and
# -h probes land in different regions straddles a kink and is excluded.
# Relative errors use max(|a|+|b|, 1e-6) as denominator so that gradients
# near zero are compared absolutely.
LossFn = Callable[[dict], tuple]


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    n_excluded: int
    worst: str = ""

    def passed(self, tol: float) -> bool:
        return self.n_checked > 0 and self.max_rel_error < tol


def rel_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a) + abs(b), floor)


def finite_difference_check(loss_fn: LossFn, P: dict[str, np.ndarray], names=None,
                            h: float = 1e-5, max_per_param: int | None = None,
                            seed: int = 0) -> GradCheckResult:
    """Compare analytic gradients with central differences, entry by entry.

    ``max_per_param`` samples that many entries per tensor (deterministically
    from ``seed``) instead of checking all of them.
    """
    _, grads, sig0 = loss_fn(P)
    names = sorted(P) if names is None else list(names)
    rng = np.random.default_rng(seed)
    worst, worst_at, checked, excluded = 0.0, "", 0, 0
    for name in names:
        arr = P[name]
        g = grads.get(name, np.zeros_like(arr))
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(rng.choice(flat.size, size=max_per_param, replace=False))
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            lp, _, sp = loss_fn(P)
            flat[i] = old - h
            lm, _, sm = loss_fn(P)
            flat[i] = old
            if not (_same(sp, sig0) and _same(sm, sig0)):
                excluded += 1
                continue
            num = (lp - lm) / (2 * h)
            err = rel_error(float(g.reshape(-1)[i]), num)
            checked += 1
            if err > worst:
                worst, worst_at = err, f"{name}[{i}]"
    return GradCheckResult(worst, checked, excluded, worst_at)


def _same(a, b) -> bool:
    if a is None and b is None:
        return True
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return bool(np.array_equal(a, b))
