"""Parameter storage, initialisation, Adam and gradient clipping."""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

INIT_RANGE = 0.1


class ShapeMismatch(ValueError):
    pass


@dataclass
class TrainConfig:
    hidden_dim: int = 1024
    batch_size: int = 128
    learning_rate: float = 1e-4
    clip: float = 5.0
    seed: int = 0
    max_epochs: int = 30
    emb_dim: int = 0  # 0 means "same as hidden_dim"
    patience: int = 3
    val_fraction: float = 0.1
    cnn_widths: tuple[int, ...] = (1, 2, 3)
    # Adam constants
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.cnn_widths = tuple(int(w) for w in self.cnn_widths)
        for name in ("hidden_dim", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.clip <= 0:
            raise ValueError("learning_rate and clip must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.emb_dim < 0 or not self.cnn_widths or min(self.cnn_widths) <= 0:
            raise ValueError("invalid emb_dim or cnn_widths")

    @property
    def embedding_dim(self) -> int:
        return self.emb_dim or self.hidden_dim

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Small settings that train in seconds on one core."""
        base = dict(hidden_dim=64, batch_size=32, learning_rate=5e-3, max_epochs=20, emb_dim=32)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_widths"] = list(self.cnn_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _name_seed(seed: int, name: str) -> list[int]:
    return [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]


def init_uniform(shape, seed, name: str = "", scale: float = INIT_RANGE, dtype=np.float64) -> np.ndarray:
    """Uniform values in [-scale, scale]; the stream depends only on (seed, name)."""
    rng = np.random.default_rng(_name_seed(seed, name))
    return rng.uniform(-scale, scale, size=tuple(shape)).astype(dtype)


@dataclass
class ParameterSet:
    params: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return sorted(self.params)

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            {k: a.copy() for k, a in self.params.items()},
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step,
        )

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: a.copy() for k, a in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, a in snap.items():
            self.params[k][...] = a


def global_norm(grads: dict[str, np.ndarray]) -> float:
    # sorted order keeps the float sum reproducible
    return float(np.sqrt(sum(float(np.sum(grads[k] * grads[k])) for k in sorted(grads))))


def clip_gradients(grads: dict[str, np.ndarray], clip: float = 5.0) -> dict[str, np.ndarray]:
    """Rescale all gradients together so their global L2 norm is at most ``clip``."""
    norm = global_norm(grads)
    if norm <= clip or norm == 0.0:
        return grads
    scale = clip / norm
    return {k: g * scale for k, g in grads.items()}


def adam_step(ps: ParameterSet, grads: dict[str, np.ndarray], config: TrainConfig,
              frozen: frozenset[str] = frozenset()) -> None:
    """One in-place Adam update with bias correction.

    Parameters without a gradient entry (or listed in ``frozen``) are left
    untouched, moments included.
    """
    for k, g in grads.items():
        if k not in ps.params:
            raise KeyError(f"gradient for unknown parameter {k!r}")
        if g.shape != ps.params[k].shape:
            raise ShapeMismatch(f"{k}: gradient {g.shape} vs parameter {ps.params[k].shape}")
    ps.step += 1
    t = ps.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for k in sorted(grads):
        if k in frozen:
            continue
        g = grads[k]
        m = ps.m[k]
        v = ps.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        ps.params[k] -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
