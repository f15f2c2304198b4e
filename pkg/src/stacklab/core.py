"""Domain types shared across the package: covariate schemas, q-transforms,
epoch clocks and deterministic random streams."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, logit

PROB_EPS = 1e-9

REAL, INTEGER, BINARY = "real", "integer", "binary"
_KINDS = (REAL, INTEGER, BINARY)


def clamp_prob(p):
    """Clamp probabilities to ``[PROB_EPS, 1 - PROB_EPS]``."""
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


@dataclass(frozen=True)
class Dimension:
    name: str
    kind: str = REAL
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown dimension kind {self.kind!r}")
        if self.kind == BINARY and (self.lower, self.upper) != (0, 1):
            object.__setattr__(self, "lower", 0.0)
            object.__setattr__(self, "upper", 1.0)
        if not self.lower <= self.upper:
            raise ValueError(f"dimension {self.name}: lower > upper")


@dataclass(frozen=True)
class Schema:
    """Ordered per-dimension descriptors for a covariate space."""

    dims: tuple[Dimension, ...]

    @classmethod
    def real(cls, p: int, lower: float = -np.inf, upper: float = np.inf) -> Schema:
        return cls(tuple(Dimension(f"x{i + 1}", REAL, lower, upper) for i in range(p)))

    @property
    def p(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def lower(self) -> np.ndarray:
        return np.array([d.lower for d in self.dims], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([d.upper for d in self.dims], dtype=float)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def check(self, X: np.ndarray) -> np.ndarray:
        """Raise ``ValueError`` unless every row of ``X`` conforms."""
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.p:
            raise ValueError(f"expected {self.p} covariates, got {X.shape[-1]}")
        if np.isnan(X).any():
            raise ValueError("covariates contain NaN")
        if (X < self.lower).any() or (X > self.upper).any():
            raise ValueError("covariate outside declared bounds")
        for j, d in enumerate(self.dims):
            if d.kind != REAL and not np.all(X[..., j] == np.round(X[..., j])):
                raise ValueError(f"dimension {d.name} must hold whole numbers")
        return X

    def clamp(self, X: np.ndarray) -> np.ndarray:
        return np.clip(X, self.lower, self.upper)


@dataclass(frozen=True)
class CovariateVector:
    """A single point of covariate space, validated against its schema."""

    values: np.ndarray
    schema: Schema

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        self.schema.check(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class QTransform:
    """Strictly increasing map from (0, 1) to the real line.

    ``kind`` is ``"logit"``, ``"identity"`` or ``"custom"``; the custom kind
    takes the forward map and its inverse as callables.
    """

    kind: str = "logit"
    forward: Callable | None = field(default=None, compare=False)
    inverse_fn: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("logit", "identity", "custom"):
            raise ValueError(f"unknown q-transform kind {self.kind!r}")
        if self.kind == "custom" and (self.forward is None or self.inverse_fn is None):
            raise ValueError("custom q-transform needs forward and inverse callables")

    def __call__(self, p):
        return q_eval(self, p)

    def inverse(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "logit":
            return expit(v)
        if self.kind == "identity":
            return np.clip(v, 0.0, 1.0)
        return self.inverse_fn(v)


LOGIT = QTransform("logit")


def q_eval(q: QTransform, p):
    """Evaluate ``q`` at probability ``p`` after clamping away from 0 and 1."""
    p = np.asarray(p, dtype=float)
    if np.isnan(p).any():
        raise ValueError("q_eval received NaN")
    p = clamp_prob(p)
    if q.kind == "logit":
        out = logit(p)
    elif q.kind == "identity":
        out = p
    else:
        out = np.asarray(q.forward(p), dtype=float)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class EpochClock:
    e: int = 0
    n: int = 1

    def __post_init__(self):
        if self.e < 0 or self.n < 1:
            raise ValueError("epoch must be >= 0 and samples-per-epoch >= 1")

    def tick(self) -> EpochClock:
        return EpochClock(self.e + 1, self.n)


def _label_words(item) -> list[int]:
    if isinstance(item, (bool, np.bool_)):
        return [int(item)]
    if isinstance(item, (int, np.integer)):
        if item < 0:
            raise ValueError("stream indices must be non-negative")
        item = int(item)
        return [item & 0xFFFFFFFF, item >> 32] if item >> 32 else [item]
    if isinstance(item, str):
        digest = hashlib.blake2b(item.encode(), digest_size=8).digest()
        return [int.from_bytes(digest[:4], "little"), int.from_bytes(digest[4:], "little")]
    if isinstance(item, (tuple, list)):
        words = []
        for sub in item:
            words.extend(_label_words(sub))
        # length prefix keeps ("a", 1) distinct from (("a",), 1)
        return [len(item)] + words
    raise TypeError(f"unsupported stream label element {item!r}")


@dataclass(frozen=True)
class RngStream:
    """A seed plus a path of labels, mapped to an independent numpy stream.

    Derivation is pure: the same ``(seed, path)`` always yields the same
    draws, regardless of how many other streams were created in between.
    """

    seed: int
    path: tuple = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("root seed must be an unsigned 64-bit integer")

    def derive(self, *label) -> RngStream:
        return RngStream(self.seed, self.path + (tuple(label),))

    def seed_sequence(self) -> np.random.SeedSequence:
        key = _label_words(self.path) if self.path else []
        return np.random.SeedSequence(entropy=int(self.seed), spawn_key=tuple(key))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))

    def uint64(self) -> int:
        return int(self.seed_sequence().generate_state(1, np.uint64)[0])


def derive_stream(root: RngStream, label: Sequence) -> RngStream:
    """Child stream of ``root`` for a ``(purpose, *indices)`` label."""
    if isinstance(label, (str, int)):
        label = (label,)
    return root.derive(*label)
