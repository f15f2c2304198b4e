"""Outcome-probability models: static logistic truths, bounded drift and
shock sequences, plus Bernoulli outcome draws."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .core import LOGIT, PROB_EPS, QTransform, RngStream, clamp_prob

NONE, BOUNDED, SHOCKS = "none", "bounded", "shocks"


@dataclass(frozen=True)
class DriftSpec:
    """How the outcome function changes across epochs.

    Parameters
    ----------
    kind : {"none", "bounded", "shocks"}
    alpha : float
        Half-width of the per-epoch shift in q-space (bounded kind).
    seed : int
        Seed of the per-epoch shift sequence (bounded kind).
    change_points : tuple of int
        Strictly increasing epochs at which coefficients are redrawn.
    coef_low, coef_high : float
        Support of the uniform coefficient law used at each shock.
    """

    kind: str = NONE
    alpha: float = 0.0
    seed: int = 0
    change_points: tuple = ()
    coef_low: float = -2.0
    coef_high: float = 2.0

    def __post_init__(self):
        if self.kind not in (NONE, BOUNDED, SHOCKS):
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if self.alpha < 0:
            raise ValueError("drift alpha must be non-negative")
        cps = tuple(int(c) for c in self.change_points)
        if any(b <= a for a, b in zip(cps, cps[1:])) or any(c <= 0 for c in cps):
            raise ValueError("change points must be positive and strictly increasing")
        if not np.isfinite([self.coef_low, self.coef_high]).all() or self.coef_low > self.coef_high:
            raise ValueError("coefficient law needs finite bounds with low <= high")
        object.__setattr__(self, "change_points", cps)


@lru_cache(maxsize=65536)
def _bounded_shift(seed: int, alpha: float, e: int) -> float:
    gen = RngStream(seed).derive("drift", e).generator()
    return float(gen.uniform(-alpha, alpha))


def even_change_points(epochs: int, n_shocks: int) -> tuple:
    """``n_shocks`` change points splitting ``epochs`` into equal segments."""
    if n_shocks < 0 or epochs <= n_shocks:
        raise ValueError("need more epochs than shocks")
    return tuple(int(round(epochs * (i + 1) / (n_shocks + 1))) for i in range(n_shocks))


@dataclass(frozen=True)
class GroundTruthModel:
    """Logistic outcome model ``f_e(x) = logistic(intercept + x @ beta_e + shift_e)``.

    ``segment_betas`` holds one coefficient vector per inter-shock segment
    when ``drift.kind == "shocks"``; otherwise ``beta`` is used throughout.
    """

    beta: np.ndarray
    intercept: float = 0.0
    drift: DriftSpec = field(default_factory=DriftSpec)
    segment_betas: tuple = ()
    q: QTransform = LOGIT

    def __post_init__(self):
        b = np.array(self.beta, dtype=float).reshape(-1)
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)
        segs = tuple(np.array(s, dtype=float).reshape(-1) for s in self.segment_betas)
        for s in segs:
            s.setflags(write=False)
            if s.shape != b.shape:
                raise ValueError("segment coefficients must match beta's dimension")
        if self.drift.kind == SHOCKS and segs and len(segs) != len(self.drift.change_points) + 1:
            raise ValueError("need one coefficient vector per segment")
        object.__setattr__(self, "segment_betas", segs)

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    def segment(self, e: int) -> int:
        if self.drift.kind != SHOCKS:
            return 0
        return int(np.searchsorted(self.drift.change_points, e, side="right"))

    def beta_at(self, e: int) -> np.ndarray:
        if self.drift.kind == SHOCKS and self.segment_betas:
            return self.segment_betas[self.segment(e)]
        return self.beta

    def shift_at(self, e: int) -> float:
        if self.drift.kind == BOUNDED and self.drift.alpha > 0:
            return _bounded_shift(int(self.drift.seed), float(self.drift.alpha), int(e))
        return 0.0

    def linear(self, e: int, X) -> np.ndarray:
        """Linear predictor ``intercept + X @ beta_e + shift_e``."""
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.p:
            raise ValueError(f"truth expects {self.p} covariates, got {X.shape[-1]}")
        # flatten so the result is bitwise independent of the batch shape
        flat = X.reshape(-1, self.p) @ self.beta_at(e)
        return (flat + (self.intercept + self.shift_at(e))).reshape(X.shape[:-1])

    def with_beta(self, beta) -> GroundTruthModel:
        return replace(self, beta=np.asarray(beta, dtype=float))

    def to_dict(self) -> dict:
        d = {"kind": "logistic", "beta": self.beta.tolist(), "intercept": self.intercept}
        dr = self.drift
        d["drift"] = {"kind": dr.kind}
        if dr.kind == BOUNDED:
            d["drift"].update(alpha=dr.alpha, seed=dr.seed)
        elif dr.kind == SHOCKS:
            d["drift"].update(change_points=list(dr.change_points), coef_low=dr.coef_low,
                              coef_high=dr.coef_high)
            d["segment_betas"] = [s.tolist() for s in self.segment_betas]
        return d


@dataclass(frozen=True)
class OutcomeDraw:
    y: np.ndarray
    p: np.ndarray


def eval_truth(model: GroundTruthModel, e: int, x) -> np.ndarray:
    """Outcome probability ``f_e(x)`` for one covariate vector or a batch.

    Returns values clamped to ``[PROB_EPS, 1 - PROB_EPS]``.
    """
    values = getattr(x, "values", x)
    out = clamp_prob(expit(model.linear(e, values)))
    return out[()] if np.ndim(out) == 0 else out


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    raise TypeError("rng must be an RngStream or numpy Generator")


def draw_outcome(model: GroundTruthModel, e: int, x, rng) -> OutcomeDraw:
    """Bernoulli outcomes with mean ``eval_truth(model, e, x)``."""
    p = np.asarray(eval_truth(model, e, x))
    u = _generator(rng).random(p.shape)
    # p is clamped, so treat the clamp edge as certainty
    y = (u < p) | (p >= 1.0 - PROB_EPS)
    y &= p > PROB_EPS
    return OutcomeDraw(y=y.astype(np.int8), p=p)


def sample_shock_sequence(spec: DriftSpec, rng, p: int = 3, intercept: float = 0.0) -> list:
    """One logistic model per inter-shock segment, coefficients i.i.d. uniform.

    Parameters
    ----------
    spec : DriftSpec
        Must have ``kind == "shocks"``.
    rng : RngStream or numpy.random.Generator
    p : int
        Covariate dimension.

    Returns
    -------
    list of GroundTruthModel
        ``len(spec.change_points) + 1`` static models.
    """
    if spec.kind != SHOCKS:
        raise ValueError("sample_shock_sequence needs a shocks drift spec")
    gen = _generator(rng)
    betas = gen.uniform(spec.coef_low, spec.coef_high, size=(len(spec.change_points) + 1, p))
    return [GroundTruthModel(b, intercept) for b in betas]


def shocked_truth(spec: DriftSpec, segments: list) -> GroundTruthModel:
    """Combine per-segment static models into one epoch-indexed truth."""
    if len(segments) != len(spec.change_points) + 1:
        raise ValueError("need one model per segment")
    if len(segments) == 1:
        return replace(segments[0], drift=DriftSpec())
    return GroundTruthModel(segments[0].beta, segments[0].intercept, spec,
                            tuple(m.beta for m in segments))
