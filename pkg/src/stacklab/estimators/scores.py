"""Risk-score types, fitting entry points and JSON persistence."""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..core import RngStream
from ..ground_truth import GroundTruthModel, eval_truth
from . import forest as _forest
from .logistic import TrainingSet, constant_rate, irls

SCORE_FORMAT = "stacklab.score/1"
STACK_FORMAT = "stacklab.stack/1"


class RiskScore:
    """Base class: a fitted map from pre-intervention covariates to risk."""

    kind = "abstract"
    epoch = 0
    flags: tuple = ()

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


def _as_batch(x):
    values = getattr(x, "values", x)
    X = np.asarray(values, dtype=float)
    return X, X.ndim == 1


@dataclass
class TableScore(RiskScore):
    """Pointwise score known only at a set of probe covariates.

    Lookups match rows exactly; other rows fall back to the nearest key.
    """

    keys: np.ndarray
    values: np.ndarray
    epoch: int = 0
    kind: str = "mc-empirical"
    flags: tuple = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.keys = np.atleast_2d(np.asarray(self.keys, dtype=float))
        self.values = np.clip(np.asarray(self.values, dtype=float).reshape(-1), 0.0, 1.0)
        if self.keys.shape[0] != self.values.shape[0]:
            raise ValueError("one value per key row is required")

    def predict(self, x) -> np.ndarray:
        X, single = _as_batch(x)
        X2 = np.atleast_2d(X).reshape(-1, self.keys.shape[1])
        if self._index is None:
            self._index = {row.tobytes(): i for i, row in enumerate(self.keys)}
        pos = np.array([self._index.get(row.tobytes(), -1) for row in X2], dtype=np.int64)
        miss = pos < 0
        if miss.any():
            d = ((X2[miss, None, :] - self.keys[None, :, :]) ** 2).sum(axis=2)
            pos[miss] = np.argmin(d, axis=1)
        out = self.values[pos].reshape(X.shape[:-1])
        return out[()] if single else out

    def to_dict(self):
        return {"kind": self.kind, "epoch": self.epoch, "flags": list(self.flags),
                "keys": self.keys.tolist(), "values": self.values.tolist()}


@dataclass
class LogisticScore(RiskScore):
    coef: np.ndarray
    intercept: float
    epoch: int = 0
    flags: tuple = ()
    constant: float | None = None
    kind: str = "logistic"

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=float).reshape(-1)

    def predict(self, x) -> np.ndarray:
        X, single = _as_batch(x)
        if X.shape[-1] != self.coef.shape[0]:
            raise ValueError(f"score expects {self.coef.shape[0]} covariates, got {X.shape[-1]}")
        if self.constant is not None:
            out = np.full(X.shape[:-1], self.constant)
        else:
            out = expit(X @ self.coef + self.intercept)
        return out[()] if single else out

    def to_dict(self):
        return {"kind": self.kind, "epoch": self.epoch, "flags": list(self.flags),
                "coef": self.coef.tolist(), "intercept": self.intercept,
                "constant": self.constant}


@dataclass
class ForestScore(RiskScore):
    arrays: dict
    p: int
    epoch: int = 0
    flags: tuple = ()
    oob_mse: float | None = None
    label_var: float | None = None
    kind: str = "forest"

    @property
    def n_trees(self) -> int:
        return int(self.arrays["roots"].shape[0])

    def predict(self, x) -> np.ndarray:
        X, single = _as_batch(x)
        if X.shape[-1] != self.p:
            raise ValueError(f"score expects {self.p} covariates, got {X.shape[-1]}")
        flat = X.reshape(-1, self.p)
        out = np.clip(_forest.predict_arrays(self.arrays, flat), 0.0, 1.0).reshape(X.shape[:-1])
        return out[()] if single else out

    def leaf_range(self):
        leaves = self.arrays["feature"] < 0
        v = self.arrays["value"][leaves]
        return float(v.min()), float(v.max())

    def to_dict(self):
        return {"kind": self.kind, "epoch": self.epoch, "flags": list(self.flags), "p": self.p,
                "oob_mse": self.oob_mse, "label_var": self.label_var,
                "arrays": {k: v.tolist() for k, v in self.arrays.items()}}


@dataclass
class OracleScore(RiskScore):
    """Exact conditional risk under the stack preceding it.

    ``predict`` averages the truth over ``replicates`` chain draws (one draw
    for deterministic interventions), using a fixed stream so the map is a
    pure function of ``x``.
    """

    truth: GroundTruthModel
    intervention: object
    prefix: tuple
    epoch: int
    replicates: int = 2000
    stream: RngStream = field(default_factory=lambda: RngStream(0))
    kind: str = "oracle"
    flags: tuple = ()

    def __post_init__(self):
        self._cache = OrderedDict()

    def predict(self, x) -> np.ndarray:
        X, single = _as_batch(x)
        key = X.tobytes() + bytes(str(X.shape), "ascii")
        if key not in self._cache:
            from ..engine import ScoreStack

            stack = ScoreStack(list(self.prefix), self.intervention)
            self._cache[key] = oracle_predict(self.truth, stack, None, np.atleast_2d(X),
                                              self.replicates, self.stream,
                                              epoch=self.epoch).reshape(X.shape[:-1])
            if len(self._cache) > 8:
                self._cache.popitem(last=False)
        out = self._cache[key]
        return out[()] if single else out.copy()

    def to_dict(self):
        raise TypeError("oracle scores reference the ground truth and are not serialisable; "
                        "tabulate them with TableScore first")


def oracle_predict(truth: GroundTruthModel, stack, g, x, replicates: int = 2000, rng=None,
                   epoch: int | None = None) -> np.ndarray:
    """Estimate ``E f_e(G_e(x))`` by averaging over chain replicates.

    Parameters
    ----------
    truth : GroundTruthModel
    stack : ScoreStack
        Scores ``rho_0 .. rho_{e-1}``; each is evaluated at the original ``x``.
    g : InterventionModel or None
        Overrides the stack's intervention when given.
    x : array_like, shape (p,) or (n, p)
    replicates : int
        Ignored (treated as 1) for deterministic interventions.
    rng : RngStream or numpy Generator
    epoch : int, optional
        Epoch of the truth to evaluate; defaults to ``len(stack)``.

    Returns
    -------
    ndarray
        Shape ``x.shape[:-1]``.
    """
    from ..engine import ScoreStack, chain_ensemble
    from ..interventions import intervention_at

    X, single = _as_batch(x)
    X2 = np.atleast_2d(X)
    e = len(stack) if epoch is None else int(epoch)
    inter = g if g is not None else stack.intervention
    gi = intervention_at(inter, e) if inter is not None else None
    R = int(replicates) if (gi is not None and gi.stochastic and len(stack) > 0) else 1
    if isinstance(rng, RngStream):
        gen = rng.generator()
    elif rng is None:
        gen = np.random.default_rng(0)
    else:
        gen = rng
    if g is not None:
        stack = ScoreStack(list(stack.scores), g)
    T = chain_ensemble(stack, X2, R, gen, epoch=e)
    out = eval_truth(truth, e, T).mean(axis=1).reshape(X.shape[:-1])
    return out[()] if single else out


def fit_logistic(data: TrainingSet, tolerance: float = 1e-8, max_iter: int = 100,
                 ridge: float | None = None) -> LogisticScore:
    """Maximum-likelihood logistic score with a tiny ridge guard.

    Single-class data yields a constant predictor flagged ``single-class``.
    """
    from .logistic import RIDGE

    y = data.y
    if np.all(y == y[0]):
        return LogisticScore(np.zeros(data.X.shape[1]), 0.0, data.epoch, ("single-class",),
                             constant=constant_rate(y))
    fit = irls(data.X, y, tolerance, max_iter, RIDGE if ridge is None else ridge)
    return LogisticScore(fit.coef, fit.intercept, data.epoch, fit.flags)


def fit_forest(data: TrainingSet, n_trees: int = 500, max_depth: int = 12, min_leaf: float = 5,
               features_per_split: int | None = None, rng=None, threads: int = 1,
               backend: str | None = None, oob: bool = False) -> ForestScore:
    """Bagged CART regression forest on ``(X, y)``.

    Parameters
    ----------
    rng : RngStream
        Root stream for bootstrap resamples and feature subsets.
    threads : int
        Worker threads; output is identical for any value.
    oob : bool
        Record out-of-bag MSE and label variance on the score.
    """
    rng = rng if rng is not None else RngStream(0)
    arrays, oob_mse = _forest.grow_forest(data.X, data.y, int(n_trees), int(max_depth),
                                          float(min_leaf), features_per_split, rng, threads,
                                          backend, oob)
    return ForestScore(arrays, data.X.shape[1], data.epoch, (), oob_mse,
                       float(np.var(data.y)) if oob else None)


def predict(score: RiskScore, x) -> np.ndarray:
    """Risk in ``[0, 1]`` at ``x`` (single vector or batch)."""
    return score.predict(x)


def score_from_dict(d: dict) -> RiskScore:
    kind = d["kind"]
    flags = tuple(d.get("flags", ()))
    if kind in ("mc-empirical", "oracle-table", "oracle"):
        return TableScore(np.array(d["keys"]), np.array(d["values"]), d["epoch"], kind, flags)
    if kind == "logistic":
        return LogisticScore(np.array(d["coef"]), d["intercept"], d["epoch"], flags,
                             d.get("constant"))
    if kind == "forest":
        arrays = {k: np.array(v, dtype=np.int64 if k in ("feature", "left", "right", "roots")
                              else float) for k, v in d["arrays"].items()}
        return ForestScore(arrays, d["p"], d["epoch"], flags, d.get("oob_mse"), d.get("label_var"))
    raise ValueError(f"unknown score kind {kind!r}")


def dumps_score(score: RiskScore) -> str:
    return json.dumps({"format": SCORE_FORMAT, "score": score.to_dict()})


def loads_score(text: str) -> RiskScore:
    d = json.loads(text)
    if d.get("format") != SCORE_FORMAT:
        raise ValueError(f"unsupported score format {d.get('format')!r}")
    return score_from_dict(d["score"])


def save_stack(scores, path) -> None:
    """Write scores as JSON lines: a header then one score per line.

    Appending a new score only appends a line, so long runs can resume.
    """
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": STACK_FORMAT}) + "\n")
        for s in scores:
            fh.write(json.dumps(s.to_dict()) + "\n")


def append_score(score, path) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(score.to_dict()) + "\n")


def load_stack(path) -> list:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != STACK_FORMAT:
            raise ValueError(f"unsupported stack format {header.get('format')!r}")
        return [score_from_dict(json.loads(line)) for line in fh if line.strip()]
