"""The epoch loop: stack composition, observation, refitting, and the
naive / holdout / no-update comparison policies."""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream
from .estimators import (TableScore, TrainingSet, fit_forest, fit_logistic, save_stack)
from .ground_truth import GroundTruthModel, draw_outcome, eval_truth
from .interventions import intervention_at

log = logging.getLogger("stacklab")

POLICIES = ("stacked", "naive", "holdout", "none")
POINTWISE = ("oracle", "mc-empirical")
FITTED = ("logistic", "forest")


@dataclass
class ScoreStack:
    """Scores ``rho_0 .. rho_{E-1}`` in fitting order plus the intervention."""

    scores: list
    intervention: object = None

    def __len__(self):
        return len(self.scores)

    def append(self, score):
        self.scores.append(score)

    @property
    def latest(self):
        return self.scores[-1] if self.scores else None

    def predictions(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.scores:
            return np.empty((0, X.shape[0]))
        return np.stack([np.asarray(s.predict(X), dtype=float).reshape(-1) for s in self.scores])


@dataclass(frozen=True)
class UpdatePolicy:
    kind: str = "stacked"
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ValueError(f"unknown update policy {self.kind!r}")
        if self.kind == "holdout" and not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout fraction must lie in (0, 1)")


def _clamp(T, bounds):
    if bounds is not None:
        np.clip(T, bounds[0], bounds[1], out=T)
    return T


def advance(g, rho, T, gen, post_clamp=None):
    """One intervention step on an ensemble ``T`` of shape ``(n, R, p)``.

    ``rho`` has shape ``(n,)`` and is shared by the ``R`` replicates.
    """
    r = np.broadcast_to(np.asarray(rho, dtype=float)[:, None], T.shape[:2])
    return _clamp(g.apply(r, T, gen), post_clamp)


def replay(g, rhos, X, R, gen, post_clamp=None) -> np.ndarray:
    """Chain ``rhos[0], rhos[1], ...`` through ``g`` starting from ``X``.

    Parameters
    ----------
    rhos : ndarray, shape (E, n)
        Score values at the original covariates, in fitting order.
    X : ndarray, shape (n, p)
    R : int
        Replicate chains per row.

    Returns
    -------
    ndarray, shape (n, R, p)
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = np.repeat(X[:, None, :], R, axis=1)
    for r in rhos:
        T = advance(g, r, T, gen, post_clamp)
    return T


def chain_ensemble(stack: ScoreStack, X, R: int, gen, epoch: int | None = None,
                   post_clamp=None) -> np.ndarray:
    """``R`` draws of ``G_E(x)`` per row of ``X``; shape ``(n, R, p)``."""
    e = len(stack) if epoch is None else epoch
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not stack.scores:
        return np.repeat(X[:, None, :], R, axis=1)
    g = intervention_at(stack.intervention, e)
    return replay(g, stack.predictions(X), X, R, gen, post_clamp)


def compose_stack(stack: ScoreStack, x, rng=None, post_clamp=None):
    """Apply the stacked intervention ``G_E`` once to ``x``.

    Every score is evaluated at the original ``x``; the chain starts at
    ``x`` and applies ``g`` once per score in fitting order.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else (rng or np.random.default_rng(0))
    values = getattr(x, "values", x)
    X = np.asarray(values, dtype=float)
    out = chain_ensemble(stack, np.atleast_2d(X), 1, gen, post_clamp=post_clamp)[:, 0, :]
    if hasattr(x, "schema"):
        return type(x)(x.schema.clamp(out[0]), x.schema)
    return out[0] if X.ndim == 1 else out


@dataclass
class EstimatorSpec:
    kind: str = "oracle"
    n_train: int = 0
    replicates: int = 1000
    tolerance: float = 1e-8
    max_iter: int = 100
    n_trees: int = 500
    max_depth: int = 12
    min_leaf: float = 5
    features_per_split: int | None = None

    def __post_init__(self):
        if self.kind not in POINTWISE + FITTED:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.kind in POINTWISE and self.n_train:
            raise ValueError("pointwise estimators take no training rows (n_train must be 0)")
        if self.kind in FITTED and self.n_train < 2:
            raise ValueError("fitted estimators need n_train >= 2")


@dataclass
class SamplerSpec:
    """Distribution of fresh pre-intervention covariates."""

    kind: str = "normal"
    loc: float = 0.0
    scale: float = 1.0
    low: float = -1.0
    high: float = 1.0

    def draw(self, n, p, gen) -> np.ndarray:
        if self.kind == "normal":
            return gen.normal(self.loc, self.scale, size=(n, p))
        if self.kind == "uniform":
            return gen.uniform(self.low, self.high, size=(n, p))
        raise ValueError(f"unknown sampler kind {self.kind!r}")


@dataclass
class EngineSpec:
    """Everything ``run_experiment`` needs, already validated."""

    truth: GroundTruthModel
    intervention: object
    estimator: EstimatorSpec
    policy: UpdatePolicy
    epochs: int
    tracked: np.ndarray
    seed: int = 0
    truth_replicates: int = 2000
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    post_clamp: tuple | None = None
    ks_epochs: tuple = ()
    ks_samples: tuple = (0,)
    ks_m: int = 1000
    threads: int = 1
    name: str = "experiment"

    def __post_init__(self):
        self.tracked = np.atleast_2d(np.asarray(self.tracked, dtype=float))
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.tracked.shape[1] != self.truth.p:
            raise ValueError("tracked samples do not match the truth's dimension")
        if any(e < 0 or e > self.epochs for e in self.ks_epochs):
            raise ValueError("distribution epochs must lie within 0..epochs")


@dataclass
class TrajectoryRecord:
    """Per-epoch, per-tracked-sample log; arrays indexed ``[epoch, sample]``."""

    rho_true: np.ndarray
    rho_est: np.ndarray
    y: np.ndarray
    x_post: np.ndarray
    flags: list = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return self.rho_true.shape[0]

    @property
    def n_samples(self) -> int:
        return self.rho_true.shape[1]


@dataclass
class ExperimentResult:
    spec: EngineSpec
    record: TrajectoryRecord
    stack: ScoreStack
    rho_hist: np.ndarray
    ks_samples: dict = field(default_factory=dict)
    runtime: float = 0.0


@dataclass
class EngineState:
    spec: EngineSpec
    root: RngStream
    e: int = 0
    stack: ScoreStack = None
    rho_hist: list = field(default_factory=list)
    T_truth: np.ndarray | None = None
    ens_g: object = None
    fixed_score: object = None


def _g(spec: EngineSpec, e: int):
    return intervention_at(spec.intervention, e)


def _reps(spec: EngineSpec, R: int) -> int:
    stochastic = spec.intervention.stochastic if spec.intervention is not None else False
    return R if stochastic else 1


def init_state(spec: EngineSpec) -> EngineState:
    st = EngineState(spec, RngStream(spec.seed))
    st.stack = ScoreStack([], spec.intervention)
    return st


def _tracked_ensembles(st: EngineState):
    """Bring the tracked-sample truth ensemble up to ``G_e`` for the policy."""
    spec, e = st.spec, st.e
    X = spec.tracked
    Rt = _reps(spec, spec.truth_replicates)
    if e == 0 or spec.policy.kind == "none":
        st.T_truth = np.repeat(X[:, None, :], Rt, axis=1)
        st.ens_g = _g(spec, e)
        return
    g = _g(spec, e)
    if spec.policy.kind in ("naive", "holdout"):
        gen = st.root.derive("truth-chain", e).generator()
        st.T_truth = replay(g, np.asarray(st.rho_hist[-1:]), X, Rt, gen, spec.post_clamp)
        return
    if g is not st.ens_g:
        gen = st.root.derive("truth-rebuild", e).generator()
        st.T_truth = replay(g, np.asarray(st.rho_hist), X, Rt, gen, spec.post_clamp)
        st.ens_g = g
        return
    gen = st.root.derive("truth-chain", e).generator()
    st.T_truth = advance(g, st.rho_hist[-1], st.T_truth, gen, spec.post_clamp)


def mc_estimate(truth, e, T, replicates, gen) -> np.ndarray:
    """Fresh Monte-Carlo estimate of ``E f_e(G_e(x))`` per row of ``T``.

    Draws ``replicates`` chain realisations with replacement from the
    ensemble ``T`` (shape ``(n, R, p)``), so the estimate carries new
    sampling error every epoch. A single-member ensemble is exact.
    """
    n, R, _ = T.shape
    if R == 1:
        return eval_truth(truth, e, T[:, 0, :])
    idx = gen.integers(0, R, size=(n, replicates))
    return eval_truth(truth, e, T[np.arange(n)[:, None], idx]).mean(axis=1)


def training_rows(spec: EngineSpec, stack: ScoreStack, policy: UpdatePolicy, e: int,
                  root: RngStream, n: int | None = None):
    """Fresh ``X_e(0)``, its post-intervention image and outcomes.

    Returns
    -------
    X0, X1, y, fit_mask
        ``fit_mask`` selects the rows the policy refits on.
    """
    n = spec.estimator.n_train if n is None else n
    p = spec.truth.p
    X0 = spec.sampler.draw(n, p, root.derive("train", e).generator())
    gen = root.derive("train-chain", e).generator()
    g = _g(spec, e)
    fit_mask = np.ones(n, dtype=bool)
    if policy.kind == "none" or not stack.scores:
        X1 = X0.copy()
    elif policy.kind == "stacked":
        X1 = replay(g, stack.predictions(X0), X0, 1, gen, spec.post_clamp)[:, 0, :]
    else:
        X1 = replay(g, stack.latest.predict(X0)[None, :], X0, 1, gen, spec.post_clamp)[:, 0, :]
        if policy.kind == "holdout":
            k = int(round(policy.holdout_fraction * n))
            hold = root.derive("holdout", e).generator().permutation(n)[:k]
            fit_mask[:] = False
            fit_mask[hold] = True
            X1[hold] = X0[hold]
    y = draw_outcome(spec.truth, e, X1, root.derive("train-y", e)).y
    return X0, X1, y, fit_mask


def _fit(spec: EngineSpec, X, y, e: int, root: RngStream):
    est = spec.estimator
    data = TrainingSet(X, y, e)
    if est.kind == "logistic":
        return fit_logistic(data, est.tolerance, est.max_iter)
    return fit_forest(data, est.n_trees, est.max_depth, est.min_leaf, est.features_per_split,
                      root.derive("fit", e), spec.threads)


def run_epoch(st: EngineState):
    """Advance one epoch; returns the state and this epoch's record slice.

    The slice is a dict with ``rho_true``, ``rho_est``, ``y``, ``x_post`` and
    ``flags`` for every tracked sample.
    """
    spec, e, policy = st.spec, st.e, st.spec.policy
    _tracked_ensembles(st)
    X = spec.tracked
    rho_true = eval_truth(spec.truth, e, st.T_truth).mean(axis=1)
    flags = []
    est = spec.estimator
    refit = policy.kind != "none" or e == 0
    if est.kind in POINTWISE:
        if policy.kind == "holdout" and e > 0:
            # holdout rows never receive an intervention, so their risk is f_e
            rho_est = eval_truth(spec.truth, e, X)
        elif est.kind == "oracle":
            rho_est = rho_true.copy()
        else:
            rho_est = mc_estimate(spec.truth, e, st.T_truth, est.replicates,
                                  st.root.derive("estimate", e).generator())
        score = TableScore(X, rho_est, e, est.kind) if refit else st.fixed_score
    else:
        if refit:
            X0, _, y, mask = training_rows(spec, st.stack, policy, e, st.root)
            score = _fit(spec, X0[mask], y[mask], e, st.root)
        else:
            score = st.fixed_score
        flags.extend(score.flags)
    if est.kind in FITTED or not refit:
        rho_est = np.asarray(score.predict(X), dtype=float).reshape(-1)
    x_post = st.T_truth[:, 0, :].copy()
    y_t = draw_outcome(spec.truth, e, x_post, st.root.derive("outcome", e)).y
    if refit:
        if policy.kind == "stacked":
            st.stack.append(score)
        else:
            st.stack = ScoreStack([score], spec.intervention)
        if e == 0:
            st.fixed_score = score
    st.rho_hist.append(np.asarray(rho_est, dtype=float).copy())
    st.e += 1
    return st, {"rho_true": rho_true, "rho_est": np.asarray(rho_est), "y": y_t,
                "x_post": x_post, "flags": flags}


def distribution_sample(spec: EngineSpec, rho_hist, e: int, sample: int, m: int,
                        stream: RngStream) -> np.ndarray:
    """``m`` fresh draws of ``X_e(1)`` for one tracked sample, shape ``(m, p)``.

    Replays the stored score values so the draws are independent of the
    ensembles used for ``rho_true``.
    """
    x = spec.tracked[sample:sample + 1]
    g = _g(spec, e)
    rhos = np.asarray(rho_hist[:e])[:, sample:sample + 1] if e > 0 else np.empty((0, 1))
    if spec.policy.kind != "stacked":
        rhos = rhos[-1:] if spec.policy.kind in ("naive", "holdout") else rhos[:0]
    gen = stream.derive("ks", e, sample).generator()
    return replay(g, rhos, x, m, gen, spec.post_clamp)[0]


def run_experiment(spec: EngineSpec, progress=None) -> ExperimentResult:
    """Run epochs ``0..spec.epochs`` and collect the trajectory record.

    Parameters
    ----------
    spec : EngineSpec
    progress : callable, optional
        Called as ``progress(e, slice)`` after every epoch.
    """
    t0 = time.perf_counter()
    st = init_state(spec)
    E, m, p = spec.epochs + 1, spec.tracked.shape[0], spec.truth.p
    rho_true = np.empty((E, m))
    rho_est = np.empty((E, m))
    y = np.empty((E, m), dtype=np.int8)
    x_post = np.empty((E, m, p))
    flags = []
    for e in range(E):
        st, sl = run_epoch(st)
        rho_true[e], rho_est[e], y[e], x_post[e] = sl["rho_true"], sl["rho_est"], sl["y"], sl["x_post"]
        flags.extend((e, f) for f in sl["flags"])
        if progress is not None:
            progress(e, sl)
    record = TrajectoryRecord(rho_true, rho_est, y, x_post, flags)
    rho_hist = np.asarray(st.rho_hist)
    ks = {}
    for e in spec.ks_epochs:
        for s in spec.ks_samples:
            ks[(int(e), int(s))] = distribution_sample(spec, rho_hist, int(e), int(s), spec.ks_m,
                                                       st.root)
    return ExperimentResult(spec, record, st.stack, rho_hist, ks, time.perf_counter() - t0)


def _fmt(v) -> str:
    return repr(float(v))


def write_trajectory_csv(record: TrajectoryRecord, path) -> None:
    """Columns: epoch, sample_id, rho_true, rho_est, y, x_post_1..p."""
    p = record.x_post.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "sample_id", "rho_true", "rho_est", "y"]
                   + [f"x_post_{j + 1}" for j in range(p)])
        for e in range(record.epochs):
            for i in range(record.n_samples):
                w.writerow([e, i, _fmt(record.rho_true[e, i]), _fmt(record.rho_est[e, i]),
                            int(record.y[e, i])] + [_fmt(v) for v in record.x_post[e, i]])


def read_trajectory_csv(path) -> TrajectoryRecord:
    data = np.genfromtxt(path, delimiter=",", names=True)
    epochs = data["epoch"].astype(int)
    ids = data["sample_id"].astype(int)
    E, m = epochs.max() + 1, ids.max() + 1
    xcols = [n for n in data.dtype.names if n.startswith("x_post_")]
    rt = np.empty((E, m))
    re_ = np.empty((E, m))
    yy = np.empty((E, m), dtype=np.int8)
    xp = np.empty((E, m, len(xcols)))
    rt[epochs, ids] = data["rho_true"]
    re_[epochs, ids] = data["rho_est"]
    yy[epochs, ids] = data["y"]
    for j, c in enumerate(xcols):
        xp[epochs, ids, j] = data[c]
    return TrajectoryRecord(rt, re_, yy, xp)


def write_outputs(result: ExperimentResult, outdir) -> dict:
    """Persist the trajectory CSV and, when serialisable, the score stack."""
    os.makedirs(outdir, exist_ok=True)
    paths = {"trajectory": os.path.join(outdir, "trajectory.csv")}
    write_trajectory_csv(result.record, paths["trajectory"])
    try:
        paths["stack"] = os.path.join(outdir, "stack.jsonl")
        save_stack(result.stack.scores, paths["stack"])
    except TypeError:
        paths.pop("stack")
    if result.ks_samples:
        paths["distribution"] = os.path.join(outdir, "distribution.csv")
        with open(paths["distribution"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "sample_id", "draw", "value"])
            for (e, s), draws in sorted(result.ks_samples.items()):
                for k, v in enumerate(draws[:, 0]):
                    w.writerow([e, s, k, _fmt(v)])
    return paths
