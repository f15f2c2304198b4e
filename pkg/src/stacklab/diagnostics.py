"""Numerical checks of trajectories against limit bounds, distributional
convergence, attraction intervals, drift intervals and shock recovery."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import qmc

from .core import LOGIT, QTransform, RngStream, clamp_prob, q_eval
from .engine import (EngineSpec, ExperimentResult, ScoreStack, TrajectoryRecord, _fit,
                     replay, training_rows)
from .ground_truth import GroundTruthModel, eval_truth
from .interventions import InterventionModel, expected_outcome, intervention_at


@dataclass(frozen=True)
class ProbeSpec:
    """Latin-hypercube covariate probes in a box, plus a grid of rho values."""

    n_x: int = 10000
    n_rho: int = 100
    low: float = -5.0
    high: float = 5.0
    replicates: int = 2000

    def points(self, p: int, rng) -> np.ndarray:
        gen = rng.generator() if isinstance(rng, RngStream) else rng
        sampler = qmc.LatinHypercube(d=p, seed=gen)
        return qmc.scale(sampler.random(self.n_x), [self.low] * p, [self.high] * p)

    def refined(self, factor: int = 2) -> ProbeSpec:
        return ProbeSpec(self.n_x * factor, self.n_rho * factor, self.low, self.high,
                         self.replicates)


@dataclass
class LimitBounds:
    lower: float
    upper: float
    rho_eq: float
    method: str
    n_x: int
    n_rho: int
    degenerate: list = field(default_factory=list)


def _expected(g, truth, e, rho, X, probes, rng):
    gen = rng.derive("mc").generator() if isinstance(rng, RngStream) else rng
    mean, _ = expected_outcome(g, truth, e, rho, X, probes.replicates, gen)
    return np.asarray(mean)


def _bounds_from(g, truth, e, X, rho_grid, lo_thr, hi_thr, coupled, probes, rng, post=None):
    """inf over the upper region and sup over the lower region of ``post(E f(g))``."""
    f = eval_truth(truth, e, X)
    flags = []
    if coupled:
        up = f > lo_thr
        dn = f < hi_thr
        lo_vals = _expected(g, truth, e, f[up], X[up], probes, rng) if up.any() else np.array([])
        hi_vals = _expected(g, truth, e, f[dn], X[dn], probes, rng) if dn.any() else np.array([])
    else:
        def region(xmask, rmask):
            Xs, rs = X[xmask], rho_grid[rmask]
            if Xs.shape[0] == 0 or rs.size == 0:
                return np.array([])
            rho = np.repeat(rs, Xs.shape[0])
            return _expected(g, truth, e, rho, np.tile(Xs, (rs.size, 1)), probes, rng)
        lo_vals = region(f > lo_thr, rho_grid > lo_thr)
        hi_vals = region(f < hi_thr, rho_grid < hi_thr)
    if post is not None:
        lo_vals, hi_vals = post(lo_vals, -1), post(hi_vals, +1)
    if lo_vals.size == 0:
        flags.append("empty upper region")
    if hi_vals.size == 0:
        flags.append("empty lower region")
    lower = float(lo_vals.min()) if lo_vals.size else lo_thr
    upper = float(hi_vals.max()) if hi_vals.size else hi_thr
    return lower, upper, flags


def compute_limit_bounds(truth: GroundTruthModel, g: InterventionModel, rho_eq: float | None = None,
                         probes: ProbeSpec = ProbeSpec(), rng=None, e: int = 0) -> LimitBounds:
    """Probe approximation of the limit bounds on ``rho_e(x)``.

    Deterministic ``g`` uses the coupled form (``rho = f(x)``); stochastic
    ``g`` takes the inf/sup of ``E_g f(g(rho, x))`` over independent
    ``rho`` and ``x`` on the same side of ``rho_eq``. Bounds are widened to
    include ``rho_eq``.
    """
    rng = rng if rng is not None else RngStream(0)
    rho_eq = g.rho_eq_at(None) if rho_eq is None else float(rho_eq)
    X = probes.points(truth.p, rng.derive("probes"))
    rho_grid = np.linspace(0.0, 1.0, probes.n_rho)
    coupled = not g.stochastic
    lower, upper, flags = _bounds_from(g, truth, e, X, rho_grid, rho_eq, rho_eq, coupled, probes,
                                       rng)
    return LimitBounds(min(lower, rho_eq), max(upper, rho_eq), rho_eq,
                       "grid-coupled" if coupled else "grid-monte-carlo", probes.n_x,
                       0 if coupled else probes.n_rho, flags)


@dataclass
class ContainmentReport:
    per_sample: np.ndarray
    fraction: float
    lower: float
    upper: float
    tau: float
    burn_in: int

    @property
    def passed(self) -> bool:
        return bool(np.all(self.per_sample == 1.0))


def check_trajectory_containment(record: TrajectoryRecord, bounds: LimitBounds, burn_in: int,
                                 tau: float = 0.01, field_name: str = "rho_true") -> ContainmentReport:
    """Fraction of points with ``e > burn_in`` inside ``[lower - tau, upper + tau]``."""
    R = getattr(record, field_name)
    if R.shape[0] <= burn_in + 1:
        raise ValueError("record is not longer than the burn-in")
    post = R[burn_in + 1:]
    inside = (post >= bounds.lower - tau) & (post <= bounds.upper + tau)
    per = inside.mean(axis=0)
    return ContainmentReport(per, float(inside.mean()), bounds.lower, bounds.upper, tau, burn_in)


@dataclass
class MonotoneReport:
    checked: int
    violations: list

    @property
    def passed(self) -> bool:
        return not self.violations


def check_monotone(record: TrajectoryRecord, rho_eq: float, band: float = 0.01,
                   field_name: str = "rho_true") -> MonotoneReport:
    """Every step taken from outside ``rho_eq +/- band`` must move toward ``rho_eq``."""
    R = getattr(record, field_name)
    d = R[:-1] - rho_eq
    step = R[1:] - R[:-1]
    active = np.abs(d) > band
    bad = active & ~(step * d < 0)
    return MonotoneReport(int(active.sum()),
                          [(int(e), int(i)) for e, i in zip(*np.nonzero(bad))])


def trajectory_variance(record: TrajectoryRecord, burn_in: int, field_name: str = "rho_true") -> float:
    """Mean over samples of the temporal variance of risk after ``burn_in``."""
    R = getattr(record, field_name)[burn_in + 1:]
    return float(R.var(axis=0).mean())


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance ``sup |F_a - F_b|``."""
    a = np.sort(np.asarray(a, dtype=float).reshape(-1))
    b = np.sort(np.asarray(b, dtype=float).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise ValueError("KS needs two nonempty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


@dataclass
class DistributionTrace:
    """Samples of one coordinate of ``X_e(1)`` at selected epochs."""

    samples: dict
    coordinate: int = 0

    @classmethod
    def from_result(cls, result: ExperimentResult, sample: int = 0, coordinate: int = 0):
        return cls({e: d[:, coordinate] for (e, s), d in result.ks_samples.items() if s == sample},
                   coordinate)

    def pairs(self) -> list:
        es = sorted(self.samples)
        return [(e, 2 * e) for e in es if e > 0 and 2 * e in self.samples]


@dataclass
class KSReport:
    converging: bool
    ks: dict
    final_pair: tuple
    threshold: float


def ks_convergence(trace: DistributionTrace, threshold: float = 0.1, min_m: int = 200) -> KSReport:
    """Flag convergence when ``KS(e, 2e)`` is non-increasing and its last
    value is below ``threshold``."""
    if len(trace.samples) < 3:
        raise ValueError("need at least three sampled epochs")
    if min(len(v) for v in trace.samples.values()) < min_m:
        raise ValueError(f"need at least {min_m} draws per epoch")
    pairs = trace.pairs()
    if not pairs:
        raise ValueError("no (e, 2e) epoch pairs were sampled")
    ks = {pr: ks_statistic(trace.samples[pr[0]], trace.samples[pr[1]]) for pr in pairs}
    vals = [ks[pr] for pr in pairs]
    decreasing = all(b <= a for a, b in zip(vals, vals[1:]))
    return KSReport(bool(decreasing and vals[-1] < threshold), ks, pairs[-1], threshold)


@dataclass
class AttractionInterval:
    I1: float
    I2: float
    delta: float
    gamma: float
    lam: float
    rho_eq: float

    @classmethod
    def build(cls, rho_eq, delta, gamma, lam):
        if gamma <= 0 or lam <= 0:
            raise ValueError("gamma and lambda must be positive")
        h = delta / (gamma * lam)
        return cls(rho_eq - h, rho_eq + h, delta, gamma, lam, rho_eq)

    def contains(self, rho):
        return (rho >= self.I1) & (rho <= self.I2)


@dataclass
class RefitProbes:
    """Replicated refits at probe states ``(epoch, tracked sample)``."""

    epochs: np.ndarray
    rho_o: np.ndarray
    mean_next: np.ndarray
    mean_fit: np.ndarray
    gap: np.ndarray
    next_draws: np.ndarray
    replicates: int


def refit_probes(result: ExperimentResult, probe_epochs, replicates: int = 200,
                 ensemble: int = 500, rng=None) -> RefitProbes:
    """Re-draw ``D_e`` and refit ``rho_e`` many times at chosen epochs.

    For each probe epoch ``e`` and tracked ``x``: ``rho_o`` is the true
    risk under ``G_e``; ``mean_next`` averages, over refits, the true risk
    ``E f(g(rho_e(x), G_e(x)))`` one epoch later; ``mean_fit`` averages the
    refitted score at ``x``; ``gap`` compares the risk reached using the
    averaged score against the average risk reached over refits.
    """
    spec = result.spec
    rng = rng if rng is not None else RngStream(spec.seed).derive("refit-probes")
    X = spec.tracked
    out = {k: [] for k in ("rho_o", "next", "fit", "gap", "draws")}
    epochs = []
    for e in probe_epochs:
        e = int(e)
        if e >= len(result.stack):
            raise ValueError("probe epoch beyond the fitted stack")
        g = intervention_at(spec.intervention, e)
        R = ensemble if g.stochastic else 1
        T = replay(g, result.rho_hist[:e], X, R, rng.derive("ensemble", e).generator(),
                   spec.post_clamp)
        rho_o = eval_truth(spec.truth, e, T).mean(axis=1)
        prefix = ScoreStack(list(result.stack.scores[:e]), spec.intervention)
        fits = np.empty((replicates, X.shape[0]))
        for r in range(replicates):
            sub = rng.derive("refit", e, r)
            X0, _, y, mask = training_rows(spec, prefix, spec.policy, e, sub)
            score = _fit(spec, X0[mask], y[mask], e, sub)
            fits[r] = score.predict(X)
        g_next = intervention_at(spec.intervention, e + 1)

        def reached(rho_rows):
            rr = np.broadcast_to(rho_rows[:, None], T.shape[:2])
            mean, _ = expected_outcome(g_next, spec.truth, e + 1, rr, T, 2000,
                                       rng.derive("mc", e).generator())
            return np.asarray(mean).mean(axis=1)

        draws = np.stack([reached(fits[r]) for r in range(replicates)])
        at_mean = reached(fits.mean(axis=0))
        out["rho_o"].append(rho_o)
        out["next"].append(draws.mean(axis=0))
        out["fit"].append(fits.mean(axis=0))
        out["gap"].append(np.abs(at_mean - draws.mean(axis=0)))
        out["draws"].append(draws)
        epochs.append(e)
    return RefitProbes(np.array(epochs), np.stack(out["rho_o"]), np.stack(out["next"]),
                       np.stack(out["fit"]), np.stack(out["gap"]), np.stack(out["draws"]),
                       replicates)


def measure_delta(probes: RefitProbes) -> float:
    """Largest almost-convexity gap over probe states."""
    return float(probes.gap.max())


def measure_lambda(probes: RefitProbes, rho_eq: float, exclude: float = 0.02) -> float:
    """Smallest order-effect ratio ``(E rho_e(x) - rho_eq) / (rho_e^o(x) - rho_eq)``."""
    d = probes.rho_o - rho_eq
    keep = np.abs(d) >= exclude
    if not keep.any():
        raise ValueError("no probe state is far enough from rho_eq")
    return float(((probes.mean_fit - rho_eq)[keep] / d[keep]).min())


def measure_lambda_outside(probes: RefitProbes, rho_eq: float, delta: float, gamma: float,
                           grid=None) -> float:
    """Largest ``lam`` whose order-effect ratio holds on every probe state
    outside the interval half-width ``delta / (gamma * lam)`` it implies.

    Returns 0 when no positive value is self-consistent.
    """
    d = probes.rho_o - rho_eq
    ratio = np.full(d.shape, np.inf)
    nz = d != 0
    ratio[nz] = (probes.mean_fit - rho_eq)[nz] / d[nz]
    grid = np.linspace(1.0, 0.01, 100) if grid is None else np.sort(np.asarray(grid))[::-1]
    for lam in grid:
        far = np.abs(d) >= delta / (gamma * lam)
        if far.any() and ratio[far].min() >= lam:
            return float(lam)
    return 0.0


@dataclass
class AttractionReport:
    interval: AttractionInterval
    n_outside: int
    n_toward: int
    fraction_toward: float
    n_magnitude: int
    movement: np.ndarray
    outside_by: np.ndarray

    def passed(self, min_fraction: float = 0.95) -> bool:
        return self.n_outside > 0 and self.fraction_toward >= min_fraction


def attraction_check(probes: RefitProbes, interval: AttractionInterval,
                     min_outside: float = 0.05) -> AttractionReport:
    """Direction (and ``gamma*lambda*eps`` magnitude) of expected movement for
    probe states outside ``[I1, I2]`` by at least ``min_outside``."""
    rho = probes.rho_o
    below = interval.I1 - rho
    above = rho - interval.I2
    outside_by = np.maximum(below, above)
    sel = outside_by >= min_outside
    move = probes.mean_next - rho
    toward = np.where(above > 0, move < 0, move > 0)
    big = np.abs(move) >= interval.gamma * interval.lam * outside_by
    # the magnitude bound lives in q-space; report the probability-space count for reference
    n_out = int(sel.sum())
    n_tow = int((toward & sel).sum())
    return AttractionReport(interval, n_out, n_tow, n_tow / n_out if n_out else 0.0,
                            int((big & toward & sel).sum()), move[sel], outside_by[sel])


@dataclass
class DriftIntervals:
    I_rho: tuple
    I_lim: tuple
    alpha: float
    gamma: float
    rho_eq: float
    flags: list = field(default_factory=list)


def drift_intervals(alpha: float, gamma: float, rho_eq: float, truth: GroundTruthModel,
                    g: InterventionModel, q: QTransform = LOGIT, probes: ProbeSpec = ProbeSpec(),
                    rng=None, e: int = 0) -> DriftIntervals:
    """Closed-form ``I_rho`` and probe-based ``I_lim`` for bounded drift.

    ``I_lim``'s lower end is the inf of ``q^-1(-alpha + q(E f(g(rho, x))))``
    over states whose risk is at least ``q^-1(-alpha + q(rho_eq - alpha(1+gamma)/gamma))``;
    the upper end mirrors it. Deterministic ``g`` couples ``rho = f(x)``.
    """
    if alpha < 0 or gamma <= 0:
        raise ValueError("need alpha >= 0 and gamma > 0")
    rng = rng if rng is not None else RngStream(0)
    flags = []
    h = 2.0 * alpha / gamma
    I_rho = (rho_eq - h, rho_eq + h)
    if I_rho[0] < 0 or I_rho[1] > 1:
        flags.append("I_rho clamped to [0, 1]")
        I_rho = (max(I_rho[0], 0.0), min(I_rho[1], 1.0))
    k = alpha * (1.0 + gamma) / gamma
    lo_thr = float(q.inverse(-alpha + q_eval(q, clamp_prob(rho_eq - k))))
    hi_thr = float(q.inverse(alpha + q_eval(q, clamp_prob(rho_eq + k))))
    if alpha == 0:
        lo_thr = hi_thr = rho_eq

    def post(vals, sign):
        if vals.size == 0:
            return vals
        return np.asarray(q.inverse(sign * alpha + q_eval(q, vals)), dtype=float).reshape(-1)

    X = probes.points(truth.p, rng.derive("probes"))
    rho_grid = np.linspace(0.0, 1.0, probes.n_rho)
    lower, upper, f2 = _bounds_from(g, truth, e, X, rho_grid, lo_thr, hi_thr, not g.stochastic,
                                    probes, rng, post)
    flags.extend(f2)
    return DriftIntervals(I_rho, (min(lower, rho_eq), max(upper, rho_eq)), alpha, gamma, rho_eq,
                          flags)


@dataclass
class DriftReport:
    per_sample: list
    fraction: float

    @property
    def passed(self) -> bool:
        return self.fraction == 1.0


def check_drift_conclusion(record: TrajectoryRecord, iv: DriftIntervals, burn_in: int,
                           tau: float = 0.02, eps: float = 0.02) -> DriftReport:
    """Per sample: post-burn-in risk stays within ``I_lim +/- tau``, or the
    final risk is within ``eps`` of an ``I_rho`` endpoint."""
    R = record.rho_true[burn_in + 1:]
    lo, hi = iv.I_lim
    contained = ((R >= lo - tau) & (R <= hi + tau)).all(axis=0)
    final = record.rho_true[-1]
    near_end = (np.abs(final - iv.I_rho[0]) < eps) | (np.abs(final - iv.I_rho[1]) < eps)
    per = ["contained" if c else ("endpoint" if n else "neither")
           for c, n in zip(contained, near_end)]
    ok = contained | near_end
    return DriftReport(per, float(ok.mean()))


@dataclass
class RecoveryReport:
    segments: list
    n: list
    lengths: list
    epsilon0: float

    def recovered(self, skip_first: bool = False) -> bool:
        ns = self.n[1:] if skip_first else self.n
        return all(v is not None for v in ns)


def shock_recovery(record: TrajectoryRecord, change_points, intervals, epsilon0: float = 0.05,
                   field_name: str = "rho_true") -> RecoveryReport:
    """Smallest ``n_i`` per segment after which every sample stays near an
    ``I_rho`` endpoint or inside ``I_lim`` until the next change point."""
    R = getattr(record, field_name)
    E = R.shape[0]
    edges = [0] + [int(c) for c in change_points] + [E]
    if edges[-2] >= E:
        raise ValueError("record does not span all change points")
    if len(intervals) != len(edges) - 1:
        raise ValueError("need one interval set per segment")
    ns, segs, lengths = [], [], []
    for i, iv in enumerate(intervals):
        a, b = edges[i], edges[i + 1]
        seg = R[a:b]
        ok = ((np.abs(seg - iv.I_rho[0]) < epsilon0) | (np.abs(seg - iv.I_rho[1]) < epsilon0)
              | ((seg >= iv.I_lim[0]) & (seg <= iv.I_lim[1])))
        good_row = ok.all(axis=1)
        # smallest n with good_row[n:] all true
        bad = np.flatnonzero(~good_row)
        n = 0 if bad.size == 0 else int(bad[-1]) + 1
        ns.append(n if n < b - a else None)
        segs.append((a, b))
        lengths.append(b - a)
    return RecoveryReport(segs, ns, lengths, epsilon0)


def to_jsonable(obj):
    """Recursively convert reports to JSON-friendly values."""
    if hasattr(obj, "__dataclass_fields__"):
        return {k: to_jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
