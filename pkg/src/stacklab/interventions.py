"""Intervention functions ``g(rho, x)`` and a numerical check that they push
risk toward the equivocal level."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .core import LOGIT, QTransform, RngStream, clamp_prob, q_eval
from .ground_truth import GroundTruthModel, eval_truth

IDENTITY = "identity"
DET_CBRT = "deterministic-cbrt"
UNIF_CBRT = "uniform-noise-cbrt"
UNIF_LINEAR = "uniform-noise-linear"
CLAMPED_CBRT = "clamped-signed-cbrt"
HEALTHCARE = "healthcare"
KINDS = (IDENTITY, DET_CBRT, UNIF_CBRT, UNIF_LINEAR, CLAMPED_CBRT, HEALTHCARE)

# support of the multiplicative noise U in the uniform kinds
U_LOW, U_HIGH = -0.5, 1.0


@dataclass(frozen=True)
class HealthRules:
    """Column layout for the healthcare intervention.

    ``continuous`` columns are redrawn from a shifted uniform and clamped to
    ``[cont_low, cont_high]``; ``binary`` columns follow the four-case
    Bernoulli rule; every other column is left untouched.
    """

    continuous: tuple
    binary: tuple
    cont_low: float = 0.0
    cont_high: float = 10.0
    down: float = 3.5
    up: float = 0.5


@dataclass(frozen=True)
class InterventionModel:
    """An intervention ``g(rho, x)`` acting row-wise on covariate batches.

    Parameters
    ----------
    kind : str
        One of ``KINDS``.
    rho_eq : float or object
        Equivocal risk. Objects exposing ``rho_eq_of(X)`` give a per-row value.
    scale : float
        Multiplier on the displacement (``1/10`` for the linear kind).
    signs : tuple of float
        Per-dimension direction for the clamped signed kind.
    clamp : tuple of float, optional
        ``(low, high)`` applied to every output coordinate.
    rules : HealthRules, optional
        Column layout for the healthcare kind.
    """

    kind: str
    rho_eq: object = 0.2
    scale: float = 1.0
    signs: tuple = ()
    clamp: tuple | None = None
    rules: HealthRules | None = None
    q: QTransform = field(default=LOGIT, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown intervention kind {self.kind!r}")
        if isinstance(self.rho_eq, (int, float, np.floating)):
            if not 0.0 < float(self.rho_eq) < 1.0:
                raise ValueError("rho_eq must lie strictly inside (0, 1)")
        elif not hasattr(self.rho_eq, "rho_eq_of"):
            raise ValueError("rho_eq must be a number or expose rho_eq_of(X)")
        if self.kind == CLAMPED_CBRT and not self.signs:
            raise ValueError("clamped-signed-cbrt needs a sign vector")
        if self.kind == HEALTHCARE and self.rules is None:
            raise ValueError("healthcare intervention needs column rules")
        if self.clamp is not None and not self.clamp[0] <= self.clamp[1]:
            raise ValueError("clamp range must have low <= high")
        object.__setattr__(self, "signs", tuple(float(s) for s in self.signs))

    @property
    def stochastic(self) -> bool:
        return self.kind in (UNIF_CBRT, UNIF_LINEAR, HEALTHCARE)

    def rho_eq_at(self, X) -> np.ndarray | float:
        if hasattr(self.rho_eq, "rho_eq_of"):
            return np.asarray(self.rho_eq.rho_eq_of(X), dtype=float)
        return float(self.rho_eq)

    def magnitude(self, rho, X) -> np.ndarray:
        """Signed displacement size before the noise multiplier."""
        d = np.asarray(rho, dtype=float) - self.rho_eq_at(X)
        if self.kind == UNIF_LINEAR:
            return self.scale * d
        return self.scale * np.cbrt(d)

    def apply(self, rho, X, gen: np.random.Generator | None = None) -> np.ndarray:
        """Vectorised ``g``: ``rho`` has shape ``X.shape[:-1]``.

        Stochastic kinds draw one value of ``U`` per row (shared across
        coordinates) from ``gen``.
        """
        X = np.asarray(X, dtype=float)
        rho = np.broadcast_to(np.asarray(rho, dtype=float), X.shape[:-1])
        if np.isnan(rho).any() or (rho < 0).any() or (rho > 1).any():
            raise ValueError("rho must lie in [0, 1]")
        if self.kind == IDENTITY:
            out = X.copy()
        elif self.kind == HEALTHCARE:
            out = _health_apply(self.rules, rho, self.rho_eq_at(X), X, gen)
        else:
            a = self.magnitude(rho, X)
            if self.kind == DET_CBRT:
                out = X - a[..., None]
            elif self.kind == CLAMPED_CBRT:
                signs = np.asarray(self.signs)
                if signs.shape[0] != X.shape[-1]:
                    raise ValueError("sign vector does not match covariate dimension")
                out = X - a[..., None] * signs
            else:
                if gen is None:
                    raise ValueError(f"{self.kind} needs a random generator")
                u = gen.uniform(U_LOW, U_HIGH, size=a.shape)
                out = X - (a * u)[..., None]
        if self.clamp is not None:
            np.clip(out, self.clamp[0], self.clamp[1], out=out)
        return out


@dataclass(frozen=True)
class InterventionSchedule:
    """Epoch-indexed interventions: ``models[i]`` is active from
    ``change_points[i-1]`` until ``change_points[i]``."""

    change_points: tuple
    models: tuple

    def __post_init__(self):
        if len(self.models) != len(self.change_points) + 1:
            raise ValueError("need one intervention per segment")

    def at(self, e: int) -> InterventionModel:
        return self.models[int(np.searchsorted(self.change_points, e, side="right"))]

    @property
    def stochastic(self) -> bool:
        return any(m.stochastic for m in self.models)


def intervention_at(g, e: int) -> InterventionModel:
    return g.at(e) if isinstance(g, InterventionSchedule) else g


def _health_apply(rules: HealthRules, rho, rho_eq, X, gen):
    if gen is None:
        raise ValueError("healthcare intervention needs a random generator")
    d = np.broadcast_to(rho - rho_eq, X.shape[:-1])
    out = X.copy()
    cont = list(rules.continuous)
    if cont:
        lo = X[..., cont] - rules.down * d[..., None]
        hi = X[..., cont] + rules.up * d[..., None]
        u = gen.random(lo.shape)
        a, b = np.minimum(lo, hi), np.maximum(lo, hi)
        out[..., cont] = np.clip(a + (b - a) * u, rules.cont_low, rules.cont_high)
    binv = list(rules.binary)
    if binv:
        xb = X[..., binv]
        dd = d[..., None]
        above = dd > 0
        p_one = np.where(
            above,
            np.where(xb == 1, 2.0 * (1.0 - expit(dd / 2.0)), 0.0),
            np.where(xb == 0, 2.0 * expit(-dd / 2.0) - 1.0, 1.0),
        )
        u = gen.random(xb.shape)
        out[..., binv] = (u < p_one).astype(float)
    return out


def healthcare_intervene(rules: HealthRules, rho, rho_eq, x, rng) -> np.ndarray:
    """Table-driven lifestyle intervention on healthcare covariates.

    Diet and alcohol style columns move uniformly on
    ``[x - down*d, x + up*d]`` (endpoints ordered, then clamped); binary
    columns switch off (``d > 0``) or on (``d <= 0``) with probability
    increasing in ``|d|``, where ``d = rho - rho_eq``.
    """
    X = np.asarray(getattr(x, "values", x), dtype=float)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), X.shape[:-1])
    return _health_apply(rules, rho, np.asarray(rho_eq, dtype=float), X, _gen(rng))


def _gen(rng):
    if rng is None or isinstance(rng, np.random.Generator):
        return rng
    return rng.generator()


def apply_intervention(g: InterventionModel, rho, x, rng=None):
    """Apply ``g(rho, x)``; deterministic kinds ignore ``rng``.

    Accepts a ``CovariateVector`` (returns one) or a raw array batch.
    """
    if hasattr(x, "schema"):
        out = g.apply(rho, x.values[None, :], _gen(rng))[0]
        out = x.schema.clamp(out)
        return type(x)(out, x.schema)
    return g.apply(rho, x, _gen(rng))


def _softplus(z):
    return -log_expit(-z)


def expected_outcome(g: InterventionModel, truth: GroundTruthModel, e: int, rho, X,
                     replicates: int = 2000, rng=None):
    """``E_g f_e(g(rho, x))`` for each row of ``X``.

    Exact for deterministic kinds and for the unclamped uniform kinds under a
    logistic truth (closed-form average over ``U``); Monte Carlo otherwise.

    Returns
    -------
    mean : ndarray
    stderr : ndarray
        Zero where the value is exact.
    """
    X = np.asarray(X, dtype=float)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), X.shape[:-1])
    if not g.stochastic:
        return eval_truth(truth, e, g.apply(rho, X)), np.zeros(rho.shape)
    if g.kind in (UNIF_CBRT, UNIF_LINEAR) and g.clamp is None:
        s = truth.linear(e, X)
        c = g.magnitude(rho, X) * truth.beta_at(e).sum()
        return _mean_logistic_uniform(s, c), np.zeros(rho.shape)
    gen = _gen(rng) if rng is not None else np.random.default_rng(0)
    reps = np.repeat(X[..., None, :], replicates, axis=-2)
    vals = eval_truth(truth, e, g.apply(np.repeat(rho[..., None], replicates, axis=-1), reps, gen))
    return vals.mean(axis=-1), vals.std(axis=-1) / np.sqrt(replicates)


def _mean_logistic_uniform(s, c):
    """``E logistic(s - c U)`` with ``U ~ Uniform(U_LOW, U_HIGH)``."""
    s, c = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(c, dtype=float))
    small = np.abs(c) < 1e-7
    c_safe = np.where(small, 1.0, c)
    width = U_HIGH - U_LOW
    val = (_softplus(s - U_LOW * c_safe) - _softplus(s - U_HIGH * c_safe)) / (width * c_safe)
    mid = expit(s - 0.5 * (U_LOW + U_HIGH) * c)
    out = clamp_prob(np.where(small, mid, val))
    return out[()] if out.ndim == 0 else out


@dataclass
class WellIntentionedReport:
    """Movement of q-transformed expected risk at each probe ``(rho, x)``.

    ``movement`` is ``q(E f(g(rho, x))) - q(f(x))``; ``gamma`` is the grid
    minimum of ``-sign(rho - rho_eq) * movement / |rho - rho_eq|``.
    """

    rho: np.ndarray
    X: np.ndarray
    movement: np.ndarray
    gamma: float
    violations: list
    low_confidence: bool = False
    stderr: np.ndarray | None = None


def verify_well_intentioned(g: InterventionModel, truth: GroundTruthModel, rho_grid, X_grid,
                            replicates: int = 2000, rng=None, e: int = 0,
                            tol: float = 0.0) -> WellIntentionedReport:
    """Check the well-intentioned inequality on every ``(rho, x)`` pair.

    Parameters
    ----------
    rho_grid : array_like, shape (r,)
    X_grid : array_like, shape (k, p)
    replicates : int
        Monte-Carlo draws when no closed form applies.
    tol : float
        Probes within ``tol`` of ``rho_eq`` are excluded from ``gamma``.
    """
    rho_grid = np.asarray(rho_grid, dtype=float).reshape(-1)
    X_grid = np.atleast_2d(np.asarray(X_grid, dtype=float))
    if rho_grid.size == 0 or X_grid.shape[0] == 0:
        raise ValueError("probe grid must be nonempty")
    R, K = rho_grid.size, X_grid.shape[0]
    rho = np.repeat(rho_grid, K)
    X = np.tile(X_grid, (R, 1))
    mean, se = expected_outcome(g, truth, e, rho, X, replicates, rng)
    base = eval_truth(truth, e, X)
    movement = np.asarray(q_eval(g.q, mean) - q_eval(g.q, base), dtype=float)
    d = rho - g.rho_eq_at(X)
    active = np.abs(d) > tol
    ratio = np.full(rho.shape, np.inf)
    ratio[active] = -np.sign(d[active]) * movement[active] / np.abs(d[active])
    violations = np.flatnonzero(active & (ratio <= 0)).tolist()
    gamma = float(max(ratio[active].min(), 0.0)) if active.any() else 0.0
    low = bool(g.stochastic and np.any(se > 0) and replicates < 100)
    return WellIntentionedReport(rho, X, movement, gamma, violations, low, se)


def displacement_moments(g: InterventionModel, rho, x, replicates: int = 20000, rng=None):
    """Mean and variance of ``|g(rho, x) - x|`` over the intervention's noise."""
    x = np.asarray(getattr(x, "values", x), dtype=float)
    gen = _gen(rng) if rng is not None else np.random.default_rng(0)
    X = np.repeat(x[None, :], replicates, axis=0)
    Z = np.linalg.norm(g.apply(np.full(replicates, float(rho)), X, gen) - X, axis=1)
    return float(Z.mean()), float(Z.var())
