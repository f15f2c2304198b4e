"""Healthcare scenario: a synthetic patient population, nine age by
medical-history cohorts with their own equivocal risk, the lifestyle
intervention, and per-cohort fairness summaries."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import charts
from .core import BINARY, INTEGER, REAL, CovariateVector, Dimension, RngStream, Schema
from .estimators.logistic import TrainingSet
from .estimators.scores import fit_forest
from .ground_truth import GroundTruthModel, eval_truth
from .interventions import HEALTHCARE, HealthRules, InterventionModel

log = logging.getLogger(__name__)

N_DRUGS = 10
AGE_MAX = 99
INTERCEPT = -3.32
FIXED_COEF = {"age": 5e-3, "sex": 0.25, "deprivation": 0.1, "history": 0.05,
              "smoking": 0.2, "diet": 0.1, "alcohol": 0.2}
DRUG_SD = 0.1
SMOKING_RATE = 0.3
DEFAULT_DRUG_RATES = tuple(0.05 * (i + 1) for i in range(N_DRUGS))
HISTORY_CUTS = (4, 7)

HEALTH_SCHEMA = Schema((
    Dimension("age", INTEGER, 0, AGE_MAX),
    Dimension("sex", BINARY),
    Dimension("deprivation", INTEGER, 1, 5),
    Dimension("history", INTEGER, 1, 10),
    Dimension("smoking", BINARY),
    Dimension("diet", REAL, 0, 10),
    Dimension("alcohol", REAL, 0, 10),
) + tuple(Dimension(f"drug{i + 1}", BINARY) for i in range(N_DRUGS)))

FIXED_DIMS = tuple(HEALTH_SCHEMA.index(n) for n in ("age", "sex", "deprivation", "history"))
HEALTH_RULES = HealthRules(
    continuous=(HEALTH_SCHEMA.index("diet"), HEALTH_SCHEMA.index("alcohol")),
    binary=(HEALTH_SCHEMA.index("smoking"),) + tuple(range(7, 7 + N_DRUGS)),
)


def age_pmf() -> np.ndarray:
    """Declining age distribution ``P(a) ∝ 1 - 0.8 a / 100`` on ``0..99``."""
    a = np.arange(AGE_MAX + 1)
    w = 1.0 - 0.8 * a / 100.0
    return w / w.sum()


def age_terciles() -> tuple[int, int]:
    """Smallest ages at which the age CDF reaches 1/3 and 2/3, plus one.

    Ages below the first cut form the youngest tercile.
    """
    cdf = np.cumsum(age_pmf())
    return (int(np.searchsorted(cdf, 1 / 3)) + 1, int(np.searchsorted(cdf, 2 / 3)) + 1)


def sample_population(n: int, rng, drug_rates=DEFAULT_DRUG_RATES) -> np.ndarray:
    """Draw ``n`` independent individuals, shape ``(n, 17)``."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    rates = np.asarray(drug_rates, dtype=float)
    if rates.shape != (N_DRUGS,) or (rates < 0).any() or (rates > 1).any():
        raise ValueError(f"need {N_DRUGS} drug rates in [0, 1]")
    X = np.empty((n, HEALTH_SCHEMA.p))
    X[:, 0] = gen.choice(AGE_MAX + 1, size=n, p=age_pmf())
    X[:, 1] = gen.random(n) < 0.5
    X[:, 2] = gen.integers(1, 6, size=n)
    X[:, 3] = gen.integers(1, 11, size=n)
    X[:, 4] = gen.random(n) < SMOKING_RATE
    X[:, 5] = gen.uniform(0, 10, size=n)
    X[:, 6] = gen.uniform(0, 10, size=n)
    X[:, 7:] = gen.random((n, N_DRUGS)) < rates
    return X


def sample_individual(rng, drug_rates=DEFAULT_DRUG_RATES) -> CovariateVector:
    return CovariateVector(sample_population(1, rng, drug_rates)[0], HEALTH_SCHEMA)


def build_truth(rng, drug_sd: float = DRUG_SD) -> GroundTruthModel:
    """Logistic outcome model with fixed lifestyle coefficients and random
    drug effects ``N(0, drug_sd^2)``."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    beta = np.concatenate([[FIXED_COEF[d.name] for d in HEALTH_SCHEMA.dims[:7]],
                           gen.normal(0.0, drug_sd, size=N_DRUGS)])
    return GroundTruthModel(beta, INTERCEPT)


def default_rho_eq() -> np.ndarray:
    i, j = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    return 0.05 + 0.075 * (i + j)


@dataclass(frozen=True)
class CohortSpec:
    """Three age bands crossed with three history bands.

    ``rho_eq[i][j]`` is the target for age band ``i`` and history band ``j``.
    Bands are half-open on the left of each cut.
    """

    age_cuts: tuple = field(default_factory=age_terciles)
    history_cuts: tuple = HISTORY_CUTS
    rho_eq: tuple = field(default_factory=lambda: tuple(map(tuple, default_rho_eq())))

    def __post_init__(self):
        r = np.asarray(self.rho_eq, dtype=float)
        if r.shape != (3, 3):
            raise ValueError("rho_eq must be a 3x3 grid")
        if not ((r > 0) & (r < 1)).all():
            raise ValueError("every cohort rho_eq must lie strictly inside (0, 1)")
        for name, cuts, lo, hi in (("age", self.age_cuts, 0, AGE_MAX),
                                   ("history", self.history_cuts, 1, 10)):
            if len(cuts) != 2 or not lo < cuts[0] < cuts[1] <= hi:
                raise ValueError(f"{name} cuts must be two increasing values inside the range")
        object.__setattr__(self, "rho_eq", tuple(tuple(float(v) for v in row) for row in r))

    @property
    def n_cohorts(self) -> int:
        return 9

    def bands(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=float)
        return (np.digitize(X[..., 0], self.age_cuts), np.digitize(X[..., 3], self.history_cuts))

    def cohort_of(self, X) -> np.ndarray:
        a, h = self.bands(X)
        return 3 * a + h

    def rho_eq_of(self, X) -> np.ndarray:
        a, h = self.bands(X)
        return np.asarray(self.rho_eq)[a, h]

    def label(self, c: int) -> str:
        a, h = divmod(int(c), 3)
        ac, hc = self.age_cuts, self.history_cuts
        ages = [f"0-{ac[0] - 1}", f"{ac[0]}-{ac[1] - 1}", f"{ac[1]}-{AGE_MAX}"]
        hist = [f"1-{hc[0] - 1}", f"{hc[0]}-{hc[1] - 1}", f"{hc[1]}-10"]
        return f"age {ages[a]} / history {hist[h]}"


def healthcare_intervention(cohorts: CohortSpec) -> InterventionModel:
    return InterventionModel(HEALTHCARE, rho_eq=cohorts, rules=HEALTH_RULES)


@dataclass(frozen=True)
class CohortStats:
    cohort: int
    label: str
    n: int
    rho_eq: float
    mean: float
    variance: float

    @property
    def distance(self) -> float:
        return abs(self.mean - self.rho_eq)


@dataclass
class FairnessReport:
    """Per-cohort risk summaries before and after the interventions.

    ``empty`` lists cohorts with no members; they have no stats.
    """

    pre: dict
    post: dict
    empty: tuple = ()

    def variance_reduced(self) -> dict:
        return {c: self.post[c].variance < self.pre[c].variance for c in self.pre}

    def mean_attracted(self) -> dict:
        return {c: self.post[c].distance < self.pre[c].distance for c in self.pre}

    def passed(self) -> bool:
        return all(self.variance_reduced().values()) and all(self.mean_attracted().values())


def cohort_stats(risk, cohort, cohorts: CohortSpec) -> tuple[dict, tuple]:
    stats, empty = {}, []
    grid = np.asarray(cohorts.rho_eq)
    for c in range(cohorts.n_cohorts):
        r = risk[cohort == c]
        if r.size == 0:
            empty.append(c)
            continue
        stats[c] = CohortStats(c, cohorts.label(c), int(r.size), float(grid[divmod(c, 3)]),
                               float(r.mean()), float(r.var()))
    return stats, tuple(empty)


@dataclass(frozen=True)
class HealthcareConfig:
    n: int = 10000
    epochs: int = 20
    n_trees: int = 500
    max_depth: int = 12
    min_leaf: float = 5
    features_per_split: int | None = None
    truth_replicates: int = 50
    drug_rates: tuple = DEFAULT_DRUG_RATES
    cohorts: CohortSpec = field(default_factory=CohortSpec)
    seed: int = 0
    threads: int = 1
    oob: bool = True

    def __post_init__(self):
        if self.n < 100:
            raise ValueError("the healthcare simulation needs at least 100 individuals")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.truth_replicates < 1 or self.n_trees < 1:
            raise ValueError("truth_replicates and n_trees must be positive")


@dataclass
class HealthcareResult:
    """Outputs of :func:`run_healthcare`.

    ``risk[e, i]`` is the expected true risk of individual ``i`` after ``e``
    interventions, averaged over ``truth_replicates`` intervention draws.
    ``covariates[e]`` is one realised covariate path, shape ``(n, 17)``.
    """

    config: HealthcareConfig
    X: np.ndarray
    cohort: np.ndarray
    truth: GroundTruthModel
    risk: np.ndarray
    covariates: np.ndarray
    scores: list
    fairness: FairnessReport
    per_epoch: list
    runtime: float = 0.0


def run_healthcare(config: HealthcareConfig, progress=None) -> HealthcareResult:
    """Stacked lifestyle interventions on a fixed population.

    Each epoch observes one realised outcome per individual, fits a fresh
    forest to the original covariates, then moves every individual with the
    cohort-specific intervention driven by that forest's score. Expected
    risks average over an ensemble of independent intervention draws.
    """
    t0 = time.perf_counter()
    cfg = config
    root = RngStream(cfg.seed).derive("healthcare")
    X = sample_population(cfg.n, root.derive("population"), cfg.drug_rates)
    truth = build_truth(root.derive("truth"))
    g = healthcare_intervention(cfg.cohorts)
    cohort = cfg.cohorts.cohort_of(X)
    R = int(cfg.truth_replicates)
    T = np.repeat(X[:, None, :], R, axis=1)
    E = int(cfg.epochs)
    risk = np.empty((E + 1, cfg.n))
    path = np.empty((E + 1, cfg.n, X.shape[1]))
    scores, per_epoch = [], []
    for e in range(E + 1):
        risk[e] = eval_truth(truth, e, T).mean(axis=1)
        path[e] = T[:, 0, :]
        y = (root.derive("outcome", e).generator().random(cfg.n)
             < eval_truth(truth, e, T[:, 0, :])).astype(float)
        score = fit_forest(TrainingSet(X, y, e), cfg.n_trees, cfg.max_depth, cfg.min_leaf,
                           cfg.features_per_split, root.derive("fit", e), cfg.threads,
                           oob=cfg.oob)
        scores.append(score)
        rho = score.predict(X)
        stats, _ = cohort_stats(risk[e], cohort, cfg.cohorts)
        per_epoch.append(stats)
        if progress is not None:
            progress(e, risk[e], rho, score)
        if e < E:
            gen = root.derive("chain", e).generator()
            T = g.apply(np.broadcast_to(rho[:, None], T.shape[:-1]), T, gen)
    pre, empty = cohort_stats(risk[0], cohort, cfg.cohorts)
    post, _ = cohort_stats(risk[E], cohort, cfg.cohorts)
    for c in empty:
        log.warning("cohort %d (%s) has no members; metrics omitted", c, cfg.cohorts.label(c))
    return HealthcareResult(cfg, X, cohort, truth, risk, path, scores,
                            FairnessReport(pre, post, empty), per_epoch,
                            time.perf_counter() - t0)


def write_fairness_csv(result: HealthcareResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cohort", "label", "epoch", "n", "mean", "variance", "rho_eq"])
        for e, stats in enumerate(result.per_epoch):
            for c, s in stats.items():
                w.writerow([c, s.label, e, s.n, repr(s.mean), repr(s.variance), repr(s.rho_eq)])


def write_risk_csv(result: HealthcareResult, path, epochs=None) -> None:
    """Per-individual expected risk, long format."""
    E = result.risk.shape[0] - 1
    epochs = range(E + 1) if epochs is None else epochs
    rho_eq = result.config.cohorts.rho_eq_of(result.X)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["individual", "cohort", "epoch", "risk", "rho_eq"])
        for e in epochs:
            for i in range(result.X.shape[0]):
                w.writerow([i, int(result.cohort[i]), e, repr(float(result.risk[e, i])),
                            repr(float(rho_eq[i]))])


def read_fairness_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("cohort", "epoch", "n"):
            r[k] = int(r[k])
        for k in ("mean", "variance", "rho_eq"):
            r[k] = float(r[k])
    return rows


def config_from_dict(cfg: dict) -> HealthcareConfig:
    """Build a :class:`HealthcareConfig` from a validated config dict."""
    coh = cfg.get("cohorts", {})
    age = coh.get("age_cuts", "terciles")
    cohorts = CohortSpec(
        age_cuts=age_terciles() if age == "terciles" else tuple(age),
        history_cuts=tuple(coh.get("history_cuts", HISTORY_CUTS)),
        rho_eq=tuple(map(tuple, coh.get("rho_eq", default_rho_eq().tolist()))),
    )
    forest = cfg.get("forest", {})
    return HealthcareConfig(
        n=int(cfg.get("n", 10000)), epochs=int(cfg.get("epochs", 20)),
        n_trees=int(forest.get("n_trees", 500)), max_depth=int(forest.get("max_depth", 12)),
        min_leaf=forest.get("min_leaf", 5), features_per_split=forest.get("features_per_split"),
        truth_replicates=int(cfg.get("truth_replicates", 50)),
        drug_rates=tuple(cfg.get("drug_rates", DEFAULT_DRUG_RATES)), cohorts=cohorts,
        seed=int(cfg.get("seed", 0)), oob=bool(forest.get("oob", True)))


HEALTH_REPORT_FORMAT = "stacklab.healthcare/1"


def fairness_json(result: HealthcareResult) -> dict:
    """Versioned summary: per-cohort pre/post stats, the two relative
    checks and the forest sanity check on the first fit."""
    f = result.fairness
    first = result.scores[0]
    oob_ok = first.oob_mse is not None and first.oob_mse < first.label_var
    cohorts = {}
    for c in f.pre:
        cohorts[str(c)] = {"label": f.pre[c].label, "n": f.pre[c].n, "rho_eq": f.pre[c].rho_eq,
                           "pre": {"mean": f.pre[c].mean, "variance": f.pre[c].variance},
                           "post": {"mean": f.post[c].mean, "variance": f.post[c].variance},
                           "variance_reduced": f.variance_reduced()[c],
                           "mean_attracted": f.mean_attracted()[c]}
    return {"format": HEALTH_REPORT_FORMAT, "seed": result.config.seed, "n": result.config.n,
            "epochs": result.config.epochs, "passed": f.passed(), "empty_cohorts": list(f.empty),
            "forest": {"oob_mse": first.oob_mse, "label_variance": first.label_var,
                       "learns": bool(oob_ok)},
            "cohorts": cohorts}


def write_healthcare_outputs(result: HealthcareResult, out, charts_on: bool = True,
                             per_individual: bool = True) -> dict:
    os.makedirs(out, exist_ok=True)
    paths = {"fairness": os.path.join(out, "fairness.csv"),
             "report": os.path.join(out, "fairness.json")}
    write_fairness_csv(result, paths["fairness"])
    with open(paths["report"], "w") as fh:
        json.dump(fairness_json(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if per_individual or charts_on:
        paths["risk"] = os.path.join(out, "risk.csv")
        write_risk_csv(result, paths["risk"])
    if charts_on:
        E = result.config.epochs
        for tag, eps in (("pre", (0,)), ("post", (E,)), ("prepost", (0, E))):
            paths[f"chart_{tag}"] = charts.beeswarm_by_cohort(
                paths["risk"], os.path.join(out, f"cohorts_{tag}.svg"), epochs=eps)
    return paths
