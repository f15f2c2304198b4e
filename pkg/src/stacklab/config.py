"""JSON experiment configuration: schema validation and conversion into
engine specs."""

from __future__ import annotations

import copy
import json
from importlib import resources

import jsonschema
import numpy as np

from .core import RngStream
from .engine import EngineSpec, EstimatorSpec, SamplerSpec, UpdatePolicy
from .ground_truth import DriftSpec, GroundTruthModel, even_change_points
from .interventions import CLAMPED_CBRT, InterventionModel, InterventionSchedule


class ConfigError(ValueError):
    """Invalid configuration; ``messages`` name the offending field paths."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


def load_schema(name: str = "experiment-v1.json") -> dict:
    return json.loads(resources.files("stacklab").joinpath("schemas", name).read_text())


def _path(err) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate(cfg: dict, schema: str = "experiment-v1.json") -> dict:
    """Validate ``cfg`` against a shipped schema, raising :class:`ConfigError`."""
    validator = jsonschema.Draft202012Validator(load_schema(schema))
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError(f"{_path(e)}: {e.message}" for e in errors)
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<file>: not valid JSON ({exc})"]) from exc


def builtin_config(name: str) -> dict:
    text = resources.files("stacklab").joinpath("configs", f"{name}.json").read_text()
    return json.loads(text)


def _semantic_checks(cfg: dict) -> None:
    msgs = []
    truth = cfg["truth"]
    beta = truth.get("beta", {"uniform": [0.0, 1.0]})
    p = truth.get("p", len(beta) if isinstance(beta, list) else 3)
    if isinstance(beta, list) and len(beta) != p:
        msgs.append(f"truth.beta: expected {p} coefficients, got {len(beta)}")
    if isinstance(beta, dict) and beta["uniform"][0] > beta["uniform"][1]:
        msgs.append("truth.beta.uniform: low exceeds high")
    drift = truth.get("drift", {"kind": "none"})
    if drift["kind"] == "bounded" and "alpha" not in drift:
        msgs.append("truth.drift.alpha: required for bounded drift")
    if drift["kind"] == "shocks":
        cps = drift.get("change_points")
        if cps is None and "n_shocks" not in drift:
            msgs.append("truth.drift: shocks need change_points or n_shocks")
        if cps is not None and any(b <= a for a, b in zip(cps, cps[1:])):
            msgs.append("truth.drift.change_points: must be strictly increasing")
    params = cfg["intervention"].get("params", {})
    if "clamp" in params and params["clamp"][0] > params["clamp"][1]:
        msgs.append("intervention.params.clamp: low exceeds high")
    if cfg["intervention"]["kind"] == CLAMPED_CBRT and "signs" not in params:
        msgs.append("intervention.params.signs: required for clamped-signed-cbrt")
    if isinstance(params.get("signs"), list) and len(params["signs"]) != p:
        msgs.append("intervention.params.signs: length must equal the covariate dimension")
    est = cfg["estimator"]
    if est["kind"] in ("oracle", "mc-empirical") and est.get("n_train", 0):
        msgs.append("estimator.n_train: pointwise estimators take no training rows")
    if est["kind"] in ("logistic", "forest") and est.get("n_train", 0) < 2:
        msgs.append("estimator.n_train: fitted estimators need at least 2 rows")
    tr = cfg["tracked"]
    if "points" in tr and any(len(r) != p for r in tr["points"]):
        msgs.append("tracked.points: every point needs p coordinates")
    if "points" not in tr and "n" not in tr:
        msgs.append("tracked: give n or points")
    ks = cfg.get("diagnostics", {}).get("ks")
    if ks and any(e > cfg["epochs"] for e in ks.get("epochs", [])):
        msgs.append("diagnostics.ks.epochs: beyond the configured epochs")
    if msgs:
        raise ConfigError(msgs)


def build_spec(cfg: dict, seed: int | None = None, threads: int = 1) -> tuple[EngineSpec, dict]:
    """Validate and turn a config dict into an :class:`EngineSpec`.

    Returns
    -------
    spec : EngineSpec
    diagnostics : dict
        The config's diagnostics block with defaults filled in.
    """
    cfg = copy.deepcopy(cfg)
    validate(cfg)
    _semantic_checks(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    seed = int(cfg.get("seed", 0))
    root = RngStream(seed).derive("config")
    E = int(cfg["epochs"])

    t = cfg["truth"]
    beta = t.get("beta", {"uniform": [0.0, 1.0]})
    p = t.get("p", len(beta) if isinstance(beta, list) else 3)
    if isinstance(beta, dict):
        lo, hi = beta["uniform"]
        beta = root.derive("beta").generator().uniform(lo, hi, size=p)
    d = t.get("drift", {"kind": "none"})
    intercept = float(t.get("intercept", 0.0))
    if d["kind"] == "bounded":
        drift = DriftSpec("bounded", alpha=float(d["alpha"]), seed=root.derive("drift").uint64())
        truth = GroundTruthModel(beta, intercept, drift)
    elif d["kind"] == "shocks":
        cps = d.get("change_points") or list(even_change_points(E + 1, int(d["n_shocks"])))
        drift = DriftSpec("shocks", change_points=tuple(cps), coef_low=d.get("coef_low", -2.0),
                          coef_high=d.get("coef_high", 2.0))
        segs = root.derive("shocks").generator().uniform(
            drift.coef_low, drift.coef_high, size=(len(cps) + 1, p))
        truth = GroundTruthModel(segs[0], intercept, drift, tuple(segs))
    else:
        truth = GroundTruthModel(beta, intercept)

    iv = cfg["intervention"]
    prm = iv.get("params", {})
    kw = dict(rho_eq=float(iv["rho_eq"]), scale=float(prm.get("scale", 1.0)),
              clamp=tuple(prm["clamp"]) if "clamp" in prm else None)
    if prm.get("signs") == "truth":
        if truth.drift.kind == "shocks":
            models = tuple(InterventionModel(iv["kind"], signs=tuple(np.sign(b)), **kw)
                           for b in truth.segment_betas)
            intervention = InterventionSchedule(truth.drift.change_points, models)
        else:
            intervention = InterventionModel(iv["kind"], signs=tuple(np.sign(truth.beta)), **kw)
    else:
        intervention = InterventionModel(iv["kind"], signs=tuple(prm.get("signs", ())), **kw)

    est = EstimatorSpec(**cfg["estimator"])
    pol = UpdatePolicy(**cfg.get("policy", {"kind": "stacked"}))
    tr = cfg["tracked"]
    if "points" in tr:
        tracked = np.array(tr["points"], dtype=float)
    else:
        tracked = root.derive("tracked").generator().uniform(
            tr.get("low", -3.0), tr.get("high", 3.0), size=(tr["n"], p))
    sampler = SamplerSpec(**cfg.get("train_sampler", {"kind": "normal"}))
    diag = cfg.get("diagnostics", {})
    ks = diag.get("ks", {})
    spec = EngineSpec(
        truth=truth, intervention=intervention, estimator=est, policy=pol, epochs=E,
        tracked=tracked, seed=seed, truth_replicates=int(cfg.get("truth_replicates", 2000)),
        sampler=sampler, post_clamp=tuple(cfg["post_clamp"]) if cfg.get("post_clamp") else None,
        ks_epochs=tuple(ks.get("epochs", ())), ks_samples=tuple(ks.get("samples", (0,))),
        ks_m=int(ks.get("m", 1000)), threads=threads, name=cfg.get("name", "experiment"))
    return spec, diag
