"""Simulation laboratory for stacked risk-score interventions."""

from .core import LOGIT, CovariateVector, EpochClock, QTransform, RngStream, Schema, derive_stream, q_eval
from .ground_truth import (DriftSpec, GroundTruthModel, OutcomeDraw, draw_outcome, eval_truth,
                           sample_shock_sequence)
from .interventions import (InterventionModel, InterventionSchedule, apply_intervention,
                            healthcare_intervene, verify_well_intentioned)

__version__ = "0.1.0"
