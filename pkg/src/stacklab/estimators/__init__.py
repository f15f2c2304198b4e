"""Risk-score estimators: oracle, pointwise Monte-Carlo tables, logistic
regression and bagged regression forests."""

from .forest import BACKEND
from .logistic import TrainingSet, irls
from .scores import (ForestScore, LogisticScore, OracleScore, RiskScore, TableScore,
                     append_score, dumps_score, fit_forest, fit_logistic, load_stack,
                     loads_score, oracle_predict, predict, save_stack, score_from_dict)

__all__ = [
    "BACKEND", "TrainingSet", "irls", "RiskScore", "TableScore", "LogisticScore",
    "ForestScore", "OracleScore", "fit_logistic", "fit_forest", "predict", "oracle_predict",
    "dumps_score", "loads_score", "save_stack", "load_stack", "append_score",
    "score_from_dict",
]
