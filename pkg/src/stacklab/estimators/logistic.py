"""Logistic regression by iteratively reweighted least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..core import PROB_EPS

RIDGE = 1e-6


@dataclass
class TrainingSet:
    """Pre-intervention covariates with post-intervention outcomes."""

    X: np.ndarray
    y: np.ndarray
    epoch: int = 0

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.shape[0] == 0:
            raise ValueError("training set is empty")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y have different row counts")

    def __len__(self):
        return self.X.shape[0]


@dataclass
class LogisticFit:
    coef: np.ndarray
    intercept: float
    iterations: int
    converged: bool
    flags: tuple = ()


def irls(X, y, tol: float = 1e-8, max_iter: int = 100, ridge: float = RIDGE) -> LogisticFit:
    """Newton iterations on the ridge-penalised mean log-likelihood.

    The objective is ``mean(loglik) - ridge/2 * |coef|^2`` (the intercept is
    not penalised), so duplicating every row leaves the optimum unchanged.

    Parameters
    ----------
    X : ndarray, shape (n, p)
    y : ndarray, shape (n,)
        Labels in ``{0, 1}``.
    tol : float
        Stop once the largest parameter update is below ``tol``.
    max_iter : int
    ridge : float

    Returns
    -------
    LogisticFit
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    A = np.hstack([np.ones((n, 1)), X])
    theta = np.zeros(p + 1)
    pen = np.full(p + 1, ridge)
    pen[0] = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(A @ theta)
        wts = mu * (1.0 - mu)
        grad = A.T @ (y - mu) / n - pen * theta
        H = (A.T * wts) @ A / n + np.diag(pen)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        theta = theta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    flags = []
    if not converged or np.max(np.abs(theta)) > 50.0:
        flags.append("separation")
    return LogisticFit(theta[1:].copy(), float(theta[0]), it, converged, tuple(flags))


def constant_rate(y) -> float:
    return float(np.clip(np.mean(y), PROB_EPS, 1.0 - PROB_EPS))
