"""Plain logistic regression by iteratively reweighted least squares.

Shared by the probability stacker and by the mixed model's degenerate
(zero random-effect variance) reference path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

SEPARATION_BOUND = 30.0  # |coefficient| on the logit scale considered divergent


@dataclass
class IrlsResult:
    beta: np.ndarray
    deviance: float
    iterations: int
    converged: bool
    separated: bool


def deviance(X, y, beta) -> float:
    """-2 log-likelihood, numerically stable for large |eta|."""
    eta = X @ beta
    return 2.0 * float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def irls(X, y, tol_coef: float = 1e-10, tol_dev: float = 1e-12,
         max_iter: int = 200) -> IrlsResult:
    """Maximum-likelihood fit with step-halving.

    Stops when the largest coefficient change drops below tol_coef or the
    relative deviance change below tol_dev. Perfect separation shows up as
    coefficients marching past SEPARATION_BOUND while the deviance still
    improves; the fit stops there and flags it, returning the direction
    reached.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    beta = np.zeros(p)
    dev = deviance(X, y, beta)
    separated = False
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = X @ beta
        mu = expit(eta)
        w = np.maximum(mu * (1.0 - mu), 1e-10)
        z = eta + (y - mu) / w
        Xw = X * w[:, None]
        try:
            beta_new = np.linalg.solve(X.T @ Xw, Xw.T @ z)
        except np.linalg.LinAlgError:
            raise ValueError("singular weighted design; features may be collinear")
        step = beta_new - beta
        # Halve the step while it worsens the deviance.
        scale = 1.0
        dev_new = deviance(X, y, beta + step)
        for _ in range(30):
            if dev_new <= dev + 1e-12:
                break
            scale *= 0.5
            dev_new = deviance(X, y, beta + scale * step)
        beta = beta + scale * step
        improving = dev - dev_new > 1e-12
        max_change = float(np.max(np.abs(scale * step)))
        rel_dev = abs(dev - dev_new) / max(abs(dev), 1.0)
        dev = dev_new
        if np.max(np.abs(beta)) > SEPARATION_BOUND and improving:
            separated = True
            break
        if max_change < tol_coef or rel_dev < tol_dev:
            converged = True
            break
    return IrlsResult(beta=beta, deviance=dev, iterations=it,
                      converged=converged, separated=separated)
