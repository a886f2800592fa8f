"""Linear heads on frozen embeddings: logistic probe and ridge Cox regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from ..numerics import log_softmax, stable_softmax


@dataclass
class LogisticProbe:
    coef: np.ndarray        # d x k
    intercept: np.ndarray   # k
    classes: np.ndarray
    n_iter: int
    converged: bool

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return stable_softmax(self.decision_function(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.decision_function(X), axis=1)]


def fit_logistic_probe(X, y, C: float = 0.5, max_iter: int = 10_000, tol: float = 1e-6,
                       balanced: bool = True) -> LogisticProbe:
    """Multinomial logistic regression with an L2 penalty of strength ``1 / C``.

    Minimizes ``C * sum_i w_i * CE_i + ||W||^2 / 2`` (intercepts unpenalized),
    with ``w_i = n / (k * n_class)`` when ``balanced``. L-BFGS, stopping at
    gradient norm ``tol`` or ``max_iter`` iterations.
    """
    X = np.asarray(X, dtype=np.float64)
    classes, yi = np.unique(np.asarray(y), return_inverse=True)
    k = len(classes)
    if k < 2:
        raise ValueError("logistic probe needs at least two classes")
    n, d = X.shape
    counts = np.bincount(yi, minlength=k)
    w = n / (k * counts[yi]) if balanced else np.ones(n)
    Y = np.zeros((n, k))
    Y[np.arange(n), yi] = 1.0

    def objective(theta):
        W = theta[:d * k].reshape(d, k)
        b = theta[d * k:]
        logp = log_softmax(X @ W + b, axis=1)
        loss = -C * np.sum(w * logp[np.arange(n), yi]) + 0.5 * np.sum(W * W)
        R = C * w[:, None] * (np.exp(logp) - Y)
        return loss, np.concatenate([(X.T @ R + W).ravel(), R.sum(axis=0)])

    res = minimize(objective, np.zeros(d * k + k), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15, "maxcor": 20})
    return LogisticProbe(res.x[:d * k].reshape(d, k), res.x[d * k:], classes, int(res.nit),
                         bool(res.success))


@dataclass
class CoxModel:
    beta: np.ndarray
    alpha: float
    n_iter: int
    converged: bool

    def risk(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.beta


def _risk_set_starts(times: np.ndarray) -> np.ndarray:
    """For time-sorted data, index of the first row tied with each row."""
    n = len(times)
    start = np.arange(n)
    for i in range(1, n):
        if times[i] == times[i - 1]:
            start[i] = start[i - 1]
    return start


def cox_partial_loglik(beta, X, times, events) -> tuple[float, np.ndarray]:
    """Breslow log partial likelihood and its gradient."""
    order = np.argsort(times, kind="stable")
    X = np.asarray(X, dtype=np.float64)[order]
    t = np.asarray(times, dtype=np.float64)[order]
    e = np.asarray(events).astype(bool)[order]
    eta = X @ beta
    # suffix sums over {j : t_j >= t_i}, evaluated at the first row of each tie group
    start = _risk_set_starts(t)
    m = eta.max()
    wexp = np.exp(eta - m)
    S0 = np.cumsum(wexp[::-1])[::-1][start]
    S1 = np.cumsum((wexp[:, None] * X)[::-1], axis=0)[::-1][start]
    ll = np.sum(eta[e] - (np.log(S0[e]) + m))
    grad = np.sum(X[e] - S1[e] / S0[e][:, None], axis=0)
    return float(ll), grad


def fit_coxnet(X, times, events, alpha: float = 0.07, max_iter: int = 10_000,
               tol: float = 1e-6) -> CoxModel:
    """Ridge-penalized Cox model.

    Maximizes ``loglik(beta) / n - alpha * ||beta||^2 / 2`` (Breslow ties),
    the per-sample scaling under which the usual ``alpha`` values apply.
    """
    X = np.asarray(X, dtype=np.float64)
    events = np.asarray(events)
    if events.sum() == 0:
        raise ValueError("Cox regression needs at least one observed event")
    n, d = X.shape

    def objective(beta):
        ll, g = cox_partial_loglik(beta, X, times, events)
        return -ll / n + 0.5 * alpha * beta @ beta, -g / n + alpha * beta

    res = minimize(objective, np.zeros(d), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15, "maxcor": 20})
    return CoxModel(res.x, alpha, int(res.nit), bool(res.success))
