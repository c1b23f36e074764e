"""Small closed-form / Newton regressors shared by edge models, estimators and metrics."""

from __future__ import annotations

import numpy as np


class FitError(ArithmeticError):
    pass


def _design(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.column_stack([np.ones(x.shape[0]), x])


def fit_linear(x: np.ndarray, y: np.ndarray, ridge: float = 1e-8) -> tuple[float, np.ndarray]:
    """Least squares via normal equations with a small ridge (intercept unpenalized).

    Returns ``(intercept, coef)``.
    """
    a = _design(x)
    gram = a.T @ a
    reg = np.full(a.shape[1], ridge)
    reg[0] = 0.0
    gram[np.diag_indices_from(gram)] += reg
    try:
        beta = np.linalg.solve(gram, a.T @ np.asarray(y, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise FitError(f"singular design matrix: {exc}") from None
    if not np.all(np.isfinite(beta)):
        raise FitError("singular design matrix (non-finite solution)")
    return float(beta[0]), beta[1:]


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(np.asarray(z, dtype=float))
    z = np.asarray(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fit_logistic(
    x: np.ndarray,
    y: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 100,
    ridge: float = 1e-8,
    offset: np.ndarray | None = None,
) -> tuple[float, np.ndarray, bool]:
    """Logistic regression by Newton's method.

    ``y`` may be fractional in ``[0, 1]`` (quasi-binomial). Stops when the
    gradient norm is ``<= tol`` or after ``max_iter`` iterations. Returns
    ``(intercept, coef, converged)``.
    """
    a = _design(x)
    y = np.asarray(y, dtype=float)
    off = 0.0 if offset is None else np.asarray(offset, dtype=float)
    beta = np.zeros(a.shape[1])
    reg = np.full(a.shape[1], ridge)
    reg[0] = 0.0
    converged = False
    for _ in range(max_iter):
        p = sigmoid(a @ beta + off)
        grad = a.T @ (p - y) + reg * beta
        if np.linalg.norm(grad) <= tol:
            converged = True
            break
        w = p * (1.0 - p)
        hess = (a * w[:, None]).T @ a
        hess[np.diag_indices_from(hess)] += reg + 1e-12
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        beta = beta - step
        if not np.all(np.isfinite(beta)):
            raise FitError("logistic fit diverged")
    else:
        p = sigmoid(a @ beta + off)
        converged = np.linalg.norm(a.T @ (p - y) + reg * beta) <= tol
    return float(beta[0]), beta[1:], bool(converged)
