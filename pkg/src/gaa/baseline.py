"""Comparison model: single-alpha RWR profiles fed to weighted L2 logistic regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from gaa.diffusion import DEFAULT_MAX_ITER, DEFAULT_TOL, rwr_steady_state
from gaa.errors import ConvergenceError, InputError
from gaa.graph import CompoundSet, SharedGraph

DEFAULT_ALPHA = 0.5
DEFAULT_L2 = 1e-2
GRAD_TOL = 1e-6


@dataclass(frozen=True)
class LinearModel:
    w: np.ndarray
    b: float
    l2: float
    alpha: float = DEFAULT_ALPHA


def baseline_features(
    graph: SharedGraph,
    compounds: CompoundSet,
    alpha: float = DEFAULT_ALPHA,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """One RWR steady state per compound, as rows of an ``M x N`` matrix."""
    if compounds.n_compounds == 0:
        return np.zeros((0, graph.n_nodes))
    return rwr_steady_state(graph, compounds.dense(), alpha, tol, max_iter).T.copy()


def _objective(theta, X, y, sw, l2):
    w, b = theta[:-1], theta[-1]
    margin = X @ w + b
    sign = 2.0 * y - 1.0
    # log(1 + exp(-s*m)) evaluated stably
    loss = np.dot(sw, np.logaddexp(0.0, -sign * margin)) + 0.5 * l2 * np.dot(w, w)
    p = 0.5 * (1.0 + np.tanh(0.5 * margin))
    r = sw * (p - y)
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ r + l2 * w
    grad[-1] = r.sum()
    return loss, grad


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    class_weights=(1.0, 1.0),
    l2: float = DEFAULT_L2,
    init: np.ndarray | None = None,
    max_iter: int = 20_000,
    alpha: float = DEFAULT_ALPHA,
) -> LinearModel:
    """Minimise ``mean_i w_{y_i} log(1 + exp(-s_i f(x_i))) + l2/2 |w|^2`` (bias unpenalised).

    Raises :class:`ConvergenceError` unless the final gradient norm is at most 1e-6.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise InputError("one feature row per label required")
    if np.unique(y).size < 2:
        raise InputError("logistic regression needs both classes")
    if l2 < 0:
        raise InputError("l2 must be non-negative")
    sw = np.asarray(class_weights, dtype=np.float64)[y.astype(np.int64)] / y.size
    theta0 = np.zeros(X.shape[1] + 1) if init is None else np.asarray(init, dtype=np.float64)
    res = scipy.optimize.minimize(
        _objective, theta0, args=(X, y, sw, l2), jac=True, method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": 1e-12, "ftol": 0.0, "maxcor": 30},
    )
    theta = res.x
    _, grad = _objective(theta, X, y, sw, l2)
    gnorm = float(np.linalg.norm(grad))
    if gnorm > GRAD_TOL:
        raise ConvergenceError(
            f"logistic regression stopped with gradient norm {gnorm:.2e} ({res.message})",
            residual=gnorm, iterations=res.nit,
        )
    return LinearModel(theta[:-1].copy(), float(theta[-1]), l2, alpha)


def objective_value(model: LinearModel, X, y, class_weights=(1.0, 1.0)) -> tuple[float, np.ndarray]:
    """Loss and gradient at ``model`` (for optimality checks)."""
    y = np.asarray(y, dtype=np.float64)
    sw = np.asarray(class_weights, dtype=np.float64)[y.astype(np.int64)] / y.size
    return _objective(np.r_[model.w, model.b], np.asarray(X, np.float64), y, sw, model.l2)


def baseline_predict(model: LinearModel, features: np.ndarray) -> np.ndarray:
    """Positive-class probability per feature row."""
    margin = np.atleast_2d(features) @ model.w + model.b
    return 0.5 * (1.0 + np.tanh(0.5 * margin))
