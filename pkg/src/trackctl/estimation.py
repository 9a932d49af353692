"""Target-state estimation: Fisher information, k-step prediction, the
maximum-likelihood update with a Gaussian prediction prior, and the weighted
CRB scalar used as the control objective.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .dynamics import TransitionModel
from .measurement import (
    SensorConfig,
    SingularGeometryError,
    _terms,
    stack,
)

# LM schedule for the ML update.
_MLE_MAX_ITER = 50
_MLE_STEP_TOL = 1e-8
_DAMP_INIT = 1e-3
_DAMP_FACTOR = 10.0


@dataclass(frozen=True)
class Prediction:
    """k-step-ahead predicted state and its error covariance."""

    x_pred: np.ndarray
    cov_pred: np.ndarray
    k: int


@dataclass(frozen=True)
class Estimate:
    """Point estimate with plug-in error covariance."""

    x_hat: np.ndarray
    cov: np.ndarray
    converged: bool = True
    n_iter: int = 0


def weight_matrix(dt: float, d: int) -> np.ndarray:
    """blkdiag(I_d, dt*I_d): velocity errors weighted as equivalent position errors."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    w = np.ones(2 * d)
    w[d:] = dt
    return np.diag(w)


def spd_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via Cholesky.

    A single jitter of 1e-10 * mean diagonal scale is added if the factorization
    fails on a numerically near-singular input.
    """
    a = 0.5 * (a + a.T)
    try:
        cho = sla.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(a) / a.shape[0]
        cho = sla.cho_factor(
            a + jitter * np.eye(a.shape[0]), lower=True, check_finite=False
        )
    inv = sla.cho_solve(cho, np.eye(a.shape[0]), check_finite=False)
    return 0.5 * (inv + inv.T)


def fim_contributions(x: np.ndarray, sensors: SensorConfig, sensor_states=None):
    """Per-sensor Fisher information terms at state(s) x, batched.

    x may have arbitrary leading dimensions over the trailing state axis.
    ``sensor_states`` optionally overrides each sensor's state (broadcastable
    against x's leading shape). Returns (terms, singular_counts) where terms
    has shape (M,) + batch + (2d, 2d); singular sensor/state pairs contribute
    zero and are counted.
    """
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    n = x.shape[-1]
    terms = np.zeros((len(sensors),) + batch + (n, n))
    n_singular = 0
    for m, (state, model) in enumerate(sensors):
        s = state if sensor_states is None else sensor_states[m]
        s = np.asarray(s, dtype=float)
        _, var, g_mean, g_var, singular = _terms(x, s, model)
        w_mean = 1.0 / var
        w_var = 0.5 / var**2
        contrib = w_mean[..., None, None] * (
            g_mean[..., :, None] * g_mean[..., None, :]
        ) + w_var[..., None, None] * (g_var[..., :, None] * g_var[..., None, :])
        if np.any(singular):
            n_singular += int(np.count_nonzero(singular))
            contrib = np.where(singular[..., None, None], 0.0, contrib)
        terms[m] = contrib
    return terms, n_singular


def fisher_information(
    x: np.ndarray, sensors: SensorConfig, on_singular: str = "raise"
) -> np.ndarray:
    """Fisher information of the stacked measurement model at target state x.

    J = sum_m [ (dmu/dx)(dmu/dx)^T / var + (dvar/dx)(dvar/dx)^T / (2 var^2) ].
    ``on_singular`` is "raise" (default) or "skip" (drop the offending
    sensor's contribution).
    """
    if on_singular not in ("raise", "skip"):
        raise ValueError("on_singular must be 'raise' or 'skip'")
    terms, n_singular = fim_contributions(np.asarray(x, dtype=float), sensors)
    if n_singular and on_singular == "raise":
        raise SingularGeometryError("sensor coincides with target state")
    # Outer products are exactly symmetric, so the sum is too; no symmetrization
    # needed, which keeps J(A + B) == J(A) + J(B) bitwise.
    return terms.sum(axis=0)


def predict(
    prior: Estimate, k: int, model: TransitionModel, Q: np.ndarray
) -> Prediction:
    """Open-loop k-step prediction under the zero-mean bounded-acceleration model.

    x_pred = F^k x_hat;  cov = F^k C F^k' + sum_{i=1..k} F^(i-1) G Q G' F^(i-1)'.
    """
    if k < 1:
        raise ValueError("prediction horizon must be at least 1")
    fk = model.f_power(k)
    x_pred = fk @ prior.x_hat
    cov = fk @ prior.cov @ fk.T
    gqg = model.G @ Q @ model.G.T
    for i in range(k):
        fi = model.f_power(i)
        cov = cov + fi @ gqg @ fi.T
    return Prediction(x_pred=x_pred, cov_pred=0.5 * (cov + cov.T), k=k)


def _mle_objective(x, y, sensors, x_pred, cov_pred_inv):
    stacked = stack(sensors, x)
    r = y - stacked.mean
    dx = x - x_pred
    return float(
        np.sum(r**2 / stacked.var)
        + np.sum(np.log(stacked.var))
        + dx @ cov_pred_inv @ dx
    )


def _mle_gradient_and_fim(x, y, sensors, x_pred, cov_pred_inv):
    """Gradient of the ML criterion and the Fisher scoring matrix at x."""
    n = x.size
    grad = 2.0 * cov_pred_inv @ (x - x_pred)
    J = np.zeros((n, n))
    value_data = 0.0
    for i, (s, model) in enumerate(sensors):
        mu, var, g_mu, g_var, singular = _terms(x, np.asarray(s, dtype=float), model)
        if singular:
            raise SingularGeometryError("iterate coincides with a sensor position")
        r = y[i] - mu
        grad += -2.0 * r / var * g_mu + (1.0 / var - r**2 / var**2) * g_var
        J += np.outer(g_mu, g_mu) / var + 0.5 * np.outer(g_var, g_var) / var**2
        value_data += r**2 / var + np.log(var)
    dx = x - x_pred
    value = float(value_data + dx @ cov_pred_inv @ dx)
    return value, grad, J


def mle_update(y: np.ndarray, pred: Prediction, sensors: SensorConfig) -> Estimate:
    """Maximum-likelihood state update from stacked measurements y.

    Minimizes  ||y - mu(x)||^2_{Sigma^-1(x)} + ln|Sigma(x)| + ||x - x_pred||^2_{C_pred^-1}
    by damped Fisher scoring started at the prediction. The returned covariance
    is the plug-in value (J(x_hat) + C_pred^-1)^-1. ``converged`` is False when
    the iteration cap was reached; the last iterate is still returned.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (len(sensors),):
        raise ValueError(f"need one measurement per sensor, got shape {y.shape}")
    if len(sensors) == 0:
        raise ValueError("need at least one measurement")
    cov_pred_inv = spd_inverse(pred.cov_pred)

    x = pred.x_pred.copy()
    value, grad, J = _mle_gradient_and_fim(x, y, sensors, pred.x_pred, cov_pred_inv)
    damp = _DAMP_INIT
    converged = False
    n_iter = 0
    for n_iter in range(1, _MLE_MAX_ITER + 1):
        H = 2.0 * (J + cov_pred_inv)
        try:
            step = np.linalg.solve(H + damp * np.eye(x.size), -grad)
        except np.linalg.LinAlgError:
            damp *= _DAMP_FACTOR
            continue
        x_new = x + step
        try:
            value_new, grad_new, J_new = _mle_gradient_and_fim(
                x_new, y, sensors, pred.x_pred, cov_pred_inv
            )
        except SingularGeometryError:
            value_new = np.inf
        if value_new <= value:
            x, value, grad, J = x_new, value_new, grad_new, J_new
            damp = max(damp / _DAMP_FACTOR, 1e-12)
            if np.linalg.norm(step) < _MLE_STEP_TOL * (1.0 + np.linalg.norm(x)):
                converged = True
                break
        else:
            damp *= _DAMP_FACTOR
            if damp > 1e12:
                # No acceptable descent direction left at this scale.
                converged = True
                break

    cov = spd_inverse(fisher_information(x, sensors) + cov_pred_inv)
    return Estimate(x_hat=x, cov=cov, converged=converged, n_iter=n_iter)


def crb_scalar(
    x: np.ndarray, sensors: SensorConfig, pred_cov: np.ndarray, W: np.ndarray
) -> float:
    """Weighted CRB: tr(W (J(x, sensors) + pred_cov^-1)^-1)."""
    J = fisher_information(x, sensors)
    bound = spd_inverse(J + spd_inverse(pred_cov))
    return float(np.trace(W @ bound))
