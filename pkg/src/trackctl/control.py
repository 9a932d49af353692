"""Sensor-motion planning by minimizing an expected CRB over control sequences.

The planner approximates the expectation over future target trajectories with
deterministic sigma-point samples, relaxes the quadratic acceleration bound to
a per-axis box, and solves the resulting smooth problem with a log-barrier
interior-point method. Objective derivatives use central finite differences
(the CRB-through-matrix-inverse chain rule is not worth hand-coding at this
problem size); barrier derivatives are analytic.

Everything here is deterministic: no randomized restarts, fixed iteration
order, so symmetric problems resolve reproducibly.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .dynamics import TransitionModel
from .estimation import Estimate, predict, spd_inverse
from .measurement import SensorConfig, _terms

logger = logging.getLogger(__name__)

DEFAULT_ETA = 3.0

# Log-barrier schedule and inner-solve controls.
_BARRIER_INIT = 1.0
_BARRIER_SHRINK = 0.2
_BARRIER_ROUNDS = 6
_GRAD_TOL = 1e-6
_MAX_INNER = 40
_FD_STEP = 1e-4
_BOUNDARY_FRAC = 0.995


@dataclass(frozen=True)
class BoxBounds:
    """Componentwise bounds on sensor states (position and velocity).

    Entries may be -inf/+inf to leave a component unconstrained.
    """

    s_min: np.ndarray
    s_max: np.ndarray

    def __post_init__(self):
        s_min = np.asarray(self.s_min, dtype=float)
        s_max = np.asarray(self.s_max, dtype=float)
        object.__setattr__(self, "s_min", s_min)
        object.__setattr__(self, "s_max", s_max)
        if s_min.shape != s_max.shape:
            raise ValueError("bound vectors must have equal shape")
        if not np.all(s_min < s_max):
            raise ValueError("require s_min < s_max componentwise")


@dataclass(frozen=True)
class SigmaPointSet:
    """Deterministic samples of one target's trajectory variable.

    ``points`` has shape (2*d_z+1, d_z) where d_z = (2+k)*d; row 0 is the
    center [x_hat; 0], followed by the +/- pairs along scaled square-root
    columns of the spread matrix.
    """

    points: np.ndarray
    center: np.ndarray
    spread: np.ndarray
    d: int
    k: int


@dataclass
class ControlResult:
    """Planned control sequence with solver diagnostics.

    ``U`` has shape (M, k, d): row m holds sensor m's accelerations for steps
    t+1 .. t+k. ``singular_skips`` counts (sensor, sigma-point) information
    terms dropped for near-coincident geometry during the solve.
    """

    U: np.ndarray
    converged: bool
    feasible: bool
    singular_skips: int
    objective_value: float


def relaxed_bound(u_max: float, d: int) -> float:
    """Per-axis bound u_max/sqrt(d); the inscribed box of the 2-norm ball."""
    if not u_max > 0:
        raise ValueError("u_max must be positive")
    if d < 1:
        raise ValueError("dimension must be positive")
    return u_max / np.sqrt(d)


def _spread_matrix(cov: np.ndarray, Q: np.ndarray, k: int) -> np.ndarray:
    d = Q.shape[0]
    dz = (2 + k) * d
    spread = np.zeros((dz, dz))
    spread[: 2 * d, : 2 * d] = cov
    for i in range(k):
        lo = 2 * d + i * d
        spread[lo : lo + d, lo : lo + d] = Q
    return spread


def _points_from_root(center: np.ndarray, root: np.ndarray, eta: float) -> np.ndarray:
    dz = center.size
    offsets = np.sqrt(eta) * root
    points = np.empty((2 * dz + 1, dz))
    points[0] = center
    points[1 : dz + 1] = center[None, :] + offsets.T
    points[dz + 1 :] = center[None, :] - offsets.T
    return points


def sigma_points(
    est: Estimate, Q: np.ndarray, k: int, eta: float = DEFAULT_ETA
) -> SigmaPointSet:
    """Sigma-point set for the trajectory variable [x_t; a_1; ...; a_k].

    The spread matrix is blkdiag(cov, Q, ..., Q); points are the center plus
    and minus sqrt(eta) times the columns of its lower Cholesky factor.
    """
    if k < 1:
        raise ValueError("horizon must be at least 1")
    if not eta > 0:
        raise ValueError("eta must be positive")
    cov = np.asarray(est.cov, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if cov.shape != (2 * Q.shape[0], 2 * Q.shape[0]):
        raise ValueError("estimate covariance inconsistent with Q dimension")
    spread = _spread_matrix(cov, Q, k)
    try:
        root = np.linalg.cholesky(spread)
    except np.linalg.LinAlgError as exc:
        raise ValueError("sigma-point spread matrix is not positive definite") from exc
    center = np.concatenate([est.x_hat, np.zeros(k * Q.shape[0])])
    points = _points_from_root(center, root, eta)
    return SigmaPointSet(points=points, center=center, spread=spread, d=Q.shape[0], k=k)


def _psd_factor(p: np.ndarray) -> np.ndarray:
    """Square root F with F F' = p for symmetric PSD p (zeros allowed)."""
    try:
        return np.linalg.cholesky(p)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(p)
        if vals.min() < -1e-8 * max(vals.max(), 1.0):
            raise ValueError("spread matrix is indefinite")
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _trajectory_points(est: Estimate, Q: np.ndarray, k: int, eta: float) -> np.ndarray:
    """Sigma points tolerant of rank-deficient spread, for internal planning.

    A spread of exactly zero collapses to the single center point, which makes
    zero-spread planning bit-identical to point-prediction mode.
    """
    spread = _spread_matrix(np.asarray(est.cov, dtype=float), np.asarray(Q, float), k)
    root = _psd_factor(spread)
    center = np.concatenate([est.x_hat, np.zeros(k * Q.shape[0])])
    points = _points_from_root(center, root, eta)
    if np.all(points == center):
        points = center[None, :]
    return points


def trajectory_endpoint(z: np.ndarray, model: TransitionModel) -> np.ndarray:
    """Map a trajectory vector [x_t; a_1..a_k] to the state k steps ahead."""
    z = np.asarray(z, dtype=float)
    d = model.d
    if z.ndim != 1 or (z.size - 2 * d) % d != 0 or z.size < 3 * d:
        raise ValueError(f"trajectory vector has invalid length {z.size} for d={d}")
    k = (z.size - 2 * d) // d
    return _endpoint_batch(z[None, :], model, k)[0]


def _endpoint_batch(points: np.ndarray, model: TransitionModel, k: int) -> np.ndarray:
    """Trajectory endpoints for the rows of (L, (2+k)d)."""
    d = model.d
    states = points[:, : 2 * d] @ model.f_power(k).T
    for i in range(k):
        coef = model.f_power(k - 1 - i) @ model.G
        states = states + points[:, 2 * d + i * d : 2 * d + (i + 1) * d] @ coef.T
    return states


def _input_map(model: TransitionModel, k: int, upto: int) -> np.ndarray:
    """(2d, k*d) map from a sensor's stacked inputs to its state at step ``upto``.

    Columns for inputs applied at or after ``upto`` are zero.
    """
    d = model.d
    T = np.zeros((2 * d, k * d))
    for j in range(upto):
        T[:, j * d : (j + 1) * d] = model.f_power(upto - 1 - j) @ model.G
    return T


def _inv2(a: np.ndarray) -> np.ndarray:
    """Batched closed-form inverse of symmetric (..., 2, 2)."""
    a00, a01, a11 = a[..., 0, 0], a[..., 0, 1], a[..., 1, 1]
    det = a00 * a11 - a01 * a01
    out = np.empty_like(a)
    out[..., 0, 0] = a11 / det
    out[..., 0, 1] = out[..., 1, 0] = -a01 / det
    out[..., 1, 1] = a00 / det
    return out


def _inv3(a: np.ndarray) -> np.ndarray:
    """Batched closed-form (cofactor) inverse of symmetric (..., 3, 3)."""
    a00, a01, a02 = a[..., 0, 0], a[..., 0, 1], a[..., 0, 2]
    a11, a12, a22 = a[..., 1, 1], a[..., 1, 2], a[..., 2, 2]
    c00 = a11 * a22 - a12 * a12
    c01 = a02 * a12 - a01 * a22
    c02 = a01 * a12 - a02 * a11
    det = a00 * c00 + a01 * c01 + a02 * c02
    out = np.empty_like(a)
    out[..., 0, 0] = c00 / det
    out[..., 0, 1] = out[..., 1, 0] = c01 / det
    out[..., 0, 2] = out[..., 2, 0] = c02 / det
    out[..., 1, 1] = (a00 * a22 - a02 * a02) / det
    out[..., 1, 2] = out[..., 2, 1] = (a01 * a02 - a00 * a12) / det
    out[..., 2, 2] = (a00 * a11 - a01 * a01) / det
    return out


def _sym_inv_batch(a: np.ndarray) -> np.ndarray:
    """Inverse of batched symmetric positive definite (..., 2d, 2d).

    Blockwise Schur-complement formula with closed-form d x d inverses;
    much faster than LAPACK dispatch on large batches of small matrices.
    """
    n = a.shape[-1]
    if n == 4:
        inv_small = _inv2
    elif n == 6:
        inv_small = _inv3
    else:
        return np.linalg.inv(a)
    h = n // 2
    P = a[..., :h, :h]
    Qb = a[..., :h, h:]
    R = a[..., h:, h:]
    Pi = inv_small(P)
    PiQ = Pi @ Qb
    Si = inv_small(R - np.swapaxes(Qb, -1, -2) @ PiQ)
    TR = -(PiQ @ Si)
    out = np.empty_like(a)
    out[..., :h, :h] = Pi - TR @ np.swapaxes(PiQ, -1, -2)
    out[..., :h, h:] = TR
    out[..., h:, :h] = np.swapaxes(TR, -1, -2)
    out[..., h:, h:] = Si
    return out


class _PlannerObjective:
    """Expected-CRB objective over sensor inputs, with batched evaluation.

    Target sigma endpoints are fixed during a solve, so they are precomputed;
    only the sensor endpoint states depend on the inputs.
    """

    def __init__(self, points_list, pred_covs, sensors: SensorConfig, W, model, k):
        self.model = model
        self.k = k
        self.d = model.d
        self.W = np.asarray(W, dtype=float)
        self.sensors = [(np.asarray(s, dtype=float), m) for s, m in sensors]
        self.M = len(self.sensors)
        self.endpoints_x = [
            _endpoint_batch(np.atleast_2d(np.asarray(pts, float)), model, k)
            for pts in points_list
        ]
        self.K = [spd_inverse(np.asarray(c, dtype=float)) for c in pred_covs]
        self.T = _input_map(model, k, k)
        fk = model.f_power(k)
        if self.sensors:
            self.s_base = np.array([fk @ s for s, _ in self.sensors])  # (M, 2d)
        else:
            self.s_base = np.zeros((0, 2 * self.d))

    def sensor_endpoints(self, u_flat: np.ndarray) -> np.ndarray:
        """(M, 2d) sensor states at the end of the horizon."""
        return self.s_base + u_flat @ self.T.T

    @staticmethod
    def _contributions(x: np.ndarray, s: np.ndarray, mdl):
        """Information term per broadcasted (x, s) pair plus singular count."""
        _, var, g_mu, g_var, singular = _terms(x, s, mdl)
        w_mu = 1.0 / var
        w_var = 0.5 / var**2
        contrib = w_mu[..., None, None] * (
            g_mu[..., :, None] * g_mu[..., None, :]
        ) + w_var[..., None, None] * (g_var[..., :, None] * g_var[..., None, :])
        n_sing = int(np.count_nonzero(singular))
        if n_sing:
            contrib = np.where(singular[..., None, None], 0.0, contrib)
        return contrib, n_sing

    def _per_sensor_terms(self, s_end: np.ndarray):
        """Per target: (M, L, 2d, 2d) information terms at the sigma endpoints.

        Cached on the endpoint array; the line search and the gradient call
        evaluate the same accepted point back to back.
        """
        key = s_end.tobytes()
        cached = getattr(self, "_terms_cache", None)
        if cached is not None and cached[0] == key:
            return cached[1], cached[2]
        per_target = []
        skips = 0
        for X in self.endpoints_x:
            terms = np.empty((self.M, X.shape[0], 2 * self.d, 2 * self.d))
            for m, (_, mdl) in enumerate(self.sensors):
                terms[m], n_sing = self._contributions(X, s_end[m], mdl)
                skips += n_sing
            per_target.append(terms)
        self._terms_cache = (key, per_target, skips)
        return per_target, skips

    def value(self, u_flat: np.ndarray):
        """Objective value and singular-skip count at stacked inputs (M, k*d)."""
        s_end = self.sensor_endpoints(u_flat)
        per_target, skips = self._per_sensor_terms(s_end)
        total = 0.0
        for terms, K in zip(per_target, self.K):
            A = terms.sum(axis=0) + K
            vals = np.einsum("ij,lji->l", self.W, _sym_inv_batch(A))
            total += float(vals.sum())
        return total, skips

    def gradient_fd(self, u_flat: np.ndarray) -> np.ndarray:
        """Central finite differences, perturbing one input entry at a time.

        Each perturbation moves a single sensor's endpoint, so only that
        sensor's information term is recomputed (batched over all entries).
        """
        s_end = self.sensor_endpoints(u_flat)
        per_target, _ = self._per_sensor_terms(s_end)
        sums = [terms.sum(axis=0) + K for terms, K in zip(per_target, self.K)]
        kd = self.k * self.d
        h = _FD_STEP * (1.0 + np.abs(u_flat))  # (M, kd)
        grad = np.empty((self.M, kd))
        for m, (_, mdl) in enumerate(self.sensors):
            # (2*kd, 2d): endpoints after +h then -h perturbations of each entry
            shift = h[m][:, None] * self.T.T
            s_pert = np.concatenate([s_end[m] + shift, s_end[m] - shift])
            acc = np.zeros(2 * kd)
            for X, A_full, terms in zip(self.endpoints_x, sums, per_target):
                pert_terms, _ = self._contributions(
                    X[None, :, :], s_pert[:, None, :], mdl
                )
                A = (A_full - terms[m])[None] + pert_terms
                vals = np.einsum("ij,plji->pl", self.W, _sym_inv_batch(A))
                acc += vals.sum(axis=1)
            grad[m] = (acc[:kd] - acc[kd:]) / (2.0 * h[m])
        return grad.ravel()


class _Constraints:
    """Linear inequalities A u_m <= c_m per sensor, plus per-entry bounds.

    Rows enforce the state box at every intermediate horizon step; the row
    matrix is shared across sensors, only the offsets differ. State rows are
    tightened by a small fixed margin so realized states never end up exactly
    on the boundary (which would make the next coasting check churn).
    """

    _STATE_MARGIN = 1e-2

    def __init__(self, sensor_states, bounds: BoxBounds, u_bound: float, model, k):
        d = model.d
        rows = []
        row_keys = []
        for i in range(1, k + 1):
            Ti = _input_map(model, k, i)
            for comp in range(2 * d):
                if np.isfinite(bounds.s_max[comp]):
                    rows.append(Ti[comp])
                    row_keys.append((i, comp, +1))
                if np.isfinite(bounds.s_min[comp]):
                    rows.append(-Ti[comp])
                    row_keys.append((i, comp, -1))
        self.A = np.array(rows) if rows else np.zeros((0, k * d))
        offsets = []
        for s in sensor_states:
            ci = []
            for i, comp, sign in row_keys:
                coast = (model.f_power(i) @ s)[comp]
                if sign > 0:
                    ci.append(bounds.s_max[comp] - coast)
                else:
                    ci.append(coast - bounds.s_min[comp])
            offsets.append(ci)
        self.c = (
            np.array(offsets) - self._STATE_MARGIN
            if rows
            else np.zeros((len(sensor_states), 0))
        )  # (M, rows)
        self.u_bound = u_bound

    def margins(self, u_flat: np.ndarray):
        """Box-row slacks (M, rows) and the two entry-bound slack arrays."""
        state_m = self.c - u_flat @ self.A.T
        return state_m, self.u_bound - u_flat, self.u_bound + u_flat

    def min_margin(self, u_flat: np.ndarray) -> float:
        state_m, up, lo = self.margins(u_flat)
        worst = min(up.min(), lo.min())
        if state_m.size:
            worst = min(worst, state_m.min())
        return float(worst)

    def barrier(self, u_flat: np.ndarray) -> float:
        state_m, up, lo = self.margins(u_flat)
        if min(up.min(), lo.min()) <= 0 or (state_m.size and state_m.min() <= 0):
            return np.inf
        total = -np.log(up).sum() - np.log(lo).sum()
        if state_m.size:
            total -= np.log(state_m).sum()
        return float(total)

    def barrier_gradient(self, u_flat: np.ndarray) -> np.ndarray:
        state_m, up, lo = self.margins(u_flat)
        grad = 1.0 / up - 1.0 / lo
        if state_m.size:
            grad += (1.0 / state_m) @ self.A
        return grad.ravel()

    def max_step(self, u_flat: np.ndarray, direction: np.ndarray) -> float:
        """Largest step keeping a fraction of the distance to the boundary."""
        state_m, up, lo = self.margins(u_flat)
        dirs = direction.reshape(u_flat.shape)
        alpha = np.inf
        pos = dirs > 0
        if np.any(pos):
            alpha = min(alpha, (up[pos] / dirs[pos]).min())
        neg = dirs < 0
        if np.any(neg):
            alpha = min(alpha, (lo[neg] / -dirs[neg]).min())
        if state_m.size:
            slope = dirs @ self.A.T
            rising = slope > 0
            if np.any(rising):
                alpha = min(alpha, (state_m[rising] / slope[rising]).min())
        return float(_BOUNDARY_FRAC * alpha)

    def violation_and_gradient(self, u_flat: np.ndarray):
        """Sum of squared constraint violations and its gradient (best-effort mode)."""
        state_m, up, lo = self.margins(u_flat)
        v_state = np.clip(-state_m, 0.0, None)
        v_up = np.clip(-up, 0.0, None)
        v_lo = np.clip(-lo, 0.0, None)
        value = float((v_state**2).sum() + (v_up**2).sum() + (v_lo**2).sum())
        grad = 2.0 * (v_up - v_lo)
        if state_m.size:
            grad += 2.0 * v_state @ self.A
        return value, grad


def objective(
    U: np.ndarray,
    sigma_sets: Sequence[SigmaPointSet],
    sensors: SensorConfig,
    pred_covs: Sequence[np.ndarray],
    W: np.ndarray,
    model: TransitionModel,
) -> float:
    """Sum over targets and sigma points of the endpoint CRB scalar."""
    U = np.asarray(U, dtype=float)
    M, k, d = U.shape
    ev = _PlannerObjective(
        [s.points for s in sigma_sets], pred_covs, sensors, W, model, k
    )
    value, _ = ev.value(U.reshape(M, k * d))
    return value


def objective_point(
    U: np.ndarray,
    x_hats: Sequence[np.ndarray],
    sensors: SensorConfig,
    pred_covs: Sequence[np.ndarray],
    W: np.ndarray,
    model: TransitionModel,
) -> float:
    """Certainty-equivalent objective: one zero-acceleration trajectory per target."""
    U = np.asarray(U, dtype=float)
    M, k, d = U.shape
    points = [
        np.concatenate([np.asarray(x, dtype=float), np.zeros(k * d)])[None, :]
        for x in x_hats
    ]
    ev = _PlannerObjective(points, pred_covs, sensors, W, model, k)
    value, _ = ev.value(U.reshape(M, k * d))
    return value


def step_control(plan: ControlResult) -> np.ndarray:
    """First column of the plan: the inputs actually applied (receding horizon)."""
    return np.array(plan.U[:, 0, :])


def _project_interior(cons: _Constraints, u_flat: np.ndarray) -> np.ndarray:
    """Scale toward U=0 (assumed strictly feasible) until strictly interior."""
    state_m, up, lo = cons.margins(u_flat)
    gamma = 1.0
    au = cons.c - state_m  # A @ u per sensor
    rising = au > 0
    if np.any(rising):
        gamma = min(gamma, float((_BOUNDARY_FRAC * cons.c[rising] / au[rising]).min()))
    biggest = np.abs(u_flat).max()
    if biggest > 0:
        gamma = min(gamma, _BOUNDARY_FRAC * cons.u_bound / biggest)
    return max(gamma, 0.0) * u_flat


def _phase1(cons: _Constraints, u0: np.ndarray, margin: float = 1e-3):
    """Minimize squared violation of margin-tightened constraints over the
    input box (deterministic bound-constrained quasi-Newton).

    Returns (u, ok); ok means u is strictly feasible for the original
    constraints (all tightened violations driven to zero).
    """
    bound = cons.u_bound * (1.0 - 1e-9)
    shrunk = _Constraints.__new__(_Constraints)
    shrunk.A = cons.A
    shrunk.c = cons.c - margin
    shrunk.u_bound = bound
    shape = u0.shape

    def fun(flat):
        value, grad = shrunk.violation_and_gradient(flat.reshape(shape))
        return value, grad.ravel()

    res = optimize.minimize(
        fun,
        np.clip(u0, -bound, bound).ravel(),
        jac=True,
        method="L-BFGS-B",
        bounds=[(-bound, bound)] * u0.size,
        options={"maxiter": 300, "ftol": 1e-18, "gtol": 1e-14},
    )
    u = res.x.reshape(shape)
    value, _ = shrunk.violation_and_gradient(u)
    return u, bool(value == 0.0 and cons.min_margin(u) > 0.0)


def _inner_minimize(ev, cons, u0, mu, max_inner, stall_tol):
    """Damped BFGS on objective + mu * barrier, staying strictly feasible.

    Terminates on the gradient tolerance, on stagnation (two consecutive
    steps improving by less than stall_tol relative), or on the iteration
    cap; only the cap and line-search failure count as non-convergence.
    """
    u = u0.copy()
    n = u.size
    f_obj, skips = ev.value(u)
    f = f_obj + mu * cons.barrier(u)
    g = ev.gradient_fd(u) + mu * cons.barrier_gradient(u)
    h_inv = np.eye(n)
    converged = np.linalg.norm(g) <= _GRAD_TOL
    stall = 0
    it = 0
    while not converged and it < max_inner:
        it += 1
        p = -h_inv @ g
        if p @ g >= 0:
            h_inv = np.eye(n)
            p = -g
        alpha = min(1.0, cons.max_step(u, p))
        if not np.isfinite(alpha) or alpha <= 1e-14:
            break
        accepted = False
        slope = float(g @ p)
        for _ in range(30):
            u_try = u + alpha * p.reshape(u.shape)
            f_obj_try, sk = ev.value(u_try)
            f_try = f_obj_try + mu * cons.barrier(u_try)
            if np.isfinite(f_try) and f_try <= f + 1e-4 * alpha * slope:
                accepted = True
                skips += sk
                break
            alpha *= 0.5
        if not accepted:
            break
        g_new = ev.gradient_fd(u_try) + mu * cons.barrier_gradient(u_try)
        s = alpha * p
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if it == 1:
                # standard curvature-based rescaling of the initial metric
                h_inv = (sy / float(y @ y)) * np.eye(n)
            rho = 1.0 / sy
            v = np.eye(n) - rho * np.outer(s, y)
            h_inv = v @ h_inv @ v.T + rho * np.outer(s, s)
        df = f - f_try
        u, f = u_try, f_try
        g = g_new
        if np.linalg.norm(g) <= _GRAD_TOL:
            converged = True
            break
        if df <= stall_tol * (1.0 + abs(f)):
            stall += 1
            if stall >= 2:
                converged = True
                break
        else:
            stall = 0
    return u, converged, skips


def solve_control(
    sensors: SensorConfig,
    estimates: Sequence[Estimate],
    bounds: BoxBounds,
    u_max: float,
    k: int,
    model: TransitionModel,
    Q: np.ndarray,
    W: np.ndarray,
    mode: str = "robust",
    eta: float = DEFAULT_ETA,
    warm_start: Optional[np.ndarray] = None,
    max_inner: int = _MAX_INNER,
    stall_tol: float = 1e-8,
) -> ControlResult:
    """Plan k steps of sensor accelerations minimizing the expected-CRB objective.

    Constraints: per-axis bound u_max/sqrt(d) (inner approximation of the
    2-norm ball) and the state box at every intermediate step. Log-barrier
    schedule with damped BFGS inner iterations; warm-started from the shifted
    previous plan when given. If coasting (U = 0) is not strictly feasible,
    returns a flagged best-effort plan that minimizes constraint violation.
    """
    if mode not in ("robust", "point"):
        raise ValueError("mode must be 'robust' or 'point'")
    d = model.d
    M = len(sensors)
    states = [np.asarray(s, dtype=float) for s, _ in sensors]

    pred_covs = [predict(est, k, model, Q).cov_pred for est in estimates]
    if mode == "robust":
        points_list = [_trajectory_points(est, np.asarray(Q, float), k, eta) for est in estimates]
    else:
        points_list = [
            np.concatenate([est.x_hat, np.zeros(k * d)])[None, :] for est in estimates
        ]

    ev = _PlannerObjective(points_list, pred_covs, sensors, W, model, k)
    b = relaxed_bound(u_max, d)
    cons = _Constraints(states, bounds, b, model, k)
    kd = k * d
    zero = np.zeros((M, kd))

    shifted = None
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float)
        if ws.shape == (M, k, d):
            shifted = np.concatenate([ws[:, 1:, :], np.zeros((M, 1, d))], axis=1)
            shifted = shifted.reshape(M, kd)

    coasting_ok = cons.min_margin(zero) > 0.0
    if coasting_ok:
        candidates = [zero]
        u = zero
        if shifted is not None:
            u = _project_interior(cons, shifted)
            candidates.append(u)
    else:
        # Coasting exits the box; look for a recovery (e.g. braking) plan.
        u, ok = _phase1(cons, shifted if shifted is not None else zero)
        if not ok:
            value, skips = ev.value(u)
            logger.warning("no feasible plan found; returning violation minimizer")
            return ControlResult(
                U=u.reshape(M, k, d).copy(),
                converged=False,
                feasible=bool(cons.min_margin(u) >= 0.0),
                singular_skips=skips,
                objective_value=value,
            )
        logger.info("coasting infeasible; recovered a feasible plan")
        candidates = [u]

    total_skips = 0
    converged = False
    for round_i in range(_BARRIER_ROUNDS):
        mu = _BARRIER_INIT * _BARRIER_SHRINK**round_i
        u, converged, skips = _inner_minimize(ev, cons, u, mu, max_inner, stall_tol)
        total_skips += skips

    # Pick the best of the solver output and the feasible fallbacks (shifted
    # warm start, coasting) so re-solving never degrades the plan.
    candidates.insert(0, u)
    values = []
    for cand in candidates:
        val, sk = ev.value(cand)
        values.append(val)
        total_skips += sk
    best = int(np.argmin(values))
    u, value_u = candidates[best], values[best]
    if total_skips:
        logger.debug("dropped %d singular information terms during solve", total_skips)
    return ControlResult(
        U=u.reshape(M, k, d).copy(),
        converged=converged,
        feasible=True,
        singular_skips=total_skips,
        objective_value=value_u,
    )
