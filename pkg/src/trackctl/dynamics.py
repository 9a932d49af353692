"""Double-integrator motion models for targets and mobile sensors.

States are flat vectors of length 2d, position first, velocity second:
``x = [p_1..p_d, v_1..v_d]``. Targets and sensors share the same block
structure, so a single transition model serves both.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TransitionModel:
    """Discrete-time double integrator: x' = F x + G a.

    F has identity blocks on the diagonal and dt*I in the upper right;
    G = [dt^2/2 * I; dt * I].
    """

    F: np.ndarray
    G: np.ndarray
    dt: float
    d: int

    # Powers of F are needed all over the planner; cache them lazily.
    _f_powers: dict = field(default_factory=dict, repr=False, compare=False)

    def f_power(self, k: int) -> np.ndarray:
        """F**k for integer k >= 0."""
        if k < 0:
            raise ValueError("negative matrix power")
        cached = self._f_powers.get(k)
        if cached is None:
            cached = np.linalg.matrix_power(self.F, k)
            self._f_powers[k] = cached
        return cached


def make_transition(dt: float, d: int) -> TransitionModel:
    """Build the constant-sampling-period transition model in d dimensions."""
    if not dt > 0:
        raise ValueError(f"sampling period must be positive, got {dt}")
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    eye = np.eye(d)
    F = np.block([[eye, dt * eye], [np.zeros((d, d)), eye]])
    G = np.vstack([0.5 * dt**2 * eye, dt * eye])
    return TransitionModel(F=F, G=G, dt=float(dt), d=d)


def propagate(state: np.ndarray, accel: np.ndarray, model: TransitionModel) -> np.ndarray:
    """One step of x' = F x + G a."""
    state = np.asarray(state, dtype=float)
    accel = np.asarray(accel, dtype=float)
    if state.shape != (2 * model.d,):
        raise ValueError(f"state must have shape ({2 * model.d},), got {state.shape}")
    if accel.shape != (model.d,):
        raise ValueError(f"acceleration must have shape ({model.d},), got {accel.shape}")
    return model.F @ state + model.G @ accel


def process_noise_cov(a_max: float, d: int) -> np.ndarray:
    """Acceleration covariance of the uniform distribution on [-a_max, a_max]^d.

    This is the conservative zero-mean model used for prediction:
    Q = a_max^2 / 3 * I_d.
    """
    if not a_max > 0:
        raise ValueError(f"a_max must be positive, got {a_max}")
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    return (a_max**2 / 3.0) * np.eye(d)


def k_step_state(
    initial: np.ndarray, inputs: np.ndarray, model: TransitionModel
) -> np.ndarray:
    """Propagate k steps with the given acceleration sequence.

    ``inputs`` has shape (k, d); inputs[0] is applied first. Equivalent to k
    chained calls of :func:`propagate`.
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != model.d:
        raise ValueError(f"inputs must have shape (k, {model.d}), got {inputs.shape}")
    if inputs.shape[0] < 1:
        raise ValueError("need at least one input step")
    state = np.asarray(initial, dtype=float)
    if state.shape != (2 * model.d,):
        raise ValueError(f"state must have shape ({2 * model.d},), got {state.shape}")
    k = inputs.shape[0]
    # Closed form: F^k x + sum_i F^(k-1-i) G u_i, identical to the iterated map.
    out = model.f_power(k) @ state
    for i in range(k):
        out += model.f_power(k - 1 - i) @ (model.G @ inputs[i])
    return out
