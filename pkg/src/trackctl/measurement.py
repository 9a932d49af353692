"""Sensor measurement models: round-trip-time ranging and Doppler shift.

Means, noise variances and their analytic gradients with respect to the
target state. The gradient formulas are implemented once in batched form
(arbitrary leading dimensions) because the information-matrix evaluations in
the planner call them for thousands of state/sensor pairs per solve; the
public scalar operations are thin wrappers.
"""

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

SPEED_OF_LIGHT = 3.0e8  # m/s

# Below this target-sensor distance the mean functions are not differentiable;
# operations fail loudly instead of returning Inf/NaN.
SINGULAR_DISTANCE = 1e-6


class SingularGeometryError(ValueError):
    """Target and sensor positions coincide (within tolerance)."""


@dataclass(frozen=True)
class RangingModel:
    """Round-trip-time sensor: mean 2*dist/c seconds, distance-dependent noise.

    Noise variance is sigma_range^2/c^2 * (1 + lam * mean^2).
    """

    sigma_range: float = 1.0  # [m]
    lam: float = 0.01
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if not self.sigma_range > 0:
            raise ValueError("sigma_range must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not self.c > 0:
            raise ValueError("propagation speed must be positive")


@dataclass(frozen=True)
class DopplerModel:
    """Doppler-shift sensor: mean -f_c/c * radial closing speed, constant noise."""

    f_c: float = 2.3e9  # [Hz]
    sigma_doppler: float = 1.0  # [Hz]
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if not self.f_c > 0:
            raise ValueError("carrier frequency must be positive")
        if not self.sigma_doppler > 0:
            raise ValueError("sigma_doppler must be positive")
        if not self.c > 0:
            raise ValueError("propagation speed must be positive")


MeasurementModel = Union[RangingModel, DopplerModel]

# A sensor configuration is a sequence of (state, model) pairs in sensor-id
# order; states are flat [position; velocity] vectors.
SensorConfig = Sequence[tuple]


@dataclass(frozen=True)
class Measurement:
    value: float
    sensor_id: int
    target_id: int
    time_index: int


@dataclass(frozen=True)
class StackedModel:
    """Joint Gaussian model of all sensors observing one target.

    ``var`` holds the diagonal of the (diagonal) covariance matrix.
    """

    mean: np.ndarray
    var: np.ndarray


# ---------------------------------------------------------------------------
# Batched cores. x and s have shape (..., 2d) and broadcast against each other.
# Each returns per-element singular masks instead of raising so the planner
# can apply its drop-and-log policy; scalar wrappers raise.
# ---------------------------------------------------------------------------


def _split(x: np.ndarray, d: int):
    return x[..., :d], x[..., d:]


def _terms_ranging(x: np.ndarray, s: np.ndarray, model: RangingModel):
    """Mean, variance, their gradients and the singular mask, batched."""
    d = x.shape[-1] // 2
    p, _ = _split(x, d)
    sp, _ = _split(s, d)
    delta = p - sp
    dist = np.linalg.norm(delta, axis=-1)
    singular = dist < SINGULAR_DISTANCE
    safe = np.where(singular, 1.0, dist)

    mean = 2.0 / model.c * dist
    unit = delta / safe[..., None]
    grad = np.zeros(np.broadcast_shapes(x.shape, s.shape))
    grad[..., :d] = 2.0 / model.c * unit

    base = model.sigma_range**2 / model.c**2
    var = base * (1.0 + model.lam * mean**2)
    var_grad = base * model.lam * 2.0 * mean[..., None] * grad
    return mean, var, grad, var_grad, singular


def _terms_doppler(x: np.ndarray, s: np.ndarray, model: DopplerModel):
    d = x.shape[-1] // 2
    p, v = _split(x, d)
    sp, sv = _split(s, d)
    dp = p - sp
    dv = v - sv
    dist = np.linalg.norm(dp, axis=-1)
    singular = dist < SINGULAR_DISTANCE
    safe = np.where(singular, 1.0, dist)

    radial = np.sum(dp * dv, axis=-1)
    scale = -model.f_c / model.c
    mean = scale * radial / safe

    shape = np.broadcast_shapes(x.shape, s.shape)
    grad = np.zeros(shape)
    # d(mean)/dp by the quotient rule; d(mean)/dv is the unit direction term.
    grad[..., :d] = scale * (
        dv / safe[..., None] - (radial / safe**3)[..., None] * dp
    )
    grad[..., d:] = scale * dp / safe[..., None]

    var = np.broadcast_to(model.sigma_doppler**2, mean.shape).copy()
    var_grad = np.zeros(shape)
    return mean, var, grad, var_grad, singular


def _terms(x: np.ndarray, s: np.ndarray, model: MeasurementModel):
    if isinstance(model, RangingModel):
        return _terms_ranging(x, s, model)
    if isinstance(model, DopplerModel):
        return _terms_doppler(x, s, model)
    raise TypeError(f"unknown measurement model {model!r}")


def _scalar(fn_index, x, s, model):
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    out = _terms(x, s, model)
    if out[4]:
        raise SingularGeometryError(
            "target and sensor positions coincide; mean gradient undefined"
        )
    return out[fn_index]


# ---------------------------------------------------------------------------
# Public scalar operations
# ---------------------------------------------------------------------------


def mean_rtt(x: np.ndarray, s: np.ndarray, model: RangingModel) -> float:
    """Mean round-trip time in seconds: 2/c * ||p - p_sensor||."""
    return float(_scalar(0, x, s, model))


def mean_doppler(x: np.ndarray, s: np.ndarray, model: DopplerModel) -> float:
    """Mean Doppler shift in Hz (positive when target and sensor close in)."""
    return float(_scalar(0, x, s, model))


def mean(model: MeasurementModel, x: np.ndarray, s: np.ndarray) -> float:
    """Mean observation for either sensor type."""
    return float(_scalar(0, x, s, model))


def variance(model: MeasurementModel, x: np.ndarray, s: np.ndarray) -> float:
    """Measurement noise variance at the given geometry."""
    return float(_scalar(1, x, s, model))


def mean_gradient(model: MeasurementModel, x: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Gradient of the measurement mean w.r.t. the 2d target state."""
    return _scalar(2, x, s, model)


def variance_gradient(model: MeasurementModel, x: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Gradient of the noise variance w.r.t. the 2d target state."""
    return _scalar(3, x, s, model)


def stack(sensors: SensorConfig, x: np.ndarray) -> StackedModel:
    """Assemble the joint mean vector and diagonal covariance, in sensor order."""
    if len(sensors) == 0:
        raise ValueError("need at least one sensor")
    means = np.empty(len(sensors))
    variances = np.empty(len(sensors))
    for i, (s, model) in enumerate(sensors):
        means[i] = mean(model, x, s)
        variances[i] = variance(model, x, s)
    return StackedModel(mean=means, var=variances)


def sample(
    rng: np.random.Generator,
    model: MeasurementModel,
    x: np.ndarray,
    s: np.ndarray,
    sensor_id: int = 0,
    target_id: int = 0,
    time_index: int = 0,
) -> Measurement:
    """Draw one measurement ~ Normal(mean, variance) at the given geometry."""
    mu = mean(model, x, s)
    sigma = np.sqrt(variance(model, x, s))
    return Measurement(
        value=float(rng.normal(mu, sigma)),
        sensor_id=sensor_id,
        target_id=target_id,
        time_index=time_index,
    )
