"""Scenario description: everything needed to run one tracking experiment.

Scenarios are plain declarative data (dimensions, bounds, sensors with their
measurement models, targets with scripted acceleration profiles, estimator and
planner settings). They parse from a strict JSON document: unknown or
ill-typed fields are parse errors carrying the offending field path, while
violations of physical invariants (sensor outside the box, a script exceeding
the acceleration bound) are validation errors.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .control import BoxBounds
from .dynamics import make_transition, propagate
from .measurement import SPEED_OF_LIGHT, DopplerModel, MeasurementModel, RangingModel

SCHEMA_VERSION = 1


class ScenarioParseError(ValueError):
    """Structurally invalid scenario document (bad type, unknown field...)."""


class ScenarioValidationError(ValueError):
    """Well-formed document describing an invalid experiment."""


# ---------------------------------------------------------------------------
# Acceleration profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantAccel:
    a: np.ndarray

    def script(self, x0, model, steps):
        return np.tile(np.asarray(self.a, dtype=float), (steps, 1))


@dataclass(frozen=True)
class PiecewiseAccel:
    """Constant segments; zero acceleration after the last segment."""

    segments: tuple  # of (steps, vector)

    def script(self, x0, model, steps):
        d = len(self.segments[0][1])
        out = np.zeros((steps, d))
        t = 0
        for n_steps, a in self.segments:
            if t >= steps:
                break
            upto = min(t + n_steps, steps)
            out[t:upto] = np.asarray(a, dtype=float)
            t = upto
        return out


@dataclass(frozen=True)
class ArcAccel:
    """Constant-rate turn in the x-y plane (constant speed)."""

    turn_rate: float  # rad/s

    def script(self, x0, model, steps):
        d = x0.size // 2
        out = np.zeros((steps, d))
        state = np.asarray(x0, dtype=float)
        for t in range(steps):
            v = state[d:]
            out[t, 0] = -self.turn_rate * v[1]
            out[t, 1] = self.turn_rate * v[0]
            state = propagate(state, out[t], model)
        return out


@dataclass(frozen=True)
class WaypointAccel:
    """Bounded proportional-derivative steering through a waypoint list."""

    points: tuple  # of position vectors
    accel_limit: float
    capture_radius: float = 30.0
    gain_p: float = 0.05
    gain_d: float = 0.4

    def script(self, x0, model, steps):
        d = x0.size // 2
        out = np.zeros((steps, d))
        state = np.asarray(x0, dtype=float)
        idx = 0
        for t in range(steps):
            p, v = state[:d], state[d:]
            while (
                idx < len(self.points) - 1
                and np.linalg.norm(self.points[idx] - p) < self.capture_radius
            ):
                idx += 1
            a = self.gain_p * (self.points[idx] - p) - self.gain_d * v
            norm = np.linalg.norm(a)
            if norm > self.accel_limit:
                a = a * (self.accel_limit / norm)
            out[t] = a
            state = propagate(state, a, model)
        return out


AccelProfile = Union[ConstantAccel, PiecewiseAccel, ArcAccel, WaypointAccel]


@dataclass(frozen=True)
class SensorSpec:
    state: np.ndarray
    model: MeasurementModel


@dataclass(frozen=True)
class TargetSpec:
    state: np.ndarray
    profile: AccelProfile


@dataclass(frozen=True)
class InitPolicy:
    """Tracker initialization: the first prediction fed to the estimator.

    policy "truth_offset" centers it on the true state plus a Gaussian draw
    with the given deviations; "fixed" uses x0 exactly. The covariance is
    diag(sigma_pos^2 ... sigma_vel^2 ...) in both cases.
    """

    policy: str = "truth_offset"
    sigma_pos: float = 10.0
    sigma_vel: float = 1.0
    x0: Optional[np.ndarray] = None

    def cov(self, d: int) -> np.ndarray:
        return np.diag(
            np.concatenate(
                [np.full(d, self.sigma_pos**2), np.full(d, self.sigma_vel**2)]
            )
        )


@dataclass
class Scenario:
    d: int
    dt: float
    steps: int
    k: int
    a_max: float
    u_max: float
    bounds: BoxBounds
    sensors: list
    targets: list
    eta: float = 3.0
    mode: str = "robust"
    init: InitPolicy = field(default_factory=InitPolicy)
    control_off_window: Optional[tuple] = None
    solver_iters: int = 8
    lambda_override: Optional[float] = None


def generate_truth(scenario: Scenario):
    """Open-loop target trajectories and the accelerations that produced them.

    Returns (states, accels): states has shape (steps, N, 2d) with row t the
    state at measurement time t; accels has shape (steps-1, N, d), entry t
    being the acceleration applied between t and t+1.
    """
    model = make_transition(scenario.dt, scenario.d)
    n_targets = len(scenario.targets)
    n_trans = max(scenario.steps - 1, 0)
    states = np.zeros((scenario.steps, n_targets, 2 * scenario.d))
    accels = np.zeros((n_trans, n_targets, scenario.d))
    for n, target in enumerate(scenario.targets):
        state = np.asarray(target.state, dtype=float)
        script = target.profile.script(state, model, n_trans)
        states[0, n] = state
        for t in range(n_trans):
            accels[t, n] = script[t]
            state = propagate(state, script[t], model)
            states[t + 1, n] = state
    return states, accels


def validate(scenario: Scenario) -> None:
    """Check the physical invariants; raises ScenarioValidationError."""
    sc = scenario
    if sc.d not in (2, 3):
        raise ScenarioValidationError(f"d must be 2 or 3, got {sc.d}")
    if not sc.dt > 0:
        raise ScenarioValidationError("dt must be positive")
    if sc.steps < 1:
        raise ScenarioValidationError("steps must be at least 1")
    if sc.k < 1:
        raise ScenarioValidationError("k must be at least 1")
    if not sc.a_max > 0 or not sc.u_max > 0:
        raise ScenarioValidationError("a_max and u_max must be positive")
    if not sc.eta > 0:
        raise ScenarioValidationError("eta must be positive")
    if sc.mode not in ("robust", "point"):
        raise ScenarioValidationError(f"mode must be robust or point, got {sc.mode!r}")
    if sc.solver_iters < 1:
        raise ScenarioValidationError("solver_iters must be at least 1")
    if sc.bounds.s_min.shape != (2 * sc.d,):
        raise ScenarioValidationError("box bounds must be length-2d vectors")
    if len(sc.sensors) == 0:
        raise ScenarioValidationError("need at least one sensor")
    if len(sc.targets) == 0:
        raise ScenarioValidationError("need at least one target")
    if sc.control_off_window is not None:
        lo, hi = sc.control_off_window
        if lo < 0 or hi < lo:
            raise ScenarioValidationError("control_off_window must satisfy 0 <= start <= end")
    if sc.init.policy == "fixed" and sc.init.x0 is None:
        raise ScenarioValidationError("init policy 'fixed' requires x0")
    if sc.init.sigma_pos <= 0 or sc.init.sigma_vel <= 0:
        raise ScenarioValidationError("init sigmas must be positive")
    for m, spec in enumerate(sc.sensors):
        if spec.state.shape != (2 * sc.d,):
            raise ScenarioValidationError(f"sensor {m} state must have length {2 * sc.d}")
        if np.any(spec.state <= sc.bounds.s_min) or np.any(spec.state >= sc.bounds.s_max):
            raise ScenarioValidationError(
                f"sensor {m} initial state is not strictly inside the box bounds"
            )
    for n, target in enumerate(sc.targets):
        if target.state.shape != (2 * sc.d,):
            raise ScenarioValidationError(f"target {n} state must have length {2 * sc.d}")
    _, accels = generate_truth(sc)
    norms = np.linalg.norm(accels, axis=2)
    if norms.size and norms.max() > sc.a_max + 1e-9:
        t, n = np.unravel_index(np.argmax(norms), norms.shape)
        raise ScenarioValidationError(
            f"target {n} acceleration exceeds a_max at step {t}: "
            f"{norms[t, n]:.3f} > {sc.a_max}"
        )


# ---------------------------------------------------------------------------
# JSON document parsing (strict)
# ---------------------------------------------------------------------------


def _check_keys(doc: dict, allowed: set, required: set, path: str) -> None:
    for key in doc:
        if key not in allowed:
            raise ScenarioParseError(f"{path}.{key}: unknown field")
    for key in required:
        if key not in doc:
            raise ScenarioParseError(f"{path}.{key}: missing required field")


def _number(doc, key, path, optional=False, default=None):
    if key not in doc:
        if optional:
            return default
        raise ScenarioParseError(f"{path}.{key}: missing required field")
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioParseError(f"{path}.{key}: expected a number")
    return float(value)


def _integer(doc, key, path, optional=False, default=None):
    if key not in doc:
        if optional:
            return default
        raise ScenarioParseError(f"{path}.{key}: missing required field")
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioParseError(f"{path}.{key}: expected an integer")
    return value


def _vector(doc, key, path, length=None, allow_null_entries=False, null_value=None):
    if key not in doc:
        raise ScenarioParseError(f"{path}.{key}: missing required field")
    value = doc[key]
    if not isinstance(value, list):
        raise ScenarioParseError(f"{path}.{key}: expected an array")
    out = []
    for i, entry in enumerate(value):
        if entry is None and allow_null_entries:
            out.append(null_value)
        elif isinstance(entry, bool) or not isinstance(entry, (int, float)):
            raise ScenarioParseError(f"{path}.{key}[{i}]: expected a number")
        else:
            out.append(float(entry))
    if length is not None and len(out) != length:
        raise ScenarioParseError(
            f"{path}.{key}: expected {length} entries, got {len(out)}"
        )
    return np.array(out)


def _parse_model(doc, path, lambda_override=None) -> MeasurementModel:
    if not isinstance(doc, dict):
        raise ScenarioParseError(f"{path}: expected an object")
    kind = doc.get("kind")
    if kind == "ranging":
        _check_keys(doc, {"kind", "sigma_range", "lambda", "c"}, {"kind"}, path)
        lam = _number(doc, "lambda", path, optional=True, default=0.01)
        if lambda_override is not None:
            lam = lambda_override
        return RangingModel(
            sigma_range=_number(doc, "sigma_range", path, optional=True, default=1.0),
            lam=lam,
            c=_number(doc, "c", path, optional=True, default=SPEED_OF_LIGHT),
        )
    if kind == "doppler":
        _check_keys(doc, {"kind", "f_c", "sigma_doppler", "c"}, {"kind"}, path)
        return DopplerModel(
            f_c=_number(doc, "f_c", path, optional=True, default=2.3e9),
            sigma_doppler=_number(doc, "sigma_doppler", path, optional=True, default=1.0),
            c=_number(doc, "c", path, optional=True, default=SPEED_OF_LIGHT),
        )
    raise ScenarioParseError(f"{path}.kind: expected 'ranging' or 'doppler'")


def _parse_accel(doc, path, d) -> AccelProfile:
    if not isinstance(doc, dict):
        raise ScenarioParseError(f"{path}: expected an object")
    kind = doc.get("kind")
    if kind == "constant":
        _check_keys(doc, {"kind", "a"}, {"kind", "a"}, path)
        return ConstantAccel(a=_vector(doc, "a", path, length=d))
    if kind == "piecewise":
        _check_keys(doc, {"kind", "segments"}, {"kind", "segments"}, path)
        raw = doc["segments"]
        if not isinstance(raw, list) or not raw:
            raise ScenarioParseError(f"{path}.segments: expected a non-empty array")
        segments = []
        for i, seg in enumerate(raw):
            seg_path = f"{path}.segments[{i}]"
            if not isinstance(seg, dict):
                raise ScenarioParseError(f"{seg_path}: expected an object")
            _check_keys(seg, {"steps", "a"}, {"steps", "a"}, seg_path)
            steps = _integer(seg, "steps", seg_path)
            if steps < 1:
                raise ScenarioParseError(f"{seg_path}.steps: must be at least 1")
            segments.append((steps, _vector(seg, "a", seg_path, length=d)))
        return PiecewiseAccel(segments=tuple(segments))
    if kind == "arc":
        _check_keys(doc, {"kind", "turn_rate"}, {"kind", "turn_rate"}, path)
        return ArcAccel(turn_rate=_number(doc, "turn_rate", path))
    if kind == "waypoints":
        _check_keys(
            doc,
            {"kind", "points", "accel", "capture_radius", "gain_p", "gain_d"},
            {"kind", "points", "accel"},
            path,
        )
        raw = doc["points"]
        if not isinstance(raw, list) or not raw:
            raise ScenarioParseError(f"{path}.points: expected a non-empty array")
        points = []
        for i, pt in enumerate(raw):
            points.append(_vector({"p": pt}, "p", f"{path}.points[{i}]", length=d))
        return WaypointAccel(
            points=tuple(points),
            accel_limit=_number(doc, "accel", path),
            capture_radius=_number(doc, "capture_radius", path, optional=True, default=30.0),
            gain_p=_number(doc, "gain_p", path, optional=True, default=0.05),
            gain_d=_number(doc, "gain_d", path, optional=True, default=0.4),
        )
    raise ScenarioParseError(
        f"{path}.kind: expected one of constant, piecewise, arc, waypoints"
    )


_TOP_FIELDS = {
    "schema_version",
    "d",
    "dt",
    "steps",
    "k",
    "a_max",
    "u_max",
    "eta",
    "mode",
    "solver_iters",
    "lambda_override",
    "control_off_window",
    "box",
    "sensors",
    "targets",
    "init_estimate",
}
_TOP_REQUIRED = {"schema_version", "d", "dt", "steps", "k", "a_max", "u_max", "box", "sensors", "targets"}


def scenario_from_dict(doc: dict) -> Scenario:
    """Parse and validate a scenario document. Raises ScenarioParseError or
    ScenarioValidationError."""
    if not isinstance(doc, dict):
        raise ScenarioParseError("$: expected a JSON object")
    _check_keys(doc, _TOP_FIELDS, _TOP_REQUIRED, "$")
    version = _integer(doc, "schema_version", "$")
    if version != SCHEMA_VERSION:
        raise ScenarioParseError(f"$.schema_version: unsupported version {version}")
    d = _integer(doc, "d", "$")
    if d not in (2, 3):
        raise ScenarioValidationError(f"$.d: must be 2 or 3, got {d}")

    box = doc["box"]
    if not isinstance(box, dict):
        raise ScenarioParseError("$.box: expected an object")
    _check_keys(box, {"s_min", "s_max"}, {"s_min", "s_max"}, "$.box")
    s_min = _vector(box, "s_min", "$.box", length=2 * d, allow_null_entries=True, null_value=-math.inf)
    s_max = _vector(box, "s_max", "$.box", length=2 * d, allow_null_entries=True, null_value=math.inf)
    try:
        bounds = BoxBounds(s_min, s_max)
    except ValueError as exc:
        raise ScenarioValidationError(f"$.box: {exc}") from exc

    lambda_override = None
    if doc.get("lambda_override") is not None:
        lambda_override = _number(doc, "lambda_override", "$")

    raw_sensors = doc["sensors"]
    if not isinstance(raw_sensors, list):
        raise ScenarioParseError("$.sensors: expected an array")
    sensors = []
    for m, entry in enumerate(raw_sensors):
        path = f"$.sensors[{m}]"
        if not isinstance(entry, dict):
            raise ScenarioParseError(f"{path}: expected an object")
        _check_keys(entry, {"state", "model"}, {"state", "model"}, path)
        state = _vector(entry, "state", path, length=2 * d)
        try:
            model = _parse_model(entry["model"], f"{path}.model", lambda_override)
        except ScenarioParseError:
            raise
        except ValueError as exc:
            raise ScenarioValidationError(f"{path}.model: {exc}") from exc
        sensors.append(SensorSpec(state=state, model=model))

    raw_targets = doc["targets"]
    if not isinstance(raw_targets, list):
        raise ScenarioParseError("$.targets: expected an array")
    targets = []
    for n, entry in enumerate(raw_targets):
        path = f"$.targets[{n}]"
        if not isinstance(entry, dict):
            raise ScenarioParseError(f"{path}: expected an object")
        _check_keys(entry, {"state", "accel"}, {"state", "accel"}, path)
        targets.append(
            TargetSpec(
                state=_vector(entry, "state", path, length=2 * d),
                profile=_parse_accel(entry["accel"], f"{path}.accel", d),
            )
        )

    init = InitPolicy()
    if "init_estimate" in doc:
        raw = doc["init_estimate"]
        if not isinstance(raw, dict):
            raise ScenarioParseError("$.init_estimate: expected an object")
        _check_keys(
            raw,
            {"policy", "sigma_pos", "sigma_vel", "x0"},
            {"policy"},
            "$.init_estimate",
        )
        policy = raw["policy"]
        if policy not in ("truth_offset", "fixed"):
            raise ScenarioParseError(
                "$.init_estimate.policy: expected 'truth_offset' or 'fixed'"
            )
        x0 = None
        if policy == "fixed":
            x0 = _vector(raw, "x0", "$.init_estimate", length=2 * d)
        elif "x0" in raw:
            raise ScenarioParseError("$.init_estimate.x0: only valid for policy 'fixed'")
        init = InitPolicy(
            policy=policy,
            sigma_pos=_number(raw, "sigma_pos", "$.init_estimate", optional=True, default=10.0),
            sigma_vel=_number(raw, "sigma_vel", "$.init_estimate", optional=True, default=1.0),
            x0=x0,
        )

    window = None
    if doc.get("control_off_window") is not None:
        raw = doc["control_off_window"]
        if (
            not isinstance(raw, list)
            or len(raw) != 2
            or any(isinstance(v, bool) or not isinstance(v, int) for v in raw)
        ):
            raise ScenarioParseError("$.control_off_window: expected [start, end] integers")
        window = (raw[0], raw[1])

    mode = doc.get("mode", "robust")
    if mode not in ("robust", "point"):
        raise ScenarioParseError("$.mode: expected 'robust' or 'point'")

    scenario = Scenario(
        d=d,
        dt=_number(doc, "dt", "$"),
        steps=_integer(doc, "steps", "$"),
        k=_integer(doc, "k", "$"),
        a_max=_number(doc, "a_max", "$"),
        u_max=_number(doc, "u_max", "$"),
        bounds=bounds,
        sensors=sensors,
        targets=targets,
        eta=_number(doc, "eta", "$", optional=True, default=3.0),
        mode=mode,
        init=init,
        control_off_window=window,
        solver_iters=_integer(doc, "solver_iters", "$", optional=True, default=8),
        lambda_override=lambda_override,
    )
    validate(scenario)
    return scenario


def _finite_or_none(values):
    return [v if math.isfinite(v) else None for v in values]


def scenario_to_dict(sc: Scenario) -> dict:
    """Normalized document (defaults made explicit); round-trips via
    scenario_from_dict."""
    sensors = []
    for spec in sc.sensors:
        if isinstance(spec.model, RangingModel):
            model = {
                "kind": "ranging",
                "sigma_range": spec.model.sigma_range,
                "lambda": spec.model.lam,
                "c": spec.model.c,
            }
        else:
            model = {
                "kind": "doppler",
                "f_c": spec.model.f_c,
                "sigma_doppler": spec.model.sigma_doppler,
                "c": spec.model.c,
            }
        sensors.append({"state": list(spec.state), "model": model})
    targets = []
    for spec in sc.targets:
        profile = spec.profile
        if isinstance(profile, ConstantAccel):
            accel = {"kind": "constant", "a": list(profile.a)}
        elif isinstance(profile, PiecewiseAccel):
            accel = {
                "kind": "piecewise",
                "segments": [
                    {"steps": steps, "a": list(a)} for steps, a in profile.segments
                ],
            }
        elif isinstance(profile, ArcAccel):
            accel = {"kind": "arc", "turn_rate": profile.turn_rate}
        else:
            accel = {
                "kind": "waypoints",
                "points": [list(p) for p in profile.points],
                "accel": profile.accel_limit,
                "capture_radius": profile.capture_radius,
                "gain_p": profile.gain_p,
                "gain_d": profile.gain_d,
            }
        targets.append({"state": list(spec.state), "accel": accel})
    init = {
        "policy": sc.init.policy,
        "sigma_pos": sc.init.sigma_pos,
        "sigma_vel": sc.init.sigma_vel,
    }
    if sc.init.x0 is not None:
        init["x0"] = list(sc.init.x0)
    return {
        "schema_version": SCHEMA_VERSION,
        "d": sc.d,
        "dt": sc.dt,
        "steps": sc.steps,
        "k": sc.k,
        "a_max": sc.a_max,
        "u_max": sc.u_max,
        "eta": sc.eta,
        "mode": sc.mode,
        "solver_iters": sc.solver_iters,
        "lambda_override": sc.lambda_override,
        "control_off_window": list(sc.control_off_window) if sc.control_off_window else None,
        "box": {
            "s_min": _finite_or_none(sc.bounds.s_min),
            "s_max": _finite_or_none(sc.bounds.s_max),
        },
        "sensors": sensors,
        "targets": targets,
        "init_estimate": init,
    }
