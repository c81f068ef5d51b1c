"""Model-reference adaptive control of a pendulum with a learned model error.

Plant (Euler-discretized)::

    x1' = x1 + tau * x2
    x2' = x2 + tau * (f(x) + a(x) + b u)

with known drift ``a(x) = -(g/l) sin(x1) - friction / (m l^2) x2``, known input
gain ``b = 1 / (m l^2)`` and an unknown model error ``f``. The controller
cancels ``a`` and an estimate ``fhat`` of ``f`` and imposes the PD reference
dynamics ``xref'' = K (xi - xref)``. With ``e = xref - x`` the error obeys

    e_{t+1} = M e_t + d_t * (0, -1),   d_t = tau * (f(x_t) - fhat(x_t))

exactly, where ``M = [[1, tau], [-tau kp, 1 - tau kd]]``.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import geometry
from .dynamics import spectral_radius
from .ocp import OcpState, gp_step


class ConfigurationError(ValueError):
    pass


class ControlDiverged(FloatingPointError):
    def __init__(self, message: str, stage: int):
        super().__init__(message)
        self.stage = stage


class Scenario(str, enum.Enum):
    TRUE_MODEL = "true_model"
    ZERO_MODEL = "zero_model"
    GP_ADAPTIVE = "gp_adaptive"


# direction in error space along which the model-error disturbance enters
DISTURBANCE_DIRECTION = np.array([0.0, -1.0])


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    friction: float = 0.1
    tau: float = 0.01
    horizon: int = 3000

    def __post_init__(self):
        for name in ("mass", "length", "gravity", "tau"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")

    @property
    def b(self) -> float:
        return 1.0 / (self.mass * self.length**2)


@dataclass(frozen=True)
class ModelErrorMixture:
    """``f(x) = sum_i w_i exp(sign * |x1 - c_i| / s_i)``; ``sign=-1`` decays away from the centres."""

    weights: tuple = (-12.0, -10.0, 10.0, 12.0)
    centers: tuple = (-math.pi / 2, 0.0, math.pi / 2, math.pi)
    scales: tuple = (1.0, 1.0, 0.5, 0.5)
    exponent_sign: int = -1

    def __post_init__(self):
        if not len(self.weights) == len(self.centers) == len(self.scales):
            raise ConfigurationError("mixture weights, centers and scales differ in length")
        if any(s <= 0 for s in self.scales):
            raise ConfigurationError("mixture scales must be positive")
        if self.exponent_sign not in (-1, 1):
            raise ConfigurationError("exponent_sign must be -1 or +1")

    def features(self, x) -> np.ndarray:
        x1 = float(x[0])
        c = np.asarray(self.centers)
        return np.exp(self.exponent_sign * np.abs(x1 - c) / np.asarray(self.scales))

    @property
    def size(self) -> int:
        return len(self.weights)


@dataclass
class ControllerConfig:
    kp: float = 4.0
    kd: float = 2.0
    target: tuple = (math.pi, 0.0)
    x0: tuple = (0.0, 0.0)
    scenario: Scenario = Scenario.GP_ADAPTIVE
    eta0: float = 0.5
    theta0: tuple = (0.0, 0.0, 0.0, 0.0)
    feasible_set: dict = field(default_factory=lambda: {"type": "box", "lower": -20.0, "upper": 20.0})
    # +1 feeds back K (xi - x); -1 flips the sign, kept for comparison runs
    feedback_sign: int = 1

    def __post_init__(self):
        self.scenario = Scenario(self.scenario)
        if self.feedback_sign not in (-1, 1):
            raise ConfigurationError("feedback_sign must be -1 or +1")
        if self.eta0 < 0:
            raise ConfigurationError("eta0 must be nonnegative")

    def theta_set(self) -> geometry.FeasibleSet:
        return geometry.from_dict(self.feasible_set, len(self.theta0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.value
        d["target"] = list(self.target)
        d["x0"] = list(self.x0)
        d["theta0"] = list(self.theta0)
        d["feasible_set"] = self.theta_set().to_dict()
        return d


def drift_a(params: PendulumParams, x) -> float:
    return (-(params.gravity / params.length) * math.sin(x[0])
            - params.friction / (params.mass * params.length**2) * x[1])


def model_error_f(mix: ModelErrorMixture, x) -> float:
    return float(np.dot(mix.weights, mix.features(x)))


def predicted_f(cfg: ControllerConfig, mix: ModelErrorMixture, theta, x) -> float:
    """The controller's model-error estimate under the configured scenario."""
    if cfg.scenario is Scenario.TRUE_MODEL:
        return model_error_f(mix, x)
    if cfg.scenario is Scenario.ZERO_MODEL:
        return 0.0
    return float(np.dot(theta, mix.features(x)))


def control_u(params: PendulumParams, cfg: ControllerConfig, mix: ModelErrorMixture, theta, x) -> float:
    """Feedback-linearizing torque ``b^-1 (-a(x) - fhat(x) + K (xi - x))``."""
    fb = cfg.kp * (cfg.target[0] - x[0]) + cfg.kd * (cfg.target[1] - x[1])
    return (-drift_a(params, x) - predicted_f(cfg, mix, theta, x) + cfg.feedback_sign * fb) / params.b


def acceleration(params: PendulumParams, mix: ModelErrorMixture, x, u: float) -> float:
    return model_error_f(mix, x) + drift_a(params, x) + params.b * u


def _euler(tau: float, x, acc: float) -> np.ndarray:
    return np.array([x[0] + tau * x[1], x[1] + tau * acc])


def step_plant(params: PendulumParams, mix: ModelErrorMixture, x, u: float) -> np.ndarray:
    nxt = _euler(params.tau, x, acceleration(params, mix, x, u))
    if not np.all(np.isfinite(nxt)):
        raise FloatingPointError(f"non-finite plant state from x={x}, u={u}")
    return nxt


def step_reference(cfg: ControllerConfig, params: PendulumParams, x_ref) -> np.ndarray:
    acc = cfg.kp * (cfg.target[0] - x_ref[0]) + cfg.kd * (cfg.target[1] - x_ref[1])
    return _euler(params.tau, x_ref, acc)


def error_matrix(cfg: ControllerConfig, params: PendulumParams) -> np.ndarray:
    tau = params.tau
    M = np.array([[1.0, tau], [-tau * cfg.kp, 1.0 - tau * cfg.kd]])
    rho = spectral_radius(M)
    if rho >= 1.0:
        raise ConfigurationError(
            f"error dynamics unstable for kp={cfg.kp}, kd={cfg.kd}, tau={tau} (spectral radius {rho:.12g})"
        )
    return M


def learning_feedback(mix: ModelErrorMixture, theta, x, accel_observed: float, u: float,
                      params: PendulumParams) -> tuple[float, np.ndarray]:
    """Squared residual between ``fhat(x; theta)`` and the model error implied by the observed acceleration."""
    phi = mix.features(x)
    implied = accel_observed - drift_a(params, x) - params.b * u
    resid = float(np.dot(theta, phi)) - implied
    return resid * resid, 2.0 * resid * phi


@dataclass
class ControlTrace:
    """Per-step records for ``t = 0..T-1``; row ``t`` holds the state before step ``t``."""

    scenario: Scenario
    x: np.ndarray
    x_ref: np.ndarray
    e: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    loss: np.ndarray
    d: np.ndarray
    f_true: np.ndarray
    f_hat: np.ndarray
    config: dict
    final_x: np.ndarray
    final_x_ref: np.ndarray

    @property
    def error_norms(self) -> np.ndarray:
        return np.linalg.norm(self.e, axis=1)

    def tracking_distance(self, target) -> np.ndarray:
        return np.linalg.norm(np.asarray(target) - self.x, axis=1)

    def last_quarter(self, values: np.ndarray) -> np.ndarray:
        return values[3 * len(values) // 4:]

    def write_csv(self, path) -> None:
        m = self.theta.shape[1]
        norms = self.error_norms
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x1", "x2", "xref1", "xref2", "e1", "e2", "norm_e", "u", "loss",
                        *[f"theta{i + 1}" for i in range(m)]])
            g = lambda v: f"{v:.17g}"  # noqa: E731
            for t in range(len(self.u)):
                w.writerow([t, *map(g, self.x[t]), *map(g, self.x_ref[t]), *map(g, self.e[t]),
                            g(norms[t]), g(self.u[t]), g(self.loss[t]), *map(g, self.theta[t])])

    def write_plotdata(self, path, target) -> None:
        dist = self.tracking_distance(target)
        with open(path, "w") as fh:
            fh.write("# t dist_to_target log_norm_e\n")
            for t, (dv, ev) in enumerate(zip(dist, self.error_norms)):
                fh.write(f"{t} {dv:.17g} {math.log(max(ev, 1e-300)):.17g}\n")


def run_pendulum_experiment(params: PendulumParams, mix: ModelErrorMixture, cfg: ControllerConfig) -> ControlTrace:
    """Closed-loop run of one scenario.

    Each step: control with ``theta_t``, advance plant and reference, read the
    realized acceleration, compute the learning feedback and, in the adaptive
    scenario, take a Greedy Projection step on ``theta``.
    """
    error_matrix(cfg, params)
    if len(cfg.theta0) != mix.size:
        raise ConfigurationError("theta0 length must match the mixture size")
    T = params.horizon
    state = OcpState.start(np.asarray(cfg.theta0, float), cfg.theta_set(), cfg.eta0)
    x = np.asarray(cfg.x0, dtype=float)
    x_ref = x.copy()
    rec = {k: [] for k in ("x", "x_ref", "e", "u", "theta", "loss", "d", "f_true", "f_hat")}
    for t in range(T):
        theta = state.action
        f_true = model_error_f(mix, x)
        f_hat = predicted_f(cfg, mix, theta, x)
        u = control_u(params, cfg, mix, theta, x)
        acc = f_true + drift_a(params, x) + params.b * u
        loss, grad = learning_feedback(mix, theta, x, acc, u, params)
        rec["x"].append(x)
        rec["x_ref"].append(x_ref)
        rec["e"].append(x_ref - x)
        rec["u"].append(u)
        rec["theta"].append(theta)
        rec["loss"].append(loss)
        rec["d"].append(params.tau * (f_true - f_hat))
        rec["f_true"].append(f_true)
        rec["f_hat"].append(f_hat)
        x = _euler(params.tau, x, acc)
        x_ref = step_reference(cfg, params, x_ref)
        if not (np.all(np.isfinite(x)) and math.isfinite(u) and math.isfinite(loss)
                and math.isfinite(float(np.linalg.norm(x_ref - x)))):
            raise ControlDiverged(
                f"{cfg.scenario.value}: state blew up at stage {t} (x={x}, u={u}, theta={theta})", t
            )
        if cfg.scenario is Scenario.GP_ADAPTIVE:
            state = gp_step(state, grad)
    snapshot = {"params": asdict(params), "mixture": asdict(mix), "controller": cfg.to_dict()}
    return ControlTrace(
        cfg.scenario,
        *(np.array(rec[k]) for k in ("x", "x_ref", "e", "u", "theta", "loss", "d", "f_true", "f_hat")),
        config=snapshot,
        final_x=x,
        final_x_ref=x_ref,
    )


def run_scenarios(params: PendulumParams, mix: ModelErrorMixture, cfg: ControllerConfig,
                  scenarios=tuple(Scenario), max_workers: int | None = None) -> dict:
    """Run several scenarios from one base configuration; results do not depend on ``max_workers``."""
    cfgs = []
    for sc in scenarios:
        c = ControllerConfig(**{**asdict(cfg), "scenario": Scenario(sc)})
        cfgs.append(c)
    if max_workers == 1 or len(cfgs) == 1:
        runs = [run_pendulum_experiment(params, mix, c) for c in cfgs]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            runs = list(pool.map(lambda c: run_pendulum_experiment(params, mix, c), cfgs))
    return {c.scenario: r for c, r in zip(cfgs, runs)}


@dataclass
class ScenarioComparison:
    mean_error: dict
    max_tracking_distance: dict

    def ordering_holds(self, factor: float = 10.0) -> bool:
        """Last-quarter mean ``||e||``: true-model <= adaptive, and adaptive ``factor`` times below zero-model."""
        m = self.mean_error
        return (m[Scenario.TRUE_MODEL] <= m[Scenario.GP_ADAPTIVE]
                and factor * m[Scenario.GP_ADAPTIVE] <= m[Scenario.ZERO_MODEL])

    def to_dict(self) -> dict:
        return {
            "last_quarter_mean_norm_e": {k.value: v for k, v in self.mean_error.items()},
            "last_quarter_max_dist_to_target": {k.value: v for k, v in self.max_tracking_distance.items()},
            "ordering_holds": self.ordering_holds(),
        }


def compare_scenarios(runs: dict, target) -> ScenarioComparison:
    mean_err = {sc: float(np.mean(r.last_quarter(r.error_norms))) for sc, r in runs.items()}
    max_dist = {sc: float(np.max(r.last_quarter(r.tracking_distance(target)))) for sc, r in runs.items()}
    return ScenarioComparison(mean_err, max_dist)
