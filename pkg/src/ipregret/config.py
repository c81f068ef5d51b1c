"""Strict experiment configuration.

A configuration is a nested key-value document (TOML or JSON) with a
top-level ``kind`` and one section named after it::

    kind = "regress"
    seed = 42
    out = "runs/regress"
    formats = ["csv", "json", "plotdata"]

    [regress]
    horizon = 100
    eta0 = 1.0

Unknown keys anywhere are errors. ``resolve`` materializes every default so
the snapshot written next to the results fully determines a rerun.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .control import ControllerConfig, ModelErrorMixture, PendulumParams, Scenario
from .regression import RegressionConfig
from .rng import SEED_MAX

KINDS = ("regress", "pendulum", "dynamics", "ipcheck")
FORMATS = ("csv", "json", "plotdata")
STOCHASTIC = {"regress"}


class ConfigError(ValueError):
    pass


def _strict(cls, data: Mapping[str, Any], where: str, exclude=()):
    names = {f.name for f in dataclasses.fields(cls) if f.init} - set(exclude)
    extra = set(data) - names
    if extra:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(extra)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def _tuples(data: Mapping[str, Any]) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}


def _check_keys(data: Mapping, allowed: set, where: str) -> None:
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(extra)}")


@dataclass
class RegressSection:
    experiment: RegressionConfig
    ip_queries: list = field(default_factory=lambda: [[0.05, 10]])
    mc_samples: int = 100_000

    @classmethod
    def parse(cls, data: Mapping, seed: int) -> "RegressSection":
        data = dict(data)
        ip_queries = data.pop("ip_queries", [[0.05, 10]])
        mc_samples = int(data.pop("mc_samples", 100_000))
        exp = _strict(RegressionConfig, {**data, "seed": seed}, "regress")
        try:
            exp.learning_set()
        except ValueError as exc:
            raise ConfigError(f"[regress.feasible_set]: {exc}") from exc
        return cls(exp, [list(q) for q in ip_queries], mc_samples)

    def resolve(self) -> dict:
        d = self.experiment.to_dict()
        d.pop("seed")
        d["ip_queries"] = self.ip_queries
        d["mc_samples"] = self.mc_samples
        return d


@dataclass
class PendulumSection:
    plant: PendulumParams
    mixture: ModelErrorMixture
    controller: ControllerConfig
    scenario: str = "all"
    ip_queries: list = field(default_factory=lambda: [[0.05, 10], [0.05, 100]])

    @classmethod
    def parse(cls, data: Mapping) -> "PendulumSection":
        _check_keys(data, {"plant", "mixture", "controller", "scenario", "ip_queries"}, "pendulum")
        plant = _strict(PendulumParams, data.get("plant", {}), "pendulum.plant")
        mixture = _strict(ModelErrorMixture, _tuples(data.get("mixture", {})), "pendulum.mixture")
        controller = _strict(ControllerConfig, _tuples(data.get("controller", {})), "pendulum.controller",
                             exclude=("scenario",))
        try:
            controller.theta_set()
        except ValueError as exc:
            raise ConfigError(f"[pendulum.controller.feasible_set]: {exc}") from exc
        scenario = data.get("scenario", "all")
        if scenario != "all":
            try:
                Scenario(scenario)
            except ValueError:
                raise ConfigError(
                    f"unknown scenario {scenario!r}; expected 'all' or one of {[s.value for s in Scenario]}"
                ) from None
        queries = [list(q) for q in data.get("ip_queries", [[0.05, 10], [0.05, 100]])]
        return cls(plant, mixture, controller, scenario, queries)

    def scenarios(self) -> list:
        return list(Scenario) if self.scenario == "all" else [Scenario(self.scenario)]

    def resolve(self) -> dict:
        ctrl = self.controller.to_dict()
        ctrl.pop("scenario")
        mix = dataclasses.asdict(self.mixture)
        return {
            "plant": dataclasses.asdict(self.plant),
            "mixture": {k: list(v) if isinstance(v, tuple) else v for k, v in mix.items()},
            "controller": ctrl,
            "scenario": self.scenario,
            "ip_queries": self.ip_queries,
        }


SYSTEM_KEYS = {"linear": {"matrix"}, "affine": {"slope", "offset"}, "sine": {"amplitude"}}
DISTURBANCE_KEYS = {
    "ip_vanishing": ({"scale"}, {"direction", "base"}),
    "constant": ({"level"}, {"direction"}),
    "recorded": ({"samples"}, set()),
}


@dataclass
class DynamicsSection:
    system: dict = field(default_factory=lambda: {"type": "affine", "slope": 0.5, "offset": 1.0})
    disturbance: dict = field(default_factory=lambda: {"type": "ip_vanishing", "scale": 0.1})
    x0: list = field(default_factory=lambda: [0.0])
    horizon: int = 10_000
    r: float | None = None
    epsilon: float = 0.05
    tail_tol: float = 1e-8
    durations: list = field(default_factory=lambda: [10, 100])

    @classmethod
    def parse(cls, data: Mapping) -> "DynamicsSection":
        sec = _strict(cls, data, "dynamics")
        sys_type = sec.system.get("type")
        if sys_type not in SYSTEM_KEYS:
            raise ConfigError(f"dynamics.system.type must be one of {sorted(SYSTEM_KEYS)}")
        if set(sec.system) - {"type"} != SYSTEM_KEYS[sys_type]:
            raise ConfigError(f"dynamics.system of type {sys_type!r} takes exactly {sorted(SYSTEM_KEYS[sys_type])}")
        d_type = sec.disturbance.get("type")
        if d_type not in DISTURBANCE_KEYS:
            raise ConfigError(f"dynamics.disturbance.type must be one of {sorted(DISTURBANCE_KEYS)}")
        required, optional = DISTURBANCE_KEYS[d_type]
        keys = set(sec.disturbance) - {"type"}
        if not required <= keys or keys - required - optional:
            raise ConfigError(f"dynamics.disturbance of type {d_type!r} needs {sorted(required)}, "
                              f"optionally {sorted(optional)}")
        if sec.horizon < 1 or not sec.epsilon > 0 or not sec.tail_tol > 0:
            raise ConfigError("dynamics: horizon >= 1, epsilon > 0, tail_tol > 0 required")
        if sec.r is None:
            # declared disturbance level defaults to the signal's scale
            sec.r = float(abs(sec.disturbance.get("scale", sec.disturbance.get("level", math.nan))))
            if math.isnan(sec.r):
                raise ConfigError("dynamics.r is required for recorded disturbances")
        return sec

    def resolve(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class IpcheckSection:
    input: str = ""
    column: str | None = None
    target: float = 0.0
    target_interval: float | None = None
    queries: list = field(default_factory=lambda: [[0.05, 10, 1]])

    @classmethod
    def parse(cls, data: Mapping) -> "IpcheckSection":
        sec = _strict(cls, data, "ipcheck")
        if not sec.input:
            raise ConfigError("ipcheck.input is required")
        qs = []
        for q in sec.queries:
            if len(q) == 2:
                q = [q[0], q[1], 1]
            if len(q) != 3 or not q[0] > 0 or int(q[1]) < 1 or int(q[2]) < 1:
                raise ConfigError(f"ipcheck query must be [epsilon > 0, duration >= 1, start >= 1], got {q}")
            qs.append([float(q[0]), int(q[1]), int(q[2])])
        sec.queries = qs
        return sec

    def resolve(self) -> dict:
        return dataclasses.asdict(self)


SECTIONS = {"regress": RegressSection, "pendulum": PendulumSection,
            "dynamics": DynamicsSection, "ipcheck": IpcheckSection}


@dataclass
class ExperimentConfig:
    kind: str
    section: Any
    seed: int | None = None
    out: str = "runs"
    formats: tuple = FORMATS

    def resolve(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "out": self.out,
            "formats": list(self.formats),
            self.kind: self.section.resolve(),
        }

    def write_resolved(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.resolve(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def parse_config(data: Mapping[str, Any]) -> ExperimentConfig:
    data = dict(data)
    kind = data.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {list(KINDS)}, got {kind!r}")
    _check_keys(data, {"kind", "seed", "out", "formats", kind}, "top level")
    seed = data.get("seed")
    if seed is not None:
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= SEED_MAX:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    elif kind in STOCHASTIC:
        raise ConfigError(f"a seed is mandatory for the stochastic experiment {kind!r}")
    formats = data.get("formats", list(FORMATS))
    if isinstance(formats, str):
        formats = [f for f in formats.split(",") if f]
    bad = set(formats) - set(FORMATS)
    if bad:
        raise ConfigError(f"unknown output formats {sorted(bad)}; allowed {list(FORMATS)}")
    block = data.get(kind, {})
    if not isinstance(block, Mapping):
        raise ConfigError(f"[{kind}] must be a section")
    if kind == "regress":
        section = RegressSection.parse(block, seed)
    else:
        section = SECTIONS[kind].parse(block)
    out = str(data.get("out", f"runs/{kind}"))
    return ExperimentConfig(kind, section, seed, out, tuple(f for f in FORMATS if f in formats))


def load_document(path) -> dict:
    path = Path(path)
    try:
        if path.suffix == ".json":
            with open(path) as fh:
                return json.load(fh)
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
