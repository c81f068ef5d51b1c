"""Online regression with radial-basis-function predictors learned by Greedy Projection."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import geometry
from .geometry import FeasibleSet
from .ocp import OcpState, RegretLedger, gp_step
from .rng import make_rng


class NumericalFailure(FloatingPointError):
    """A simulation produced a non-finite value; carries the offending stage."""

    def __init__(self, message: str, stage: int):
        super().__init__(message)
        self.stage = stage


@dataclass(frozen=True)
class RbfFeatureMap:
    """Gaussian features ``phi_i(x) = exp(-||x - c_i||^2 / sigma_i^2)``.

    Length scales may be negative; they only enter squared.
    """

    centers: np.ndarray
    length_scales: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        s = np.asarray(self.length_scales, dtype=float).reshape(-1)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("centers must be a nonempty list of vectors")
        if s.size != c.shape[0]:
            raise ValueError("need one length scale per center")
        if np.any(s == 0) or not np.all(np.isfinite(s)):
            raise ValueError("length scales must be finite and nonzero")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "length_scales", s)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def input_dim(self) -> int:
        return self.centers.shape[1]

    def drop(self, index: int) -> "RbfFeatureMap":
        keep = np.arange(self.size) != index
        return RbfFeatureMap(self.centers[keep], self.length_scales[keep])


def _as_input(fmap: RbfFeatureMap, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != fmap.input_dim:
        raise ValueError(f"input has dimension {x.size}, feature map expects {fmap.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return x


def features(fmap: RbfFeatureMap, x) -> np.ndarray:
    x = _as_input(fmap, x)
    sq = np.sum((fmap.centers - x) ** 2, axis=1)
    return np.exp(-sq / fmap.length_scales**2)


def features_batch(fmap: RbfFeatureMap, X) -> np.ndarray:
    """Feature matrix for rows of ``X`` (shape ``(n, d)`` or ``(n,)`` for scalar inputs)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    sq = np.sum((X[:, None, :] - fmap.centers[None, :, :]) ** 2, axis=2)
    return np.exp(-sq / fmap.length_scales**2)


@dataclass
class RbfPredictor:
    """``f(x; theta) = <theta, phi(x)>``; ``theta`` is ``(m,)`` or ``(m, d_out)``."""

    features: RbfFeatureMap
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape[0] != self.features.size or self.weights.ndim > 2:
            raise ValueError(
                f"weights of shape {self.weights.shape} do not match {self.features.size} features"
            )


def predict(pred: RbfPredictor, x):
    out = features(pred.features, x) @ pred.weights
    return float(out) if np.ndim(out) == 0 else out


def _residual(pred: RbfPredictor, x, y):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(predict(pred, x))
    if yhat.shape != y.shape:
        raise ValueError(f"target of shape {y.shape} does not match prediction {yhat.shape}")
    return yhat - y


def stage_loss(pred: RbfPredictor, x, y) -> float:
    r = _residual(pred, x, y)
    return float(np.sum(r * r))


def stage_gradient(pred: RbfPredictor, x, y, paper_literal: bool = False) -> np.ndarray:
    """Gradient of :func:`stage_loss` in the weights, ``2 (f(x; theta) - y) phi(x)``.

    With ``paper_literal=True`` the target is left out, giving ``2 f(x; theta) phi(x)``;
    that variant does not vanish at the loss minimum and exists only for
    comparison runs.
    """
    phi = features(pred.features, x)
    r = np.asarray(predict(pred, x)) if paper_literal else _residual(pred, x, y)
    return 2.0 * np.multiply.outer(phi, r)


@dataclass
class RegressionConfig:
    """Online regression experiment; defaults: four RBF features on U[-2, 2] inputs."""

    centers: list = field(default_factory=lambda: [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0])
    length_scales: list = field(default_factory=lambda: [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0])
    horizon: int = 100
    seed: int = 0
    eta0: float = 1.0
    input_low: float = -2.0
    input_high: float = 2.0
    init_low: float = -1.0
    init_high: float = 1.0
    feasible_set: dict = field(default_factory=lambda: {"type": "box", "lower": -10.0, "upper": 10.0})
    paper_literal_gradient: bool = False
    # indices of target features absent from the hypothesis map
    drop_features: list = field(default_factory=list)
    # None draws theta_1 at random; a list fixes it
    theta_init: list | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not (np.isfinite(self.input_low) and np.isfinite(self.input_high)):
            raise ValueError("input box must be finite")
        if self.input_low >= self.input_high:
            raise ValueError("input_low must be below input_high")
        if self.eta0 < 0:
            raise ValueError("eta0 must be nonnegative")

    def target_map(self) -> RbfFeatureMap:
        return RbfFeatureMap(np.asarray(self.centers, float), np.asarray(self.length_scales, float))

    def hypothesis_map(self) -> RbfFeatureMap:
        fmap = self.target_map()
        for i in sorted(self.drop_features, reverse=True):
            fmap = fmap.drop(i)
        return fmap

    def learning_set(self) -> FeasibleSet:
        return geometry.from_dict(self.feasible_set, self.hypothesis_map().size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feasible_set"] = self.learning_set().to_dict()
        return d


@dataclass
class RegressionRun:
    config: RegressionConfig
    theta_star: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    thetas: np.ndarray  # theta_t used for the stage-t prediction, shape (T, m)
    losses: np.ndarray
    ledger: RegretLedger

    def final_predictor(self) -> RbfPredictor:
        return RbfPredictor(self.config.hypothesis_map(), self.thetas[-1])

    def target_fn(self) -> Callable[[np.ndarray], np.ndarray]:
        """Ground truth evaluated on a batch of inputs."""
        tmap, w = self.config.target_map(), self.theta_star
        return lambda X: features_batch(tmap, X) @ w

    def write_csv(self, path) -> None:
        """Columns ``stage, x, y, loss, theta_1..theta_m`` at 17 significant digits."""
        m = self.thetas.shape[1]
        xs = self.xs.reshape(len(self.xs), -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            xcols = ["x"] if xs.shape[1] == 1 else [f"x{i + 1}" for i in range(xs.shape[1])]
            w.writerow(["stage", *xcols, "y", "loss", *[f"theta{i + 1}" for i in range(m)]])
            for t in range(len(self.losses)):
                w.writerow(
                    [t + 1, *(f"{v:.17g}" for v in xs[t]), f"{self.ys[t]:.17g}",
                     f"{self.losses[t]:.17g}", *(f"{v:.17g}" for v in self.thetas[t])]
                )

    def write_sidecar(self, path) -> None:
        payload = {"config": self.config.to_dict(), "seed": self.config.seed,
                   "theta_star": self.theta_star.tolist()}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_curve(self, path, points: int = 201) -> None:
        """Whitespace columns ``x f(x) fhat(x)`` on a uniform grid over the input box."""
        cfg = self.config
        grid = np.linspace(cfg.input_low, cfg.input_high, points)
        f = features_batch(cfg.target_map(), grid) @ self.theta_star
        fhat = features_batch(cfg.hypothesis_map(), grid) @ self.thetas[-1]
        with open(path, "w") as fh:
            fh.write("# x f_x fhat_x\n")
            for row in zip(grid, f, fhat):
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def run_online_regression(cfg: RegressionConfig) -> RegressionRun:
    """Predict, observe ``y_t = f(x_t)``, then take a Greedy Projection step.

    Random draws come from one generator seeded with ``cfg.seed`` in the fixed
    order: ``theta*`` (m values), ``theta_1`` (m values, skipped when
    ``theta_init`` is given), then ``x_1..x_T``.
    """
    rng = make_rng(cfg.seed)
    tmap, hmap = cfg.target_map(), cfg.hypothesis_map()
    fset = cfg.learning_set()
    theta_star = rng.uniform(cfg.init_low, cfg.init_high, tmap.size)
    if cfg.theta_init is None:
        theta1 = rng.uniform(cfg.init_low, cfg.init_high, hmap.size)
    else:
        theta1 = np.asarray(cfg.theta_init, dtype=float)
        if theta1.shape != (hmap.size,):
            raise ValueError(f"theta_init must have {hmap.size} entries")
    xs = rng.uniform(cfg.input_low, cfg.input_high, (cfg.horizon, tmap.input_dim))

    phis_target = features_batch(tmap, xs)
    ys = phis_target @ theta_star

    state = OcpState.start(theta1, fset, cfg.eta0)
    ledger = RegretLedger()
    thetas = np.empty((cfg.horizon, hmap.size))
    losses = np.empty(cfg.horizon)
    for t in range(cfg.horizon):
        pred = RbfPredictor(hmap, state.action)
        thetas[t] = state.action
        losses[t] = ledger.record(state.action, features(hmap, xs[t]), ys[t])
        grad = stage_gradient(pred, xs[t], ys[t], paper_literal=cfg.paper_literal_gradient)
        if not (np.isfinite(losses[t]) and np.all(np.isfinite(grad))):
            raise NumericalFailure(f"non-finite loss or gradient at stage {t + 1}", t + 1)
        state = gp_step(state, grad)
    xs_out = xs[:, 0] if tmap.input_dim == 1 else xs
    return RegressionRun(cfg, theta_star, xs_out, ys, thetas, losses, ledger)


@dataclass(frozen=True)
class RepresentationalError:
    value: float
    std_error: float
    n_samples: int
    weights: np.ndarray
    degenerate: bool


def representational_error(
    fmap: RbfFeatureMap,
    target: Callable[[np.ndarray], np.ndarray],
    input_box: tuple,
    n_samples: int,
    seed: int,
) -> RepresentationalError:
    """Monte Carlo estimate of ``inf_theta E[(<theta, phi(x)> - f(x))^2]``.

    Inputs are i.i.d. uniform on ``input_box = (low, high)``; ``target`` maps
    an ``(n, d)`` array of inputs to ``n`` outputs. The infimum is taken by
    least squares on the sample, and the standard error is that of the mean
    squared residual at the fitted weights.
    """
    if n_samples < fmap.size:
        raise ValueError("need at least as many samples as features")
    low, high = input_box
    rng = make_rng(seed)
    X = rng.uniform(low, high, (n_samples, fmap.input_dim))
    y = np.asarray(target(X), dtype=float).reshape(-1)
    Phi = features_batch(fmap, X)
    w, _, rank, _ = np.linalg.lstsq(Phi, y, rcond=None)
    sq = (Phi @ w - y) ** 2
    value = math.fsum(sq) / n_samples
    se = float(np.std(sq, ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return RepresentationalError(value, se, n_samples, w, bool(rank < fmap.size))


def expected_loss(fmap: RbfFeatureMap, thetas: np.ndarray, target, input_box, n_samples: int, seed: int) -> np.ndarray:
    """Monte Carlo ``E_x[(<theta, phi(x)> - f(x))^2]`` for each row of ``thetas``."""
    low, high = input_box
    rng = make_rng(seed)
    X = rng.uniform(low, high, (n_samples, fmap.input_dim))
    y = np.asarray(target(X), dtype=float).reshape(-1)
    Phi = features_batch(fmap, X)
    # E[(Phi th - y)^2] = th' G th - 2 th' b + c, with moments of the sample
    G = Phi.T @ Phi / n_samples
    b = Phi.T @ y / n_samples
    c = float(y @ y) / n_samples
    th = np.atleast_2d(thetas)
    return np.einsum("ti,ij,tj->t", th, G, th) - 2.0 * th @ b + c
