"""Online convex programming: Greedy Projection and external-regret accounting.

The ledger keeps, for every stage, the feature vector and target that define
the quadratic stage loss ``l_t(a) = (<a, phi_t> - y_t)^2``. Storing data
rather than closures keeps it serializable and lets regret be re-evaluated at
any comparator after the fact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq, lsq_linear

from .geometry import Ball, Box, FeasibleSet, contains, project

FEASIBILITY_TOL = 1e-9


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class OcpState:
    """Current action ``a_t`` at stage ``t`` of a Greedy Projection run."""

    action: np.ndarray
    stage: int
    step_scale: float
    feasible_set: FeasibleSet

    def __post_init__(self):
        a = np.asarray(self.action, dtype=float).reshape(-1)
        if a.size != self.feasible_set.dimension:
            raise ValueError("action dimension does not match the feasible set")
        if self.stage < 1:
            raise ValueError("stage counter starts at 1")
        if not self.step_scale >= 0:
            raise ValueError("step_scale must be nonnegative")
        object.__setattr__(self, "action", a)

    @classmethod
    def start(cls, action, feasible_set: FeasibleSet, step_scale: float = 1.0) -> "OcpState":
        """Initial state; the given action is projected so feasibility holds from stage 1."""
        return cls(project(feasible_set, action), 1, float(step_scale), feasible_set)

    @property
    def step_size(self) -> float:
        return self.step_scale / math.sqrt(self.stage)


def gp_step(state: OcpState, gradient) -> OcpState:
    """One Greedy Projection update ``a <- P_F(a - eta0 / sqrt(t) * g)``."""
    g = np.asarray(gradient, dtype=float).reshape(-1)
    if g.shape != state.action.shape:
        raise ValueError(f"gradient has shape {g.shape}, action has shape {state.action.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient(f"non-finite gradient at stage {state.stage}: {g}")
    new = project(state.feasible_set, state.action - state.step_size * g)
    return replace(state, action=new, stage=state.stage + 1)


def quadratic_loss(action, feature, target) -> float:
    r = float(np.dot(action, feature)) - float(target)
    return r * r


@dataclass
class RegretLedger:
    """Realized information set of an online run with quadratic stage losses."""

    stage_losses: list = field(default_factory=list)
    features: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    actions: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.stage_losses)

    def record(self, action, feature, target) -> float:
        """Append a stage played at ``action``; returns its loss."""
        a = np.asarray(action, dtype=float).reshape(-1).copy()
        phi = np.asarray(feature, dtype=float).reshape(-1).copy()
        if self.features and phi.size != self.features[0].size:
            raise ValueError("feature dimension changed mid-ledger")
        loss = quadratic_loss(a, phi, target)
        self.stage_losses.append(loss)
        self.features.append(phi)
        self.targets.append(float(target))
        self.actions.append(a)
        return loss

    def design(self, upto: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        k = len(self) if upto is None else upto
        if k == 0:
            return np.zeros((0, 0)), np.zeros(0)
        return np.vstack(self.features[:k]), np.asarray(self.targets[:k])

    def comparator_losses(self, candidate, upto: int | None = None) -> np.ndarray:
        Phi, y = self.design(upto)
        c = np.asarray(candidate, dtype=float).reshape(-1)
        if Phi.size and c.size != Phi.shape[1]:
            raise ValueError(f"candidate has dimension {c.size}, ledger features have {Phi.shape[1]}")
        r = Phi @ c - y
        return r * r

    def to_csv(self, path) -> None:
        """Write ``stage, loss, a_1..a_m`` with 17 significant digits."""
        m = self.actions[0].size if self.actions else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stage", "loss"] + [f"a{i + 1}" for i in range(m)])
            for t, (loss, a) in enumerate(zip(self.stage_losses, self.actions), start=1):
                w.writerow([t, f"{loss:.17g}"] + [f"{v:.17g}" for v in a])


def external_regret(ledger: RegretLedger, candidate, upto: int | None = None) -> float:
    """``sum_t l_t(a_t) - sum_t l_t(candidate)`` over the first ``upto`` stages."""
    k = len(ledger) if upto is None else upto
    if k == 0:
        return 0.0
    played = math.fsum(ledger.stage_losses[:k])
    return played - math.fsum(ledger.comparator_losses(candidate, k))


class BestAction(NamedTuple):
    action: np.ndarray
    degenerate: bool


def _solve_ball(Phi: np.ndarray, y: np.ndarray, ball: Ball) -> np.ndarray:
    # min ||Phi a - y||^2 s.t. ||a - c|| <= R: trust-region subproblem in b = a - c
    H = Phi.T @ Phi
    g = Phi.T @ (y - Phi @ ball.center)
    lam, Q = np.linalg.eigh(H)
    lam = np.maximum(lam, 0.0)
    gq = Q.T @ g
    R = ball.radius
    scale = max(1.0, float(lam[-1]))
    tiny = 1e-12 * scale

    def norm_at(mu):
        return math.sqrt(float(np.sum((gq / (lam + mu)) ** 2)))

    lam_min = float(lam[0])
    if lam_min <= tiny and abs(gq[0]) <= 1e-12 * max(1.0, float(np.linalg.norm(gq))):
        # hard case: minimum-norm stationary point plus a null direction to hit the sphere
        free = lam > tiny
        b = Q[:, free] @ (gq[free] / lam[free])
        nb = np.linalg.norm(b)
        if nb <= R:
            b = b + Q[:, 0] * math.sqrt(max(R * R - nb * nb, 0.0))
            return ball.center + b
    lo = max(0.0, -lam_min) + 1e-300
    hi = max(1.0, float(np.linalg.norm(g)) / R)
    while norm_at(hi) > R:
        hi *= 2.0
    mu = brentq(lambda m: norm_at(m) - R, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    b = Q @ (gq / (lam + mu))
    return ball.center + b


def best_fixed_action(ledger: RegretLedger, fset: FeasibleSet, upto: int | None = None) -> BestAction:
    """Minimizer over ``fset`` of the cumulative quadratic loss.

    The unconstrained minimum-norm least-squares solution is returned when it
    is feasible. Otherwise the constrained problem is solved exactly:
    bounded-variable least squares for boxes, the trust-region secular
    equation for balls. For an isotropic quadratic this coincides with the
    projection of the unconstrained solution.
    """
    Phi, y = ledger.design(upto)
    if Phi.size == 0:
        raise ValueError("best_fixed_action needs a nonempty ledger")
    a, _, rank, _ = np.linalg.lstsq(Phi, y, rcond=None)
    degenerate = bool(rank < Phi.shape[1])
    if contains(fset, a, FEASIBILITY_TOL):
        return BestAction(project(fset, a), degenerate)
    if isinstance(fset, Box):
        res = lsq_linear(Phi, y, bounds=(fset.lower, fset.upper), method="bvls", tol=1e-14)
        return BestAction(project(fset, res.x), degenerate)
    return BestAction(project(fset, _solve_ball(Phi, y, fset)), degenerate)


def average_regret_curve(ledger: RegretLedger, fset: FeasibleSet, horizons=None) -> np.ndarray:
    """``max(0, R(T)) / T`` against the hindsight-best action of each prefix.

    ``horizons`` restricts evaluation to the given prefix lengths; by default
    every ``T = 1..len(ledger)`` is evaluated.
    """
    n = len(ledger)
    if n == 0:
        raise ValueError("average_regret_curve needs a nonempty ledger")
    Ts = range(1, n + 1) if horizons is None else [int(T) for T in horizons]
    out = np.empty(len(Ts))
    for i, T in enumerate(Ts):
        best = best_fixed_action(ledger, fset, T).action
        out[i] = max(0.0, external_regret(ledger, best, T)) / T
    return out


def run_gp(losses_grad, state: OcpState, steps: int) -> tuple[OcpState, list[np.ndarray]]:
    """Drive ``steps`` Greedy Projection updates with ``losses_grad(t, a) -> gradient``."""
    actions = [state.action]
    for _ in range(steps):
        state = gp_step(state, losses_grad(state.stage, state.action))
        actions.append(state.action)
    return state, actions
