"""Disturbed contractions and disturbed stable linear recurrences.

``simulate_contraction`` iterates ``y_{t+1} = phi(y_t) + d_t`` and
``simulate_linear`` iterates ``x_{t+1} = M x_t + d_t``. When the disturbance
norms settle (with increasing permanence) into ``[0, r]``, the distance to
the fixed point settles into ``[0, r / (1 - lambda)]`` for a
``lambda``-contraction and ``||x_t||`` settles into ``[0, sigma r]`` with
``sigma = sum_i ||M^i||`` for a Schur-stable ``M``. The helpers here compute
those bounds and the traces to check them against.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .ip_convergence import Interval, ip_profile, example1_sequence, violation_fraction
from .rng import make_rng


class NumericalError(ArithmeticError):
    pass


class SimulationDiverged(NumericalError):
    def __init__(self, message: str, stage: int):
        super().__init__(message)
        self.stage = stage


def _square(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def _roots_2x2(M: np.ndarray) -> float:
    tr = M[0, 0] + M[1, 1]
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    disc = tr * tr / 4.0 - det
    if disc >= 0:
        s = math.sqrt(disc)
        return max(abs(tr / 2.0 + s), abs(tr / 2.0 - s))
    return math.sqrt(max(det, 0.0))


def _power_phase(M: np.ndarray, tol: float, max_iter: int):
    """Vector power iteration; returns ``(rho, residual, iterations)`` with ``rho=None`` on failure.

    Each step tests a real Rayleigh quotient and a two-term recurrence
    ``y2 + a y1 + b y0 = 0`` fitted to consecutive iterates, which captures a
    dominant complex-conjugate (or +/-) pair. An estimate is accepted only
    when its residual is below ``tol`` and it agrees with the previous step's
    estimate to ``tol``; defective spectra creep and never pass.
    """
    n = M.shape[0]
    v = make_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    resid = math.inf
    prev_real = prev_pair = math.nan
    for k in range(1, max_iter + 1):
        w = M @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # a generic start vector annihilated by a power of M: M is nilpotent
            return 0.0, 0.0, k
        mu = abs(float(v @ w))
        resid = np.linalg.norm(w - float(v @ w) * v) / nw
        if resid <= tol and abs(mu - prev_real) <= tol * mu:
            return mu, resid, k
        prev_real = mu
        w2 = M @ w
        Y = np.column_stack([w, v])
        sv = np.linalg.svd(Y, compute_uv=False)
        if sv[-1] > 1e-8 * sv[0]:
            coef, *_ = np.linalg.lstsq(Y, -w2, rcond=None)
            n2 = np.linalg.norm(w2)
            pres = np.linalg.norm(w2 + Y @ coef) / n2 if n2 > 0 else 0.0
            rho = float(np.max(np.abs(np.roots([1.0, *coef]))))
            if pres <= tol and abs(rho - prev_pair) <= tol * rho:
                return rho, pres, k
            prev_pair = rho
            resid = min(resid, pres)
        else:
            prev_pair = math.nan
        v = w / nw
    return None, resid, max_iter


def _gelfand_phase(M: np.ndarray, tol: float, max_squarings: int = 200):
    """``rho = lim ||M^k||^(1/k)`` along ``k = 2^j`` with renormalized repeated squaring."""
    nm = np.linalg.norm(M)
    if nm == 0.0:
        return 0.0, 0.0
    B = M / nm
    log_scale = math.log(nm)
    k = 1.0
    est = nm
    for _ in range(max_squarings):
        B = B @ B
        nb = np.linalg.norm(B)
        if nb == 0.0:
            return 0.0, 0.0
        log_scale = 2.0 * log_scale + math.log(nb)
        B /= nb
        k *= 2.0
        new = math.exp(log_scale / k)
        change = abs(new - est)
        est = new
        if k >= 2.0**30 and change <= tol * est:
            return est, change
    raise NumericalError(f"repeated squaring did not settle; last change {change:.3e}")


def spectral_radius(M, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Largest eigenvalue modulus of a square matrix.

    Power iteration handles dominant real eigenvalues and dominant conjugate
    pairs; defective or otherwise stubborn spectra fall back to Gelfand's
    formula evaluated by repeated squaring. ``max_iter`` bounds the total
    number of iterations. 2x2 inputs are cross-checked against the roots of
    the characteristic polynomial.
    """
    M = _square(M)
    power_budget = min(max_iter, 5_000)
    rho, resid, used = _power_phase(M, tol, power_budget)
    if rho is None:
        if used >= max_iter:
            raise NumericalError(f"power iteration did not converge; residual {resid:.3e}")
        rho, _ = _gelfand_phase(M, 1e-12)
    if M.shape[0] == 2:
        closed = _roots_2x2(M)
        if abs(closed - rho) > 1e-6 * max(1.0, closed):
            raise NumericalError(f"2x2 cross-check failed: iterative {rho!r}, closed form {closed!r}")
        rho = closed
    return rho


@dataclass(frozen=True)
class SigmaSeries:
    """Partial sum of ``||M^i||`` for ``i = 0..terms-1`` and a certified bound on the rest."""

    partial: float
    tail_bound: float
    terms: int
    contraction_power: int  # smallest j >= 1 with ||M^j|| < 1

    @property
    def value(self) -> float:
        """Certified upper bound on ``sigma``; exceeds it by at most ``tail_bound``."""
        return self.partial + self.tail_bound


def sigma_series(M, tail_tol: float = 1e-10, min_terms: int = 1, max_powers: int = 10_000) -> SigmaSeries:
    """Sum spectral norms of powers of ``M`` until the remainder is certified below ``tail_tol``.

    With ``q = ||M^j|| < 1`` every power splits as ``M^{K+mj+r} = M^{K+r} (M^j)^m``,
    so the remainder after ``K`` is at most
    ``(q ||M^K|| + sum_{r=1}^{j-1} ||M^{K+r}||) / (1 - q)``.
    """
    M = _square(M)
    if tail_tol <= 0:
        raise ValueError("tail_tol must be positive")
    n = M.shape[0]
    norms = [1.0]  # ||M^0|| = ||I||
    P = np.eye(n)
    j = None

    def extend():
        nonlocal P
        if len(norms) > max_powers:
            raise NumericalError(f"tail not certified within {max_powers} powers")
        P = P @ M
        v = float(np.linalg.norm(P, 2))
        if not math.isfinite(v):
            raise NumericalError(f"norm of M^{len(norms)} overflowed")
        norms.append(v)

    while j is None:
        extend()
        if norms[-1] < 1.0:
            j = len(norms) - 1
    K = max(0, min_terms - 1)
    while True:
        while len(norms) < K + j:
            extend()
        q = norms[j]
        tail = (q * norms[K] + math.fsum(norms[K + 1:K + j])) / (1.0 - q)
        if tail <= tail_tol:
            return SigmaSeries(math.fsum(norms[:K + 1]), tail, K + 1, j)
        K += 1


def sigma_sum(M, tail_tol: float = 1e-10) -> float:
    """``sigma = sum_{i>=0} ||M^i||`` (spectral norm), as a certified upper bound."""
    if spectral_radius(M) >= 1.0:
        raise ValueError("sigma diverges: spectral radius is not below 1")
    return sigma_series(M, tail_tol).value


@dataclass(frozen=True)
class LinearRecurrence:
    M: np.ndarray

    def __post_init__(self):
        M = _square(self.M)
        rho = spectral_radius(M)
        if rho >= 1.0:
            raise ValueError(f"recurrence matrix is not Schur stable (spectral radius {rho:.6g})")
        M.setflags(write=False)
        object.__setattr__(self, "M", M)

    @property
    def state_dim(self) -> int:
        return self.M.shape[0]


# -- disturbances -----------------------------------------------------------

def _direction(direction, dim: int) -> np.ndarray:
    if direction is None:
        u = np.zeros(dim)
        u[0] = 1.0
        return u
    u = np.asarray(direction, dtype=float).reshape(-1)
    if u.size != dim:
        raise ValueError(f"direction has dimension {u.size}, state has {dim}")
    nu = np.linalg.norm(u)
    if nu == 0:
        raise ValueError("direction must be nonzero")
    return u / nu


@dataclass(frozen=True)
class IpVanishing:
    """``d_t = scale * base_t * u``; the base defaults to the powers-of-two spike sequence."""

    scale: float
    base: Optional[tuple] = None
    direction: Optional[tuple] = None

    def base_values(self, T: int) -> np.ndarray:
        if self.base is None:
            return example1_sequence(T)
        b = np.asarray(self.base, dtype=float)
        if b.size < T:
            raise ValueError(f"base trace has {b.size} entries, need {T}")
        return b[:T]

    def values(self, T: int, dim: int) -> np.ndarray:
        return self.scale * np.outer(self.base_values(T), _direction(self.direction, dim))

    def bound(self, T: int) -> float:
        return float(abs(self.scale) * np.max(np.abs(self.base_values(T))))


@dataclass(frozen=True)
class ConstantBounded:
    level: float
    direction: Optional[tuple] = None

    def values(self, T: int, dim: int) -> np.ndarray:
        return self.level * np.tile(_direction(self.direction, dim), (T, 1))

    def bound(self, T: int) -> float:
        return abs(self.level)


@dataclass(frozen=True)
class Recorded:
    samples: tuple

    def values(self, T: int, dim: int) -> np.ndarray:
        d = np.asarray(self.samples, dtype=float)
        if d.ndim == 1:
            d = d[:, None] if dim == 1 else np.outer(d, _direction(None, dim))
        if d.shape[0] < T or d.shape[1] != dim:
            raise ValueError(f"recorded disturbance has shape {d.shape}, need ({T}, {dim})")
        return d[:T]

    def bound(self, T: int) -> float:
        d = np.asarray(self.samples, dtype=float)
        d = d.reshape(d.shape[0], -1)[:T]
        return float(np.max(np.linalg.norm(d, axis=1)))


DisturbanceSignal = Union[IpVanishing, ConstantBounded, Recorded]


# -- simulation -------------------------------------------------------------

@dataclass
class Trajectory:
    """States ``x_0..x_T``, the disturbances ``d_1..d_T`` that produced ``x_1..x_T``,
    and the trace ``s_t`` (t = 1..T) handed to the i.p. analysis."""

    states: np.ndarray
    disturbances: np.ndarray
    trace: np.ndarray
    meta: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        n = self.states.shape[1]
        dn = np.concatenate(([0.0], np.linalg.norm(self.disturbances, axis=1)))
        xn = np.linalg.norm(self.states, axis=1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *[f"x{i + 1}" for i in range(n)], "norm_x", "norm_d"])
            for t in range(self.states.shape[0]):
                w.writerow([t, *(f"{v:.17g}" for v in self.states[t]), f"{xn[t]:.17g}", f"{dn[t]:.17g}"])


def simulate_linear(rec: LinearRecurrence, x0, d: DisturbanceSignal, T: int) -> Trajectory:
    """Iterate ``x_t = M x_{t-1} + d_t`` for ``t = 1..T``; the trace is ``||x_t||``."""
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.size != rec.state_dim:
        raise ValueError("x0 dimension does not match M")
    D = d.values(T, rec.state_dim)
    states = np.empty((T + 1, rec.state_dim))
    states[0] = x
    for t in range(1, T + 1):
        x = rec.M @ x + D[t - 1]
        if not np.all(np.isfinite(x)):
            raise SimulationDiverged(f"non-finite state at stage {t}", t)
        states[t] = x
    return Trajectory(states, D, np.linalg.norm(states[1:], axis=1), {"kind": "linear"})


@dataclass
class ContractionSpec:
    """A ``lambda``-Lipschitz self-map with known fixed point."""

    map: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    fixed_point: np.ndarray
    certified: bool = field(default=False, init=False)

    def __post_init__(self):
        if not 0.0 <= self.lipschitz < 1.0:
            raise ValueError("contraction needs 0 <= lambda < 1")
        self.fixed_point = np.asarray(self.fixed_point, dtype=float).reshape(-1)
        fx = np.asarray(self.map(self.fixed_point), dtype=float).reshape(-1)
        if np.linalg.norm(fx - self.fixed_point) > 1e-9:
            raise ValueError("fixed_point is not fixed by the map")

    def certify(self, pairs: int = 1000, radius: float = 10.0, seed: int = 0) -> None:
        """Sample point pairs around the fixed point and check the Lipschitz inequality."""
        rng = make_rng(seed)
        dim = self.fixed_point.size
        for _ in range(pairs):
            a = self.fixed_point + rng.uniform(-radius, radius, dim)
            b = self.fixed_point + rng.uniform(-radius, radius, dim)
            lhs = np.linalg.norm(np.asarray(self.map(a), float) - np.asarray(self.map(b), float))
            if lhs > self.lipschitz * np.linalg.norm(a - b) + 1e-9:
                raise ValueError(f"Lipschitz bound {self.lipschitz} violated at {a}, {b}")
        self.certified = True


def affine_contraction(slope: float, offset: float) -> ContractionSpec:
    """Scalar ``phi(y) = slope * y + offset``."""
    return ContractionSpec(lambda y: slope * np.asarray(y, float) + offset, abs(slope),
                           np.array([offset / (1.0 - slope)]))


def sine_contraction(amplitude: float) -> ContractionSpec:
    """Scalar ``phi(y) = amplitude * sin(y)``, fixed point 0."""
    return ContractionSpec(lambda y: amplitude * np.sin(np.asarray(y, float)), abs(amplitude), np.zeros(1))


def simulate_contraction(spec: ContractionSpec, y0, d: DisturbanceSignal, T: int) -> Trajectory:
    """Iterate ``y_t = phi(y_{t-1}) + d_t``; the trace is ``||y_t - x*||``."""
    if not spec.certified:
        spec.certify()
    y = np.asarray(y0, dtype=float).reshape(-1)
    dim = spec.fixed_point.size
    if y.size != dim:
        raise ValueError("y0 dimension does not match the fixed point")
    D = d.values(T, dim)
    states = np.empty((T + 1, dim))
    states[0] = y
    for t in range(1, T + 1):
        y = np.asarray(spec.map(y), dtype=float).reshape(-1) + D[t - 1]
        if not np.all(np.isfinite(y)):
            raise SimulationDiverged(f"non-finite state at stage {t}", t)
        states[t] = y
    dist = np.linalg.norm(states[1:] - spec.fixed_point, axis=1)
    return Trajectory(states, D, dist, {"kind": "contraction"})


@dataclass
class BoundCheck:
    sigma: float
    r: float
    lam: Optional[float]
    bound: float
    epsilon: float
    tail_violation_fraction: float
    ip_report: object

    @property
    def passed(self) -> bool:
        return self.ip_report.consistent and self.tail_violation_fraction < 0.05

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "r": self.r,
            "lambda": self.lam,
            "bound": self.bound,
            "epsilon": self.epsilon,
            "tail_violation_fraction": self.tail_violation_fraction,
            "passed": self.passed,
            "ip_report": self.ip_report.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def check_bound(trace, sigma: float, r: float, epsilon: float = 0.05, lam: float | None = None,
                durations=(10, 100)) -> BoundCheck:
    """Test a trace against the interval ``[0, sigma r]`` with slack ``epsilon``.

    ``sigma`` is the amplification factor: ``1 / (1 - lambda)`` for a
    contraction, ``sum ||M^i||`` for a linear recurrence. The violation
    fraction is measured over the second half of the trace.
    """
    bound = sigma * r
    target = Interval(bound)
    report = ip_profile(trace, target, [(epsilon, D) for D in durations])
    T = len(trace)
    frac = violation_fraction(trace, target, epsilon, T // 2, T)
    return BoundCheck(sigma, r, lam, bound, epsilon, frac, report)
