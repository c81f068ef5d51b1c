"""Finite-horizon analysis of convergence with increasing permanence.

A real sequence ``s_1, s_2, ...`` converges to a target with increasing
permanence when, for every tolerance ``eps`` and every window length ``D``,
arbitrarily late stretches of ``D`` consecutive terms stay within ``eps`` of
the target. On a finite trace this can only ever be *consistent at the
horizon*; nothing here proves an asymptotic statement.

Traces are 1-indexed throughout: ``values[0]`` is ``s_1``. A witness ``n``
means ``s_{n+1}, ..., s_{n+D}`` all lie within ``eps`` of the target.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Union

import numpy as np


class QueryInfeasible(ValueError):
    """The trace is too short to hold even one window of the query."""


@dataclass(frozen=True)
class Interval:
    """The set ``[0, upper]`` used as a convergence target for nonnegative traces."""

    upper: float

    def __post_init__(self):
        if not self.upper >= 0:
            raise ValueError("interval target needs upper >= 0")


Target = Union[float, Interval]


@dataclass(frozen=True)
class IpQuery:
    epsilon: float
    duration: int
    start: int = 1
    target: Target = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.duration < 1:
            raise ValueError("duration must be >= 1")
        if self.start < 1:
            raise ValueError("start must be >= 1")


@dataclass
class SequenceTrace:
    """Ordered samples plus free-form metadata.

    Vector-valued samples are stored as rows; ``distances`` reduces them with
    the Euclidean metric.
    """

    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim not in (1, 2):
            raise ValueError("trace values must be 1-D (scalars) or 2-D (vectors)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trace contains non-finite entries")

    def __len__(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_csv(cls, path, **meta) -> "SequenceTrace":
        """Read a single-column CSV; a non-numeric first line is treated as a header."""
        rows = []
        with open(path) as fh:
            for lineno, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append(float(line.split(",")[0]))
                except ValueError:
                    if lineno == 0:
                        continue
                    raise
        return cls(np.array(rows), dict(meta, source=str(path)))


def _values(trace) -> np.ndarray:
    if isinstance(trace, SequenceTrace):
        return trace.values
    arr = np.asarray(trace, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("trace contains non-finite entries")
    return arr


def distances(trace, target: Target = 0.0) -> np.ndarray:
    """Distance of every sample to ``target``.

    For an :class:`Interval` target the distance is ``max(0, s - upper)``,
    which is the set distance to ``[0, upper]`` for nonnegative samples.
    """
    v = _values(trace)
    if isinstance(target, Interval):
        if v.ndim != 1:
            raise ValueError("interval targets apply to scalar traces only")
        return np.maximum(0.0, v - target.upper)
    if v.ndim == 2:
        return np.linalg.norm(v - np.asarray(target, dtype=float), axis=1)
    return np.abs(v - float(target))


def interval_distance(s: float, upper: float) -> float:
    return max(0.0, s - upper)


def ip_witness(trace, query: IpQuery) -> int | None:
    """Smallest ``n >= start`` whose next ``duration`` samples stay within ``epsilon``.

    Returns ``None`` when the trace holds no such window. Raises
    :class:`QueryInfeasible` when ``start + duration`` exceeds the trace length,
    i.e. when not a single window could be inspected.
    """
    T = len(_values(trace))
    if query.start + query.duration > T:
        raise QueryInfeasible(
            f"start {query.start} + duration {query.duration} exceeds trace length {T}"
        )
    hits = np.flatnonzero(window_hits(trace, query))
    if hits.size == 0:
        return None
    return query.start + int(hits[0])


def log_ladder(horizon: int) -> list[int]:
    """Start indices ``1, 10, 100, ...`` not exceeding ``horizon / 2``."""
    ladder = []
    n = 1
    while n <= max(1, horizon // 2):
        ladder.append(n)
        n *= 10
    return ladder


@dataclass
class IpRecord:
    epsilon: float
    duration: int
    start: int
    witness_index: int | None
    infeasible: bool


@dataclass
class IpReport:
    horizon: int
    target: Target
    records: list[IpRecord]

    @property
    def consistent(self) -> bool:
        """Every query with a feasible window found a witness."""
        return all(r.witness_index is not None for r in self.records if not r.infeasible)

    def to_dict(self) -> dict:
        tgt = {"interval": [0.0, self.target.upper]} if isinstance(self.target, Interval) else {"point": float(self.target)}
        return {
            "horizon": self.horizon,
            "target": tgt,
            "consistent": self.consistent,
            "queries": [asdict(r) for r in self.records],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def ip_profile(trace, target: Target, queries: Iterable[tuple[float, int]]) -> IpReport:
    """Sweep ``(epsilon, duration)`` queries over a logarithmic ladder of start indices."""
    queries = list(queries)
    if not queries:
        raise ValueError("ip_profile needs at least one (epsilon, duration) query")
    T = len(_values(trace))
    records = []
    for eps, dur in queries:
        for N in log_ladder(T):
            q = IpQuery(eps, int(dur), N, target)
            try:
                w = ip_witness(trace, q)
            except QueryInfeasible:
                records.append(IpRecord(eps, int(dur), N, None, True))
                continue
            records.append(IpRecord(eps, int(dur), N, w, False))
    return IpReport(T, target, records)


@dataclass(frozen=True)
class TailCheck:
    """Outcome of a classical-convergence scan.

    ``start`` is the first index from which the whole remaining trace stays
    within tolerance, or ``None`` when the scan cannot vouch for one.
    ``last_exceedance`` is the final index outside tolerance (``None`` if
    there was none).
    """

    start: int | None
    last_exceedance: int | None


def classical_tail_check(trace, target: Target, epsilon: float) -> TailCheck:
    """Look for a tail that stays within ``epsilon`` until the end of the trace.

    A tail is refused when it cannot be distinguished from the quiet stretch
    between excursions whose spacing keeps growing: if the last gaps between
    exceedances increase and the clean tail is shorter than the next gap
    extrapolated geometrically, the result is ``start=None``. An exceedance at
    the final sample is refused outright.
    """
    dist = distances(trace, target)
    if dist.size == 0:
        raise ValueError("classical_tail_check needs a nonempty trace")
    T = dist.shape[0]
    exceed = np.flatnonzero(dist > epsilon) + 1
    if exceed.size == 0:
        return TailCheck(1, None)
    last = int(exceed[-1])
    if last == T:
        return TailCheck(None, last)
    if exceed.size >= 3:
        gap = exceed[-1] - exceed[-2]
        prev = exceed[-2] - exceed[-3]
        if gap > prev and T - last < gap * gap / prev:
            return TailCheck(None, last)
    return TailCheck(last + 1, last)


def cesaro_averages(trace) -> np.ndarray:
    """Running means ``S_T = (1/T) sum_{t<=T} s_t`` with Neumaier-compensated sums."""
    v = _values(trace)
    if v.ndim != 1:
        raise ValueError("cesaro_averages expects a scalar trace")
    if np.any(v < 0):
        warnings.warn("Cesaro averaging of a trace with negative entries", RuntimeWarning, stacklevel=2)
    out = np.empty_like(v)
    s = 0.0
    c = 0.0
    for i, x in enumerate(v.tolist()):
        t = s + x
        if abs(s) >= abs(x):
            c += (s - t) + x
        else:
            c += (x - t) + s
        s = t
        out[i] = (s + c) / (i + 1)
    return out


def is_power_of_two(t: int) -> bool:
    return t > 0 and (t & (t - 1)) == 0


def example1_sequence(length: int) -> np.ndarray:
    """``q_t = 1`` when ``t`` is a power of two (including ``t = 1``), else ``1/t^2``.

    The canonical sequence that converges to 0 with increasing permanence but
    not classically.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    t = np.arange(1, length + 1, dtype=np.int64)
    q = 1.0 / t.astype(float) ** 2
    q[(t & (t - 1)) == 0] = 1.0
    return q


def window_hits(trace, query: IpQuery) -> np.ndarray:
    """Boolean mask over ``n = start .. T-duration`` marking clean windows."""
    dist = distances(trace, query.target)
    T = dist.shape[0]
    # bad_before[k] = number of violations among s_1..s_k
    bad_before = np.concatenate(([0], np.cumsum(dist > query.epsilon)))
    n = np.arange(query.start, T - query.duration + 1)
    return bad_before[n + query.duration] - bad_before[n] == 0


def violation_fraction(trace, target: Target, epsilon: float, lo: int, hi: int) -> float:
    """Fraction of indices ``t`` in ``[lo, hi]`` whose distance to target exceeds ``epsilon``."""
    dist = distances(trace, target)
    seg = dist[lo - 1:hi]
    return float(np.mean(seg > epsilon)) if seg.size else 0.0
