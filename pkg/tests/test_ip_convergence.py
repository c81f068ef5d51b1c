import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipregret.ip_convergence import (
    Interval,
    IpQuery,
    QueryInfeasible,
    SequenceTrace,
    cesaro_averages,
    classical_tail_check,
    distances,
    example1_sequence,
    interval_distance,
    ip_profile,
    ip_witness,
    is_power_of_two,
    log_ladder,
)


def brute_witness(values, eps, D, N, target=0.0):
    """Direct transcription of the window condition, 1-indexed."""
    T = len(values)
    for n in range(N, T - D + 1):
        ok = True
        for i in range(1, D + 1):
            s = values[n + i - 1]
            d = max(0.0, s - target.upper) if isinstance(target, Interval) else abs(s - target)
            if d > eps:
                ok = False
                break
        if ok:
            return n
    return None


def test_zero_trace_witness_is_start():
    assert ip_witness(np.zeros(50), IpQuery(0.1, 5, 7)) == 7


def test_spike_sequence_long_trace_has_witness():
    q = example1_sequence(100_000)
    n = ip_witness(q, IpQuery(0.1, 10, 100))
    assert n is not None and n >= 100
    assert not any(is_power_of_two(t) for t in range(n + 1, n + 11))


def test_all_ones_no_witness():
    assert ip_witness(np.ones(100), IpQuery(0.5, 3, 1)) is None


def test_query_infeasible():
    with pytest.raises(QueryInfeasible):
        ip_witness(np.zeros(10), IpQuery(0.1, 5, 6))
    assert ip_witness(np.zeros(10), IpQuery(0.1, 5, 5)) == 5


def test_query_validation():
    for bad in [dict(epsilon=0.0, duration=1), dict(epsilon=0.1, duration=0), dict(epsilon=0.1, duration=1, start=0)]:
        with pytest.raises(ValueError):
            IpQuery(**bad)
    with pytest.raises(ValueError):
        Interval(-1.0)


def test_nonfinite_trace_rejected():
    with pytest.raises(ValueError):
        SequenceTrace(np.array([1.0, np.inf]))


def test_profile_monotone_decay():
    t = np.arange(1, 10_001)
    rep = ip_profile(1.0 / t, 0.0, [(0.1, 10), (0.01, 100)])
    assert rep.consistent
    assert all(r.witness_index is not None for r in rep.records if not r.infeasible)
    assert [r.start for r in rep.records[: len(log_ladder(10_000))]] == [1, 10, 100, 1000]


def test_profile_spike_sequence_consistent_but_not_classical():
    q = example1_sequence(2 ** 14)
    assert ip_profile(q, 0.0, [(0.1, 10)]).consistent
    assert classical_tail_check(q, 0.0, 0.5).start is None


def test_profile_alternating_inconsistent():
    s = np.tile([0.0, 1.0], 500)
    rep = ip_profile(s, 0.0, [(0.4, 2)])
    assert not rep.consistent


def test_profile_json_fields():
    rep = ip_profile(np.zeros(100), Interval(0.2), [(0.1, 10)])
    d = rep.to_dict()
    assert set(d) == {"horizon", "target", "consistent", "queries"}
    assert set(d["queries"][0]) == {"epsilon", "duration", "start", "witness_index", "infeasible"}
    assert d["target"] == {"interval": [0.0, 0.2]}


def test_classical_examples():
    t = np.arange(1, 10_001)
    assert classical_tail_check(1.0 / t, 0.0, 0.01).start == 100
    assert classical_tail_check(np.zeros(20), 0.0, 0.1).start == 1
    # final-sample exceedance cannot certify a tail
    assert classical_tail_check(np.r_[np.zeros(9), 1.0], 0.0, 0.1).start is None


def test_spike_sequence_short_of_a_power_reports_growing_gaps():
    # on 1..2^14-1 the last spike is 2^13 and the quiet tail is shorter than the next gap
    res = classical_tail_check(example1_sequence(2 ** 14 - 1), 0.0, 0.5)
    assert res.start is None and res.last_exceedance == 2 ** 13


def test_cesaro_examples():
    np.testing.assert_allclose(cesaro_averages([1, 1, 1]), [1, 1, 1])
    np.testing.assert_allclose(cesaro_averages([0, 2, 4]), [0, 1, 2])
    S = cesaro_averages(example1_sequence(10_000))
    assert S[-1] < 0.01
    # 14 unit spikes plus the 1/t^2 tail
    tail = math.fsum(1.0 / t ** 2 for t in range(1, 10_001) if not is_power_of_two(t))
    assert S[-1] == pytest.approx((14 + tail) / 10_000, rel=1e-14)


def test_cesaro_warns_on_negative():
    with pytest.warns(RuntimeWarning):
        cesaro_averages([1.0, -1.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cesaro_averages([1.0, 0.0])


def test_cesaro_compensated_summation():
    # large spikes followed by tiny values: naive running sums lose the tiny part
    s = np.r_[1e16, np.ones(1000)]
    S = cesaro_averages(s)
    assert S[-1] == (1e16 + 1000) / 1001


def test_spike_sequence_values():
    q = example1_sequence(8)
    assert q[0] == 1.0
    assert q[2] == pytest.approx(1 / 9)
    assert q[3] == 1.0
    assert q[7] == 1.0 and q[6] == pytest.approx(1 / 49)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=2, max_size=300), st.floats(0.01, 1.5),
       st.integers(1, 20), st.integers(1, 50), st.booleans(), st.floats(0, 1))
def test_witness_minimality_against_brute_force(vals, eps, D, N, use_interval, r):
    vals = np.asarray(vals)
    target = Interval(r) if use_interval else 0.0
    q = IpQuery(eps, D, N, target)
    if N + D > len(vals):
        with pytest.raises(QueryInfeasible):
            ip_witness(vals, q)
        return
    assert ip_witness(vals, q) == brute_witness(vals, eps, D, N, target)


def test_witness_minimality_long_traces():
    rng = np.random.default_rng(5)
    for _ in range(5):
        vals = (rng.random(10_000) < 0.05).astype(float)
        assert ip_witness(vals, IpQuery(0.5, 30, 200)) == brute_witness(vals, 0.5, 30, 200)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10))
def test_interval_distance(s, r):
    d = interval_distance(s, r)
    assert d >= 0
    assert (d == 0) == (0 <= s <= r)
    if s > r:
        assert d == pytest.approx(s - r)
    np.testing.assert_allclose(distances([s], Interval(r)), [d])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=20, max_size=200), st.floats(0.05, 0.5), st.integers(1, 10))
def test_classical_implies_ip(vals, eps, D):
    vals = np.asarray(vals)
    res = classical_tail_check(vals, 0.0, eps)
    if res.start is None:
        return
    for N in range(res.start, len(vals) - D + 1):
        assert ip_witness(vals, IpQuery(eps, D, N)) == N


def test_from_csv(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("value\n0.5\n0.25\n")
    np.testing.assert_array_equal(SequenceTrace.from_csv(p).values, [0.5, 0.25])
