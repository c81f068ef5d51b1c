import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipregret.dynamics import (
    ConstantBounded,
    ContractionSpec,
    IpVanishing,
    LinearRecurrence,
    Recorded,
    affine_contraction,
    check_bound,
    sigma_series,
    sigma_sum,
    simulate_contraction,
    simulate_linear,
    sine_contraction,
    spectral_radius,
)
from ipregret.ip_convergence import classical_tail_check

REF_M = np.array([[0.5, 1.0], [0.0, 0.6]])


def rot(a):
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def test_spectral_radius_examples():
    assert spectral_radius(np.diag([0.5, 0.3])) == pytest.approx(0.5, rel=1e-8)
    assert spectral_radius(np.array([[0.0, 1.0], [0.0, 0.0]])) == pytest.approx(0.0, abs=1e-8)
    assert spectral_radius(0.9 * rot(0.7)) == pytest.approx(0.9, rel=1e-8)


def test_spectral_radius_against_eigvals():
    rng = np.random.default_rng(0)
    cases = [np.array([[0.8, 1, 0], [0, 0.8, 1], [0, 0, 0.8]]), np.diag([0.7, -0.7, 0.2])]
    cases += [rng.normal(size=(n, n)) for n in (3, 4, 6, 8) for _ in range(3)]
    for M in cases:
        rho = max(abs(np.linalg.eigvals(M)))
        assert spectral_radius(M) == pytest.approx(rho, rel=1e-8, abs=1e-12)


def test_spectral_radius_rejects_nonsquare():
    with pytest.raises(ValueError):
        spectral_radius(np.ones((2, 3)))


def test_sigma_examples():
    assert sigma_sum(0.5 * np.eye(3)) == pytest.approx(2.0, abs=1e-9)
    assert sigma_sum(np.array([[0.0, 1.0], [0.0, 0.0]])) == pytest.approx(2.0, abs=1e-12)
    assert sigma_sum(np.diag([0.9, 0.1]), tail_tol=1e-8) == pytest.approx(10.0, abs=1e-6)


def test_sigma_tail_is_certified_and_stable_under_doubling():
    tol = 1e-8
    s = sigma_series(REF_M, tail_tol=tol)
    assert s.tail_bound <= tol
    s2 = sigma_series(REF_M, tail_tol=tol, min_terms=2 * s.terms)
    assert abs(s2.value - s.value) < 2 * tol
    # brute force: spectral norms of powers summed far past the cut
    P, total = np.eye(2), 0.0
    for _ in range(2000):
        total += np.linalg.norm(P, 2)
        P = P @ REF_M
    assert s.partial <= total + 1e-12 and total <= s.value + 1e-12


def test_sigma_rejects_unstable():
    with pytest.raises(ValueError):
        sigma_sum(np.array([[1.0, 0.0], [0.0, 0.5]]))


def test_linear_recurrence_requires_stability():
    with pytest.raises(ValueError):
        LinearRecurrence(np.array([[1.01]]))


def test_homogeneous_system_converges():
    rec = LinearRecurrence(REF_M)
    tr = simulate_linear(rec, [1.0, 1.0], ConstantBounded(0.0), 500)
    assert classical_tail_check(tr.trace, 0.0, 1e-6).start is not None


def test_scalar_geometric_limit():
    rec = LinearRecurrence(np.array([[0.5]]))
    tr = simulate_linear(rec, [0.0], ConstantBounded(1.0), 200)
    assert tr.states[-1, 0] == pytest.approx(2.0, abs=1e-12)
    assert sigma_sum(rec.M) * 1.0 == pytest.approx(2.0)


def test_scalar_ip_vanishing_bound():
    rec = LinearRecurrence(np.array([[0.5]]))
    tr = simulate_linear(rec, [0.0], IpVanishing(0.1), 10_000)
    chk = check_bound(tr.trace, sigma_sum(rec.M), 0.1)
    assert chk.bound == pytest.approx(0.2) and chk.passed


def test_contraction_examples():
    spec = affine_contraction(0.5, 1.0)
    np.testing.assert_allclose(spec.fixed_point, [2.0])
    free = simulate_contraction(spec, [10.0], ConstantBounded(0.0), 30)
    assert np.all(free.trace[1:] <= 0.5 * free.trace[:-1] + 1e-15)

    tr = simulate_contraction(spec, [0.0], IpVanishing(0.1), 10_000)
    chk = check_bound(tr.trace, 1 / (1 - spec.lipschitz), 0.1, lam=spec.lipschitz)
    assert chk.passed and chk.tail_violation_fraction < 0.05

    sine = sine_contraction(0.8)
    tr = simulate_contraction(sine, [1.0], ConstantBounded(0.05), 10_000)
    chk = check_bound(tr.trace, 1 / (1 - 0.8), 0.05, lam=0.8)
    assert chk.bound == pytest.approx(0.25) and chk.passed


def test_contraction_certificate_catches_expansion():
    bad = ContractionSpec(lambda y: 2.0 * np.asarray(y), 0.5, np.zeros(1))
    with pytest.raises(ValueError):
        bad.certify()
    with pytest.raises(ValueError):
        ContractionSpec(lambda y: np.asarray(y) + 1, 0.5, np.zeros(1))
    with pytest.raises(ValueError):
        affine_contraction(1.2, 0.0)


def test_disturbance_bounds_hold():
    T = 1000
    for d, dim in [(IpVanishing(0.3, direction=(1.0, 1.0)), 2), (ConstantBounded(-0.7), 3),
                   (Recorded(tuple(np.linspace(-1, 2, T))), 1)]:
        vals = d.values(T, dim)
        assert vals.shape == (T, dim)
        assert np.max(np.linalg.norm(vals, axis=1)) <= d.bound(T) + 1e-15


def test_recorded_too_short():
    with pytest.raises(ValueError):
        Recorded((1.0, 2.0)).values(5, 1)


def test_trajectory_csv(tmp_path):
    tr = simulate_linear(LinearRecurrence(REF_M), [1.0, 0.0], IpVanishing(0.1), 5)
    tr.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x1,x2,norm_x,norm_d" and len(lines) == 7


def test_bound_check_json_keys():
    chk = check_bound(np.zeros(100), 2.0, 0.1)
    d = chk.to_dict()
    assert {"sigma", "r", "lambda", "bound", "ip_report", "passed"} <= set(d)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.95), st.floats(0.0, 0.95), st.floats(-3, 3), st.floats(0, np.pi))
def test_sigma_brackets_brute_force(a, b, c, angle):
    # upper triangular M = R diag R' + nilpotent part has rho = max(a, b)
    M = np.array([[a, c], [0.0, b]])
    M = rot(angle) @ M @ rot(angle).T
    s = sigma_series(M, tail_tol=1e-9)
    assert s.tail_bound <= 1e-9
    P, total = np.eye(2), 0.0
    for _ in range(3000):
        total += np.linalg.norm(P, 2)
        P = P @ M
    assert abs(total - s.value) <= 1e-9 + 1e-9 * total
