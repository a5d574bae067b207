import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import solve_banded

from probewalk.linalg import mutual_proportionality_residual
from probewalk.probe import completeness_residual, probe_bloch, step_operator
from probewalk.walk import WalkConfig, endpoint_operators_numeric
from probewalk.zz import (
    DiagonalTarget,
    InfeasibleTarget,
    ab_from_target,
    build_zz_scheme,
    detector_tilt,
    endpoint_operators_analytic,
    sector_hitting_probabilities,
    warp_c,
    warp_c_integral,
)

# frozen oracles: artanh((1 - 2 alpha^2) / tanh 3) for alpha = 0.8, 0.2
A_REF = -0.28919264119681143
B_REF = 1.6196417984365297
# exact absorption probabilities of the delta = 0.05 lattice walk (banded solve)
MARKOV_005 = (0.6395701351119842, 0.0400859267911462)


def markov_hitting(scheme, X, delta):
    """Exact first-passage probabilities of the two sector chains on the lattice."""
    N = round(X / delta)
    js = np.arange(-N + 1, N)
    out = []
    for z in (0, 1):
        pp = np.array([abs(step_operator(scheme, j * delta, 1, delta)[z, z]) ** 2 for j in js])
        n = len(js)
        ab = np.zeros((3, n))
        ab[1] = 1
        ab[0, 1:] = -pp[:-1]
        ab[2, :-1] = -(1 - pp[1:])
        rhs = np.zeros(n)
        rhs[-1] = pp[-1]
        out.append(solve_banded((1, 1), ab, rhs)[N - 1])
    return np.array(out)


# -- targets and shifts ----------------------------------------------------------------


def test_target_validation():
    with pytest.raises(ValueError, match=r"alpha must lie in \(0,1\)"):
        DiagonalTarget(1.2, 0.2)


def test_target_born_rule(ref_target):
    assert ref_target.p1(np.array([1, 1]) / np.sqrt(2)) == pytest.approx(0.34)
    assert ref_target.p1([1, 0]) == pytest.approx(0.64)
    M1, M2 = ref_target.operators(0.3, 0.4)
    np.testing.assert_allclose(M1.conj().T @ M1 + M2.conj().T @ M2, np.eye(2), atol=1e-15)


def test_ref_shifts():
    a, b = ab_from_target(0.8, 0.2, 3.0)
    assert a == pytest.approx(A_REF, abs=1e-12)
    assert b == pytest.approx(B_REF, abs=1e-12)


def test_unbiased_shift():
    assert ab_from_target(2**-0.5, 0.3, 2.0)[0] == pytest.approx(0.0, abs=1e-15)
    assert ab_from_target(0.5, 0.3, 2.0, variant="literal")[0] == 0.0


def test_literal_shift_value():
    # exact artanh(0.6 / tanh 3); rounding tanh 3 to 0.995055 gives 0.697816
    assert ab_from_target(0.8, 0.2, 3.0, variant="literal")[0] == pytest.approx(0.6978194853684326, abs=1e-12)


def test_infeasible_target_reports_minimum_boundary():
    with pytest.raises(InfeasibleTarget, match=r"need X > 3\.1065"):
        ab_from_target(0.999, 0.5, 1.0)
    with pytest.raises(InfeasibleTarget, match=r"need X > 3\.453"):
        ab_from_target(0.999, 0.5, 1.0, variant="literal")


def test_warp_examples():
    assert warp_c(0.0, 0.0, 0.0) == 0.0
    assert warp_c(0.0, 0.4, -0.4) == 0.0
    a, b = 0.697816, -0.697816
    h = 1e-5
    fd = (warp_c_integral(1 + h, a, b) - warp_c_integral(1 - h, a, b)) / (2 * h)
    assert warp_c(1.0, a, b) == pytest.approx(fd, abs=1e-9)


@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(-2, 2))
def test_tilt_obeys_flow(x, a, b):
    # s' = -4 c s for both variants
    h = 1e-5
    for v in ("derived", "literal"):
        ds = (detector_tilt(x + h, a, b, v) - detector_tilt(x - h, a, b, v)) / (2 * h)
        assert ds == pytest.approx(-4 * warp_c(x, a, b, v) * detector_tilt(x, a, b, v), abs=1e-7)


# -- scheme ----------------------------------------------------------------------------


def test_literal_symmetric_scheme_at_origin(ref_target):
    s = build_zz_scheme(ref_target, 3.0, 0.05, variant="literal")
    b = s.basis(0.0)
    np.testing.assert_allclose(b.n2, [0, 1, 0], atol=1e-15)
    assert s.warp_c(0.0) == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(probe_bloch(s, 0.0, 0.05), [1, 0, 0], atol=1e-15)


def test_scheme_completeness(zz_scheme):
    xs = np.arange(-60, 61) * 0.05
    assert max(completeness_residual(zz_scheme, x, 0.05) for x in xs) <= 1e-10


def test_scheme_step_operators_are_diagonal(zz_scheme):
    for b in (1, -1):
        M = step_operator(zz_scheme, 0.7, b, 0.05)
        assert abs(M[0, 1]) + abs(M[1, 0]) < 1e-15


# -- endpoints ---------------------------------------------------------------------------


def test_ref_endpoint_magnitudes(ref_target):
    M1, M2 = endpoint_operators_analytic(ref_target, 3.0)
    np.testing.assert_allclose(np.abs(np.diag(M1)), [0.8, 0.2], atol=1e-6)
    np.testing.assert_allclose(np.abs(np.diag(M2)), [0.6, np.sqrt(0.96)], atol=1e-6)
    np.testing.assert_allclose(M1.conj().T @ M1 + M2.conj().T @ M2, np.eye(2), atol=1e-10)


def test_unbiased_endpoints():
    M1, M2 = endpoint_operators_analytic(DiagonalTarget(2**-0.5, 2**-0.5), 2.0)
    np.testing.assert_allclose(np.abs(M1), np.eye(2) / np.sqrt(2), atol=1e-10)
    np.testing.assert_allclose(np.abs(M2), np.eye(2) / np.sqrt(2), atol=1e-10)


def test_swapping_alpha_beta_swaps_entries():
    P = endpoint_operators_analytic(DiagonalTarget(0.7, 0.4), 3.0)
    Q = endpoint_operators_analytic(DiagonalTarget(0.4, 0.7), 3.0)
    for M, N in zip(P, Q):
        np.testing.assert_allclose(np.abs(np.diag(M)), np.abs(np.diag(N))[::-1], atol=1e-10)


@given(st.floats(0.15, 0.95), st.floats(0.15, 0.95), st.floats(2.5, 4.0))
def test_hitting_probabilities_recover_target(alpha, beta, X):
    a, b = ab_from_target(alpha, beta, X)
    np.testing.assert_allclose(sector_hitting_probabilities(a, b, X), [alpha**2, beta**2], atol=1e-9)


def test_markov_lattice_oracle(ref_target):
    s = build_zz_scheme(ref_target, 3.0, 0.05, calibrate=False)
    np.testing.assert_allclose(markov_hitting(s, 3.0, 0.05), MARKOV_005, atol=1e-12)


def test_markov_converges_quadratically(ref_target):
    p = {d: markov_hitting(build_zz_scheme(ref_target, 3.0, d, calibrate=False), 3.0, d) for d in (0.05, 0.025)}
    err = {d: np.abs(v - [0.64, 0.04]) for d, v in p.items()}
    assert np.all(err[0.05] / err[0.025] > 3.5)
    rich = (4 * p[0.025] - p[0.05]) / 3
    np.testing.assert_allclose(rich, [0.64, 0.04], atol=2e-6)


def test_literal_variant_misses_target(ref_target):
    # the literal warp realizes a different measurement; both sides agree on which
    s = build_zz_scheme(ref_target, 3.0, 0.025, variant="literal", calibrate=False)
    a, b = ab_from_target(0.8, 0.2, 3.0, variant="literal")
    P = sector_hitting_probabilities(a, b, 3.0, "literal")
    np.testing.assert_allclose(markov_hitting(s, 3.0, 0.025), P, atol=2e-4)
    assert abs(np.sqrt(P[0]) - 0.8) > 0.5


def test_straight_path_round_trip(ref_target):
    M1, M2 = endpoint_operators_analytic(ref_target, 3.0)
    deltas = (0.05, 0.025, 0.0125)
    ops = []
    for d in deltas:
        T1, _ = endpoint_operators_numeric(build_zz_scheme(ref_target, 3.0, d), WalkConfig(d, 3.0))
        T1 = T1 / np.linalg.norm(T1)
        ops.append(T1 * np.exp(-1j * np.angle(np.vdot(M1, T1))))
        assert mutual_proportionality_residual(T1, M1) <= 5 * d
    extrapolated = 2 * ops[2] - ops[1]
    assert mutual_proportionality_residual(extrapolated, M1) <= 5 * deltas[-1]
