import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probewalk.riccati import (
    BlowUpError,
    CompletenessExpression,
    InfeasibleTarget,
    RiccatiProblem,
    SingularSolution,
    admissible_constants,
    closed_form_error,
    general_solution,
    integrate_numeric,
    validate_forms,
    zz_problem,
    zz_second_constant,
)
from probewalk.zz import ab_from_target, detector_tilt

zero = lambda x: 0.0


def free_problem(lo=-0.4, hi=1.0):
    return RiccatiProblem(q0=zero, q1=zero, y1=zero, lo=lo, hi=hi)


def random_problem(k, lo=-1.0, hi=1.5):
    """Problem built around a chosen particular solution ``y1 = k0 sin x + k1``."""
    y1 = lambda x: k[0] * np.sin(x) + k[1]
    q1 = lambda x: k[2] * np.cos(2 * x)
    q0 = lambda x: k[0] * np.cos(x) - q1(x) * y1(x) - 2 * y1(x) ** 2
    return RiccatiProblem(q0, q1, y1, lo=lo, hi=hi)


@pytest.fixture(scope="module")
def ref_problem():
    a, b = ab_from_target(0.8, 0.2, 3.0)
    return a, b, zz_problem(a, b, -3.0, 3.0)


# -- numeric integration ---------------------------------------------------------------


def test_separable_solution():
    xs, ys = integrate_numeric(free_problem(), -1.0, 0.0, 1.0)
    assert ys[-1] == pytest.approx(-1 / 3, abs=1e-10)
    np.testing.assert_allclose(ys, -1 / (2 * xs + 1), atol=1e-9)


def test_fixed_point():
    _, ys = integrate_numeric(free_problem(), 0.0, 0.0, 1.0)
    assert np.all(ys == 0)


def test_blow_up_location():
    with pytest.raises(BlowUpError) as e:
        integrate_numeric(free_problem(), 1.0, 0.0, 1.0)
    assert e.value.x == pytest.approx(0.5, abs=0.01)


def test_minimum_steps():
    with pytest.raises(ValueError):
        integrate_numeric(free_problem(), 0.0, 0.0, 1.0, steps=10)


def test_wrong_particular_solution_rejected():
    with pytest.raises(ValueError, match="does not solve"):
        RiccatiProblem(q0=zero, q1=zero, y1=lambda x: 1.0)


# -- closed form ---------------------------------------------------------------------------


def test_infinite_constant_gives_particular_solution(ref_problem):
    a, b, P = ref_problem
    xs = np.linspace(-3, 3, 50)
    np.testing.assert_allclose(general_solution(P, np.inf).y(xs), detector_tilt(xs, a, b), atol=1e-15)


def test_second_constant_gives_reflected_flow(ref_problem):
    a, b, P = ref_problem
    xs = np.linspace(-3, 3, 400)
    y = general_solution(P, zz_second_constant(a, b)).y(xs)
    np.testing.assert_allclose(y, -detector_tilt(xs, a, b), atol=1e-9)


def test_singular_constant_rejected(ref_problem):
    _, _, P = ref_problem
    g = CompletenessExpression(P, -3, 3, 1, 1)
    with pytest.raises(SingularSolution):
        general_solution(P, 0.5 * (g.qmin + g.qmax))


@settings(max_examples=6)
@given(st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3))
def test_standard_form_matches_rk4(k):
    P = random_problem(np.array(k))
    g = CompletenessExpression(P, P.lo, P.hi, 1, 1)
    span = g.qmax - g.qmin
    for C in (g.qmax + span + 0.5, g.qmin - span - 0.5):
        assert closed_form_error(P, C) <= 1e-6


def test_ref_forms(ref_problem):
    a, b, P = ref_problem
    g = CompletenessExpression(P, -3, 3, 1, 1)
    forms = validate_forms(P, [zz_second_constant(a, b), g.qmax + 1.0, g.qmin - 1.0])
    assert forms["standard"][0] and forms["standard"][1] <= 1e-6
    # the alternative weighting is not a solution family of this equation
    assert not forms["swapped"][0]


# -- admissible constants --------------------------------------------------------------------


def test_second_constant_reproduces_ref_entry(ref_problem):
    # weights fixed by alpha on the particular flow; the reflected flow must give beta
    a, b, P = ref_problem
    e1, e2 = CompletenessExpression(P, -3, 3, 1, 1).entries(np.inf)
    g = CompletenessExpression(P, -3, 3, 0.64 / e1, 0.36 / e2)
    np.testing.assert_allclose(g.entries(zz_second_constant(a, b)), [0.04, 0.96], atol=1e-9)


def test_ref_normalization_is_degenerate(ref_problem):
    a, b, P = ref_problem
    e1, e2 = CompletenessExpression(P, -3, 3, 1, 1).entries(np.inf)
    roots = admissible_constants(P, -3, 3, (0.64 / e1, 0.36 / e2))
    assert roots.degenerate and roots.count == np.inf


def test_particular_solution_weight_gives_infinite_root(ref_problem):
    _, _, P = ref_problem
    e1, e2 = CompletenessExpression(P, -3, 3, 1, 1).entries(np.inf)
    roots = admissible_constants(P, -3, 3, (0.5 / e1, 0.5 / e2))
    assert roots.roots == [np.inf]


def test_recovers_planted_constant():
    P = random_problem(np.array([0.3, -0.2, 0.4]))
    g = CompletenessExpression(P, P.lo, P.hi, 1, 1)
    for C0 in (g.qmax + 0.9, g.qmin - 2.5):
        e = g.entries(C0)
        roots = admissible_constants(P, P.lo, P.hi, (0.6 / e[0], 0.4 / e[1]))
        assert roots.count == 1
        assert roots.roots[0] == pytest.approx(C0, rel=1e-9)


def test_completeness_numerator_is_linear():
    # g(C) (C - Q(0)) has no quadratic part, so at most one finite root exists
    P = random_problem(np.array([0.3, -0.2, 0.4]))
    g = CompletenessExpression(P, P.lo, P.hi, 0.7, 0.5)
    e = g.entries(g.qmax + 1.3)
    roots = admissible_constants(P, P.lo, P.hi, (0.6 / e[0], 0.4 / e[1]))
    assert abs(roots.quadratic[0]) < 1e-8


def test_infeasible_target_names_range(ref_problem):
    _, _, P = ref_problem
    with pytest.raises(InfeasibleTarget, match="only ranges over"):
        admissible_constants(P, -3, 3, (0.3, 0.9))


def test_asymmetric_boundaries_accepted():
    P = random_problem(np.array([0.2, 0.1, -0.3]), lo=-0.6, hi=1.4)
    g = CompletenessExpression(P, -0.6, 1.4, 1, 1)
    e = g.entries(g.qmin - 1.0)
    roots = admissible_constants(P, -0.6, 1.4, (0.5 / e[0], 0.5 / e[1]))
    assert roots.roots[0] == pytest.approx(g.qmin - 1.0, rel=1e-9)
