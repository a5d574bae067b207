import numpy as np
import pytest

from probewalk.linalg import I2, X, Y, Z, fidelity, hermitian_exp, mutual_proportionality_residual
from probewalk.probe import InteractionHamiltonian, ProbeBasis, fixed_scheme, step_operator
from probewalk.reversibility import fitted_slope
from probewalk.walk import (
    NumericalDegeneracy,
    WalkConfig,
    apply_unitary_padding,
    run_ensemble,
    run_forced_path,
    run_step,
    run_trajectory,
    trajectory_rng,
)
from probewalk.zz import DiagonalTarget, build_zz_scheme, endpoint_operators_analytic

PLUS = np.array([1, 1]) / np.sqrt(2)
# exact lattice first-passage probability of the |1> sector at delta = 0.05 (see test_zz)
MARKOV_005_SECTOR1 = 0.0400859267911462


@pytest.fixture(scope="module")
def cfg():
    return WalkConfig(0.05, 3.0, seed=7)


# -- configuration -------------------------------------------------------------------


def test_config_defaults():
    c = WalkConfig(0.05, 3.0)
    assert c.boundary_neg == -3.0
    assert c.max_steps == 50 * 60**2
    assert (c.n_neg, c.n_pos) == (-60, 60)


def test_config_rejects_off_lattice_boundary():
    with pytest.raises(ValueError, match="integer multiple of delta"):
        WalkConfig(0.05, 0.07)


def test_config_rejects_bad_rule():
    with pytest.raises(ValueError):
        WalkConfig(0.05, 1.0, pulse_rule="always")


def test_streams_are_keyed_by_seed_and_index():
    a = trajectory_rng(3, 5).random(4)
    np.testing.assert_array_equal(a, trajectory_rng(3, 5).random(4))
    assert not np.array_equal(a, trajectory_rng(3, 6).random(4))
    assert not np.array_equal(a, trajectory_rng(4, 5).random(4))


# -- single steps ------------------------------------------------------------------------


def test_run_step_is_reproducible(zz_scheme, cfg):
    a = run_step(PLUS, zz_scheme, 0.0, cfg, np.random.default_rng(1))
    b = run_step(PLUS, zz_scheme, 0.0, cfg, np.random.default_rng(1))
    np.testing.assert_array_equal(a[0], b[0])
    assert a[1:] == b[1:]


def test_run_step_born_probability(zz_scheme, cfg):
    state, x, outcome, pp = run_step(PLUS, zz_scheme, 0.5, cfg, np.random.default_rng(2))
    Mp = step_operator(zz_scheme, 0.5, 1, 0.05)
    assert pp == pytest.approx(np.linalg.norm(Mp @ PLUS) ** 2, abs=1e-15)
    assert x == pytest.approx(0.5 + 0.05 * outcome)
    assert np.linalg.norm(state) == pytest.approx(1.0, abs=1e-14)


class _ZeroRng:
    def random(self):
        return 0.0


def test_degenerate_outcome_raises():
    # a near-projective coupling leaves |0> almost in the kernel of M_+
    d = 0.1
    th = np.pi / 4 + 1e-9
    H = InteractionHamiltonian.from_blocks(H_Y=(th / d) * Z)
    s = fixed_scheme(H, ProbeBasis(np.eye(3)[2], np.eye(3)[0], np.eye(3)[1]))
    c = WalkConfig(d, 1.0, pulse_rule="none")
    with pytest.raises(NumericalDegeneracy):
        run_step(np.array([1, 0]), s, 0.0, c, _ZeroRng())


# -- trajectories -------------------------------------------------------------------------


def test_trajectory_reaches_boundary(zz_scheme, cfg):
    rec = run_trajectory(PLUS, zz_scheme, cfg, index=3)
    assert rec.boundary in (1, -1)
    last_x, last_dir, _ = rec.steps[-1]
    assert abs(last_x + 0.05 * last_dir) == pytest.approx(3.0)
    assert rec.outcome == (1 if rec.boundary == 1 else 2)


def test_total_operator_reproduces_final_state(zz_scheme, cfg):
    for i in range(5):
        rec = run_trajectory(PLUS, zz_scheme, cfg, index=i)
        assert fidelity(rec.total_operator @ PLUS, rec.final_state) == pytest.approx(1.0, abs=1e-12)


def test_trajectory_matches_ensemble_slot(zz_scheme):
    c = WalkConfig(0.05, 3.0, seed=11, record_states=True)
    ens = run_ensemble(PLUS, zz_scheme, c, 6, record=6, chunk=4)
    for i in (0, 5):
        rec = run_trajectory(PLUS, zz_scheme, c, index=i)
        assert rec.steps == ens.records[i].steps
        np.testing.assert_array_equal(rec.final_state, ens.records[i].final_state)
        np.testing.assert_array_equal(np.array(rec.states), np.array(ens.records[i].states))


def test_timeouts_are_counted_not_scored(zz_scheme):
    c = WalkConfig(0.05, 3.0, max_steps=50)
    ens = run_ensemble(PLUS, zz_scheme, c, 20)
    assert ens.timeouts == 20
    assert np.isnan(ens.freq_outcome1)


def test_renormalization_is_recorded(zz_scheme):
    c = WalkConfig(0.05, 3.0, renorm_every=10)
    rec = run_trajectory(PLUS, zz_scheme, c, index=0)
    assert rec.renorm_count == len(rec.steps) // 10
    assert np.linalg.norm(rec.total_operator, 2) <= 1.0 + 1e-12


# -- forced paths ----------------------------------------------------------------------------


def test_forced_path_pulse_counts(zz_scheme, cfg):
    path = [1, 1, -1, -1, -1, 1]
    _, retrace = run_forced_path(zz_scheme, path, cfg)
    _, rev = run_forced_path(zz_scheme, path, WalkConfig(0.05, 3.0, pulse_rule="reversal"))
    _, none = run_forced_path(zz_scheme, path, WalkConfig(0.05, 3.0, pulse_rule="none"))
    assert (retrace, rev, none) == (3, 2, 0)


def test_forced_path_must_stay_inside(zz_scheme):
    with pytest.raises(ValueError, match="leaves"):
        run_forced_path(zz_scheme, [1, 1, 1], WalkConfig(0.05, 0.1))


def test_retracing_pulses_beat_no_pulses(zz_scheme, cfg):
    rng = np.random.default_rng(5)
    path = list(np.where(rng.random(400) < 0.5, 1, -1))
    path = [1] * 10 + path
    pos = np.cumsum(path)
    assert np.all(np.abs(pos) < 60)
    base = run_forced_path(zz_scheme, [1] * int(pos[-1]) if pos[-1] > 0 else [-1] * int(-pos[-1]), cfg)[0]
    T = run_forced_path(zz_scheme, path, cfg)[0]
    Tn = run_forced_path(zz_scheme, path, WalkConfig(0.05, 3.0, pulse_rule="none"))[0]
    assert mutual_proportionality_residual(T, base) < 0.1 * mutual_proportionality_residual(Tn, base)


# -- ensembles --------------------------------------------------------------------------------


def test_unbiased_walk_is_fair():
    s = build_zz_scheme(DiagonalTarget(2**-0.5, 2**-0.5), 2.0, 0.05)
    ens = run_ensemble(np.array([0.6, 0.8j]), s, WalkConfig(0.05, 2.0, seed=3), 2000)
    assert abs(ens.freq_outcome1 - 0.5) <= 1.5 * ens.ci95_halfwidth


def test_sector_frequency_matches_lattice_oracle(zz_scheme):
    ens = run_ensemble(np.array([0, 1]), zz_scheme, WalkConfig(0.05, 3.0, seed=9), 3000)
    sd = np.sqrt(MARKOV_005_SECTOR1 * (1 - MARKOV_005_SECTOR1) / 3000)
    assert abs(ens.freq_outcome1 - MARKOV_005_SECTOR1) <= 4 * sd


def test_step_size_independence(ref_target):
    freq = {}
    for d in (0.1, 0.05):
        s = build_zz_scheme(ref_target, 3.0, d)
        freq[d] = run_ensemble(PLUS, s, WalkConfig(d, 3.0, seed=21), 2000)
    gap = abs(freq[0.1].freq_outcome1 - freq[0.05].freq_outcome1)
    assert gap <= max(3 * freq[0.05].ci95_halfwidth, 5 * 0.05)


def test_ensemble_independent_of_chunks_and_workers(zz_scheme):
    c = WalkConfig(0.05, 3.0, seed=99)
    M = endpoint_operators_analytic(DiagonalTarget(0.8, 0.2), 3.0)
    ref = run_ensemble(PLUS, zz_scheme, c, 300, endpoints=M).as_dict()
    assert run_ensemble(PLUS, zz_scheme, c, 300, endpoints=M, chunk=37, workers=3).as_dict() == ref
    assert run_ensemble(PLUS, zz_scheme, c, 300, endpoints=M, chunk=128).as_dict() == ref


def test_endpoint_match_improves_with_delta(ref_target):
    M1, _ = endpoint_operators_analytic(ref_target, 2.0)
    deltas = (0.1, 0.05, 0.025)
    means = []
    for d in deltas:
        s = build_zz_scheme(ref_target, 2.0, d)
        c = WalkConfig(d, 2.0)
        rng = np.random.default_rng(17)
        res = []
        while len(res) < 6:
            path, j = [], 0
            while abs(j) < c.n_pos:
                b = 1 if rng.random() < 0.5 else -1
                path.append(b)
                j += b
            if j > 0:
                res.append(mutual_proportionality_residual(run_forced_path(s, path, c)[0], M1))
        means.append(np.mean(res))
    assert fitted_slope(deltas, means) >= 1.0


# -- padding --------------------------------------------------------------------------------------


def test_identity_padding_leaves_steps_unchanged(zz_scheme):
    p = apply_unitary_padding(zz_scheme, lambda x: I2)
    for b in (1, -1):
        np.testing.assert_allclose(step_operator(p, 0.4, b, 0.05), step_operator(zz_scheme, 0.4, b, 0.05), atol=1e-15)


def test_padding_validation(zz_scheme):
    with pytest.raises(ValueError, match="V\\(0\\) = 1"):
        apply_unitary_padding(zz_scheme, lambda x: hermitian_exp(X, x + 0.1))
    with pytest.raises(ValueError, match="unitary"):
        apply_unitary_padding(zz_scheme, lambda x: (1 + x) * I2)


def test_padding_telescopes_on_any_path(zz_scheme, cfg):
    G = 0.4 * X + 0.3 * Y
    V = lambda x: hermitian_exp(G, x)
    p = apply_unitary_padding(zz_scheme, V)
    path = [1, 1, -1, 1, 1, -1, -1, -1, -1]
    T, _ = run_forced_path(zz_scheme, path, cfg, renormalize=False)
    Tp, _ = run_forced_path(p, path, cfg, renormalize=False)
    np.testing.assert_allclose(Tp, V(0.05 * sum(path)) @ T, atol=1e-14)
