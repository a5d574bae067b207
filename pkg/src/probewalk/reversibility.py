"""Second-order expansion of reversal products, correction pulses and structural checks.

For a scheme with probe-frame slots ``(h1, h2, h3)`` (see
:func:`probewalk.probe.frame_slots`) the product of a step and its reversal
expands as

    M_-(x + d) M_+(x)  or  M_+(x - d) M_-(x)
        = 1/2 + i d h3 - (d^2 / 2) (A +- B + i Abar +- i Bbar) + O(d^3)

up to identity-proportional terms, with

    A    = -h2' - 4 c cos(psi) h2 + 2 h2^2 + 2 h3^2 + i [h1, h2]
    B    = -i [h2, h3]
    Abar =  h1' - 4 c sin(psi) h2 - {h1, h2}
    Bbar = -h3' + i [h1, h3]

where primes are ``d/dx``. These signs were fixed by fitting polynomials in
``d`` to the exact product; see ``tests/test_reversibility.py``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .linalg import hermitian_exp, hermitian_part, proportionality_residual
from .probe import (
    InteractionHamiltonian,
    ProbeScheme,
    bare_step_operator,
    frame_slot_derivatives,
    frame_slots,
)

DEFAULT_PULSE_SIGNS = (-1, 1)
CALIBRATION_X = 0.0
CALIBRATION_DELTA = 0.05
COMMUTE_TOL = 1e-10
LINE_TOL = 1e-8


def comm(a, b):
    return a @ b - b @ a


def acomm(a, b):
    return a @ b + b @ a


def traceless(M: np.ndarray) -> np.ndarray:
    return M - np.trace(M) / M.shape[0] * np.eye(M.shape[0])


@dataclass(frozen=True)
class ExpansionTerms:
    H3_term: np.ndarray
    A: np.ndarray
    B: np.ndarray
    Abar: np.ndarray
    Bbar: np.ndarray
    A_reduced: np.ndarray

    def series(self, delta: float, branch: int) -> np.ndarray:
        """Right-hand side of the second-order expansion for one branch."""
        d = self.A.shape[0]
        inner = self.A + branch * self.B + 1j * self.Abar + 1j * branch * self.Bbar
        return 0.5 * np.eye(d) + 1j * delta * self.H3_term - 0.5 * delta**2 * inner


def expansion_terms(scheme: ProbeScheme, x: float, method: str = "analytic") -> ExpansionTerms:
    """Assemble the expansion operators at ``x``.

    ``method`` picks how slot derivatives are obtained: ``"analytic"`` uses the
    scheme's rotation rate (falling back to finite differences when none is
    declared), ``"fd"`` forces a central difference at step ``1e-5``.
    """
    h1, h2, h3 = frame_slots(scheme.hamiltonian, scheme.basis(x))
    d1, d2, d3 = frame_slot_derivatives(scheme, x, method=method)
    c = scheme.warp_c(x)
    psi = scheme.warp_psi(x)
    A_red = -d2 - 4 * c * np.cos(psi) * h2 + 2 * h2 @ h2 + 1j * comm(h1, h2)
    A = A_red + 2 * h3 @ h3
    B = -1j * comm(h2, h3)
    Abar = d1 - 4 * c * np.sin(psi) * h2 - acomm(h1, h2)
    Bbar = -d3 + 1j * comm(h1, h3)
    # the formulas are Hermitian analytically; strip rounding noise
    A, B, Abar, Bbar, A_red = (hermitian_part(M) for M in (A, B, Abar, Bbar, A_red))
    return ExpansionTerms(h3, A, B, Abar, Bbar, A_red)


def reversal_product(scheme: ProbeScheme, x: float, delta: float, branch: int) -> np.ndarray:
    """Exact ``M_{-b}(x + b d) M_b(x)`` on the unpadded scheme."""
    first = bare_step_operator(scheme, x, branch, delta)
    back = bare_step_operator(scheme, x + branch * delta, -branch, delta)
    return back @ first


def verify_expansion(scheme: ProbeScheme, x: float, delta: float) -> dict:
    """Frobenius distance between exact reversal products and the series, per branch.

    Identity-proportional parts are removed from the difference before the
    norm is taken, since the series only tracks the traceless part.
    """
    if delta > 0.2:
        raise ValueError("verify_expansion needs delta <= 0.2")
    if delta == 0:
        return {1: 0.0, -1: 0.0}
    T = expansion_terms(scheme, x)
    out = {}
    for b in (1, -1):
        E = reversal_product(scheme, x, delta, b)
        out[b] = float(np.linalg.norm(traceless(E - T.series(delta, b))))
    return out


def bare_correction_pulse(scheme, x, delta, reversal_branch, signs=None) -> np.ndarray:
    s1, s2 = signs or scheme.pulse_signs or DEFAULT_PULSE_SIGNS
    T = expansion_terms(scheme, x)
    U1 = hermitian_exp(T.H3_term, 2 * s1 * delta)
    U2 = hermitian_exp(T.Abar + reversal_branch * T.Bbar, s2 * delta**2)
    return U1 @ U2


def correction_pulse(scheme: ProbeScheme, x: float, delta: float, reversal_branch: int, signs=None) -> np.ndarray:
    """Weak unitary applied after the pair ``M_{-b}(x + b d) M_b(x)``.

    ``reversal_branch`` is ``b``, the direction of the step being undone.
    With padding the pulse is conjugated by ``V(x)``.
    """
    if reversal_branch not in (1, -1):
        raise ValueError("reversal_branch must be +1 or -1")
    U = bare_correction_pulse(scheme, x, delta, reversal_branch, signs)
    if scheme.padding is not None:
        V = scheme.padding(x)
        U = V @ U @ V.conj().T
    return U


def pulsed_residual(scheme, x, delta, branch, signs=None) -> float:
    E = reversal_product(scheme, x, delta, branch)
    U = bare_correction_pulse(scheme, x, delta, branch, signs)
    return proportionality_residual(U @ E)[1]


def calibrate_pulse_signs(scheme: ProbeScheme, x: float = CALIBRATION_X, delta: float = CALIBRATION_DELTA):
    """Pick ``(s1, s2)`` minimizing the summed post-pulse residual of both branches.

    Ties (within a relative 1e-9) go to ``(-1, +1)``.
    """
    order = [DEFAULT_PULSE_SIGNS, (1, 1), (-1, -1), (1, -1)]
    scores = [sum(pulsed_residual(scheme, x, delta, b, s) for b in (1, -1)) for s in order]
    best = min(scores)
    for s, v in zip(order, scores):
        if v <= best * (1 + 1e-9) + 1e-15:
            return s
    return DEFAULT_PULSE_SIGNS  # pragma: no cover


def calibrated(scheme: ProbeScheme) -> ProbeScheme:
    return scheme.with_(pulse_signs=calibrate_pulse_signs(scheme))


def fitted_slope(deltas, residuals) -> float:
    return float(np.polyfit(np.log(deltas), np.log(residuals), 1)[0])


# -- structure -------------------------------------------------------------


def _joint_eigenbasis(mats, rng=None):
    rng = rng or np.random.default_rng(12345)
    w = rng.normal(size=len(mats))
    _, V = np.linalg.eigh(sum(wi * M for wi, M in zip(w, mats)))
    return V


def eigen_triplets(H: InteractionHamiltonian) -> np.ndarray:
    """Rows ``(lambda_x, lambda_y, lambda_z)`` in a common eigenbasis of commuting blocks."""
    V = _joint_eigenbasis(H.lab_triple)
    return np.array([[np.real(np.vdot(v, M @ v)) for M in H.lab_triple] for v in V.T])


def two_parallel_lines(points, tol: float = LINE_TOL):
    """Whether ``points`` lie on at most two parallel lines.

    Candidate directions are the normalized pairwise differences. For each,
    points are projected onto the orthogonal plane and must fall into at most
    two clusters of radius ``tol``. Returns ``(ok, direction, residual)``
    with the smallest residual found.
    """
    P = np.unique(np.round(np.asarray(points, dtype=float), 14), axis=0)
    if len(P) <= 2:
        u = P[1] - P[0] if len(P) == 2 else np.array([0.0, 0.0, 1.0])
        return True, u / max(np.linalg.norm(u), 1e-300), 0.0
    best = (np.inf, None)
    for i, j in combinations(range(len(P)), 2):
        u = P[j] - P[i]
        n = np.linalg.norm(u)
        if n < tol:
            continue
        u = u / n
        Q = P - np.outer(P @ u, u)
        a = Q[0]
        b = Q[np.argmax(np.linalg.norm(Q - a, axis=1))]
        near_a = np.linalg.norm(Q - a, axis=1) <= np.linalg.norm(Q - b, axis=1)
        res = 0.0
        for grp in (Q[near_a], Q[~near_a]):
            if len(grp):
                res = max(res, float(np.max(np.linalg.norm(grp - grp.mean(axis=0), axis=1))))
        if res < best[0]:
            best = (res, u)
    return best[0] <= tol, best[1], best[0]


@dataclass
class StructureReport:
    commutator_norms: dict
    commuting: bool
    triplets: np.ndarray | None = None
    parallel_lines: bool | None = None
    line_direction: np.ndarray | None = None
    line_residual: float | None = None
    gamma_deviation: float | None = None
    reduced_a_discrepancy: float | None = None
    notes: list = field(default_factory=list)

    @property
    def admissible(self) -> bool:
        ok = self.commuting and bool(self.parallel_lines)
        if self.gamma_deviation is not None:
            ok = ok and self.gamma_deviation <= 1e-8
        return ok

    def lines(self) -> list[str]:
        out = [f"commutator_norm_{k} = {v:.6e}" for k, v in self.commutator_norms.items()]
        out.append(f"commuting = {self.commuting}")
        if self.triplets is not None:
            out.append("triplets = " + "; ".join("(" + ", ".join(f"{t:.6g}" for t in row) + ")" for row in self.triplets))
            out.append(f"two_parallel_lines = {self.parallel_lines} (residual {self.line_residual:.3e})")
        if self.gamma_deviation is not None:
            out.append(f"max |x_j y_j - gamma| = {self.gamma_deviation:.3e}")
        if self.reduced_a_discrepancy is not None:
            out.append(f"traceless part of A - A_reduced (max over grid) = {self.reduced_a_discrepancy:.3e}")
        out.extend(self.notes)
        out.append(f"admissible = {self.admissible}")
        return out


def structural_checks(H: InteractionHamiltonian, scheme: ProbeScheme | None = None, boundary: float = 1.0, n_grid: int = 200) -> StructureReport:
    """Commutation, triplet geometry and, for a scheme, the ``x_j y_j = gamma`` test."""
    HX, HY, HZ = H.lab_triple
    norms = {
        "XY": float(np.linalg.norm(comm(HX, HY))),
        "YZ": float(np.linalg.norm(comm(HY, HZ))),
        "XZ": float(np.linalg.norm(comm(HX, HZ))),
    }
    commuting = max(norms.values()) <= COMMUTE_TOL
    rep = StructureReport(norms, commuting)
    if commuting:
        rep.triplets = eigen_triplets(H)
        ok, u, res = two_parallel_lines(rep.triplets)
        rep.parallel_lines, rep.line_direction, rep.line_residual = ok, u, res
    if scheme is not None:
        xs = np.linspace(-boundary, boundary, n_grid)
        dev = 0.0
        disc = 0.0
        V = _joint_eigenbasis(scheme.hamiltonian.lab_triple + (scheme.hamiltonian.H_S,)) if commuting else None
        for x in xs:
            h1, h2, h3 = frame_slots(scheme.hamiltonian, scheme.basis(x))
            if V is not None:
                xj = np.real(np.einsum("ij,ik,kj->j", V.conj(), h1, V))
                yj = np.real(np.einsum("ij,ik,kj->j", V.conj(), h2, V))
                prod = xj * yj
                dev = max(dev, float(np.max(np.abs(prod - prod.mean()))))
            disc = max(disc, float(np.linalg.norm(traceless(2 * h3 @ h3))))
        rep.gamma_deviation = dev if V is not None else None
        rep.reduced_a_discrepancy = disc
        if disc > 1e-10:
            rep.notes.append("note: full and reduced A differ beyond an identity multiple (2 h3^2 is not scalar)")
    return rep
