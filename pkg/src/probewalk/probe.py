"""Probe bases, probe-frame Hamiltonians and exact weak-measurement step operators.

A scheme fixes, for every pointer value ``x``, a right-handed Bloch triad
``(n1, n2, n3)``: ``n1`` is the axis the probe is prepared close to, ``n2`` is
the detector axis (outcome ``+`` is the ``+n2`` eigenstate) and
``n3 = n1 x n2``. The probe is tilted off ``n1`` by the small angle
``2 * delta * c(x)`` in the ``(n2, n3)`` plane, with azimuth ``psi(x)``
measured from ``n2``.

Two labellings of the rotated Hamiltonian are used:

* :func:`rotate_hamiltonian` returns ``H_i = n_i . (H_X, H_Y, H_Z)``, the
  ordering fixed by the reconstruction identity.
* :func:`frame_slots` returns the operators that multiply ``X``, ``Y`` and
  ``Z`` once the probe frame is rotated so that ``n2 -> x``, ``n3 -> y`` and
  ``n1 -> z``. These are the operators the expansion terms are written in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .linalg import (
    I2,
    PAULIS,
    X,
    Y,
    Z,
    as_operator,
    hermitian_exp,
    is_hermitian,
    anti_hermitian_norm,
    NotHermitianError,
    probe_sandwich,
    tensor,
)

ORTHO_TOL = 1e-10
DEFAULT_LEMMA_K = 4.0
FD_STEP = 1e-5


class LemmaViolation(ValueError):
    """Probe and detector are too close to parallel for a weak measurement."""


@dataclass(frozen=True, eq=False)
class InteractionHamiltonian:
    """Blocks of ``1 (x) H_S + X (x) H_X + Y (x) H_Y + Z (x) H_Z``."""

    H_S: np.ndarray
    H_X: np.ndarray
    H_Y: np.ndarray
    H_Z: np.ndarray

    def __post_init__(self):
        dims = set()
        for name in ("H_S", "H_X", "H_Y", "H_Z"):
            M = as_operator(getattr(self, name))
            if not is_hermitian(M):
                raise NotHermitianError(
                    f"{name} is not Hermitian; ||M - M^dag||_F = {anti_hermitian_norm(M):.3e}"
                )
            M.setflags(write=False)
            object.__setattr__(self, name, M)
            dims.add(M.shape[0])
        if len(dims) != 1:
            raise ValueError(f"Hamiltonian blocks have mismatched dimensions {sorted(dims)}")

    @classmethod
    def from_blocks(cls, H_X=None, H_Y=None, H_Z=None, H_S=None, dim=None):
        given = [M for M in (H_X, H_Y, H_Z, H_S) if M is not None]
        if dim is None:
            if not given:
                raise ValueError("need at least one block or an explicit dim")
            dim = np.asarray(given[0]).shape[0]
        zero = np.zeros((dim, dim), dtype=complex)
        pick = lambda M: zero if M is None else M
        return cls(pick(H_S), pick(H_X), pick(H_Y), pick(H_Z))

    @property
    def dim(self) -> int:
        return self.H_X.shape[0]

    @property
    def lab_triple(self):
        return (self.H_X, self.H_Y, self.H_Z)

    def joint(self) -> np.ndarray:
        return (
            tensor(I2, self.H_S)
            + tensor(X, self.H_X)
            + tensor(Y, self.H_Y)
            + tensor(Z, self.H_Z)
        )

    def propagator(self, delta: float) -> np.ndarray:
        """``exp(i delta H_PS)``, cached per ``delta``."""
        return _propagator(self, float(delta))


@lru_cache(maxsize=64)
def _propagator(ham: InteractionHamiltonian, delta: float) -> np.ndarray:
    U = hermitian_exp(ham.joint(), delta)
    U.setflags(write=False)
    return U


@dataclass(frozen=True)
class ProbeBasis:
    n1: np.ndarray
    n2: np.ndarray
    n3: np.ndarray

    def __post_init__(self):
        vs = [np.asarray(v, dtype=float).reshape(3) for v in (self.n1, self.n2, self.n3)]
        for name, v in zip(("n1", "n2", "n3"), vs):
            if abs(np.linalg.norm(v) - 1.0) > ORTHO_TOL:
                raise ValueError(f"{name} is not a unit vector (norm {np.linalg.norm(v):.12g})")
        for (i, u), (j, w) in [((1, vs[0]), (2, vs[1])), ((1, vs[0]), (3, vs[2])), ((2, vs[1]), (3, vs[2]))]:
            if abs(u @ w) > ORTHO_TOL:
                raise ValueError(f"n{i} and n{j} are not orthogonal (dot {u @ w:.3e})")
        if np.linalg.norm(np.cross(vs[0], vs[1]) - vs[2]) > ORTHO_TOL:
            raise ValueError("basis is not right-handed: n3 != n1 x n2")
        for name, v in zip(("n1", "n2", "n3"), vs):
            object.__setattr__(self, name, v)

    def as_tuple(self):
        return (self.n1, self.n2, self.n3)

    def frame_matrix(self) -> np.ndarray:
        """Rotation taking ``x, y, z`` to ``n2, n3, n1``."""
        return np.column_stack([self.n2, self.n3, self.n1])

    def frame_unitary(self) -> np.ndarray:
        """SU(2) element whose adjoint action is :meth:`frame_matrix`."""
        qx, qy, qz, qw = Rotation.from_matrix(self.frame_matrix()).as_quat()
        return qw * I2 - 1j * (qx * X + qy * Y + qz * Z)


@dataclass(frozen=True)
class RotatedHamiltonian:
    H1: np.ndarray
    H2: np.ndarray
    H3: np.ndarray

    def as_tuple(self):
        return (self.H1, self.H2, self.H3)


@dataclass(frozen=True, eq=False)
class ProbeScheme:
    """Everything needed to generate step operators at any pointer value.

    ``rotation_rate`` is the angular velocity ``w(x)`` of the triad in the lab,
    ``dn_i/dx = w x n_i``. When it is ``None`` a central finite difference of
    the basis is used. ``padding`` is an optional unitary family ``V(x)``.
    """

    hamiltonian: InteractionHamiltonian
    basis: Callable[[float], ProbeBasis]
    warp_c: Callable[[float], float]
    warp_psi: Callable[[float], float] = lambda x: 0.0
    rotation_rate: Optional[Callable[[float], np.ndarray]] = None
    lemma_k: float = DEFAULT_LEMMA_K
    pulse_signs: Optional[tuple] = None
    padding: Optional[Callable[[float], np.ndarray]] = None
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.hamiltonian.dim

    def lab_rotation_rate(self, x: float, h: float = FD_STEP) -> np.ndarray:
        if self.rotation_rate is not None:
            return np.asarray(self.rotation_rate(x), dtype=float)
        bp, bm = self.basis(x + h), self.basis(x - h)
        b0 = self.basis(x)
        w = np.zeros(3)
        for n, p, m in zip(b0.as_tuple(), bp.as_tuple(), bm.as_tuple()):
            w += np.cross(n, (p - m) / (2 * h))
        return 0.5 * w

    def basis_rotation_rate(self, x: float) -> np.ndarray:
        """``Omega(x)`` with ``d/dx (H1, H2, H3) = Omega x (H1, H2, H3)``.

        The triple is the one from :func:`rotate_hamiltonian`; ``Omega`` is
        minus the lab angular velocity expressed in the triad.
        """
        w = self.lab_rotation_rate(x)
        b = self.basis(x)
        return -np.array([w @ b.n1, w @ b.n2, w @ b.n3])

    def with_(self, **changes) -> "ProbeScheme":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return ProbeScheme(**kw)


def build_probe_basis(sigma_bloch, detector_plus_bloch, delta: float, K: float = DEFAULT_LEMMA_K) -> ProbeBasis:
    """Gram-Schmidt triad from a probe Bloch vector and the detector axis.

    ``n2`` is the detector axis, ``n1`` is the part of ``sigma`` orthogonal
    to it and ``n3 = n1 x n2``.
    """
    s = np.asarray(sigma_bloch, dtype=float)
    n2 = np.asarray(detector_plus_bloch, dtype=float)
    for name, v in (("sigma_bloch", s), ("detector_plus_bloch", n2)):
        if abs(np.linalg.norm(v) - 1.0) > 1e-10:
            raise ValueError(f"{name} must be a unit vector")
    overlap = abs(float(s @ n2))
    if overlap > K * delta:
        raise LemmaViolation(
            f"probe/detector overlap {overlap:.6g} exceeds K*delta = {K * delta:.6g}"
        )
    n1 = s - (s @ n2) * n2
    n1 /= np.linalg.norm(n1)
    return ProbeBasis(n1, n2, np.cross(n1, n2))


def _dot_h(n, triple):
    return n[0] * triple[0] + n[1] * triple[1] + n[2] * triple[2]


def rotate_hamiltonian(H: InteractionHamiltonian, basis: ProbeBasis) -> RotatedHamiltonian:
    t = H.lab_triple
    return RotatedHamiltonian(*(_dot_h(n, t) for n in basis.as_tuple()))


def reconstruction_residual(H: InteractionHamiltonian, basis: ProbeBasis) -> float:
    """``|| sum_a P_a (x) H_a - sum_i (n_i . P) (x) H_i ||_F``."""
    lhs = sum(tensor(P, Ha) for P, Ha in zip(PAULIS, H.lab_triple))
    R = rotate_hamiltonian(H, basis)
    rhs = sum(tensor(_dot_h(n, PAULIS), Hi) for n, Hi in zip(basis.as_tuple(), R.as_tuple()))
    return float(np.linalg.norm(lhs - rhs))


def frame_slots(H: InteractionHamiltonian, basis: ProbeBasis, include_system: bool = True):
    """Operators multiplying ``(X, Y, Z)`` in the probe frame.

    ``h3`` carries ``H_S``; at the order the expansion works to this is
    exact because the identity on the probe and ``Z`` act alike on the
    prepared state.
    """
    t = H.lab_triple
    h1 = _dot_h(basis.n2, t)
    h2 = _dot_h(basis.n3, t)
    h3 = _dot_h(basis.n1, t)
    if include_system:
        h3 = h3 + H.H_S
    return h1, h2, h3


def frame_slot_derivatives(scheme: ProbeScheme, x: float, method: str = "analytic", h: float = FD_STEP):
    """``d/dx`` of :func:`frame_slots` (``H_S`` is constant)."""
    H = scheme.hamiltonian
    if method == "fd" or (method == "analytic" and scheme.rotation_rate is None):
        sp = frame_slots(H, scheme.basis(x + h), include_system=False)
        sm = frame_slots(H, scheme.basis(x - h), include_system=False)
        return tuple((p - m) / (2 * h) for p, m in zip(sp, sm))
    if method != "analytic":
        raise ValueError(f"unknown derivative method {method!r}")
    w = scheme.lab_rotation_rate(x)
    b = scheme.basis(x)
    t = H.lab_triple
    return tuple(_dot_h(np.cross(w, n), t) for n in (b.n2, b.n3, b.n1))


def build_probe_state(scheme: ProbeScheme, x: float, delta: float) -> np.ndarray:
    """Lab-frame probe state tilted ``2 delta c`` off ``n1`` with azimuth ``psi`` from ``n2``."""
    R = scheme.basis(x).frame_unitary()
    th = delta * scheme.warp_c(x)
    local = np.array([np.cos(th), np.sin(th) * np.exp(1j * scheme.warp_psi(x))])
    return R @ local


def detector_state(scheme: ProbeScheme, x: float, branch: int) -> np.ndarray:
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    R = scheme.basis(x).frame_unitary()
    return R @ (np.array([1.0, branch]) / np.sqrt(2.0))


def probe_bloch(scheme: ProbeScheme, x: float, delta: float) -> np.ndarray:
    from .linalg import bloch_from_state

    return bloch_from_state(build_probe_state(scheme, x, delta))


def lemma_overlap(scheme: ProbeScheme, x: float, delta: float) -> float:
    """``|n2(x) . sigma(x)|``; must stay below ``K delta``."""
    return abs(float(scheme.basis(x).n2 @ probe_bloch(scheme, x, delta)))


def check_lemma(scheme: ProbeScheme, delta: float, xs) -> float:
    worst = max(lemma_overlap(scheme, float(x), delta) for x in xs)
    if worst > scheme.lemma_k * delta:
        raise LemmaViolation(
            f"probe/detector overlap {worst:.6g} exceeds K*delta = {scheme.lemma_k * delta:.6g}"
        )
    return worst


def bare_step_operator(scheme: ProbeScheme, x: float, branch: int, delta: float) -> np.ndarray:
    """Exact ``<Phi_branch(x)| exp(i delta H_PS) |sigma(x)>`` without padding."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    U = scheme.hamiltonian.propagator(delta)
    return probe_sandwich(detector_state(scheme, x, branch), U, build_probe_state(scheme, x, delta))


def step_operator(scheme: ProbeScheme, x: float, branch: int, delta: float) -> np.ndarray:
    """Step operator, padded as ``V(x + branch delta) M V(x)^dag`` if the scheme has padding."""
    M = bare_step_operator(scheme, x, branch, delta)
    if scheme.padding is not None:
        M = scheme.padding(x + branch * delta) @ M @ scheme.padding(x).conj().T
    return M


def completeness_residual(scheme: ProbeScheme, x: float, delta: float) -> float:
    Mp = step_operator(scheme, x, 1, delta)
    Mm = step_operator(scheme, x, -1, delta)
    return float(np.linalg.norm(Mp.conj().T @ Mp + Mm.conj().T @ Mm - np.eye(scheme.dim)))


def rotated_triple_derivative_residual(scheme: ProbeScheme, x: float, h: float = 1e-4) -> float:
    """Mismatch between a finite difference of ``(H1, H2, H3)`` and ``Omega x (H1, H2, H3)``."""
    H = scheme.hamiltonian
    Rp = rotate_hamiltonian(H, scheme.basis(x + h)).as_tuple()
    Rm = rotate_hamiltonian(H, scheme.basis(x - h)).as_tuple()
    R0 = rotate_hamiltonian(H, scheme.basis(x)).as_tuple()
    O = scheme.basis_rotation_rate(x)
    cross = (
        O[1] * R0[2] - O[2] * R0[1],
        O[2] * R0[0] - O[0] * R0[2],
        O[0] * R0[1] - O[1] * R0[0],
    )
    return max(float(np.linalg.norm((p - m) / (2 * h) - c)) for p, m, c in zip(Rp, Rm, cross))


def fixed_scheme(H: InteractionHamiltonian, basis: ProbeBasis, c: float = 0.0, psi: float = 0.0, name="fixed") -> ProbeScheme:
    """Scheme with an x-independent triad and constant warp."""
    return ProbeScheme(
        hamiltonian=H,
        basis=lambda x: basis,
        warp_c=lambda x: c,
        warp_psi=lambda x: psi,
        rotation_rate=lambda x: np.zeros(3),
        name=name,
    )


def rotating_scheme(H: InteractionHamiltonian, base: Rotation, omega, c=None, psi=None, name="rotating") -> ProbeScheme:
    """Triad ``R(x) = exp(x [omega]_x) base`` rotating at constant lab rate ``omega``.

    The columns of ``base`` are ``(n2, n3, n1)`` at ``x = 0``.
    """
    omega = np.asarray(omega, dtype=float)

    def basis(x):
        M = (Rotation.from_rotvec(x * omega) * base).as_matrix()
        return ProbeBasis(M[:, 2], M[:, 0], M[:, 1])

    return ProbeScheme(
        hamiltonian=H,
        basis=basis,
        warp_c=c if c is not None else (lambda x: 0.0),
        warp_psi=psi if psi is not None else (lambda x: 0.0),
        rotation_rate=lambda x: omega,
        name=name,
    )
