"""Diagonal qubit measurements from a ``Z (x) Z`` probe coupling.

The target is ``M1 = W1 diag(alpha, beta)``, ``M2 = W2 diag(sqrt(1-alpha^2), sqrt(1-beta^2))``.
The scheme keeps the probe on ``n1 = x`` and turns the detector axis in the
``y-z`` plane,

    n2(x) = (0, s(x), r(x)),   n3(x) = (0, -r(x), s(x)),   r = sqrt(1 - s^2),

so the probe-frame slots are ``h1 = r Z``, ``h2 = s Z`` and ``h3 = 0``. With

    c(x) = (tanh(x - a) + tanh(x - b)) / 4
    s(x) = (tanh(x - b) - tanh(x - a)) / 4 = s(0) exp(-4 int_0^x c)

the ``|0>`` and ``|1>`` sectors perform classical walks with drifts
``tanh(x - a)/2`` and ``tanh(x - b)/2``. Their hitting probabilities of ``+X``
are ``(1 - tanh X tanh a)/2``, which fixes

    tanh a = (1 - 2 alpha^2) / tanh X,   tanh b = (1 - 2 beta^2) / tanh X.

``variant="literal"`` instead uses ``c = (tanh(x-a) + tanh(x-b))/2``,
``s = exp(-4 int c)`` and ``tanh a = (2 alpha - 1)/tanh X``. It is kept to
document that this combination does not reach the requested target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, quad
from scipy.spatial.transform import Rotation

from .linalg import Z, hermitian_exp, random_unitary
from .probe import InteractionHamiltonian, ProbeBasis, ProbeScheme, check_lemma
from .reversibility import calibrate_pulse_signs

VARIANTS = ("derived", "literal")


class InfeasibleTarget(ValueError):
    pass


@dataclass(frozen=True)
class DiagonalTarget:
    alpha: float
    beta: float
    theta: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0,1)")

    def operators(self, theta1=None, theta2=None):
        t1 = self.theta if theta1 is None else theta1
        t2 = self.theta if theta2 is None else theta2
        W1 = hermitian_exp(Z, t1)
        W2 = hermitian_exp(Z, -t2)
        M1 = W1 @ np.diag([self.alpha, self.beta]).astype(complex)
        M2 = W2 @ np.diag([np.sqrt(1 - self.alpha**2), np.sqrt(1 - self.beta**2)]).astype(complex)
        return M1, M2

    def p1(self, psi) -> float:
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return float(self.alpha**2 * abs(psi[0]) ** 2 + self.beta**2 * abs(psi[1]) ** 2)

    def post_state_1(self, psi) -> np.ndarray:
        v = np.array([self.alpha, self.beta]) * np.asarray(psi, dtype=complex)
        return v / np.linalg.norm(v)

    def post_state_2(self, psi) -> np.ndarray:
        v = np.sqrt(1 - np.array([self.alpha, self.beta]) ** 2) * np.asarray(psi, dtype=complex)
        return v / np.linalg.norm(v)


def shift_for_amplitude(amp: float, X: float, variant: str) -> float:
    t = np.tanh(X)
    if variant == "derived":
        v = 1 - 2 * amp**2
        need = np.arctanh(min(abs(v), 1 - 1e-16))
    elif variant == "literal":
        v = 2 * amp - 1
        need = np.arctanh(min(abs(v), 1 - 1e-16))
    else:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if abs(v) >= t:
        raise InfeasibleTarget(
            f"target amplitude {amp} is unreachable with boundary X = {X}; need X > {need:.6g}"
        )
    return float(np.arctanh(v / t))


def ab_from_target(alpha: float, beta: float, X: float, variant: str = "derived"):
    """Shifts ``(a, b)`` of the warp function for a diagonal target."""
    if X <= 0:
        raise ValueError("boundary X must be positive")
    return shift_for_amplitude(alpha, X, variant), shift_for_amplitude(beta, X, variant)


def warp_c(x, a: float, b: float, variant: str = "derived"):
    k = 0.25 if variant == "derived" else 0.5
    return k * (np.tanh(x - a) + np.tanh(x - b))


def _log_cosh_ratio(x, a):
    # ln(cosh(x - a) / cosh(a)), stable for large arguments
    return np.logaddexp(x - a, a - x) - np.logaddexp(a, -a)


def warp_c_integral(x, a: float, b: float, variant: str = "derived"):
    """``int_0^x c``, closed form."""
    k = 0.25 if variant == "derived" else 0.5
    return k * (_log_cosh_ratio(x, a) + _log_cosh_ratio(x, b))


def detector_tilt(x, a: float, b: float, variant: str = "derived"):
    """``s(x)``, the ``y`` component of ``n2`` (equivalently the eigenvalue of ``h2`` on ``|0>``)."""
    if variant == "derived":
        return 0.25 * (np.tanh(x - b) - np.tanh(x - a))
    return np.exp(-4 * warp_c_integral(x, a, b, "literal"))


def build_zz_scheme(target: DiagonalTarget, X: float, delta: float, variant: str = "derived", calibrate: bool = True) -> ProbeScheme:
    """Probe scheme realizing ``target`` at boundaries ``+-X``."""
    a, b = ab_from_target(target.alpha, target.beta, X, variant)
    if variant == "literal":
        grid = np.linspace(-X, X, 2001)
        smax = float(np.max(np.abs(detector_tilt(grid, a, b, variant))))
        if smax > 1 + 1e-12:
            raise InfeasibleTarget(
                f"literal variant leaves the Bloch sphere: max |exp(-4 int c)| = {smax:.6g} on [-X, X]"
            )

    def s_of(x):
        return float(np.clip(detector_tilt(x, a, b, variant), -1.0, 1.0))

    def basis(x):
        s = s_of(x)
        r = np.sqrt(max(1.0 - s * s, 0.0))
        return ProbeBasis(np.array([1.0, 0.0, 0.0]), np.array([0.0, s, r]), np.array([0.0, -r, s]))

    def rate(x):
        s = s_of(x)
        r = np.sqrt(max(1.0 - s * s, 0.0))
        return np.array([4 * warp_c(x, a, b, variant) * s / r, 0.0, 0.0])

    H = InteractionHamiltonian.from_blocks(H_Z=Z)
    scheme = ProbeScheme(
        hamiltonian=H,
        basis=basis,
        warp_c=lambda x: float(warp_c(x, a, b, variant)),
        warp_psi=lambda x: 0.0,
        rotation_rate=rate if variant == "derived" else None,
        name=f"zz-{variant}",
        meta={"a": a, "b": b, "X": X, "alpha": target.alpha, "beta": target.beta, "variant": variant},
    )
    check_lemma(scheme, delta, np.linspace(-X, X, 61))
    if calibrate:
        scheme = scheme.with_(pulse_signs=calibrate_pulse_signs(scheme))
    return scheme


def phase_angles(a: float, b: float, X1: float, X2: float, variant: str = "derived"):
    """``theta1 = int_0^X2 r`` and ``theta2 = int_X1^0 r`` with ``r = sqrt(1 - s^2)``."""
    r = lambda x: np.sqrt(max(1.0 - float(detector_tilt(x, a, b, variant)) ** 2, 0.0))
    t1 = quad(r, 0.0, X2, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    t2 = quad(r, X1, 0.0, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    return t1, t2


def sector_hitting_probabilities(a: float, b: float, X: float, variant: str = "derived", n: int = 20001):
    """Probability that the ``|0>`` and ``|1>`` sector walks started at 0 reach ``+X`` first.

    Sector ``z = +-1`` (the ``Z`` eigenvalue) drifts with ``mu_z = c - z s``.
    Its scale density is ``S'(x) = exp(-4 int_0^x mu_z)`` and the
    first-passage probability is ``int_{-X}^0 S' / int_{-X}^X S'``, evaluated
    with a cumulative Simpson rule on ``n`` points.
    """
    xs = np.linspace(-X, X, n)
    mid = (n - 1) // 2
    out = []
    for z in (1.0, -1.0):
        mu = warp_c(xs, a, b, variant) - z * detector_tilt(xs, a, b, variant)
        M = cumulative_simpson(mu, x=xs, initial=0.0)
        logS = -4.0 * (M - M[mid])
        Sp = np.exp(logS - logS.max())
        F = cumulative_simpson(Sp, x=xs, initial=0.0)
        out.append(float(F[mid] / F[-1]))
    return np.array(out)


def endpoint_operators_analytic(target: DiagonalTarget, X: float, variant: str = "derived"):
    """Endpoint operators of the scheme at ``+-X`` from the sector walks.

    The magnitudes are square roots of the sector hitting probabilities
    (for ``variant="derived"`` these equal ``alpha`` and ``beta``); the phases
    are ``W1 = exp(i theta1 Z)`` and ``W2 = exp(-i theta2 Z)``.
    """
    a, b = ab_from_target(target.alpha, target.beta, X, variant)
    P = sector_hitting_probabilities(a, b, X, variant)
    t1, t2 = phase_angles(a, b, -X, X, variant)
    M1 = hermitian_exp(Z, t1) @ np.diag(np.sqrt(P)).astype(complex)
    M2 = hermitian_exp(Z, -t2) @ np.diag(np.sqrt(1.0 - P)).astype(complex)
    return M1, M2


# -- generalized admissible schemes on larger systems -----------------------


def lifted_zz_scheme(rng: np.random.Generator, d: int = 4, X: float = 2.0, delta: float = 0.05):
    """Random admissible scheme on a ``d``-level system.

    The blocks have eigen-triplets ``c_j lam0 + k_j lam1`` with ``k_j = +-1``,
    i.e. ``(H_X, H_Y, H_Z) = lam0 C + lam1 K`` with ``C``, ``K`` and ``H_S``
    diagonal in a common random basis. The probe triad follows the Z (x) Z
    construction rotated by a random lab rotation ``G`` with ``n1 || lam0``
    and the detector turning in the plane orthogonal to ``lam0``.
    """
    U = random_unitary(d, rng)
    k = np.ones(d)
    k[rng.permutation(d)[: rng.integers(1, d)]] = -1
    cj = rng.normal(size=d)
    hs = rng.normal(size=d)
    diag = lambda v: (U * v) @ U.conj().T
    K, C, HS = diag(k), diag(cj), diag(hs)
    G = Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()
    lam0, lam1 = G[:, 0], G[:, 2]
    H = InteractionHamiltonian(HS, lam0[0] * C + lam1[0] * K, lam0[1] * C + lam1[1] * K, lam0[2] * C + lam1[2] * K)
    alpha, beta = rng.uniform(0.2, 0.9, size=2)
    a, b = ab_from_target(alpha, beta, X)

    def basis(x):
        s = float(detector_tilt(x, a, b))
        r = np.sqrt(1.0 - s * s)
        return ProbeBasis(G @ np.array([1.0, 0, 0]), G @ np.array([0, s, r]), G @ np.array([0, -r, s]))

    def rate(x):
        s = float(detector_tilt(x, a, b))
        return G @ np.array([4 * warp_c(x, a, b) * s / np.sqrt(1 - s * s), 0.0, 0.0])

    scheme = ProbeScheme(
        hamiltonian=H,
        basis=basis,
        warp_c=lambda x: float(warp_c(x, a, b)),
        rotation_rate=rate,
        name="lifted-zz",
        meta={"a": a, "b": b, "X": X, "alpha": alpha, "beta": beta, "U": U, "k": k},
    )
    check_lemma(scheme, delta, np.linspace(-X, X, 41))
    return scheme.with_(pulse_signs=calibrate_pulse_signs(scheme))
