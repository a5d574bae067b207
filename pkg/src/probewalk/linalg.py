"""Small dense complex linear algebra for probe and system operators.

Operators are plain ``numpy`` complex arrays. Joint probe-system operators
always use the probe as the slow (first) tensor factor, so a joint operator
on a qubit probe and a ``d``-level system is ``2d x 2d`` with index
``(j, m) -> j * d + m``.
"""

from __future__ import annotations

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (X, Y, Z)

HERMITIAN_RTOL = 1e-12
UNITARY_ATOL = 1e-10


class NotHermitianError(ValueError):
    """Raised when an operator expected to be Hermitian is not."""


def as_operator(M) -> np.ndarray:
    A = np.asarray(M, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"operator must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("operator has non-finite entries")
    return A


def anti_hermitian_norm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M - M.conj().T))


def is_hermitian(M: np.ndarray, rtol: float = HERMITIAN_RTOL) -> bool:
    M = np.asarray(M)
    return anti_hermitian_norm(M) <= rtol * max(np.linalg.norm(M), 1.0)


def is_unitary(U: np.ndarray, atol: float = UNITARY_ATOL) -> bool:
    U = np.asarray(U)
    return float(np.linalg.norm(U.conj().T @ U - np.eye(U.shape[0]))) <= atol


def hermitian_part(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().T)


def hermitian_exp(H, t: float) -> np.ndarray:
    """Return ``exp(i t H)`` for Hermitian ``H`` via its eigendecomposition.

    Raises
    ------
    NotHermitianError
        If ``H`` fails the Hermiticity predicate; the message carries the
        Frobenius norm of ``H - H^dagger``.
    """
    H = as_operator(H)
    if not is_hermitian(H):
        raise NotHermitianError(
            f"hermitian_exp needs a Hermitian operator; ||H - H^dag||_F = {anti_hermitian_norm(H):.3e}"
        )
    w, V = np.linalg.eigh(H)
    return (V * np.exp(1j * t * w)) @ V.conj().T


def tensor(A, B) -> np.ndarray:
    """Kronecker product, first factor is the slow index."""
    return np.kron(np.asarray(A, dtype=complex), np.asarray(B, dtype=complex))


def probe_sandwich(bra, U, ket) -> np.ndarray:
    """Contract the probe factor of a joint operator between two qubit states.

    Returns the system operator ``<bra| U |ket>`` with
    ``M[m, n] = sum_jk conj(bra[j]) U[(j, m), (k, n)] ket[k]``.
    """
    bra = np.asarray(bra, dtype=complex)
    ket = np.asarray(ket, dtype=complex)
    U = np.asarray(U, dtype=complex)
    if bra.shape != (2,) or ket.shape != (2,):
        raise ValueError("bra and ket must be qubit states of shape (2,)")
    if U.ndim != 2 or U.shape[0] != U.shape[1] or U.shape[0] % 2:
        raise ValueError(f"joint operator must be 2d x 2d, got {U.shape}")
    d = U.shape[0] // 2
    return np.einsum("j,jmkn,k->mn", bra.conj(), U.reshape(2, d, 2, d), ket)


def proportionality_residual(M) -> tuple[complex, float]:
    """Best identity multiple ``lam = tr(M)/d`` and ``||M - lam*1||_F``."""
    M = np.asarray(M, dtype=complex)
    lam = complex(np.trace(M) / M.shape[0])
    return lam, float(np.linalg.norm(M - lam * np.eye(M.shape[0])))


def mutual_proportionality_residual(A, B) -> float:
    """Distance between ``A`` and the best multiple of ``B``, both Frobenius-normalized."""
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    A = A / np.linalg.norm(A)
    B = B / np.linalg.norm(B)
    lam = np.vdot(B, A)
    return float(np.linalg.norm(A - lam * B))


def distinct_singular_values(M, tol: float = 1e-6) -> int:
    """Number of clusters of singular values separated by gaps larger than ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = np.sort(np.linalg.svd(np.asarray(M, dtype=complex), compute_uv=False))
    return 1 + int(np.count_nonzero(np.diff(s) > tol))


def normalize(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    n = np.linalg.norm(psi)
    if n == 0:
        raise ValueError("cannot normalize the zero vector")
    return psi / n


def bloch_from_state(psi) -> np.ndarray:
    """Bloch vector ``(<X>, <Y>, <Z>)`` of a qubit state."""
    psi = normalize(psi)
    return np.array([np.real(np.vdot(psi, P @ psi)) for P in PAULIS])


def state_from_bloch(v) -> np.ndarray:
    """Qubit state with Bloch vector ``v`` (unit), real non-negative first amplitude."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    theta = np.arctan2(np.hypot(v[0], v[1]), v[2])  # arccos loses precision at the poles
    phi = np.arctan2(v[1], v[0])
    return np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])


def fidelity(a, b) -> float:
    return float(abs(np.vdot(normalize(a), normalize(b))) ** 2)


def phase_fitted_fidelity(psi, target) -> float:
    """Fidelity maximized over a diagonal unitary acting on ``psi``.

    ``max_D |<target|D|psi>|^2 = (sum_k |target_k| |psi_k|)^2`` for normalized vectors.
    """
    psi = normalize(psi)
    target = normalize(target)
    return float(np.sum(np.abs(psi) * np.abs(target)) ** 2)


def random_hermitian(d: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * 0.5 * (A + A.conj().T)


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    Q, R = np.linalg.qr(A)
    return Q * (np.diag(R) / np.abs(np.diag(R)))
