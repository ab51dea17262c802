"""Truncated Fock-space linear algebra for an oscillator with ancilla qubit.

All operators are dense complex128 matrices on the first N Fock levels.
Joint states of qubit and oscillator are stored qubit-major: a vector of
length 2N whose first N entries are the ground-qubit block and last N the
excited-qubit block, i.e. kron(qubit, oscillator).  The qubit convention is
sigma_z |g> = +|g>, so measurement outcome +1 corresponds to |g>.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm


class TruncationLeakError(RuntimeError):
    """Raised when amplitude leaking past the truncation exceeds the guard."""


@dataclass(frozen=True)
class FockSpace:
    """Cached operators and eigendecompositions for one truncation size N.

    x and p are the dimensionless quadratures x = (a + a^dag)/sqrt(2),
    p = i(a^dag - a)/sqrt(2).  Their eigendecompositions are precomputed so
    displacements can be applied as diagonal phases in the quadrature bases.
    """

    N: int
    a: np.ndarray = field(repr=False)
    adag: np.ndarray = field(repr=False)
    n_op: np.ndarray = field(repr=False)
    x_op: np.ndarray = field(repr=False)
    p_op: np.ndarray = field(repr=False)
    parity: np.ndarray = field(repr=False)
    x_vals: np.ndarray = field(repr=False)
    x_vecs: np.ndarray = field(repr=False)
    p_vals: np.ndarray = field(repr=False)
    p_vecs: np.ndarray = field(repr=False)


def build_fock_space(N: int) -> FockSpace:
    """Construct the cached FockSpace for truncation N >= 2."""
    if N < 2:
        raise ValueError(f"need at least two Fock levels, got N={N}")
    a = np.diag(np.sqrt(np.arange(1, N, dtype=float)), k=1).astype(complex)
    adag = a.conj().T
    n_op = adag @ a
    x_op = (a + adag) / np.sqrt(2.0)
    p_op = 1j * (adag - a) / np.sqrt(2.0)
    parity = np.diag((-1.0 + 0j) ** np.arange(N))
    x_vals, x_vecs = eig_hermitian(x_op)
    p_vals, p_vecs = eig_hermitian(p_op)
    return FockSpace(
        N=N, a=a, adag=adag, n_op=n_op, x_op=x_op, p_op=p_op, parity=parity,
        x_vals=x_vals, x_vecs=x_vecs, p_vals=p_vals, p_vecs=p_vecs,
    )


@functools.lru_cache(maxsize=32)
def cached_fock_space(N: int) -> FockSpace:
    """Memoized build_fock_space; FockSpace is frozen, so sharing is safe."""
    return build_fock_space(N)


def eig_hermitian(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix: ascending values, unitary vecs."""
    if not np.allclose(m, m.conj().T, atol=1e-12):
        raise ValueError("matrix is not Hermitian")
    vals, vecs = np.linalg.eigh(m)
    return vals, vecs.astype(complex)


def matexp_reference(m: np.ndarray) -> np.ndarray:
    """Reference matrix exponential (test oracle, not the production path)."""
    return expm(m)


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product, qubit-major when a is the qubit operator."""
    return np.kron(a, b)


def vacuum(fs: FockSpace) -> np.ndarray:
    v = np.zeros(fs.N, dtype=complex)
    v[0] = 1.0
    return v


def fock_state(fs: FockSpace, n: int) -> np.ndarray:
    if not 0 <= n < fs.N:
        raise ValueError(f"Fock level {n} outside truncation {fs.N}")
    v = np.zeros(fs.N, dtype=complex)
    v[n] = 1.0
    return v


def normalize(psi: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(psi)
    if nrm < 1e-12:
        raise ValueError("cannot normalize a null vector")
    return psi / nrm


def joint_state(qubit: np.ndarray, osc: np.ndarray) -> np.ndarray:
    """Qubit-major joint vector kron(qubit, oscillator)."""
    return np.kron(np.asarray(qubit, dtype=complex), np.asarray(osc, dtype=complex))


def ground_joint(fs: FockSpace, osc: np.ndarray) -> np.ndarray:
    """|g> otimes |osc> as a flat 2N vector."""
    out = np.zeros(2 * fs.N, dtype=complex)
    out[: fs.N] = osc
    return out


def tail_weight(psi: np.ndarray, n_guard: int) -> float:
    """Total population in the top n_guard levels of an oscillator vector."""
    psi = np.asarray(psi)
    if psi.ndim != 1:
        raise ValueError("expected a flat state vector")
    if n_guard <= 0:
        return 0.0
    return float(np.sum(np.abs(psi[-n_guard:]) ** 2))


def joint_tail_weight(psi: np.ndarray, N: int, n_guard: int) -> float:
    """Top-band occupancy of a joint (2N,) state, summed over qubit branches."""
    p = np.abs(np.asarray(psi).reshape(2, N)) ** 2
    return float(np.sum(p[:, N - n_guard:]))


def guard_band(N: int, alpha: complex) -> int:
    """Highest Fock index (exclusive) trusted for oracle comparisons of D(alpha)."""
    return N - int(np.ceil(4.0 * abs(alpha) * np.sqrt(N)))


def coherent_leak(N: int, alpha: complex) -> float:
    """Population of the coherent state |alpha| beyond level N-1 (Poisson tail)."""
    lam = abs(alpha) ** 2
    if lam == 0.0:
        return 0.0
    k = np.arange(N)
    # log Poisson pmf for numerical stability at large lam
    logp = -lam + k * np.log(lam) - np.cumsum(np.concatenate([[0.0], np.log(np.maximum(k[1:], 1))]))
    inside = np.sum(np.exp(logp))
    return float(max(0.0, 1.0 - inside))
