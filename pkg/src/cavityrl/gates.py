"""Unitary gate constructors for the oscillator-qubit control circuit.

Oscillator-only gates return (N, N) matrices; joint gates return (2N, 2N)
matrices in the qubit-major layout of :mod:`cavityrl.fock`.

The displacement uses a split-operator identity instead of a matrix
exponential: writing D(alpha) = exp(alpha a^dag - alpha^* a) and splitting
the generator into its x and p parts,

    D(alpha) = e^{i sqrt(2) Im(alpha) x} e^{-i sqrt(2) Re(alpha) p}
               e^{-i Im(alpha) Re(alpha)},

each factor is diagonal in the precomputed x or p eigenbasis, so building
D costs four dense matrix products and no exponential.  The scipy expm
route stays available as a test oracle (fock.matexp_reference).
"""

from __future__ import annotations

import numpy as np

from .fock import FockSpace, TruncationLeakError, coherent_leak, kron, matexp_reference

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
ID2 = np.eye(2, dtype=complex)

DEFAULT_LEAK_MAX = 1e-6


def displacement(fs: FockSpace, alpha: complex, leak_max: float | None = DEFAULT_LEAK_MAX) -> np.ndarray:
    """Displacement D(alpha) via diagonal phases in the quadrature eigenbases.

    When leak_max is not None, the Poisson tail of D(alpha)|0> past level
    N-1 must stay below it, otherwise TruncationLeakError is raised.
    """
    alpha = complex(alpha)
    if leak_max is not None:
        leak = coherent_leak(fs.N, alpha)
        if leak > leak_max:
            raise TruncationLeakError(
                f"displacement alpha={alpha} leaks {leak:.3e} past N={fs.N}"
            )
    re, im = alpha.real, alpha.imag
    ux, up = fs.x_vecs, fs.p_vecs
    phase_x = np.exp(1j * np.sqrt(2.0) * im * fs.x_vals)
    phase_p = np.exp(-1j * np.sqrt(2.0) * re * fs.p_vals)
    dx = (ux * phase_x) @ ux.conj().T
    dp = (up * phase_p) @ up.conj().T
    return np.exp(-1j * im * re) * (dx @ dp)


def displacement_reference(fs: FockSpace, alpha: complex) -> np.ndarray:
    """Matrix-exponential displacement (oracle route)."""
    alpha = complex(alpha)
    return matexp_reference(alpha * fs.adag - np.conj(alpha) * fs.a)


def snap_ideal(fs: FockSpace, phases: np.ndarray) -> np.ndarray:
    """Ideal photon-number selective phase gate diag(e^{i phi_n}), phi_n = 0 for n >= len(phases)."""
    phases = np.asarray(phases, dtype=float)
    if phases.ndim != 1 or phases.size > fs.N:
        raise ValueError("need a 1-d phase list no longer than the truncation")
    full = np.zeros(fs.N)
    full[: phases.size] = phases
    return np.diag(np.exp(1j * full))


def qubit_rotation(axis_angle: float, angle: float) -> np.ndarray:
    """R_phi(theta) = exp(-i theta/2 (cos(phi) sigma_x + sin(phi) sigma_y))."""
    nx, ny = np.cos(axis_angle), np.sin(axis_angle)
    half = angle / 2.0
    gen = nx * SIGMA_X + ny * SIGMA_Y
    return np.cos(half) * ID2 - 1j * np.sin(half) * gen


def _pulse_coefficients(chi_tau: float, n_components: int, n_levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Time-averaged drive coefficients A_kn, B_kn for the finite-duration gate.

    A_kn = sin(d)/d and B_kn = (1 - cos(d))/d with d = 2 pi chi tau (k - n),
    and the analytic d -> 0 limits A = 1, B = 0 on resonance (k = n).
    """
    k = np.arange(n_components)[:, None]
    n = np.arange(n_levels)[None, :]
    d = 2.0 * np.pi * chi_tau * (k - n).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        A = np.where(d == 0.0, 1.0, np.sin(d) / np.where(d == 0.0, 1.0, d))
        B = np.where(d == 0.0, 0.0, (1.0 - np.cos(d)) / np.where(d == 0.0, 1.0, d))
    return A, B


def snap_axis_components(
    chi_tau: float, phases: np.ndarray, n_levels: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-level (sx_n, sy_n) rotation-axis components of the second SNAP pulse.

    The comb drives components k < Phi with phase offsets delta_k = pi - phi_k.
    Averaging each component over the gate duration leaves, on level n, the
    generator (pi/2) (sx_n sigma_x - sy_n sigma_y) with

        sx_n = sum_k (-A_kn cos(phi_k) - B_kn sin(phi_k)),
        sy_n = sum_k ( B_kn cos(phi_k) - A_kn sin(phi_k)).
    """
    phases = np.asarray(phases, dtype=float)
    single = phases.ndim == 1
    ph = np.atleast_2d(phases)
    A, B = _pulse_coefficients(chi_tau, ph.shape[-1], n_levels)
    c, s = np.cos(ph), np.sin(ph)
    sx = -(c @ A) - (s @ B)
    sy = (c @ B) - (s @ A)
    if single:
        return sx[0], sy[0]
    return sx, sy


def snap_finite(fs: FockSpace, phases: np.ndarray, chi_tau: float) -> np.ndarray:
    """Finite-duration SNAP: first-order average of the frequency-comb drive.

    The gate is two qubit pulses: a perfect unconditional pi pulse R_0(pi)
    followed by a comb of Phi components whose time-averaged action on level
    n is exp(-i (pi/2) (sx_n sigma_x - sy_n sigma_y)).  In the selective
    limit chi tau >> 1 this reduces on the driven levels to the ideal SNAP
    with the qubit returned to |g>; for chi tau <~ 1 the components
    cross-talk and the gate entangles qubit and oscillator.
    """
    if chi_tau <= 0:
        raise ValueError("chi_tau must be positive")
    phases = np.asarray(phases, dtype=float)
    if phases.ndim != 1 or phases.size > fs.N:
        raise ValueError("need a 1-d phase list no longer than the truncation")
    sx, sy = snap_axis_components(chi_tau, phases, fs.N)
    r = (np.pi / 2.0) * np.hypot(sx, sy)
    # exp(-i r u.sigma) = cos(r) - i sin(r) u.sigma with u the unit axis
    with np.errstate(divide="ignore", invalid="ignore"):
        sinc = np.where(r == 0.0, 1.0, np.sin(r) / np.where(r == 0.0, 1.0, r))
    cx = -1j * (np.pi / 2.0) * sinc * sx
    cy = -1j * (np.pi / 2.0) * sinc * (-sy)
    cos_r = np.cos(r)
    out = np.zeros((2 * fs.N, 2 * fs.N), dtype=complex)
    idx = np.arange(fs.N)
    # per-level 2x2: [[cos r, cx - i cy], [cx + i cy, cos r]] acting on the qubit
    ugg = cos_r
    uge = cx - 1j * cy
    ueg = cx + 1j * cy
    uee = cos_r
    rpi = qubit_rotation(0.0, np.pi)
    # multiply each per-level 2x2 by the initial pi pulse
    m00 = ugg * rpi[0, 0] + uge * rpi[1, 0]
    m01 = ugg * rpi[0, 1] + uge * rpi[1, 1]
    m10 = ueg * rpi[0, 0] + uee * rpi[1, 0]
    m11 = ueg * rpi[0, 1] + uee * rpi[1, 1]
    out[idx, idx] = m00
    out[idx, idx + fs.N] = m01
    out[idx + fs.N, idx] = m10
    out[idx + fs.N, idx + fs.N] = m11
    return out


def cond_displacement(fs: FockSpace, alpha: complex, leak_max: float | None = DEFAULT_LEAK_MAX) -> np.ndarray:
    """Conditional displacement |g><g| D(alpha/2) + |e><e| D(-alpha/2)."""
    half = complex(alpha) / 2.0
    dp = displacement(fs, half, leak_max)
    dm = displacement(fs, -half, leak_max)
    out = np.zeros((2 * fs.N, 2 * fs.N), dtype=complex)
    out[: fs.N, : fs.N] = dp
    out[fs.N:, fs.N:] = dm
    return out


def cond_parity(fs: FockSpace) -> np.ndarray:
    """|g><g| I + |e><e| Pi: photon-number parity kick on the excited branch."""
    out = np.eye(2 * fs.N, dtype=complex)
    out[fs.N:, fs.N:] = fs.parity
    return out


def selective_pi_pulse(fs: FockSpace, n: int) -> np.ndarray:
    """Flip the qubit iff the oscillator holds exactly n photons."""
    if not 0 <= n < fs.N:
        raise ValueError(f"level {n} outside truncation {fs.N}")
    proj = np.zeros((fs.N, fs.N), dtype=complex)
    proj[n, n] = 1.0
    rest = np.eye(fs.N, dtype=complex) - proj
    return kron(SIGMA_X, proj) + kron(ID2, rest)


def envelope_op(fs: FockSpace, delta: float) -> np.ndarray:
    """Gaussian-envelope damper diag(e^{-delta^2 n}); not unitary."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return np.diag(np.exp(-(delta**2) * np.arange(fs.N)).astype(complex))


def squeeze(fs: FockSpace, r: float, leak_max: float | None = DEFAULT_LEAK_MAX) -> np.ndarray:
    """Squeeze exp((r/2)(a^2 - a^dag^2)); narrows x for r > 0.

    Guarded by the tail weight of S(r)|0> past the truncation.
    """
    s = matexp_reference((r / 2.0) * (fs.a @ fs.a - fs.adag @ fs.adag))
    if leak_max is not None:
        col = s[:, 0]
        leak = 1.0 - float(np.vdot(col, col).real)
        if abs(leak) > leak_max:
            raise TruncationLeakError(
                f"squeeze r={r} leaks {leak:.3e} past N={fs.N}"
            )
    return s


def joint_oscillator(fs: FockSpace, op: np.ndarray) -> np.ndarray:
    """Lift an oscillator operator to the joint space: I_2 otimes op."""
    return kron(ID2, op)


def joint_qubit(fs: FockSpace, op2: np.ndarray) -> np.ndarray:
    """Lift a qubit operator to the joint space: op2 otimes I_N."""
    return kron(op2, np.eye(fs.N, dtype=complex))
