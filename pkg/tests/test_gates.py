"""Gate constructors: unitarity, closed-form actions, and dual-route checks."""

import numpy as np
import pytest

from cavityrl import fock, gates, states

UNITARY_ATOL = 1e-10
CLOSED_FORM_ATOL = 1e-9
ORACLE_MAX_ENTRY = 1e-4
SELECTIVE_FIDELITY = 0.999


def _is_unitary(mat, atol=UNITARY_ATOL):
    return np.allclose(mat.conj().T @ mat, np.eye(mat.shape[0]), atol=atol)


@pytest.mark.parametrize("alpha", [0.4, -0.9j, 0.7 + 0.5j])
def test_displacement_unitary_and_invertible(fs40, alpha):
    d = gates.displacement(fs40, alpha)
    assert _is_unitary(d)
    # D(-a) D(a) = 1 holds on the guard-band block; the top corner carries
    # the truncated commutator of the two split-step factors
    band = fock.guard_band(fs40.N, alpha)
    prod = gates.displacement(fs40, -alpha) @ d
    assert np.allclose(prod[:band, :band], np.eye(fs40.N)[:band, :band],
                       atol=CLOSED_FORM_ATOL)


def test_displacement_prepares_coherent_state(fs60):
    alpha = 1.2 - 0.3j
    out = gates.displacement(fs60, alpha) @ fock.vacuum(fs60)
    assert np.allclose(out, states.coherent(fs60, alpha), atol=CLOSED_FORM_ATOL)


@pytest.mark.parametrize("alpha", [0.5, 1.0j, 1.2 - 0.8j])
def test_displacement_matches_matrix_exponential_oracle(fs60, alpha):
    """Split-step route vs expm route agree on the guard-band sub-block."""
    fast = gates.displacement(fs60, alpha)
    oracle = gates.displacement_reference(fs60, alpha)
    band = fock.guard_band(fs60.N, alpha)
    err = np.max(np.abs(fast[:band, :band] - oracle[:band, :band]))
    assert err < ORACLE_MAX_ENTRY


def test_displacement_leak_guard():
    fs = fock.cached_fock_space(10)
    with pytest.raises(fock.TruncationLeakError):
        gates.displacement(fs, 3.0)
    # explicit opt-out skips the guard
    gates.displacement(fs, 3.0, leak_max=None)


def test_snap_ideal_applies_listed_phases(fs24):
    phases = np.array([0.3, -1.2, 2.2])
    s = gates.snap_ideal(fs24, phases)
    assert _is_unitary(s)
    diag = np.diag(s)
    assert np.allclose(diag[:3], np.exp(1j * phases))
    assert np.allclose(diag[3:], 1.0)


def test_qubit_rotation_closed_forms():
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    assert np.allclose(gates.qubit_rotation(0.0, np.pi), -1j * sx, atol=1e-12)
    assert np.allclose(gates.qubit_rotation(np.pi / 2, np.pi), -1j * sy, atol=1e-12)
    r = gates.qubit_rotation(0.3, 0.8)
    assert _is_unitary(r)
    # half angles compose
    h = gates.qubit_rotation(0.3, 0.4)
    assert np.allclose(h @ h, r, atol=1e-12)


def test_snap_finite_selective_limit_matches_ideal(fs24):
    """At chi*tau = 100 the driven levels see the ideal phase, qubit back to |g>."""
    rng = np.random.default_rng(7)
    phases = rng.uniform(-np.pi, np.pi, size=8)
    u = gates.snap_finite(fs24, phases, chi_tau=100.0)
    assert _is_unitary(u)
    ideal = np.exp(1j * phases)
    for n in range(8):
        inp = np.zeros(2 * fs24.N, dtype=complex)
        inp[n] = 1.0  # |g, n>
        out = u @ inp
        overlap = np.conj(ideal[n]) * out[n]
        fidelity = abs(out[n]) ** 2
        assert fidelity > SELECTIVE_FIDELITY
        assert overlap.real > SELECTIVE_FIDELITY  # phase is right, not just weight


def test_snap_finite_short_pulse_entangles(fs24):
    phases = np.linspace(-1.0, 1.0, 6)
    u = gates.snap_finite(fs24, phases, chi_tau=0.4)
    assert _is_unitary(u)
    inp = np.zeros(2 * fs24.N, dtype=complex)
    inp[2] = 1.0
    out = u @ inp
    excited = np.linalg.norm(out[fs24.N:]) ** 2
    assert excited > 0.01  # appreciable qubit population error


def test_snap_finite_rejects_bad_args(fs24):
    with pytest.raises(ValueError):
        gates.snap_finite(fs24, np.zeros(3), chi_tau=0.0)
    with pytest.raises(ValueError):
        gates.snap_finite(fs24, np.zeros((2, 3)), chi_tau=1.0)


def test_cond_displacement_blocks(fs40):
    alpha = 0.9 - 0.4j
    cd = gates.cond_displacement(fs40, alpha)
    n = fs40.N
    assert np.allclose(cd[:n, :n], gates.displacement(fs40, alpha / 2), atol=1e-12)
    assert np.allclose(cd[n:, n:], gates.displacement(fs40, -alpha / 2), atol=1e-12)
    assert not np.any(cd[:n, n:]) and not np.any(cd[n:, :n])


def test_cond_parity_blocks(fs24):
    cp = gates.cond_parity(fs24)
    n = fs24.N
    assert np.allclose(cp[:n, :n], np.eye(n))
    assert np.allclose(cp[n:, n:], fs24.parity)


def test_selective_pi_pulse_swaps_single_level(fs24):
    n = fs24.N
    u = gates.selective_pi_pulse(fs24, 4)
    assert _is_unitary(u)
    inp = np.zeros(2 * n, dtype=complex)
    inp[4] = 1.0
    out = u @ inp
    assert out[n + 4] == pytest.approx(1.0)  # |g,4> -> |e,4>
    inp2 = np.zeros(2 * n, dtype=complex)
    inp2[5] = 1.0
    assert np.allclose(u @ inp2, inp2)  # off-target levels untouched


def test_squeeze_narrows_x_quadrature(fs60):
    r = 0.5
    s = gates.squeeze(fs60, r)
    psi = s @ fock.vacuum(fs60)
    var_x = np.vdot(psi, fs60.x_op @ fs60.x_op @ psi).real
    assert var_x == pytest.approx(0.5 * np.exp(-2 * r), rel=1e-6)


def test_envelope_op_diagonal(fs24):
    env = gates.envelope_op(fs24, 0.3)
    assert np.allclose(np.diag(env), np.exp(-0.09 * np.arange(fs24.N)))
    with pytest.raises(ValueError):
        gates.envelope_op(fs24, -0.1)


def test_joint_lifts(fs24):
    op = np.diag(np.arange(fs24.N, dtype=complex))
    lifted = gates.joint_oscillator(fs24, op)
    assert lifted.shape == (2 * fs24.N, 2 * fs24.N)
    assert np.allclose(lifted[fs24.N:, fs24.N:], op)
    sz = np.diag([1.0, -1.0]).astype(complex)
    lifted_q = gates.joint_qubit(fs24, sz)
    assert np.allclose(np.diag(lifted_q), np.concatenate([np.ones(fs24.N), -np.ones(fs24.N)]))
