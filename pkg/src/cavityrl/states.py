"""Target oscillator states for the control experiments.

All constructors return normalized (N,) complex vectors.  Grid states follow
the finite-energy convention: an ideal comb of displaced squeezed peaks is
damped by the envelope e^{-Delta^2 n} and renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fock import FockSpace, fock_state, normalize, vacuum
from .gates import displacement, envelope_op, squeeze

SQRT_PI = np.sqrt(np.pi)


@dataclass(frozen=True)
class TargetSpec:
    """Declarative description of a target state.

    kind: one of fock, coherent, cat, binomial, gkp1d, gkp_qubit.
    params: kind-specific, see make_target.
    """

    kind: str
    params: dict = field(default_factory=dict)


def coherent(fs: FockSpace, alpha: complex) -> np.ndarray:
    """Coherent state from its closed-form Fock amplitudes e^{-|a|^2/2} a^k / sqrt(k!)."""
    alpha = complex(alpha)
    if alpha == 0:
        return vacuum(fs)
    k = np.arange(fs.N)
    log_fact = np.concatenate([[0.0], np.cumsum(np.log(np.arange(1, fs.N)))])
    amps = np.exp(-0.5 * abs(alpha) ** 2 + k * np.log(alpha) - 0.5 * log_fact)
    return amps.astype(complex)


def cat(fs: FockSpace, beta: complex, sign: int = +1) -> np.ndarray:
    """Even (+1) or odd (-1) superposition of |beta> and |-beta>."""
    if sign not in (+1, -1):
        raise ValueError("cat sign must be +1 or -1")
    return normalize(coherent(fs, beta) + sign * coherent(fs, -beta))


def binomial(fs: FockSpace, amplitudes: dict[int, complex]) -> np.ndarray:
    """Sparse Fock superposition sum_n c_n |n>, normalized."""
    out = np.zeros(fs.N, dtype=complex)
    for n, c in amplitudes.items():
        if not 0 <= n < fs.N:
            raise ValueError(f"level {n} outside truncation {fs.N}")
        out[n] = c
    return normalize(out)


def _conjugated_displacement(fs: FockSpace, delta: float, beta: float) -> np.ndarray:
    """E_Delta D(beta) E_Delta^{-1} for real beta (non-unitary comb translator)."""
    gen = beta * np.exp(-(delta**2)) * fs.adag - beta * np.exp(delta**2) * fs.a
    from .fock import matexp_reference

    return matexp_reference(gen)


def _grid_comb(fs: FockSpace, delta: float, spacing: float, offsets) -> np.ndarray:
    """Envelope of an ideal peak comb: sum_t E D(o_t * spacing) E^{-1} S(r_eff)|0>.

    Applying the envelope to an ideal (infinitely squeezed) comb is the same
    as translating an r_eff = atanh(e^{-2 Delta^2}) squeezed seed with the
    envelope-conjugated displacements; this keeps the grid state an exact
    eigenstate of the finite-energy stabilizers up to comb and Fock
    truncation.
    """
    r_eff = np.arctanh(np.exp(-2.0 * delta**2))
    seed = squeeze(fs, r_eff, leak_max=None) @ vacuum(fs)
    comb = np.zeros(fs.N, dtype=complex)
    for off in offsets:
        comb += _conjugated_displacement(fs, delta, off * spacing) @ seed
    return comb


def gkp1d(fs: FockSpace, delta: float, n_peaks: int | None = None) -> np.ndarray:
    """One-dimensional grid state with envelope width Delta.

    A symmetric comb of 2K+1 peaks spaced sqrt(pi) in displacement
    amplitude, K = ceil(3 / (sqrt(pi) Delta)) unless n_peaks overrides it.
    Needs roughly N >= 2.5 (K sqrt(pi))^2 Fock levels; at Delta = 0.35 the
    state is well converged by N = 200.
    """
    if not 0 < delta < 1:
        raise ValueError("envelope delta must lie in (0, 1)")
    K = n_peaks if n_peaks is not None else int(np.ceil(3.0 / (SQRT_PI * delta)))
    comb = _grid_comb(fs, delta, SQRT_PI, range(-K, K + 1))
    return normalize(comb)


def gkp_stabilizers(fs: FockSpace, delta: float, lattice: str = "1d") -> tuple[np.ndarray, np.ndarray]:
    """Finite-energy stabilizer pair (S_x, S_p) = E D(beta) E^{-1}.

    lattice "1d" uses beta = sqrt(pi); "square" (the qubit code) uses
    beta = sqrt(2 pi).  Non-unitary matrices; expectation values on the
    matching grid state approach 1 as the state quality improves.
    """
    beta = SQRT_PI if lattice == "1d" else np.sqrt(2.0 * np.pi)
    env = envelope_op(fs, delta)
    env_inv = np.diag(np.exp((delta**2) * np.arange(fs.N)).astype(complex))
    sx = env @ displacement(fs, beta, leak_max=None) @ env_inv
    sp = env @ displacement(fs, 1j * beta, leak_max=None) @ env_inv
    return sx, sp


_CARDINAL_AMPS = {
    "+Z": (1.0, 0.0),
    "-Z": (0.0, 1.0),
    "+X": (1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)),
    "-X": (1.0 / np.sqrt(2.0), -1.0 / np.sqrt(2.0)),
    "+Y": (1.0 / np.sqrt(2.0), 1.0j / np.sqrt(2.0)),
    "-Y": (1.0 / np.sqrt(2.0), -1.0j / np.sqrt(2.0)),
}

CARDINAL_LABELS = tuple(_CARDINAL_AMPS.keys())


def cardinal_amplitudes(label: str) -> tuple[complex, complex]:
    """Logical (c0, c1) for the six cardinal points of the Bloch sphere."""
    if label not in _CARDINAL_AMPS:
        raise ValueError(f"unknown cardinal label {label!r}")
    return _CARDINAL_AMPS[label]


def gkp_qubit_logical(fs: FockSpace, delta: float, label: str,
                      n_peaks: int = 2) -> np.ndarray:
    """Finite-energy square-lattice logical state at a Bloch cardinal point.

    Codeword combs are spaced sqrt(2 pi) in displacement amplitude with
    |1_L> offset by half a period; both windows are symmetric about the
    origin.  The default K = 2 balances comb completeness against Fock
    truncation at the N = 150 working size for Delta around 0.3.
    """
    c0, c1 = cardinal_amplitudes(label)
    K = n_peaks
    spacing = np.sqrt(2.0 * np.pi)
    comb = np.zeros(fs.N, dtype=complex)
    if c0 != 0:
        comb += c0 * _grid_comb(fs, delta, spacing, range(-K, K + 1))
    if c1 != 0:
        comb += c1 * _grid_comb(fs, delta, spacing,
                                [t + 0.5 for t in range(-K - 1, K + 1)])
    return normalize(comb)


def fock_qubit_logical(fs: FockSpace, label: str) -> np.ndarray:
    """Fock-encoding logical state: |0_L> = |0>, |1_L> = |1>."""
    c0, c1 = cardinal_amplitudes(label)
    return normalize(c0 * fock_state(fs, 0) + c1 * fock_state(fs, 1))


def make_target(fs: FockSpace, spec: TargetSpec) -> np.ndarray:
    """Build the target state described by spec on the given Fock space."""
    kind, p = spec.kind, spec.params
    if kind == "fock":
        return fock_state(fs, int(p["n"]))
    if kind == "coherent":
        return normalize(coherent(fs, complex(p["alpha"])))
    if kind == "cat":
        return cat(fs, complex(p["beta"]), int(p.get("sign", +1)))
    if kind == "binomial":
        return binomial(fs, p["amplitudes"])
    if kind == "gkp1d":
        return gkp1d(fs, float(p.get("delta", 0.35)))
    if kind == "gkp_qubit":
        return gkp_qubit_logical(fs, float(p.get("delta", 0.3)), p["label"])
    if kind == "fock_qubit":
        return fock_qubit_logical(fs, p["label"])
    raise ValueError(f"unknown target kind {kind!r}")
