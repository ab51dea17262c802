"""Single-shot binary reward measurements on terminal joint states.

Every scheme is a callable taking the batch of final states (B, 2, N) and
the per-episode random generators, and returning one scalar reward per
episode.  All schemes share the same prelude: a sigma_z measurement of the
ancilla (outcome m1) followed by a ground-state flip, which disentangles
the qubit before the actual reward circuit runs.  Per episode the stream
order is: prelude uniform, then the scheme's own draws.

Schemes also expose exact expectation helpers used as oracles in tests and
as cheap evaluation metrics.
"""

from __future__ import annotations

import numpy as np

from . import env, fock, gates, tomography

_SQ = np.sqrt(0.5)
_MEAS_DIM_CAP = 420
_TAIL_TOL = 1e-6


def _uniforms(rngs, size: int | None = None) -> np.ndarray:
    if size is None:
        return np.array([r.uniform() for r in rngs])
    return np.stack([r.uniform(size=size) for r in rngs])


def disentangle_reset(states: np.ndarray, rngs) -> tuple[np.ndarray, np.ndarray]:
    """Measure the ancilla, flip to ground on -1; returns (states, m1)."""
    return env.measure_reset(states, _uniforms(rngs), reset=True)


def _rotate_qubit(states: np.ndarray, axis_angle: float, angle: float) -> np.ndarray:
    """Apply a qubit rotation to every episode of a (B, 2, N) batch."""
    r = gates.qubit_rotation(axis_angle, angle)
    g = states[:, 0, :]
    e = states[:, 1, :]
    out = np.empty_like(states)
    out[:, 0, :] = r[0, 0] * g + r[0, 1] * e
    out[:, 1, :] = r[1, 0] * g + r[1, 1] * e
    return out


def _cond_displace(fs: fock.FockSpace, states: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """CD(alpha): D(+alpha/2) on the ground block, D(-alpha/2) on the excited."""
    B, _, N = states.shape
    half = np.empty(2 * B, dtype=complex)
    half[0::2] = alphas / 2.0
    half[1::2] = -alphas / 2.0
    rows = env.displace_rows(fs, states.reshape(2 * B, N), half)
    return rows.reshape(B, 2, N)


def _pad_states(states: np.ndarray, M: int) -> np.ndarray:
    B, _, N = states.shape
    if M <= N:
        return states
    out = np.zeros((B, 2, M), dtype=complex)
    out[:, :, :N] = states
    return out


def _batch_support(states: np.ndarray, tol: float = 1e-12) -> int:
    """Largest effective Fock level across a (B, 2, N) batch."""
    w = np.sum(np.abs(states) ** 2, axis=(0, 1))
    rev = np.cumsum(w[::-1])
    keep = np.nonzero(rev > tol)[0]
    return int(states.shape[2] - keep[0]) if keep.size else 1


def _measurement_dim(states: np.ndarray, radius: float) -> int:
    """Fock dimension that keeps displacements by `radius` alias-free."""
    n_eff = _batch_support(states)
    need = int(np.ceil((radius + np.sqrt(n_eff + 1.0) + 4.0) ** 2))
    need = max(need, states.shape[2])
    if need > _MEAS_DIM_CAP:
        raise fock.TruncationLeakError(
            f"reward measurement needs {need} Fock levels (cap {_MEAS_DIM_CAP})")
    return need


def _check_tail(states: np.ndarray, guard: int, where: str) -> None:
    tail = np.sum(np.abs(states[:, :, -guard:]) ** 2, axis=(1, 2))
    if tail.max() > _TAIL_TOL:
        raise fock.TruncationLeakError(
            f"{where}: {tail.max():.3e} population within {guard} levels of the "
            "measurement truncation")


class FockReward:
    """Photon-number check: selective pi pulse on level n, R = -m2.

    After the prelude the qubit flips iff the oscillator holds exactly n
    photons, so the second measurement yields -1 (reward +1) with the
    population of |n>.
    """

    def __init__(self, level: int):
        if level < 0:
            raise ValueError("level must be non-negative")
        self.level = level

    def __call__(self, states: np.ndarray, rngs) -> np.ndarray:
        if self.level >= states.shape[2]:
            raise ValueError("target level outside the truncation")
        states, _ = disentangle_reset(states, rngs)
        n = self.level
        g_n = states[:, 0, n].copy()
        states[:, 0, n] = states[:, 1, n]
        states[:, 1, n] = g_n
        pg = np.sum(np.abs(states[:, 0, :]) ** 2, axis=1)
        m2 = np.where(_uniforms(rngs) < pg, 1.0, -1.0)
        return -m2

    def expected(self, state: np.ndarray) -> float:
        """Exact E[R] = 2 P(n) - 1 for a joint (2, N) state."""
        return 2.0 * float(np.sum(np.abs(state[:, self.level]) ** 2)) - 1.0


class TargetProjectorReward:
    """Idealized projective check on a known target: P(+1) = fidelity."""

    def __init__(self, target: np.ndarray):
        target = np.asarray(target, dtype=complex)
        norm = np.linalg.norm(target)
        if not norm > 0:
            raise ValueError("target state has zero norm")
        self.target = target / norm

    def __call__(self, states: np.ndarray, rngs) -> np.ndarray:
        if states.shape[2] != self.target.size:
            raise ValueError("target truncation does not match the batch")
        states, _ = disentangle_reset(states, rngs)
        amp = states[:, 0, :] @ np.conj(self.target)
        fid = np.abs(amp) ** 2
        return np.where(_uniforms(rngs) < fid, 1.0, -1.0)

    def expected(self, state: np.ndarray) -> float:
        """Exact E[R] = 2 F - 1 with F the joint overlap with target (x) |g>."""
        f = sum(abs(np.vdot(self.target, state[q])) ** 2 for q in (0, 1))
        return 2.0 * float(f) - 1.0


class WignerReward:
    """Importance-sampled displaced-parity estimator.

    Per episode, n_points phase-space points are drawn with probability
    proportional to |W_target|; each point is measured once by a displaced
    parity Ramsey circuit and the outcome is weighted by the sign of the
    target Wigner function.  The reward R = (2/k) sum_j m_j sgn W_t(alpha_j)
    satisfies E[R] = F / (1 + delta) with delta the target negativity.
    """

    def __init__(self, table: tomography.PhaseSpaceTable, n_points: int = 1,
                 target: np.ndarray | None = None, max_rows: int = 4096):
        if table.kind != "wigner":
            raise ValueError("WignerReward needs a Wigner table")
        self.table = table
        self.sampler = tomography.PhaseSpaceSampler(table)
        self.n_points = int(n_points)
        self.target = None if target is None else np.asarray(target, dtype=complex)
        self.max_rows = max_rows

    def __call__(self, states: np.ndarray, rngs) -> np.ndarray:
        states, _ = disentangle_reset(states, rngs)
        B = states.shape[0]
        k = self.n_points
        alphas = np.empty((B, k), dtype=complex)
        u = np.empty((B, k))
        for b, rng in enumerate(rngs):
            alphas[b] = self.sampler.draw(rng, k)
            u[b] = rng.uniform(size=k)
        signs = self.table.sign_at(alphas.ravel()).reshape(B, k)
        parities = self._measure_points(states, alphas)
        m = np.where(u < (1.0 + parities) / 2.0, 1.0, -1.0)
        return 2.0 * np.mean(m * signs, axis=1)

    def _measure_points(self, states: np.ndarray, alphas: np.ndarray) -> np.ndarray:
        """Exact <Pi> of D(-alpha) psi for each (episode, point) pair."""
        B, k = alphas.shape
        M = _measurement_dim(states, float(np.max(np.abs(alphas))))
        fsM = fock.cached_fock_space(M)
        par = np.real(np.diag(fsM.parity))
        out = np.empty((B, k))
        chunk = max(1, self.max_rows // k)
        for lo in range(0, B, chunk):
            hi = min(B, lo + chunk)
            ground = _pad_states(states[lo:hi], M)[:, 0, :]
            rows = np.repeat(ground, k, axis=0)
            disp = env.displace_rows(fsM, rows, -alphas[lo:hi].ravel())
            _check_tail(disp[:, None, :], max(2, M // 20), "Wigner reward")
            out[lo:hi] = (np.abs(disp) ** 2 @ par).reshape(hi - lo, k)
        return out

    def expected_point(self, psi: np.ndarray, alpha: complex) -> float:
        """Oracle <Pi> after D(-alpha) for one oscillator state."""
        states = np.zeros((1, 2, psi.size), dtype=complex)
        states[0, 0] = psi
        return float(self._measure_points(states, np.array([[alpha]]))[0, 0])

    def expected(self, state: np.ndarray) -> float:
        """E[R] = F / (1 + delta); needs the target state to be attached."""
        if self.target is None:
            raise ValueError("attach the target state to compute expectations")
        f = sum(abs(np.vdot(self.target, state[q])) ** 2 for q in (0, 1))
        return float(f) / (1.0 + self.table.delta_excess)


class CharFnReward:
    """Characteristic-function estimator from single-shot Ramsey interferometry.

    Points are drawn with probability proportional to |Re C_target|; the
    conditional displacement CD(alpha) between two pi/2 rotations gives
    E[m | alpha] = Re C_state(alpha), and outcomes are weighted by the sign
    of the target characteristic function.
    """

    def __init__(self, table: tomography.PhaseSpaceTable, n_points: int = 1,
                 target: np.ndarray | None = None, max_rows: int = 4096):
        if table.kind != "char":
            raise ValueError("CharFnReward needs a characteristic-function table")
        self.table = table
        self.sampler = tomography.PhaseSpaceSampler(table)
        self.n_points = int(n_points)
        self.target = None if target is None else np.asarray(target, dtype=complex)
        self.max_rows = max_rows

    def __call__(self, states: np.ndarray, rngs) -> np.ndarray:
        states, _ = disentangle_reset(states, rngs)
        B = states.shape[0]
        k = self.n_points
        alphas = np.empty((B, k), dtype=complex)
        u = np.empty((B, k))
        for b, rng in enumerate(rngs):
            alphas[b] = self.sampler.draw(rng, k)
            u[b] = rng.uniform(size=k)
        signs = self.table.sign_at(alphas.ravel()).reshape(B, k)
        re_c = self._measure_points(states, alphas)
        m = np.where(u < (1.0 + re_c) / 2.0, 1.0, -1.0)
        return 2.0 * np.mean(m * signs, axis=1)

    def _measure_points(self, states: np.ndarray, alphas: np.ndarray) -> np.ndarray:
        """Exact Re<D(-alpha)> per (episode, point); equals Re C at -alpha."""
        B, k = alphas.shape
        M = _measurement_dim(states, float(np.max(np.abs(alphas))) / 2.0 + 1.0)
        fsM = fock.cached_fock_space(M)
        out = np.empty((B, k))
        chunk = max(1, self.max_rows // k)
        for lo in range(0, B, chunk):
            hi = min(B, lo + chunk)
            ground = _pad_states(states[lo:hi], M)[:, 0, :]
            rows = np.repeat(ground, k, axis=0)
            a = alphas[lo:hi].ravel()
            plus = env.displace_rows(fsM, rows, a / 2.0)
            minus = env.displace_rows(fsM, rows, -a / 2.0)
            _check_tail(plus[:, None, :], max(2, M // 20), "char-fn reward")
            ov = np.sum(np.conj(plus) * minus, axis=1)
            out[lo:hi] = ov.real.reshape(hi - lo, k)
        return out

    def expected_point(self, psi: np.ndarray, alpha: complex) -> float:
        states = np.zeros((1, 2, psi.size), dtype=complex)
        states[0, 0] = psi
        return float(self._measure_points(states, np.array([[alpha]]))[0, 0])


class StabilizerReward:
    """Approximate finite-energy grid-stabilizer measurement, R = m2.

    One quadrature (x or p) is drawn uniformly per episode.  With direction
    u = 1 or i, the circuit is, in order of application:

        Ry(pi/2), CD(u L cosh D^2), Rx(pi/2), CD(-i u L sinh D^2), Ry(-pi/2)

    followed by a sigma_z measurement, with L the stabilizer displacement
    length (sqrt(pi) for the 1d grid).  The sign and ordering were fixed
    numerically so that the expectation on the exact finite-energy grid
    state reproduces (<S_x> + <S_p>) / 2 to a few parts in a thousand.
    """

    def __init__(self, delta: float, spacing: float = float(np.sqrt(np.pi))):
        if delta <= 0:
            raise ValueError("delta must be positive")
        self.delta = delta
        self.spacing = spacing
        self.big = spacing * np.cosh(delta**2)
        self.trim = spacing * np.sinh(delta**2)

    def _sequence(self, states: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Run the measurement circuit; returns P(+1) per episode."""
        fs = fock.cached_fock_space(states.shape[2])
        u = np.where(dirs == 0, 1.0 + 0.0j, 1.0j)
        states = _rotate_qubit(states, np.pi / 2, np.pi / 2)
        states = _cond_displace(fs, states, u * self.big)
        states = _rotate_qubit(states, 0.0, np.pi / 2)
        states = _cond_displace(fs, states, -1j * u * self.trim)
        states = _rotate_qubit(states, np.pi / 2, -np.pi / 2)
        _check_tail(states, max(2, states.shape[2] // 20), "stabilizer reward")
        return np.sum(np.abs(states[:, 0, :]) ** 2, axis=1)

    def __call__(self, states: np.ndarray, rngs) -> np.ndarray:
        states, _ = disentangle_reset(states, rngs)
        dirs = np.array([r.integers(2) for r in rngs])
        pg = self._sequence(states, dirs)
        m2 = np.where(_uniforms(rngs) < pg, 1.0, -1.0)
        return m2

    def expected(self, state: np.ndarray) -> float:
        """Exact E[m2] for a joint (2, N) state, averaged over direction."""
        total = 0.0
        for q in (0, 1):
            w = float(np.sum(np.abs(state[q]) ** 2))
            if w < 1e-15:
                continue
            block = np.zeros((1, 2, state.shape[1]), dtype=complex)
            block[0, 0] = state[q] / np.sqrt(w)
            for d in (0, 1):
                pg = self._sequence(block.copy(), np.array([d]))[0]
                total += 0.5 * w * (2.0 * pg - 1.0)
        return total


def make_reward(kind: str, **params):
    """Factory for reward schemes from flat configuration values."""
    if kind == "fock":
        return FockReward(level=int(params["level"]))
    if kind == "projector":
        return TargetProjectorReward(target=params["target"])
    if kind == "wigner":
        return WignerReward(table=params["table"],
                            n_points=int(params.get("n_points", 1)),
                            target=params.get("target"))
    if kind == "char":
        return CharFnReward(table=params["table"],
                            n_points=int(params.get("n_points", 1)),
                            target=params.get("target"))
    if kind == "stabilizer":
        return StabilizerReward(delta=float(params["delta"]),
                                spacing=float(params.get("spacing", np.sqrt(np.pi))))
    raise ValueError(f"unknown reward kind {kind!r}")
