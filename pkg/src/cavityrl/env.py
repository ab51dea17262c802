"""Measurement-driven control environment for an oscillator with an ancilla qubit.

The hidden state is a normalized joint vector in C^2 (x) C^N stored as
(2, N): row 0 is the qubit ground block, row 1 the excited block.  Each of
the T steps applies a displaced phase gate D(-alpha) S(phi) D(alpha); in the
feedback variants the qubit is then measured along sigma_z and flipped back
to ground on a -1 outcome, with the outcome fed into the next observation.

Episodes run in vectorized batches of shape (B, 2, N).  Every episode owns
an independent random stream spawned from one seed, so results do not
depend on the batch layout.  Rewards are terminal only and are produced by
a scheme callback operating on the batch of final states.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import fock, gates

SQRT2 = np.sqrt(2.0)

CIRCUIT_KINDS = ("openloop_ideal", "openloop_finite", "feedback_finite", "feedback_ideal")
NORM_TOL = 1e-8
MAX_BRANCH_STEPS = 12


@dataclass(frozen=True)
class EnvConfig:
    """Static description of one control task.

    alpha_scale bounds the displacement amplitude: the two raw action
    channels map through (alpha_scale / sqrt(2)) * tanh, so |alpha| never
    exceeds alpha_scale.  Phase channels map through phase_scale * tanh.
    """

    N: int
    T: int
    n_phases: int
    circuit: str = "openloop_ideal"
    chi_tau: float = 0.0
    alpha_scale: float = 2.0
    phase_scale: float = np.pi
    guard_levels: int = 0          # 0 -> max(2, N // 10)
    leak_max: float = 1e-6

    def __post_init__(self):
        if self.circuit not in CIRCUIT_KINDS:
            raise ValueError(f"unknown circuit kind {self.circuit!r}")
        if self.N < 2 or self.T < 1 or self.n_phases < 1:
            raise ValueError("N >= 2, T >= 1 and n_phases >= 1 required")
        if self.n_phases > self.N:
            raise ValueError("cannot drive more levels than the truncation holds")
        if self.circuit.endswith("finite") and not self.chi_tau > 0:
            raise ValueError("finite-duration circuits need chi_tau > 0")
        if self.alpha_scale <= 0 or self.phase_scale <= 0:
            raise ValueError("action scales must be positive")

    @property
    def action_dim(self) -> int:
        return 2 + self.n_phases

    @property
    def obs_dim(self) -> int:
        return self.T + 1

    @property
    def uses_feedback(self) -> bool:
        return self.circuit.startswith("feedback")

    @property
    def ideal_snap(self) -> bool:
        return self.circuit.endswith("ideal")

    @property
    def effective_guard(self) -> int:
        return self.guard_levels if self.guard_levels > 0 else max(2, self.N // 10)


def map_actions(raw: np.ndarray, cfg: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    """Squash raw actions to (complex displacement, SNAP phases).

    Accepts (..., action_dim); returns alphas (...,) and phases (..., n_phases).
    """
    raw = np.asarray(raw, dtype=float)
    quad = (cfg.alpha_scale / SQRT2) * np.tanh(raw[..., :2])
    alphas = quad[..., 0] + 1j * quad[..., 1]
    phases = cfg.phase_scale * np.tanh(raw[..., 2:])
    return alphas, phases


def make_observation(t: int, prev_outcome: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    """Clock one-hot of length T joined with the previous measurement outcome."""
    B = prev_outcome.shape[0]
    obs = np.zeros((B, cfg.obs_dim))
    obs[:, t] = 1.0
    if cfg.uses_feedback and t > 0:
        obs[:, cfg.T] = prev_outcome
    return obs


@dataclass
class EpisodeBatch:
    """Struct-of-arrays record of one batch of episodes."""

    obs: np.ndarray          # (B, T, obs_dim)
    raw_actions: np.ndarray  # (B, T, action_dim)
    log_probs: np.ndarray    # (B, T)
    values: np.ndarray       # (B, T)
    outcomes: np.ndarray     # (B, T) int8, 0 where no measurement happened
    rewards: np.ndarray      # (B,)
    final_states: np.ndarray | None = None  # (B, 2, N) complex

    @property
    def batch_size(self) -> int:
        return self.obs.shape[0]

    @property
    def horizon(self) -> int:
        return self.obs.shape[1]


def displace_rows(fs: fock.FockSpace, rows: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """Apply D(alpha_m) to row m of a (M, N) array via the split quadrature form."""
    alphas = np.asarray(alphas, dtype=complex)
    re = alphas.real
    im = alphas.imag
    v = rows @ np.conj(fs.p_vecs)
    v *= np.exp(-1j * SQRT2 * np.multiply.outer(re, fs.p_vals))
    v = v @ fs.p_vecs.T
    v = v @ np.conj(fs.x_vecs)
    v *= np.exp(1j * SQRT2 * np.multiply.outer(im, fs.x_vals))
    v = v @ fs.x_vecs.T
    v *= np.exp(-1j * im * re)[:, None]
    return v


def measure_reset(states: np.ndarray, uniforms: np.ndarray,
                  reset: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Projective sigma_z measurement on a (B, 2, N) batch, ground flip optional.

    Returns the collapsed (copied) states and int8 outcomes; checks that the
    two block populations are complete to NORM_TOL.
    """
    pg = np.sum(np.abs(states[:, 0, :]) ** 2, axis=1)
    pe = np.sum(np.abs(states[:, 1, :]) ** 2, axis=1)
    bad = np.abs(pg + pe - 1.0)
    if bad.max() > NORM_TOL:
        raise fock.TruncationLeakError(
            f"state norm drifted by {bad.max():.3e} before measurement")
    plus = uniforms < pg
    outcomes = np.where(plus, 1, -1).astype(np.int8)
    states = states.copy()
    states[plus, 1, :] = 0.0
    states[~plus, 0, :] = 0.0
    p_kept = np.where(plus, pg, pe)
    states /= np.sqrt(p_kept)[:, None, None]
    if reset:
        states[~plus] = states[~plus][:, ::-1, :]
    return states, outcomes


@dataclass
class Branch:
    """One measurement history of a deterministic policy."""

    prob: float
    outcomes: tuple[int, ...]
    raw_actions: np.ndarray   # (T, action_dim)
    state: np.ndarray         # (2, N) normalized


class _Engine:
    """Cached operators for one (N, chi_tau, n_phases) configuration."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.fs = fock.build_fock_space(cfg.N)
        fs = self.fs
        self._Ux_conj = np.conj(fs.x_vecs)
        self._Ux_T = fs.x_vecs.T.copy()
        self._Up_conj = np.conj(fs.p_vecs)
        self._Up_T = fs.p_vecs.T.copy()
        self._x_vals = fs.x_vals
        self._p_vals = fs.p_vals

    def initial_joint(self, osc: np.ndarray | None) -> np.ndarray:
        """Joint (2, N) state with the qubit in ground."""
        out = np.zeros((2, self.cfg.N), dtype=complex)
        if osc is None:
            out[0, 0] = 1.0
        else:
            osc = np.asarray(osc, dtype=complex)
            if osc.shape == (2, self.cfg.N):
                return osc.copy()
            if osc.shape != (self.cfg.N,):
                raise ValueError("initial state must have shape (N,) or (2, N)")
            out[0] = osc
        return out

    def displace_batch(self, states: np.ndarray, alphas: np.ndarray) -> np.ndarray:
        """D(alpha) on the oscillator of a (B, 2, N) batch."""
        B, _, N = states.shape
        rows = states.reshape(B * 2, N)
        re = alphas.real
        im = alphas.imag
        rep_re = np.repeat(re, 2)
        rep_im = np.repeat(im, 2)
        v = rows @ self._Up_conj
        v *= np.exp(-1j * SQRT2 * np.multiply.outer(rep_re, self._p_vals))
        v = v @ self._Up_T
        v = v @ self._Ux_conj
        v *= np.exp(1j * SQRT2 * np.multiply.outer(rep_im, self._x_vals))
        v = v @ self._Ux_T
        v *= np.exp(-1j * rep_im * rep_re)[:, None]
        return v.reshape(B, 2, N)

    def snap_batch(self, states: np.ndarray, phases: np.ndarray) -> np.ndarray:
        """SNAP on a (B, 2, N) batch; ideal or finite-duration per config."""
        cfg = self.cfg
        B, _, N = states.shape
        if cfg.ideal_snap:
            pad = np.zeros((B, N))
            pad[:, : cfg.n_phases] = phases
            return states * np.exp(1j * pad)[:, None, :]
        sx, sy = gates.snap_axis_components(cfg.chi_tau, phases, N)
        r = 0.5 * np.pi * np.hypot(sx, sy)
        c = np.cos(r)
        s_fac = 0.5 * np.pi * np.sinc(r / np.pi)
        upper = -1j * s_fac * (sx + 1j * sy)
        lower = -1j * s_fac * (sx - 1j * sy)
        g = states[:, 0, :]
        e = states[:, 1, :]
        out = np.empty_like(states)
        out[:, 0, :] = -1j * (upper * g + c * e)
        out[:, 1, :] = -1j * (c * g + lower * e)
        return out

    def control_step(self, states: np.ndarray, raw: np.ndarray) -> np.ndarray:
        """One displaced-SNAP block D(-a) S(phi) D(a) on a (B, 2, N) batch."""
        alphas, phases = map_actions(raw, self.cfg)
        states = self.displace_batch(states, alphas)
        states = self.snap_batch(states, phases)
        states = self.displace_batch(states, -alphas)
        return states

    def check_tails(self, states: np.ndarray) -> None:
        cfg = self.cfg
        guard = cfg.effective_guard
        tail = np.sum(np.abs(states[:, :, cfg.N - guard:]) ** 2, axis=(1, 2))
        worst = int(np.argmax(tail))
        if tail[worst] > cfg.leak_max:
            raise fock.TruncationLeakError(
                f"episode {worst} holds {tail[worst]:.3e} population in the top "
                f"{guard} of {cfg.N} levels (limit {cfg.leak_max:.1e})")

    def measure_reset(self, states: np.ndarray, uniforms: np.ndarray):
        """sigma_z measurement with ground reset; returns (states, outcomes)."""
        return measure_reset(states, uniforms, reset=True)


_ENGINE_CACHE: dict[tuple, _Engine] = {}


def get_engine(cfg: EnvConfig) -> _Engine:
    key = (cfg.N, cfg.T, cfg.n_phases, cfg.circuit, cfg.chi_tau,
           cfg.alpha_scale, cfg.phase_scale, cfg.guard_levels, cfg.leak_max)
    eng = _ENGINE_CACHE.get(key)
    if eng is None:
        eng = _Engine(cfg)
        if len(_ENGINE_CACHE) > 8:
            _ENGINE_CACHE.clear()
        _ENGINE_CACHE[key] = eng
    return eng


def spawn_streams(seed, batch: int) -> list[np.random.Generator]:
    """Independent per-episode generators from one root seed or SeedSequence."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in root.spawn(batch)]


def run_batch(agent, cfg: EnvConfig, batch_size: int, seed: int,
              reward_fn=None, initial_states: np.ndarray | None = None,
              stochastic: bool = True, record_states: bool = True) -> EpisodeBatch:
    """Roll out a batch of episodes and collect terminal rewards.

    Per episode and step the stream order is: action noise (if stochastic),
    then the measurement uniform (feedback circuits only).  The reward
    scheme draws afterwards from the same per-episode streams.
    """
    engine = get_engine(cfg)
    B, T, A = batch_size, cfg.T, cfg.action_dim
    rngs = spawn_streams(seed, B)

    if initial_states is None or initial_states.ndim <= 2:
        states = np.tile(engine.initial_joint(initial_states), (B, 1, 1))
    else:
        states = initial_states.astype(complex).copy()

    obs_all = np.zeros((B, T, cfg.obs_dim))
    raw_all = np.zeros((B, T, A))
    logp_all = np.zeros((B, T))
    val_all = np.zeros((B, T))
    out_all = np.zeros((B, T), dtype=np.int8)

    hidden = agent.begin(B)
    prev = np.zeros(B)
    for t in range(T):
        obs = make_observation(t, prev, cfg)
        if stochastic:
            z = np.stack([rng.standard_normal(A) for rng in rngs])
            raw, logp, value, hidden = agent.sample_step(obs, hidden, z)
        else:
            raw, hidden = agent.mean_step(obs, hidden)
            logp = np.zeros(B)
            value = np.zeros(B)
        states = engine.control_step(states, raw)
        engine.check_tails(states)
        if cfg.uses_feedback:
            u = np.array([rng.uniform() for rng in rngs])
            states, outcomes = engine.measure_reset(states, u)
            out_all[:, t] = outcomes
            prev = outcomes.astype(float)
        obs_all[:, t] = obs
        raw_all[:, t] = raw
        logp_all[:, t] = logp
        val_all[:, t] = value

    rewards = np.zeros(B) if reward_fn is None else np.asarray(reward_fn(states, rngs), dtype=float)
    return EpisodeBatch(obs_all, raw_all, logp_all, val_all, out_all, rewards,
                        states if record_states else None)


def run_episode(agent, cfg: EnvConfig, seed: int, reward_fn=None) -> EpisodeBatch:
    """Single-episode convenience wrapper around run_batch."""
    return run_batch(agent, cfg, 1, seed, reward_fn=reward_fn)


def enumerate_branches(agent, cfg: EnvConfig,
                       initial_state: np.ndarray | None = None,
                       prune_tol: float = 1e-12) -> list[Branch]:
    """All measurement histories of the deterministic (mean) policy.

    Feedback circuits branch on each outcome, up to 2^T leaves; horizons
    beyond MAX_BRANCH_STEPS are refused.  Open-loop circuits yield the one
    deterministic branch.  Branch probabilities sum to 1 up to pruning.
    """
    if cfg.T > MAX_BRANCH_STEPS:
        raise ValueError(f"branch enumeration supports T <= {MAX_BRANCH_STEPS}")
    engine = get_engine(cfg)
    init = engine.initial_joint(initial_state)
    frontier = [(1.0, (), [], init, agent.begin(1), 0.0)]
    for t in range(cfg.T):
        nxt = []
        for prob, outs, raws, state, hidden, prev in frontier:
            obs = make_observation(t, np.array([prev]), cfg)
            raw, hidden = agent.mean_step(obs, hidden)
            new_state = engine.control_step(state[None], raw)[0]
            if not cfg.uses_feedback:
                nxt.append((prob, outs, raws + [raw[0]], new_state, hidden, 0.0))
                continue
            pg = float(np.sum(np.abs(new_state[0]) ** 2))
            pe = float(np.sum(np.abs(new_state[1]) ** 2))
            if abs(pg + pe - 1.0) > NORM_TOL:
                raise fock.TruncationLeakError("branch norm drifted beyond tolerance")
            for outcome, p in ((1, pg), (-1, pe)):
                joint = prob * p
                if joint <= prune_tol:
                    continue
                collapsed = new_state.copy()
                collapsed[(outcome + 1) // 2] = 0.0  # +1 keeps row 0, -1 keeps row 1
                collapsed /= np.sqrt(p)
                if outcome == -1:
                    collapsed = collapsed[::-1].copy()
                child_hidden = _copy_hidden(hidden)
                nxt.append((joint, outs + (outcome,), raws + [raw[0]],
                            collapsed, child_hidden, float(outcome)))
        frontier = nxt
    return [Branch(prob, outs, np.array(raws), state)
            for prob, outs, raws, state, _, _ in frontier]


def _copy_hidden(hidden):
    if hidden is None:
        return None
    if isinstance(hidden, tuple):
        return tuple(_copy_hidden(h) for h in hidden)
    if isinstance(hidden, np.ndarray):
        return hidden.copy()
    return hidden


def branch_total_probability(branches: list[Branch]) -> float:
    return float(sum(b.prob for b in branches))


def evaluate_policy(agent, cfg: EnvConfig, target: np.ndarray | None = None,
                    metric: str = "fidelity", ops: list[np.ndarray] | None = None,
                    initial_state: np.ndarray | None = None) -> dict:
    """Deterministic evaluation of the mean policy.

    metric "fidelity": branch-averaged |<target, g | psi_T>|^2 against an
    oscillator target of shape (N,).  metric "expectation": branch-averaged
    mean of Re<psi| O (x) I_2 |psi> over the supplied (N, N) operators.
    """
    branches = enumerate_branches(agent, cfg, initial_state=initial_state)
    total = branch_total_probability(branches)
    if abs(total - 1.0) > 1e-8:
        raise fock.TruncationLeakError(f"branch probabilities sum to {total:.10f}")
    if metric == "fidelity":
        if target is None:
            raise ValueError("fidelity metric needs a target state")
        target = np.asarray(target, dtype=complex)
        score = sum(b.prob * abs(np.vdot(target, b.state[0])) ** 2 for b in branches)
    elif metric == "expectation":
        if not ops:
            raise ValueError("expectation metric needs operators")
        score = 0.0
        for b in branches:
            vals = [sum(np.vdot(b.state[q], op @ b.state[q]).real for q in (0, 1))
                    for op in ops]
            score += b.prob * float(np.mean(vals))
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return {"metric": float(score), "branches": branches}


# ---------------------------------------------------------------------------
# Single-qubit flip demo task
# ---------------------------------------------------------------------------

def qubit_flip_expected(a: float) -> float:
    """Exact mean reward of the one-parameter qubit flip at drive amplitude a."""
    return 2.0 * np.sin(np.pi * a) ** 2 - 1.0


def run_qubit_flip_batch(agent, batch_size: int, seed: int) -> EpisodeBatch:
    """One-step task: drive exp(-i pi a sigma_x) on |g>, reward R = -m.

    The raw action squashes through tanh, so the optimum sits at
    tanh(raw) = 1/2 where the flip probability is one.
    """
    rngs = spawn_streams(seed, batch_size)
    B = batch_size
    obs = np.zeros((B, 1, 2))
    obs[:, 0, 0] = 1.0
    hidden = agent.begin(B)
    z = np.stack([rng.standard_normal(1) for rng in rngs])
    raw, logp, value, _ = agent.sample_step(obs[:, 0], hidden, z)
    a = np.tanh(raw[:, 0])
    p_flip = np.sin(np.pi * a) ** 2
    u = np.array([rng.uniform() for rng in rngs])
    m = np.where(u < p_flip, -1, 1)   # -1: qubit found excited
    rewards = -m.astype(float)
    return EpisodeBatch(obs, raw[:, None, :], logp[:, None], value[:, None],
                        m[:, None].astype(np.int8), rewards, None)


# ---------------------------------------------------------------------------
# Binary episode container
# ---------------------------------------------------------------------------

_MAGIC = b"QRLE"
_VERSION = 1


def save_episodes(path, batch: EpisodeBatch, meta: dict | None = None) -> None:
    """Write episodes as a little-endian binary container.

    Layout: magic, uint32 version, uint64 JSON-header length, JSON header
    (shapes and reward/outcome dtypes), then the arrays obs, raw_actions,
    log_probs, values, outcomes (int8) and rewards, each little-endian.
    """
    header = {
        "batch": int(batch.batch_size),
        "horizon": int(batch.horizon),
        "obs_dim": int(batch.obs.shape[2]),
        "action_dim": int(batch.raw_actions.shape[2]),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in (batch.obs, batch.raw_actions, batch.log_probs, batch.values):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(batch.outcomes, dtype="<i1").tobytes())
        fh.write(np.ascontiguousarray(batch.rewards, dtype="<f8").tobytes())


def load_episodes(path) -> tuple[EpisodeBatch, dict]:
    """Read a container written by save_episodes; returns (batch, meta)."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not an episode container")
        version = struct.unpack("<I", fh.read(4))[0]
        if version != _VERSION:
            raise ValueError(f"unsupported episode container version {version}")
        hlen = struct.unpack("<Q", fh.read(8))[0]
        header = json.loads(fh.read(hlen).decode())
        B, T = header["batch"], header["horizon"]
        D, A = header["obs_dim"], header["action_dim"]

        def take(shape, dtype):
            count = int(np.prod(shape))
            arr = np.frombuffer(fh.read(count * np.dtype(dtype).itemsize), dtype=dtype)
            return arr.reshape(shape).copy()

        obs = take((B, T, D), "<f8")
        raw = take((B, T, A), "<f8")
        logp = take((B, T), "<f8")
        val = take((B, T), "<f8")
        outs = take((B, T), "<i1")
        rew = take((B,), "<f8")
    return EpisodeBatch(obs, raw, logp, val, outs, rew, None), header["meta"]
