"""Episode engine: action maps, control steps, measurement, determinism."""

import numpy as np
import pytest

from cavityrl import env, fock, gates, neural
from cavityrl.baselines import OpenLoopParamAgent
from conftest import random_joint_state, random_osc_state

STEP_ATOL = 1e-11
NORM_ATOL = 1e-10


def make_cfg(**kw):
    base = dict(N=24, T=3, n_phases=4, circuit="openloop_ideal")
    base.update(kw)
    return env.EnvConfig(**base)


def make_agent(cfg, seed=0):
    rng = np.random.default_rng(seed)
    policy = neural.RecurrentGaussianPolicy(rng, cfg.obs_dim, cfg.action_dim, 8, (16,))
    value = neural.ValueNetwork(rng, cfg.obs_dim, 8, (16,))
    return neural.NeuralAgent(policy, value)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(circuit="mystery"),
    dict(N=1),
    dict(T=0),
    dict(n_phases=0),
    dict(n_phases=25),
    dict(circuit="feedback_finite"),       # chi_tau missing
    dict(alpha_scale=0.0),
    dict(phase_scale=-1.0),
])
def test_config_rejects_bad_values(kw):
    with pytest.raises(ValueError):
        make_cfg(**kw)


def test_config_properties():
    cfg = make_cfg(N=50, T=5, n_phases=7)
    assert cfg.action_dim == 9
    assert cfg.obs_dim == 6
    assert not cfg.uses_feedback and cfg.ideal_snap
    assert cfg.effective_guard == 5
    fb = make_cfg(circuit="feedback_finite", chi_tau=0.4, guard_levels=3)
    assert fb.uses_feedback and not fb.ideal_snap
    assert fb.effective_guard == 3


def test_map_actions_bounds_and_center():
    cfg = make_cfg(alpha_scale=1.7, phase_scale=2.0)
    zero = np.zeros(cfg.action_dim)
    alphas, phases = env.map_actions(zero, cfg)
    assert alphas == 0.0 and np.all(phases == 0.0)
    big = 50.0 * np.ones((5, cfg.action_dim))
    alphas, phases = env.map_actions(big, cfg)
    assert np.all(np.abs(alphas) <= cfg.alpha_scale + 1e-12)
    assert np.allclose(np.abs(alphas), cfg.alpha_scale)   # saturated corner
    assert np.allclose(phases, cfg.phase_scale)
    rnd = np.random.default_rng(3).normal(size=(100, cfg.action_dim))
    alphas, phases = env.map_actions(rnd, cfg)
    assert np.max(np.abs(alphas)) < cfg.alpha_scale
    assert np.max(np.abs(phases)) < cfg.phase_scale


# ---------------------------------------------------------------------------
# Control step against explicit matrices
# ---------------------------------------------------------------------------

def test_control_step_matches_matrices_ideal(fs24):
    cfg = make_cfg()
    engine = env.get_engine(cfg)
    rng = np.random.default_rng(11)
    raw = rng.normal(size=(1, cfg.action_dim))
    state = random_joint_state(rng, fs24.N, n_max=10)
    out = engine.control_step(state[None].copy(), raw)[0]

    alphas, phases = env.map_actions(raw[0], cfg)
    pad = np.zeros(fs24.N)
    pad[: cfg.n_phases] = phases
    M = (gates.displacement(fs24, -alphas) @ gates.snap_ideal(fs24, pad)
         @ gates.displacement(fs24, alphas))
    ref = np.stack([M @ state[0], M @ state[1]])
    assert np.max(np.abs(out - ref)) < STEP_ATOL


def test_control_step_matches_matrices_finite(fs24):
    cfg = make_cfg(circuit="feedback_finite", chi_tau=0.6)
    engine = env.get_engine(cfg)
    rng = np.random.default_rng(12)
    raw = rng.normal(size=(1, cfg.action_dim))
    state = random_joint_state(rng, fs24.N, n_max=10)
    out = engine.control_step(state[None].copy(), raw)[0]

    alphas, phases = env.map_actions(raw[0], cfg)
    D = gates.joint_oscillator(fs24, gates.displacement(fs24, alphas))
    Dm = gates.joint_oscillator(fs24, gates.displacement(fs24, -alphas))
    # the comb length is the number of drive components, so no zero padding
    U = Dm @ gates.snap_finite(fs24, phases, cfg.chi_tau) @ D
    ref = (U @ state.reshape(-1)).reshape(2, fs24.N)
    assert np.max(np.abs(out - ref)) < STEP_ATOL


def test_rollout_preserves_norm(fs24):
    cfg = make_cfg(circuit="feedback_finite", chi_tau=0.5, alpha_scale=1.0)
    batch = env.run_batch(make_agent(cfg), cfg, 16, seed=5)
    norms = np.sum(np.abs(batch.final_states) ** 2, axis=(1, 2))
    assert np.max(np.abs(norms - 1.0)) < NORM_ATOL


def test_tail_guard_aborts_on_small_truncation():
    cfg = make_cfg(N=10, n_phases=4, alpha_scale=2.5)
    agent = OpenLoopParamAgent(np.full((cfg.T, cfg.action_dim), 4.0))
    with pytest.raises(fock.TruncationLeakError):
        env.run_batch(agent, cfg, 2, seed=0)


# ---------------------------------------------------------------------------
# Measurement
# ---------------------------------------------------------------------------

def test_measure_reset_collapse_and_flip():
    g = np.array([1.0, 0.0, 0.0], dtype=complex)
    e = np.array([0.0, 1.0, 0.0], dtype=complex)
    state = np.sqrt(0.5) * np.stack([g, e])
    states = np.stack([state, state])
    out, m = env.measure_reset(states, np.array([0.0, 0.999]))
    assert m.tolist() == [1, -1]
    # the +1 branch keeps the ground row, renormalized
    assert np.allclose(out[0, 0], g) and np.allclose(out[0, 1], 0.0)
    # the -1 branch keeps the excited row and the flip moves it to ground
    assert np.allclose(out[1, 0], e) and np.allclose(out[1, 1], 0.0)
    norms = np.sum(np.abs(out) ** 2, axis=(1, 2))
    assert np.allclose(norms, 1.0, atol=1e-12)


def test_measure_reset_rejects_norm_drift():
    bad = 0.9 * np.ones((1, 2, 2), dtype=complex) / 2.0
    with pytest.raises(fock.TruncationLeakError):
        env.measure_reset(bad, np.array([0.5]))


def test_measure_reset_no_flip():
    g = np.array([1.0, 0.0], dtype=complex)
    e = np.array([0.0, 1.0], dtype=complex)
    state = np.sqrt(0.5) * np.stack([g, e])[None]
    out, m = env.measure_reset(state.copy(), np.array([0.999]), reset=False)
    assert m[0] == -1
    assert np.allclose(out[0, 1], e) and np.allclose(out[0, 0], 0.0)


# ---------------------------------------------------------------------------
# Determinism and streams
# ---------------------------------------------------------------------------

def reward_draws(states, rngs):
    return np.array([rng.uniform() for rng in rngs])


def test_prefix_determinism():
    cfg = make_cfg(circuit="feedback_finite", chi_tau=0.5, alpha_scale=1.0)
    agent = make_agent(cfg)
    small = env.run_batch(agent, cfg, 4, seed=42, reward_fn=reward_draws)
    large = env.run_batch(agent, cfg, 8, seed=42, reward_fn=reward_draws)
    np.testing.assert_array_equal(small.raw_actions, large.raw_actions[:4])
    np.testing.assert_array_equal(small.outcomes, large.outcomes[:4])
    np.testing.assert_array_equal(small.rewards, large.rewards[:4])


def test_same_seed_reproduces_exactly():
    cfg = make_cfg(circuit="feedback_finite", chi_tau=0.5, alpha_scale=1.0)
    agent = make_agent(cfg)
    a = env.run_batch(agent, cfg, 6, seed=9, reward_fn=reward_draws)
    b = env.run_batch(agent, cfg, 6, seed=9, reward_fn=reward_draws)
    np.testing.assert_array_equal(a.raw_actions, b.raw_actions)
    np.testing.assert_array_equal(a.rewards, b.rewards)
    c = env.run_batch(agent, cfg, 6, seed=10, reward_fn=reward_draws)
    assert not np.array_equal(a.raw_actions, c.raw_actions)


def test_spawn_streams_accepts_seedsequence():
    from_int = env.spawn_streams(3, 4)
    from_seq = env.spawn_streams(np.random.SeedSequence(3), 4)
    for a, b in zip(from_int, from_seq):
        assert a.uniform() == b.uniform()
    vals = [rng.uniform() for rng in env.spawn_streams(3, 4)]
    assert len(set(vals)) == 4


def test_outcomes_zero_without_measurements():
    cfg = make_cfg()
    batch = env.run_batch(make_agent(cfg), cfg, 5, seed=1)
    assert np.all(batch.outcomes == 0)
    fb = make_cfg(circuit="feedback_ideal")
    batch = env.run_batch(make_agent(fb), fb, 5, seed=1)
    assert set(np.unique(batch.outcomes)) <= {-1, 1}


# ---------------------------------------------------------------------------
# Initial states
# ---------------------------------------------------------------------------

def test_initial_state_forms(fs24):
    cfg = make_cfg(T=1)
    agent = OpenLoopParamAgent(np.zeros((1, cfg.action_dim)))  # identity step
    psi = random_osc_state(np.random.default_rng(6), fs24.N, n_max=8)
    joint = np.zeros((2, fs24.N), dtype=complex)
    joint[0] = psi

    for init in (None, psi, joint, np.tile(joint, (3, 1, 1))):
        B = 3
        batch = env.run_batch(agent, cfg, B, seed=0, initial_states=init)
        want = joint if init is not None else None
        if want is None:
            want = np.zeros((2, fs24.N), dtype=complex)
            want[0, 0] = 1.0
        for b in range(B):
            assert np.max(np.abs(batch.final_states[b] - want)) < STEP_ATOL


# ---------------------------------------------------------------------------
# Branch enumeration and evaluation
# ---------------------------------------------------------------------------

def test_enumerate_branches_open_loop(fs24):
    cfg = make_cfg()
    branches = env.enumerate_branches(make_agent(cfg), cfg)
    assert len(branches) == 1
    assert branches[0].prob == 1.0 and branches[0].outcomes == ()
    assert branches[0].raw_actions.shape == (cfg.T, cfg.action_dim)


def test_enumerate_branches_feedback_total_probability():
    cfg = make_cfg(circuit="feedback_finite", chi_tau=0.6, T=3, alpha_scale=1.0)
    branches = env.enumerate_branches(make_agent(cfg, seed=4), cfg)
    assert 1 <= len(branches) <= 8
    assert env.branch_total_probability(branches) == pytest.approx(1.0, abs=1e-10)
    seen = {b.outcomes for b in branches}
    assert len(seen) == len(branches)
    for b in branches:
        assert np.sum(np.abs(b.state) ** 2) == pytest.approx(1.0, abs=1e-10)


def test_branch_probabilities_match_sampled_frequencies():
    """Deterministic actions, stochastic measurements: branch law vs counts."""
    cfg = make_cfg(circuit="feedback_finite", chi_tau=0.7, T=2, alpha_scale=1.0)
    rng = np.random.default_rng(8)
    agent = OpenLoopParamAgent(0.5 * rng.normal(size=(cfg.T, cfg.action_dim)))
    branches = env.enumerate_branches(agent, cfg)
    B = 4000
    batch = env.run_batch(agent, cfg, B, seed=21)
    for br in branches:
        count = np.sum(np.all(batch.outcomes == np.array(br.outcomes), axis=1))
        se = np.sqrt(br.prob * (1.0 - br.prob) / B)
        assert abs(count / B - br.prob) < 5.0 * se + 1e-3


def test_evaluate_policy_fidelity_and_errors(fs24):
    cfg = make_cfg()
    agent = make_agent(cfg, seed=2)
    final = env.enumerate_branches(agent, cfg)[0].state[0]
    res = env.evaluate_policy(agent, cfg, target=final)
    assert res["metric"] == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        env.evaluate_policy(agent, cfg)                       # missing target
    with pytest.raises(ValueError):
        env.evaluate_policy(agent, cfg, target=final, metric="mystery")


def test_evaluate_policy_expectation(fs24):
    cfg = make_cfg(T=1)
    agent = OpenLoopParamAgent(np.zeros((1, cfg.action_dim)))  # stays in vacuum
    n_op = fs24.n_op
    res = env.evaluate_policy(agent, cfg, metric="expectation", ops=[n_op])
    assert res["metric"] == pytest.approx(0.0, abs=1e-12)
    res = env.evaluate_policy(agent, cfg, metric="expectation", ops=[np.eye(fs24.N)])
    assert res["metric"] == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# Qubit-flip demo task
# ---------------------------------------------------------------------------

def test_qubit_flip_expected_extremes():
    assert env.qubit_flip_expected(0.5) == pytest.approx(1.0)
    assert env.qubit_flip_expected(0.0) == pytest.approx(-1.0)


def test_qubit_flip_batch_near_optimum():
    rng = np.random.default_rng(0)
    policy = neural.ConstantGaussianPolicy(rng, 1, init_sigma=1e-5)
    policy.mu[:] = np.arctanh(0.5)
    agent = neural.ConstantGaussianAgent(policy)
    batch = env.run_qubit_flip_batch(agent, 200, seed=13)
    assert np.mean(batch.rewards) > 0.95
    assert set(np.unique(batch.rewards)) <= {-1.0, 1.0}


# ---------------------------------------------------------------------------
# Episode container
# ---------------------------------------------------------------------------

def test_episode_container_round_trip(tmp_path):
    cfg = make_cfg(circuit="feedback_finite", chi_tau=0.5, alpha_scale=1.0)
    batch = env.run_batch(make_agent(cfg), cfg, 4, seed=3, reward_fn=reward_draws)
    path = tmp_path / "episodes.qrle"
    env.save_episodes(path, batch, meta={"experiment": "smoke", "seed": 3})
    loaded, meta = env.load_episodes(path)
    assert meta == {"experiment": "smoke", "seed": 3}
    np.testing.assert_array_equal(loaded.obs, batch.obs)
    np.testing.assert_array_equal(loaded.raw_actions, batch.raw_actions)
    np.testing.assert_array_equal(loaded.log_probs, batch.log_probs)
    np.testing.assert_array_equal(loaded.values, batch.values)
    np.testing.assert_array_equal(loaded.outcomes, batch.outcomes)
    np.testing.assert_array_equal(loaded.rewards, batch.rewards)
    assert loaded.outcomes.dtype == np.int8


def test_episode_container_rejects_foreign_files(tmp_path):
    path = tmp_path / "not_episodes.bin"
    path.write_bytes(b"PNG0" + b"\x00" * 32)
    with pytest.raises(ValueError):
        env.load_episodes(path)
