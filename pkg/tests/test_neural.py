"""Hand-rolled networks: finite-difference gradients, Adam, checkpoints."""

import numpy as np
import pytest
from scipy.special import expit

from cavityrl import neural

FD_EPS = 1e-6
FD_RTOL = 1e-6
FD_ATOL = 1e-8


def fd_gradients(loss_fn, params):
    """Central finite differences of loss_fn with respect to each array."""
    grads = []
    for arr in params:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + FD_EPS
            hi = loss_fn()
            flat[i] = keep - FD_EPS
            lo = loss_fn()
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * FD_EPS)
        grads.append(g)
    return grads


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("activation", ["tanh", "linear"])
def test_dense_layer_gradients(activation):
    rng = np.random.default_rng(0)
    layer = neural.DenseLayer(rng, 4, 3, activation)
    x = rng.normal(size=(5, 4))
    c = rng.normal(size=(5, 3))

    def loss():
        return float(np.sum(c * layer.forward(x)))

    layer.zero_grads()
    layer.forward(x)
    dx = layer.backward(c)
    fd_w, fd_b = fd_gradients(loss, [layer.W, layer.b])
    np.testing.assert_allclose(layer.dW, fd_w, rtol=FD_RTOL, atol=FD_ATOL)
    np.testing.assert_allclose(layer.db, fd_b, rtol=FD_RTOL, atol=FD_ATOL)

    def loss_x():
        return float(np.sum(c * layer.forward(x)))

    fd_x = fd_gradients(loss_x, [x])[0]
    np.testing.assert_allclose(dx, fd_x, rtol=FD_RTOL, atol=FD_ATOL)


def test_lstm_step_matches_textbook_equations():
    rng = np.random.default_rng(1)
    layer = neural.LSTMLayer(rng, 3, 4)
    x = rng.normal(size=(2, 3))
    h0 = rng.normal(size=(2, 4))
    c0 = rng.normal(size=(2, 4))
    h1, (_, c1) = layer.step(x, (h0, c0))

    z = x @ layer.Wx.T + h0 @ layer.Wh.T + layer.b
    i, f = expit(z[:, :4]), expit(z[:, 4:8])
    g, o = np.tanh(z[:, 8:12]), expit(z[:, 12:])
    c_ref = f * c0 + i * g
    h_ref = o * np.tanh(c_ref)
    np.testing.assert_allclose(h1, h_ref, atol=1e-12)
    np.testing.assert_allclose(c1, c_ref, atol=1e-12)


def test_lstm_forward_seq_matches_steps():
    rng = np.random.default_rng(2)
    layer = neural.LSTMLayer(rng, 3, 5)
    X = rng.normal(size=(4, 6, 3))
    seq = layer.forward_seq(X)
    state = layer.initial_state(4)
    for t in range(6):
        h, state = layer.step(X[:, t, :], state)
        np.testing.assert_allclose(seq[:, t, :], h, atol=1e-12)


def test_lstm_sequence_gradients():
    rng = np.random.default_rng(3)
    layer = neural.LSTMLayer(rng, 2, 3)
    X = rng.normal(size=(2, 4, 2))
    c = rng.normal(size=(2, 4, 3))

    def loss():
        return float(np.sum(c * layer.forward_seq(X)))

    layer.zero_grads()
    layer.forward_seq(X)
    dX = layer.backward_seq(c)
    fd = fd_gradients(loss, [layer.Wx, layer.Wh, layer.b])
    for got, want in zip([layer.dWx, layer.dWh, layer.db], fd):
        np.testing.assert_allclose(got, want, rtol=FD_RTOL, atol=FD_ATOL)
    fd_x = fd_gradients(loss, [X])[0]
    np.testing.assert_allclose(dX, fd_x, rtol=FD_RTOL, atol=FD_ATOL)


# ---------------------------------------------------------------------------
# Policy and value networks
# ---------------------------------------------------------------------------

def small_policy(seed=4):
    rng = np.random.default_rng(seed)
    return neural.RecurrentGaussianPolicy(rng, 3, 2, 3, (4,))


def test_policy_forward_seq_matches_steps():
    policy = small_policy()
    rng = np.random.default_rng(5)
    X = rng.normal(size=(3, 4, 3))
    mu_seq, sig_seq = policy.forward_seq(X)
    state = policy.begin(3)
    for t in range(4):
        mu, logsig, state = policy.step(X[:, t, :], state)
        np.testing.assert_allclose(mu_seq[:, t], mu, atol=1e-12)
        np.testing.assert_allclose(sig_seq[:, t], logsig, atol=1e-12)


def test_policy_sequence_gradients():
    policy = small_policy()
    rng = np.random.default_rng(6)
    X = rng.normal(size=(2, 3, 3))
    cm = rng.normal(size=(2, 3, 2))
    cs = rng.normal(size=(2, 3, 2))
    names, params = neural.collect_params([("policy", policy)])

    def loss():
        mu, logsig = policy.forward_seq(X)
        return float(np.sum(cm * mu) + np.sum(cs * logsig))

    neural.zero_grads([("policy", policy)])
    policy.forward_seq(X)
    policy.backward_seq(cm, cs)
    analytic = neural.collect_grads([("policy", policy)])
    fd = fd_gradients(loss, params)
    for name, got, want in zip(names, analytic, fd):
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=FD_ATOL,
                                   err_msg=name)


def test_policy_log_std_clamp_blocks_gradient():
    policy = small_policy()
    policy.sig_head.b[:] = neural.LOG_STD_MAX + 2.0
    X = np.random.default_rng(7).normal(size=(2, 2, 3))
    mu, logsig = policy.forward_seq(X)
    assert np.all(logsig == neural.LOG_STD_MAX)
    neural.zero_grads([("policy", policy)])
    policy.backward_seq(np.zeros_like(mu), np.ones_like(logsig))
    assert np.all(policy.sig_head.db == 0.0)


def test_value_network_gradients_and_steps():
    rng = np.random.default_rng(8)
    value = neural.ValueNetwork(rng, 3, 3, (4,))
    X = rng.normal(size=(2, 3, 3))
    c = rng.normal(size=(2, 3))
    seq = value.forward_seq(X)
    state = value.begin(2)
    for t in range(3):
        v, state = value.step(X[:, t, :], state)
        np.testing.assert_allclose(seq[:, t], v, atol=1e-12)

    names, params = neural.collect_params([("value", value)])

    def loss():
        return float(np.sum(c * value.forward_seq(X)))

    neural.zero_grads([("value", value)])
    value.forward_seq(X)
    value.backward_seq(c)
    analytic = neural.collect_grads([("value", value)])
    fd = fd_gradients(loss, params)
    for name, got, want in zip(names, analytic, fd):
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=FD_ATOL,
                                   err_msg=name)


# ---------------------------------------------------------------------------
# Gaussian density helpers
# ---------------------------------------------------------------------------

def test_gaussian_log_prob_against_scipy():
    from scipy.stats import norm
    rng = np.random.default_rng(9)
    a = rng.normal(size=(5, 3))
    mu = rng.normal(size=(5, 3))
    logsig = rng.normal(size=(5, 3)) * 0.3
    got = neural.gaussian_log_prob(a, mu, logsig)
    want = norm.logpdf(a, loc=mu, scale=np.exp(logsig)).sum(axis=-1)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_gaussian_log_prob_grads_fd():
    rng = np.random.default_rng(10)
    a = rng.normal(size=(4, 2))
    mu = rng.normal(size=(4, 2))
    logsig = rng.normal(size=(4, 2)) * 0.2
    dmu, dlogsig = neural.gaussian_log_prob_grads(a, mu, logsig)

    def scalar(m, s):
        return np.sum(neural.gaussian_log_prob(a, m, s))

    fd_mu = np.zeros_like(mu)
    fd_sig = np.zeros_like(logsig)
    for idx in np.ndindex(mu.shape):
        dm = np.zeros_like(mu)
        dm[idx] = FD_EPS
        fd_mu[idx] = (scalar(mu + dm, logsig) - scalar(mu - dm, logsig)) / (2 * FD_EPS)
        fd_sig[idx] = (scalar(mu, logsig + dm) - scalar(mu, logsig - dm)) / (2 * FD_EPS)
    np.testing.assert_allclose(dmu, fd_mu, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dlogsig, fd_sig, rtol=1e-6, atol=1e-8)


def test_gaussian_entropy_closed_form():
    logsig = np.log(np.array([[0.5, 2.0]]))
    want = np.sum(0.5 * np.log(2 * np.pi * np.e) + logsig[0])
    assert neural.gaussian_entropy(logsig) == pytest.approx(want)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

def reference_adam(params, grads_seq, lr, beta1=0.9, beta2=0.999, eps=1e-7):
    p = [x.copy() for x in params]
    m = [np.zeros_like(x) for x in params]
    v = [np.zeros_like(x) for x in params]
    for t, grads in enumerate(grads_seq, start=1):
        for j, g in enumerate(grads):
            m[j] = beta1 * m[j] + (1 - beta1) * g
            v[j] = beta2 * v[j] + (1 - beta2) * g**2
            mhat = m[j] / (1 - beta1**t)
            vhat = v[j] / (1 - beta2**t)
            p[j] -= lr * mhat / (np.sqrt(vhat) + eps)
    return p


def test_adam_matches_reference_updates():
    rng = np.random.default_rng(11)
    start = [rng.normal(size=(3, 2)), rng.normal(size=4)]
    grads_seq = [[rng.normal(size=(3, 2)) * 0.1, rng.normal(size=4) * 0.1]
                 for _ in range(5)]
    params = [x.copy() for x in start]
    opt = neural.AdamOptimizer(params, lr=0.01, grad_clip=None)
    for grads in grads_seq:
        opt.step(grads)
    want = reference_adam(start, grads_seq, lr=0.01)
    for got, expect in zip(params, want):
        np.testing.assert_allclose(got, expect, atol=1e-12)


def test_adam_global_norm_clip():
    params = [np.zeros(4)]
    opt = neural.AdamOptimizer(params, lr=0.1, grad_clip=1.0)
    g = np.full(4, 5.0)                       # norm 10
    norm = opt.step([g.copy()])
    assert norm == pytest.approx(10.0)        # reports the pre-clip norm
    ref = [np.zeros(4)]
    ref_opt = neural.AdamOptimizer(ref, lr=0.1, grad_clip=None)
    ref_opt.step([g / 10.0])
    np.testing.assert_allclose(params[0], ref[0], atol=1e-15)


def test_adam_state_round_trip():
    rng = np.random.default_rng(12)
    a = [rng.normal(size=3)]
    b = [a[0].copy()]
    opt_a = neural.AdamOptimizer(a, lr=0.05)
    opt_b = neural.AdamOptimizer(b, lr=0.05)
    grads = [[rng.normal(size=3)] for _ in range(6)]
    for g in grads[:3]:
        opt_a.step(g)
        opt_b.step(g)
    state = opt_a.state_arrays()
    fresh = neural.AdamOptimizer(b, lr=0.05)
    fresh.load_state_arrays(state)
    for g in grads[3:]:
        opt_a.step(g)
        fresh.step(g)
    np.testing.assert_array_equal(a[0], b[0])


# ---------------------------------------------------------------------------
# Parameter plumbing and checkpoints
# ---------------------------------------------------------------------------

def test_collect_params_stable_names():
    policy = small_policy()
    rng = np.random.default_rng(13)
    value = neural.ValueNetwork(rng, 3, 3, (4,))
    names, arrays = neural.collect_params([("policy", policy), ("value", value)])
    assert len(names) == len(set(names)) == len(arrays)
    assert names[0] == "policy/0/Wx"
    assert any(n.startswith("value/") for n in names)
    # collected arrays alias the live parameters
    arrays[0][0, 0] = 123.0
    assert policy.lstm.Wx[0, 0] == 123.0


def test_checkpoint_round_trip_bit_exact(tmp_path):
    policy = small_policy(seed=14)
    names, arrays = neural.collect_params([("policy", policy)])
    opt = neural.AdamOptimizer(arrays, lr=1e-3)
    opt.step([np.ones_like(a) for a in arrays])
    path = tmp_path / "ckpt.npz"
    neural.save_checkpoint(path, names, arrays, optimizer=opt,
                           meta={"epoch": 7, "note": "smoke"})
    loaded = neural.load_checkpoint(path)
    assert loaded["meta"] == {"epoch": 7, "note": "smoke"}
    assert loaded["names"] == names
    for n, a in zip(names, arrays):
        np.testing.assert_array_equal(loaded["params"][n], a)
    assert int(loaded["adam"]["adam_t"][0]) == 1

    other = small_policy(seed=99)
    names2, arrays2 = neural.collect_params([("policy", other)])
    neural.assign_params(names2, arrays2, loaded["params"])
    for a, b in zip(arrays, arrays2):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_version_and_assign_errors(tmp_path):
    path = tmp_path / "bad.npz"
    np.savez(path, format_version=np.array([2]))
    with pytest.raises(ValueError):
        neural.load_checkpoint(path)
    with pytest.raises(ValueError):
        neural.assign_params(["missing"], [np.zeros(2)], {})
    with pytest.raises(ValueError):
        neural.assign_params(["a"], [np.zeros(2)], {"a": np.zeros(3)})


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------

def test_neural_agent_interface():
    policy = small_policy(seed=15)
    value = neural.ValueNetwork(np.random.default_rng(16), 3, 3, (4,))
    agent = neural.NeuralAgent(policy, value)
    obs = np.random.default_rng(17).normal(size=(4, 3))
    hidden = agent.begin(4)
    z = np.zeros((4, 2))
    raw, logp, v, hidden2 = agent.sample_step(obs, hidden, z)
    mean, _ = agent.mean_step(obs, agent.begin(4))
    np.testing.assert_allclose(raw, mean, atol=1e-12)   # z = 0 hits the mean
    assert raw.shape == (4, 2) and logp.shape == (4,) and v.shape == (4,)
    with pytest.raises(ValueError):
        neural.NeuralAgent(policy, neural.ValueNetwork(np.random.default_rng(1), 5, 3, (4,)))


def test_constant_agent_matches_policy_distribution():
    rng = np.random.default_rng(18)
    policy = neural.ConstantGaussianPolicy(rng, 2, init_sigma=0.5)
    policy.mu[:] = [0.3, -0.7]
    agent = neural.ConstantGaussianAgent(policy)
    z = rng.normal(size=(6, 2))
    raw, logp, v, _ = agent.sample_step(np.zeros((6, 1)), None, z)
    np.testing.assert_allclose(raw, policy.mu + 0.5 * z, atol=1e-12)
    want = neural.gaussian_log_prob(raw, np.tile(policy.mu, (6, 1)),
                                    np.tile(policy.logsig, (6, 1)))
    np.testing.assert_allclose(logp, want, atol=1e-12)


def test_numerical_abort_is_runtime_error():
    assert issubclass(neural.NumericalAbort, RuntimeError)
