"""Recurrent Gaussian policy and value networks with manual backprop.

Everything is numpy: an LSTM trunk, tanh dense layers, linear heads, and
reverse-mode gradients written out by hand.  Shapes follow (batch, time,
feature) for sequences.  The optimizer is Adam with a global gradient-norm
clip.  Checkpoints round-trip bit-exactly through npz.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
INIT_LOG_STD = float(np.log(0.3))


class NumericalAbort(RuntimeError):
    """Raised when training encounters non-finite numbers."""


def _uniform_fan_in(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(3.0 / n_in)
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    m = rng.normal(size=(n, n))
    q, r = np.linalg.qr(m)
    return q * np.sign(np.diag(r))


class DenseLayer:
    """y = act(x W^T + b) with act in {tanh, identity}."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int,
                 activation: str = "tanh", w_scale: float = 1.0, b_init: float = 0.0):
        self.W = _uniform_fan_in(rng, n_out, n_in) * w_scale
        self.b = np.full(n_out, b_init, dtype=float)
        self.activation = activation
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None
        self._y = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        pre = x @ self.W.T + self.b
        y = np.tanh(pre) if self.activation == "tanh" else pre
        self._x, self._y = x, y
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dpre = dy * (1.0 - self._y**2) if self.activation == "tanh" else dy
        self.dW += dpre.T @ self._x
        self.db += dpre.sum(axis=0)
        return dpre @ self.W

    def params(self):
        return [("W", self.W), ("b", self.b)]

    def grads(self):
        return [self.dW, self.db]

    def zero_grads(self):
        self.dW[...] = 0.0
        self.db[...] = 0.0


class LSTMLayer:
    """Standard LSTM cell; gate order (input, forget, cell, output)."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_hidden: int):
        self.H = n_hidden
        self.Wx = _uniform_fan_in(rng, 4 * n_hidden, n_in)
        self.Wh = np.concatenate([_orthogonal(rng, n_hidden) for _ in range(4)], axis=0)
        self.b = np.zeros(4 * n_hidden)
        self.dWx = np.zeros_like(self.Wx)
        self.dWh = np.zeros_like(self.Wh)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def initial_state(self, batch: int) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((batch, self.H)), np.zeros((batch, self.H))

    def _gates(self, x, h):
        z = x @ self.Wx.T + h @ self.Wh.T + self.b
        H = self.H
        i = 1.0 / (1.0 + np.exp(-z[:, :H]))
        f = 1.0 / (1.0 + np.exp(-z[:, H: 2 * H]))
        g = np.tanh(z[:, 2 * H: 3 * H])
        o = 1.0 / (1.0 + np.exp(-z[:, 3 * H:]))
        return i, f, g, o

    def step(self, x: np.ndarray, state: tuple[np.ndarray, np.ndarray]):
        h, c = state
        i, f, g, o = self._gates(x, h)
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        return h_new, (h_new, c_new)

    def forward_seq(self, X: np.ndarray) -> np.ndarray:
        B, T, _ = X.shape
        h, c = self.initial_state(B)
        caches = []
        out = np.empty((B, T, self.H))
        for t in range(T):
            x = X[:, t, :]
            i, f, g, o = self._gates(x, h)
            c_prev = c
            c = f * c + i * g
            tc = np.tanh(c)
            h_new = o * tc
            caches.append((x, h, c_prev, i, f, g, o, c, tc))
            h = h_new
            out[:, t, :] = h
        self._cache = caches
        return out

    def backward_seq(self, dH: np.ndarray) -> np.ndarray:
        caches = self._cache
        B, T, _ = dH.shape
        dX = np.empty((B, T, self.Wx.shape[1]))
        dh_next = np.zeros((B, self.H))
        dc_next = np.zeros((B, self.H))
        for t in reversed(range(T)):
            x, h_prev, c_prev, i, f, g, o, c, tc = caches[t]
            dh = dH[:, t, :] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc**2) + dc_next
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), dg * (1 - g**2), do * o * (1 - o)],
                axis=1,
            )
            self.dWx += dz.T @ x
            self.dWh += dz.T @ h_prev
            self.db += dz.sum(axis=0)
            dX[:, t, :] = dz @ self.Wx
            dh_next = dz @ self.Wh
            dc_next = dc * f
        return dX

    def params(self):
        return [("Wx", self.Wx), ("Wh", self.Wh), ("b", self.b)]

    def grads(self):
        return [self.dWx, self.dWh, self.db]

    def zero_grads(self):
        self.dWx[...] = 0.0
        self.dWh[...] = 0.0
        self.db[...] = 0.0


class RecurrentGaussianPolicy:
    """LSTM trunk, tanh dense stack, linear mean head, clamped log-std head."""

    def __init__(self, rng: np.random.Generator, obs_dim: int, action_dim: int,
                 lstm_units: int, dense_units: tuple[int, ...]):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.lstm = LSTMLayer(rng, obs_dim, lstm_units)
        self.dense = []
        width = lstm_units
        for u in dense_units:
            self.dense.append(DenseLayer(rng, width, u, "tanh"))
            width = u
        self.mu_head = DenseLayer(rng, width, action_dim, "linear")
        self.sig_head = DenseLayer(rng, width, action_dim, "linear",
                                   w_scale=0.0, b_init=INIT_LOG_STD)
        self._clamp_mask = None

    def _trunk_forward(self, X: np.ndarray) -> np.ndarray:
        B, T, _ = X.shape
        h = self.lstm.forward_seq(X).reshape(B * T, -1)
        for layer in self.dense:
            h = layer.forward(h)
        return h

    def forward_seq(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        B, T, _ = X.shape
        h = self._trunk_forward(X)
        mu = self.mu_head.forward(h).reshape(B, T, self.action_dim)
        raw_sig = self.sig_head.forward(h).reshape(B, T, self.action_dim)
        self._clamp_mask = (raw_sig > LOG_STD_MIN) & (raw_sig < LOG_STD_MAX)
        return mu, np.clip(raw_sig, LOG_STD_MIN, LOG_STD_MAX)

    def backward_seq(self, dmu: np.ndarray, dlogsig: np.ndarray) -> None:
        B, T, A = dmu.shape
        dh = self.mu_head.backward(dmu.reshape(B * T, A))
        dh += self.sig_head.backward((dlogsig * self._clamp_mask).reshape(B * T, A))
        for layer in reversed(self.dense):
            dh = layer.backward(dh)
        self.lstm.backward_seq(dh.reshape(B, T, -1))

    def begin(self, batch: int):
        return self.lstm.initial_state(batch)

    def step(self, obs: np.ndarray, state):
        h, state = self.lstm.step(obs, state)
        for layer in self.dense:
            h = layer.forward(h)
        mu = self.mu_head.forward(h)
        logsig = np.clip(self.sig_head.forward(h), LOG_STD_MIN, LOG_STD_MAX)
        return mu, logsig, state

    def layers(self):
        return [self.lstm, *self.dense, self.mu_head, self.sig_head]


class ValueNetwork:
    """Mirror of the policy trunk with a scalar linear head."""

    def __init__(self, rng: np.random.Generator, obs_dim: int,
                 lstm_units: int, dense_units: tuple[int, ...]):
        self.obs_dim = obs_dim
        self.lstm = LSTMLayer(rng, obs_dim, lstm_units)
        self.dense = []
        width = lstm_units
        for u in dense_units:
            self.dense.append(DenseLayer(rng, width, u, "tanh"))
            width = u
        self.head = DenseLayer(rng, width, 1, "linear")

    def forward_seq(self, X: np.ndarray) -> np.ndarray:
        B, T, _ = X.shape
        h = self.lstm.forward_seq(X).reshape(B * T, -1)
        for layer in self.dense:
            h = layer.forward(h)
        return self.head.forward(h).reshape(B, T)

    def backward_seq(self, dv: np.ndarray) -> None:
        B, T = dv.shape
        dh = self.head.backward(dv.reshape(B * T, 1))
        for layer in reversed(self.dense):
            dh = layer.backward(dh)
        self.lstm.backward_seq(dh.reshape(B, T, -1))

    def begin(self, batch: int):
        return self.lstm.initial_state(batch)

    def step(self, obs: np.ndarray, state):
        h, state = self.lstm.step(obs, state)
        for layer in self.dense:
            h = layer.forward(h)
        return self.head.forward(h)[:, 0], state

    def layers(self):
        return [self.lstm, *self.dense, self.head]


def gaussian_log_prob(actions: np.ndarray, mu: np.ndarray, logsig: np.ndarray) -> np.ndarray:
    """Sum over the action dimension of the diagonal Gaussian log density."""
    z = (actions - mu) * np.exp(-logsig)
    return np.sum(-0.5 * np.log(2.0 * np.pi) - logsig - 0.5 * z**2, axis=-1)


def gaussian_log_prob_grads(actions, mu, logsig):
    """d log pi / d mu and d log pi / d logsig, elementwise."""
    inv_var = np.exp(-2.0 * logsig)
    dmu = (actions - mu) * inv_var
    dlogsig = -1.0 + (actions - mu) ** 2 * inv_var
    return dmu, dlogsig


def gaussian_entropy(logsig: np.ndarray) -> float:
    """Mean entropy of the diagonal Gaussian over all leading axes."""
    per = np.sum(0.5 * np.log(2.0 * np.pi * np.e) + logsig, axis=-1)
    return float(np.mean(per))


class ConstantGaussianPolicy:
    """Observation-independent Gaussian policy: raw mean, log-std and a value bias.

    Used by the single-parameter control demo and as a transparent test rig
    for the optimizer: the parameters are the distribution itself.
    """

    def __init__(self, rng: np.random.Generator, action_dim: int,
                 init_sigma: float = 0.3):
        self.action_dim = action_dim
        self.mu = np.zeros(action_dim)
        self.logsig = np.full(action_dim, float(np.log(init_sigma)))
        self.vbias = np.zeros(1)
        self.dmu = np.zeros_like(self.mu)
        self.dlogsig = np.zeros_like(self.logsig)
        self.dvbias = np.zeros_like(self.vbias)
        self._bt = None

    def forward_seq(self, X: np.ndarray):
        B, T, _ = X.shape
        self._bt = (B, T)
        mu = np.broadcast_to(self.mu, (B, T, self.action_dim)).copy()
        logsig = np.clip(np.broadcast_to(self.logsig, (B, T, self.action_dim)).copy(),
                         LOG_STD_MIN, LOG_STD_MAX)
        return mu, logsig

    def backward_seq(self, dmu, dlogsig):
        mask = (self.logsig > LOG_STD_MIN) & (self.logsig < LOG_STD_MAX)
        self.dmu += dmu.sum(axis=(0, 1))
        self.dlogsig += dlogsig.sum(axis=(0, 1)) * mask

    def value_forward_seq(self, X: np.ndarray):
        B, T, _ = X.shape
        return np.broadcast_to(self.vbias[0], (B, T)).copy()

    def value_backward_seq(self, dv):
        self.dvbias += dv.sum()

    def params(self):
        return [("mu", self.mu), ("logsig", self.logsig), ("vbias", self.vbias)]

    def grads(self):
        return [self.dmu, self.dlogsig, self.dvbias]

    def zero_grads(self):
        self.dmu[...] = 0.0
        self.dlogsig[...] = 0.0
        self.dvbias[...] = 0.0


class NeuralAgent:
    """Policy plus value network behind the rollout and training interfaces.

    Rollout: begin / sample_step / mean_step, with hidden state carried as
    (policy LSTM state, value LSTM state).  Training: sequence forward and
    backward passes over whole batches.
    """

    def __init__(self, policy: RecurrentGaussianPolicy, value: ValueNetwork):
        if policy.obs_dim != value.obs_dim:
            raise ValueError("policy and value networks disagree on obs_dim")
        self.policy = policy
        self.value = value

    # rollout interface -----------------------------------------------------
    def begin(self, batch: int):
        return (self.policy.begin(batch), self.value.begin(batch))

    def sample_step(self, obs, hidden, z):
        mu, logsig, pstate = self.policy.step(obs, hidden[0])
        raw = mu + np.exp(logsig) * z
        logp = gaussian_log_prob(raw, mu, logsig)
        v, vstate = self.value.step(obs, hidden[1])
        return raw, logp, v, (pstate, vstate)

    def mean_step(self, obs, hidden):
        mu, _, pstate = self.policy.step(obs, hidden[0])
        return mu, (pstate, hidden[1])

    # training interface ----------------------------------------------------
    def policy_forward_seq(self, X):
        return self.policy.forward_seq(X)

    def policy_backward_seq(self, dmu, dlogsig):
        self.policy.backward_seq(dmu, dlogsig)

    def value_forward_seq(self, X):
        return self.value.forward_seq(X)

    def value_backward_seq(self, dv):
        self.value.backward_seq(dv)

    def nets(self):
        return [("policy", self.policy), ("value", self.value)]


class ConstantGaussianAgent:
    """Rollout/training adapter around ConstantGaussianPolicy."""

    def __init__(self, policy: ConstantGaussianPolicy):
        self.policy = policy

    def begin(self, batch: int):
        return None

    def sample_step(self, obs, hidden, z):
        B = obs.shape[0]
        mu = np.broadcast_to(self.policy.mu, (B, self.policy.action_dim))
        logsig = np.clip(np.broadcast_to(self.policy.logsig, mu.shape),
                         LOG_STD_MIN, LOG_STD_MAX)
        raw = mu + np.exp(logsig) * z
        logp = gaussian_log_prob(raw, mu, logsig)
        v = np.full(B, self.policy.vbias[0])
        return raw, logp, v, None

    def mean_step(self, obs, hidden):
        B = obs.shape[0]
        return np.broadcast_to(self.policy.mu, (B, self.policy.action_dim)).copy(), None

    def policy_forward_seq(self, X):
        return self.policy.forward_seq(X)

    def policy_backward_seq(self, dmu, dlogsig):
        self.policy.backward_seq(dmu, dlogsig)

    def value_forward_seq(self, X):
        return self.policy.value_forward_seq(X)

    def value_backward_seq(self, dv):
        self.policy.value_backward_seq(dv)

    def nets(self):
        return [("model", self.policy)]


class AdamOptimizer:
    """Adam with a global gradient-norm clip applied before the update."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7,
                 grad_clip: float = 1.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.grad_clip = grad_clip
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray], lr: float | None = None) -> float:
        lr = self.lr if lr is None else lr
        norm = np.sqrt(sum(float(np.sum(g**2)) for g in grads))
        scale = 1.0
        if self.grad_clip is not None and norm > self.grad_clip and norm > 0:
            scale = self.grad_clip / norm
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            gc = g * scale
            m *= self.beta1
            m += (1 - self.beta1) * gc
            v *= self.beta2
            v += (1 - self.beta2) * gc**2
            p -= lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
        return norm

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam_t": np.array([self.t])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adam_m_{i}"] = m
            out[f"adam_v_{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["adam_t"][0])
        for i in range(len(self.m)):
            self.m[i][...] = arrays[f"adam_m_{i}"]
            self.v[i][...] = arrays[f"adam_v_{i}"]


def collect_params(nets) -> tuple[list[str], list[np.ndarray]]:
    """Flatten (name, array) pairs across networks in a stable order."""
    names, arrays = [], []
    for prefix, net in nets:
        if hasattr(net, "layers"):
            for li, layer in enumerate(net.layers()):
                for pname, arr in layer.params():
                    names.append(f"{prefix}/{li}/{pname}")
                    arrays.append(arr)
        else:
            for pname, arr in net.params():
                names.append(f"{prefix}/{pname}")
                arrays.append(arr)
    return names, arrays


def collect_grads(nets) -> list[np.ndarray]:
    out = []
    for _, net in nets:
        if hasattr(net, "layers"):
            for layer in net.layers():
                out.extend(layer.grads())
        else:
            out.extend(net.grads())
    return out


def zero_grads(nets) -> None:
    for _, net in nets:
        if hasattr(net, "layers"):
            for layer in net.layers():
                layer.zero_grads()
        else:
            net.zero_grads()


def save_checkpoint(path, names: list[str], arrays: list[np.ndarray],
                    optimizer: AdamOptimizer | None = None,
                    meta: dict | None = None) -> None:
    """Versioned npz checkpoint; float64 arrays round-trip bit-exactly."""
    payload = {"format_version": np.array([1])}
    payload["param_names"] = np.array(names)
    for name, arr in zip(names, arrays):
        payload["param::" + name] = arr
    if optimizer is not None:
        payload.update(optimizer.state_arrays())
    if meta is not None:
        payload["meta_json"] = np.array([json.dumps(meta, sort_keys=True)])
    np.savez(path, **payload)


def load_checkpoint(path) -> dict:
    """Load a checkpoint into {names, params, adam (or None), meta (or None)}."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"][0])
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        names = [str(s) for s in data["param_names"]]
        params = {n: data["param::" + n].copy() for n in names}
        adam = None
        if "adam_t" in data:
            adam = {k: data[k].copy() for k in data.files if k.startswith("adam_")}
        meta = None
        if "meta_json" in data:
            meta = json.loads(str(data["meta_json"][0]))
    return {"names": names, "params": params, "adam": adam, "meta": meta}


def assign_params(names: list[str], arrays: list[np.ndarray], params: dict[str, np.ndarray]) -> None:
    for name, arr in zip(names, arrays):
        if name not in params:
            raise ValueError(f"checkpoint is missing parameter {name}")
        if params[name].shape != arr.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}")
        arr[...] = params[name]
