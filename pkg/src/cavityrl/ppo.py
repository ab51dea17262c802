"""Proximal policy optimization with terminal rewards and manual gradients.

The loss is the clipped surrogate plus a small value-regression term,

    L = -E[min(r A, clip(r, 1-e, 1+e) A)] + w_V E[(G_t - V_t)^2],

with returns-to-go G_t = gamma^(T-1-t) R (terminal-only reward), advantages
A = G_t - V_t frozen at rollout values, and several optimization passes per
batch.  Gradients flow through the Gaussian log density into the recurrent
networks; the unclipped term carries gradient exactly when it is the active
minimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import env as env_mod
from . import neural


@dataclass
class PPOConfig:
    batch_episodes: int = 500
    epochs: int = 1000
    lr: float = 1e-3
    lr_late: float | None = None      # switched in after lr_drop_epoch
    lr_drop_epoch: int | None = None
    clip_ratio: float = 0.1
    value_weight: float = 5e-3
    opt_passes: int = 5
    gamma: float = 1.0
    grad_clip: float = 1.0

    def learning_rate(self, epoch: int) -> float:
        if self.lr_drop_epoch is not None and self.lr_late is not None \
                and epoch >= self.lr_drop_epoch:
            return self.lr_late
        return self.lr


def returns_to_go(rewards: np.ndarray, horizon: int, gamma: float = 1.0) -> np.ndarray:
    """(B, T) discounted returns for terminal-only rewards."""
    powers = gamma ** np.arange(horizon - 1, -1, -1, dtype=float)
    return np.multiply.outer(np.asarray(rewards, dtype=float), powers)


def ppo_update(agent, batch: env_mod.EpisodeBatch, optimizer: neural.AdamOptimizer,
               cfg: PPOConfig, lr: float) -> dict:
    """Run cfg.opt_passes clipped-surrogate updates on one rollout batch."""
    B, T = batch.log_probs.shape
    rets = returns_to_go(batch.rewards, T, cfg.gamma)
    adv = rets - batch.values
    lp_old = batch.log_probs
    scale = 1.0 / (B * T)
    last = {}
    for _ in range(cfg.opt_passes):
        neural.zero_grads(agent.nets())
        mu, logsig = agent.policy_forward_seq(batch.obs)
        lp_new = neural.gaussian_log_prob(batch.raw_actions, mu, logsig)
        ratio = np.exp(lp_new - lp_old)
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * adv
        policy_loss = -float(np.mean(np.minimum(unclipped, clipped)))
        values = agent.value_forward_seq(batch.obs)
        verr = rets - values
        value_loss = cfg.value_weight * float(np.mean(verr**2))
        loss = policy_loss + value_loss
        if not np.isfinite(loss):
            raise neural.NumericalAbort(f"non-finite loss {loss}")

        take = unclipped <= clipped
        dlp = -(ratio * adv * take) * scale
        dmu_unit, dlogsig_unit = neural.gaussian_log_prob_grads(
            batch.raw_actions, mu, logsig)
        agent.policy_backward_seq(dmu_unit * dlp[..., None],
                                  dlogsig_unit * dlp[..., None])
        agent.value_backward_seq(-2.0 * cfg.value_weight * verr * scale)
        grad_norm = optimizer.step(neural.collect_grads(agent.nets()), lr)
        last = {
            "loss": loss,
            "policy_loss": policy_loss,
            "value_loss": value_loss,
            "clip_fraction": float(np.mean(~take)),
            "grad_norm": float(grad_norm),
            "entropy": neural.gaussian_entropy(logsig),
        }
    last["mean_return"] = float(np.mean(batch.rewards))
    return last


def compute_loss(agent, batch: env_mod.EpisodeBatch, cfg: PPOConfig) -> float:
    """Full PPO loss at the current parameters (no gradients); test oracle."""
    B, T = batch.log_probs.shape
    rets = returns_to_go(batch.rewards, T, cfg.gamma)
    adv = rets - batch.values
    mu, logsig = agent.policy_forward_seq(batch.obs)
    lp_new = neural.gaussian_log_prob(batch.raw_actions, mu, logsig)
    ratio = np.exp(lp_new - batch.log_probs)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * adv
    policy_loss = -float(np.mean(np.minimum(unclipped, clipped)))
    values = agent.value_forward_seq(batch.obs)
    value_loss = cfg.value_weight * float(np.mean((rets - values) ** 2))
    return policy_loss + value_loss


def compute_loss_grads(agent, batch: env_mod.EpisodeBatch, cfg: PPOConfig) -> list[np.ndarray]:
    """Analytic full-loss gradients at the current parameters; test oracle."""
    B, T = batch.log_probs.shape
    rets = returns_to_go(batch.rewards, T, cfg.gamma)
    adv = rets - batch.values
    scale = 1.0 / (B * T)
    neural.zero_grads(agent.nets())
    mu, logsig = agent.policy_forward_seq(batch.obs)
    lp_new = neural.gaussian_log_prob(batch.raw_actions, mu, logsig)
    ratio = np.exp(lp_new - batch.log_probs)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * adv
    take = unclipped <= clipped
    dlp = -(ratio * adv * take) * scale
    dmu_unit, dlogsig_unit = neural.gaussian_log_prob_grads(batch.raw_actions, mu, logsig)
    agent.policy_backward_seq(dmu_unit * dlp[..., None], dlogsig_unit * dlp[..., None])
    values = agent.value_forward_seq(batch.obs)
    agent.value_backward_seq(-2.0 * cfg.value_weight * (rets - values) * scale)
    return [g.copy() for g in neural.collect_grads(agent.nets())]


def train_epoch(agent, env_cfg: env_mod.EnvConfig, reward_fn,
                optimizer: neural.AdamOptimizer, cfg: PPOConfig, epoch: int,
                base_seed: int, initial_states: np.ndarray | None = None) -> dict:
    """Collect one batch with the current stochastic policy and update."""
    seed = np.random.SeedSequence((base_seed, epoch))
    batch = env_mod.run_batch(agent, env_cfg, cfg.batch_episodes, seed,
                              reward_fn=reward_fn, initial_states=initial_states,
                              record_states=False)
    metrics = ppo_update(agent, batch, optimizer, cfg, cfg.learning_rate(epoch))
    metrics["epoch"] = epoch
    return metrics


def export_decision_tree(agent, cfg: env_mod.EnvConfig,
                         initial_state: np.ndarray | None = None) -> dict:
    """Deterministic policy as a measurement-outcome decision tree.

    Nodes map an outcome history prefix to the mapped control action taken
    there; children are keyed "+1" / "-1".  Open-loop circuits give a chain.
    """
    branches = env_mod.enumerate_branches(agent, cfg, initial_state=initial_state)
    root: dict = {}
    for br in branches:
        node = root
        for t in range(cfg.T):
            raw = br.raw_actions[t]
            alpha, phases = env_mod.map_actions(raw, cfg)
            if "action" not in node:
                node["action"] = {
                    "step": t,
                    "alpha_re": float(np.real(alpha)),
                    "alpha_im": float(np.imag(alpha)),
                    "phases": [float(p) for p in np.atleast_1d(phases)],
                }
                node["children"] = {}
            if t == cfg.T - 1:
                break
            key = f"{br.outcomes[t]:+d}" if cfg.uses_feedback else "+1"
            node = node["children"].setdefault(key, {})
    root["leaves"] = [
        {"outcomes": [int(o) for o in br.outcomes], "probability": br.prob}
        for br in branches
    ]
    return root


def replay_decision_tree(tree: dict, outcomes: list[int], T: int) -> list[dict]:
    """Follow a recorded outcome history through an exported tree."""
    node = tree
    actions = []
    for t in range(T):
        actions.append(node["action"])
        if t == T - 1:
            break
        key = f"{outcomes[t]:+d}" if outcomes else "+1"
        node = node["children"][key]
    return actions
