"""Derivative-free baselines over flattened open-loop control parameters.

Nelder-Mead simplex search and generalized simulated annealing optimize the
same control circuits as the RL agent, through the same environment and
reward code paths.  The cost oracle exposes two modes: exact infidelity via
branch enumeration (noise-free, for capability checks) and averaged shot
reward (the experimentally realistic, stochastic setting).  Episode budgets
are accounted exactly: every averaged evaluation consumes `shots` episodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import env


class BudgetExhausted(RuntimeError):
    """Raised by the oracle when an evaluation would exceed the budget."""


class OpenLoopParamAgent:
    """Deterministic agent that emits a fixed (T, action_dim) raw-action table.

    The hidden state carries the step index, so the agent plugs into the same
    rollout and branch-enumeration code as learned policies.
    """

    def __init__(self, raw_actions: np.ndarray):
        raw = np.asarray(raw_actions, dtype=float)
        if raw.ndim != 2:
            raise ValueError("raw_actions must have shape (T, action_dim)")
        self.raw_actions = raw

    def begin(self, batch: int):
        return 0

    def mean_step(self, obs, hidden):
        t = hidden
        raw = np.tile(self.raw_actions[t], (obs.shape[0], 1))
        return raw, t + 1

    def sample_step(self, obs, hidden, z):
        raw, hidden = self.mean_step(obs, hidden)
        B = obs.shape[0]
        return raw, np.zeros(B), np.zeros(B), hidden


@dataclass
class CostOracle:
    """Scalar cost of an open-loop parameter vector.

    mode "exact": cost = 1 - fidelity to `target`, computed by branch
    enumeration; each call charges one unit of budget.
    mode "averaged": cost = -mean(reward) over `shots` episodes with
    stochastic reward draws; each call charges `shots` episodes.
    """

    cfg: env.EnvConfig
    mode: str = "exact"
    target: np.ndarray | None = None
    reward_fn: object | None = None
    shots: int = 0
    budget: int | None = None
    seed: int = 0
    episodes_used: int = field(default=0, init=False)
    n_evals: int = field(default=0, init=False)

    def __post_init__(self):
        if self.mode not in ("exact", "averaged"):
            raise ValueError(f"unknown oracle mode {self.mode!r}")
        if self.mode == "exact" and self.target is None:
            raise ValueError("exact mode needs a target state")
        if self.mode == "averaged":
            if self.reward_fn is None or self.shots <= 0:
                raise ValueError("averaged mode needs reward_fn and shots > 0")
        self._seeds = np.random.SeedSequence(self.seed)
        self._next = 0

    @property
    def cost_per_eval(self) -> int:
        return self.shots if self.mode == "averaged" else 1

    def _charge(self):
        used = self.episodes_used if self.mode == "averaged" else self.n_evals
        if self.budget is not None and used + self.cost_per_eval > self.budget:
            raise BudgetExhausted(f"budget {self.budget} reached after {used}")

    def _agent(self, params: np.ndarray) -> OpenLoopParamAgent:
        return OpenLoopParamAgent(np.asarray(params, dtype=float).reshape(
            self.cfg.T, self.cfg.action_dim))

    def __call__(self, params: np.ndarray) -> float:
        self._charge()
        agent = self._agent(params)
        if self.mode == "exact":
            cost = 1.0 - env.evaluate_policy(agent, self.cfg, target=self.target)["metric"]
        else:
            child = self._seeds.spawn(1)[0]
            batch = env.run_batch(agent, self.cfg, self.shots, child,
                                  reward_fn=self.reward_fn, stochastic=False,
                                  record_states=False)
            cost = -float(np.mean(batch.rewards))
            self.episodes_used += self.shots
        self.n_evals += 1
        return cost

    def exact_fidelity(self, params: np.ndarray, target: np.ndarray | None = None) -> float:
        """Noise-free fidelity of `params`; reporting only, never charged."""
        tgt = self.target if target is None else target
        if tgt is None:
            raise ValueError("no target available for fidelity evaluation")
        return env.evaluate_policy(self._agent(params), self.cfg, target=tgt)["metric"]


def _result(x_best, cost_best, trace, n_iter, oracle):
    return {
        "x_best": np.asarray(x_best, dtype=float).copy(),
        "cost_best": float(cost_best),
        "trace": trace,
        "n_iter": int(n_iter),
        "n_evals": getattr(oracle, "n_evals", None),
        "episodes_used": getattr(oracle, "episodes_used", None),
    }


def nelder_mead(oracle, x0: np.ndarray, budget: int | None = None,
                coeffs: tuple = (1.0, 2.0, 0.5, 0.5),
                simplex_scale: float = 0.25,
                max_iter: int = 1_000_000) -> dict:
    """Nelder-Mead simplex search; one iteration updates one simplex vertex.

    coeffs = (reflection, expansion, contraction, shrink).  The initial
    simplex is x0 plus `simplex_scale` along each coordinate.  Terminates
    when the oracle budget is exhausted or `max_iter` iterations elapse.
    The trace records (units_consumed, best_cost) at every improvement.
    """
    rho, chi, psi, sigma = coeffs
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.size
    if budget is not None:
        oracle.budget = budget

    def consumed():
        return oracle.episodes_used if getattr(oracle, "mode", "") == "averaged" else oracle.n_evals

    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        simplex[i + 1, i] += simplex_scale

    costs = np.empty(n + 1)
    trace: list[tuple[int, float]] = []
    best_seen = math.inf
    x_best = simplex[0].copy()

    def note(x, c):
        nonlocal best_seen, x_best
        if c < best_seen:
            best_seen = c
            x_best = np.array(x, copy=True)
            trace.append((consumed(), best_seen))

    k = 0
    try:
        for i in range(n + 1):
            costs[i] = oracle(simplex[i])
            note(simplex[i], costs[i])
        for k in range(max_iter):
            order = np.argsort(costs, kind="stable")
            simplex, costs = simplex[order], costs[order]
            centroid = simplex[:-1].mean(axis=0)
            xr = centroid + rho * (centroid - simplex[-1])
            fr = oracle(xr)
            note(xr, fr)
            if fr < costs[0]:
                xe = centroid + rho * chi * (centroid - simplex[-1])
                fe = oracle(xe)
                note(xe, fe)
                if fe < fr:
                    simplex[-1], costs[-1] = xe, fe
                else:
                    simplex[-1], costs[-1] = xr, fr
            elif fr < costs[-2]:
                simplex[-1], costs[-1] = xr, fr
            else:
                if fr < costs[-1]:
                    xc = centroid + psi * rho * (centroid - simplex[-1])
                else:
                    xc = centroid - psi * (centroid - simplex[-1])
                fc = oracle(xc)
                note(xc, fc)
                if fc < min(fr, costs[-1]):
                    simplex[-1], costs[-1] = xc, fc
                else:
                    for i in range(1, n + 1):
                        simplex[i] = simplex[0] + sigma * (simplex[i] - simplex[0])
                        costs[i] = oracle(simplex[i])
                        note(simplex[i], costs[i])
    except BudgetExhausted:
        pass
    return _result(x_best, best_seen, trace, k + 1, oracle)


def simulated_annealing(oracle, x0: np.ndarray, budget: int | None = None,
                        t_visit: float = 2.0, t_accept: float = 1.0,
                        restart_interval: int = 50,
                        max_iter: int = 1_000_000, seed: int = 0) -> dict:
    """Generalized annealing with a Cauchy-Lorentz visiting distribution.

    Candidate steps are per-coordinate Cauchy draws whose width follows the
    fast schedule T_v(k) = t_visit / (1 + k); Metropolis acceptance uses its
    own schedule T_a(k) = t_accept / (1 + k).  No local search is performed
    on accepted locations.  Every `restart_interval` accepted moves the walk
    restarts from the best-ever point, which is tracked throughout.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, dtype=float).ravel().copy()
    if budget is not None:
        oracle.budget = budget

    def consumed():
        return oracle.episodes_used if getattr(oracle, "mode", "") == "averaged" else oracle.n_evals

    trace: list[tuple[int, float]] = []
    x_best, f_best = x.copy(), math.inf
    k = 0
    try:
        fx = oracle(x)
        x_best, f_best = x.copy(), fx
        trace.append((consumed(), f_best))
        accepted = 0
        for k in range(max_iter):
            tv = t_visit / (1.0 + k)
            ta = t_accept / (1.0 + k)
            cand = x + tv * rng.standard_cauchy(x.size)
            fc = oracle(cand)
            delta = fc - fx
            if delta <= 0 or rng.uniform() < math.exp(max(-delta / ta, -700.0)):
                x, fx = cand, fc
                accepted += 1
                if fx < f_best:
                    x_best, f_best = x.copy(), fx
                    trace.append((consumed(), f_best))
                if accepted % restart_interval == 0:
                    x, fx = x_best.copy(), f_best
    except BudgetExhausted:
        pass
    return _result(x_best, f_best, trace, k + 1, oracle)
