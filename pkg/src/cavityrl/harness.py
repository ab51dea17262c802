"""Run orchestration: training loops, baselines, metrics, checkpoints, reports.

Artifacts land under ``<out_dir>/<experiment>/seed<k>/``: the canonical config
text, a metrics CSV (one row per epoch), a resumable checkpoint, and a JSON
report.  All per-epoch randomness derives from ``(seed, epoch)`` seed
sequences, so interrupting and resuming a run reproduces the original
trajectory bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines, env, experiments, neural, ppo, rewards, states, tomography
from .experiments import ConfigError, ExperimentConfig
from .fock import cached_fock_space

METRICS_COLUMNS = ("epoch", "episodes_cumulative", "mean_return", "entropy",
                   "eval_metric", "wallclock_s")
CHECKPOINT_NAME = "checkpoint.npz"
_INIT_SALT = 0x7FFFFFFF
_CARDINAL_SALT = 0x5EED


@dataclass
class RunArtifacts:
    """Paths and summary of one completed (or aborted) run."""

    run_dir: Path
    metrics_path: Path
    checkpoint_path: Path | None
    report_path: Path
    report: dict


# --- logical gate targets ----------------------------------------------------

def gate_matrix(name: str) -> np.ndarray:
    """Logical 2x2 unitary by name: H, X, or the principal square root of H."""
    h = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / np.sqrt(2.0)
    if name == "H":
        return h
    if name == "X":
        return np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    if name == "sqrtH":
        eye = np.eye(2, dtype=complex)
        return ((1.0 + 1.0j) * eye + (1.0 - 1.0j) * h) / 2.0
    raise ConfigError(f"unknown gate {name!r}")


def encode_logical(fs, encoding: str, delta: float, amps) -> np.ndarray:
    """Oscillator state for logical amplitudes (c0, c1) in a bosonic code."""
    c0, c1 = amps
    if encoding == "fock":
        zero = states.fock_qubit_logical(fs, "+Z")
        one = states.fock_qubit_logical(fs, "-Z")
    elif encoding == "gkp":
        zero = states.gkp_qubit_logical(fs, delta, "+Z")
        one = states.gkp_qubit_logical(fs, delta, "-Z")
    else:
        raise ConfigError(f"unknown logical encoding {encoding!r}")
    return states.normalize(c0 * zero + c1 * one)


class GateTask:
    """Per-epoch cardinal-state sampling and evaluation for gate training.

    Each epoch draws one of the six Bloch cardinal points, prepares the
    encoded input state, and rewards overlap with the ideal gate output via
    a single-point Wigner measurement; the whole batch shares the epoch's
    state.  Gate quality is the average fidelity over all six cardinals.
    """

    def __init__(self, cfg: ExperimentConfig, fs):
        self.cfg = cfg
        self.fs = fs
        self.unitary = gate_matrix(cfg.gate)
        self.labels = states.CARDINAL_LABELS
        self.inputs = {}
        self.targets = {}
        for label in self.labels:
            amps = np.array(states.cardinal_amplitudes(label), dtype=complex)
            out = self.unitary @ amps
            self.inputs[label] = encode_logical(fs, cfg.encoding, cfg.target_delta, amps)
            self.targets[label] = encode_logical(fs, cfg.encoding, cfg.target_delta, out)
        self._reward_cache: dict[str, object] = {}

    def _reward(self, label: str):
        if label not in self._reward_cache:
            extent = self.cfg.reward_extent or None
            table = tomography.wigner_table(self.fs, self.targets[label],
                                            extent=extent,
                                            resolution=self.cfg.reward_resolution)
            self._reward_cache[label] = rewards.WignerReward(
                table, n_points=self.cfg.reward_points, target=self.targets[label])
        return self._reward_cache[label]

    def epoch_setup(self, seed: int, epoch: int):
        """(initial oscillator state, reward fn) for this epoch's cardinal."""
        rng = np.random.default_rng(np.random.SeedSequence((seed, epoch, _CARDINAL_SALT)))
        label = self.labels[rng.integers(len(self.labels))]
        return self.inputs[label], self._reward(label)

    def average_gate_fidelity(self, agent, env_cfg) -> float:
        """Mean deterministic-policy fidelity over the six cardinal states."""
        scores = [env.evaluate_policy(agent, env_cfg, target=self.targets[lab],
                                      initial_state=self.inputs[lab])["metric"]
                  for lab in self.labels]
        return float(np.mean(scores))


# --- construction helpers ----------------------------------------------------

def build_agent(cfg: ExperimentConfig, rng: np.random.Generator):
    """Fresh agent with the experiment's network sizes (demo: no networks)."""
    if cfg.kind == "demo":
        return neural.ConstantGaussianAgent(neural.ConstantGaussianPolicy(rng, 1))
    env_cfg = experiments.env_config(cfg)
    dense = tuple(int(u) for u in cfg.dense_units)
    policy = neural.RecurrentGaussianPolicy(rng, env_cfg.obs_dim, env_cfg.action_dim,
                                            cfg.lstm_units, dense)
    value = neural.ValueNetwork(rng, env_cfg.obs_dim, cfg.lstm_units, dense)
    return neural.NeuralAgent(policy, value)


def build_state_reward(cfg: ExperimentConfig, fs, target: np.ndarray):
    """Reward scheme for a fixed-target experiment."""
    kind = cfg.reward_kind
    if kind == "fock":
        return rewards.FockReward(cfg.target_n)
    if kind == "projector":
        return rewards.TargetProjectorReward(target)
    if kind in ("wigner", "char"):
        extent = cfg.reward_extent or None
        builder = tomography.wigner_table if kind == "wigner" else tomography.char_table
        table = builder(fs, target, extent=extent, resolution=cfg.reward_resolution)
        cls = rewards.WignerReward if kind == "wigner" else rewards.CharFnReward
        return cls(table, n_points=cfg.reward_points, target=target)
    if kind == "stabilizer":
        return rewards.StabilizerReward(cfg.target_delta)
    raise ConfigError(f"unknown reward kind {kind!r}")


def _stabilizer_ops(cfg: ExperimentConfig, fs):
    sx, sp = states.gkp_stabilizers(fs, cfg.target_delta, lattice="1d")
    return [sx, sp]


def _make_eval_fn(cfg: ExperimentConfig, env_cfg, fs, target, gate_task):
    """Scalar progress metric: fidelity, mean stabilizer, gate AGF, or demo flip."""
    if cfg.kind == "demo":
        def eval_demo(agent):
            a = math.tanh(float(agent.policy.mu[0]))
            return math.sin(math.pi * a) ** 2
        return eval_demo
    if cfg.kind == "gate":
        return lambda agent: gate_task.average_gate_fidelity(agent, env_cfg)
    if cfg.reward_kind == "stabilizer":
        ops = _stabilizer_ops(cfg, fs)
        return lambda agent: env.evaluate_policy(agent, env_cfg,
                                                 metric="expectation", ops=ops)["metric"]
    return lambda agent: env.evaluate_policy(agent, env_cfg, target=target)["metric"]


def _run_dir(cfg: ExperimentConfig, seed: int, out_root) -> Path:
    root = Path(out_root) if out_root is not None else Path(cfg.out_dir)
    return root / cfg.name / f"seed{seed}"


def _write_report(run_dir: Path, report: dict) -> Path:
    path = run_dir / "report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


# --- training ----------------------------------------------------------------

def run_training(cfg: ExperimentConfig, seed: int = 0, out_root=None,
                 resume: bool = False, stop_threshold: float | None = None,
                 log=None) -> RunArtifacts:
    """Train one seed of an experiment, logging and checkpointing as it goes.

    Every epoch appends a metrics row; every ``eval_interval`` epochs (and at
    the end) the deterministic policy is evaluated and a resumable checkpoint
    is written.  ``stop_threshold`` ends the run early once the evaluation
    metric reaches it.  A numerical abort saves the last finite parameters
    before re-raising.
    """
    run_dir = _run_dir(cfg, seed, out_root)
    run_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = run_dir / "metrics.csv"
    ckpt_path = run_dir / CHECKPOINT_NAME
    experiments.save_config(cfg, run_dir / "config.txt")

    env_cfg = experiments.env_config(cfg) if cfg.kind != "demo" else None
    pcfg = experiments.ppo_config(cfg)
    fs = cached_fock_space(cfg.N) if cfg.kind != "demo" else None

    target = None
    gate_task = None
    reward_fn = None
    if cfg.kind == "state":
        target = states.make_target(fs, experiments.target_spec(cfg))
        reward_fn = build_state_reward(cfg, fs, target)
    elif cfg.kind == "gate":
        gate_task = GateTask(cfg, fs)
    eval_fn = _make_eval_fn(cfg, env_cfg, fs, target, gate_task)

    agent = build_agent(cfg, np.random.default_rng(
        np.random.SeedSequence((seed, _INIT_SALT))))
    names, arrays = neural.collect_params(agent.nets())
    optimizer = neural.AdamOptimizer(arrays, lr=cfg.lr,
                                     grad_clip=cfg.grad_clip)

    start_epoch = 0
    episodes = 0
    wallclock = 0.0
    best_metric = -math.inf
    last_metric = None
    if resume and ckpt_path.exists():
        ck = neural.load_checkpoint(ckpt_path)
        neural.assign_params(names, arrays, ck["params"])
        if ck["adam"] is not None:
            optimizer.load_state_arrays(ck["adam"])
        meta = ck["meta"]
        start_epoch = int(meta["epoch_next"])
        episodes = int(meta["episodes"])
        wallclock = float(meta["wallclock_s"])
        best_metric = float(meta["best_metric"])
        last_metric = meta.get("last_metric")

    def save(epoch_next: int, aborted: bool = False) -> None:
        meta = {"config": experiments.to_text(cfg), "seed": seed,
                "epoch_next": epoch_next, "episodes": episodes,
                "wallclock_s": wallclock, "best_metric": best_metric,
                "last_metric": last_metric, "aborted": aborted}
        neural.save_checkpoint(ckpt_path, names, arrays, optimizer, meta)

    new_file = not (resume and metrics_path.exists())
    csv_fh = open(metrics_path, "w" if new_file else "a", newline="",
                  encoding="utf-8")
    writer = csv.writer(csv_fh)
    if new_file:
        writer.writerow(METRICS_COLUMNS)

    aborted = False
    stopped_epoch = start_epoch
    try:
        for epoch in range(start_epoch, cfg.epochs):
            t0 = time.perf_counter()
            lr = pcfg.learning_rate(epoch)
            snapshot = [a.copy() for a in arrays]
            try:
                if cfg.kind == "demo":
                    batch = env.run_qubit_flip_batch(
                        agent, cfg.batch_episodes,
                        np.random.SeedSequence((seed, epoch)))
                    metrics = ppo.ppo_update(agent, batch, optimizer, pcfg, lr)
                elif cfg.kind == "gate":
                    init_state, reward_fn = gate_task.epoch_setup(seed, epoch)
                    metrics = ppo.train_epoch(agent, env_cfg, reward_fn, optimizer,
                                              pcfg, epoch, seed,
                                              initial_states=init_state)
                else:
                    metrics = ppo.train_epoch(agent, env_cfg, reward_fn, optimizer,
                                              pcfg, epoch, seed)
            except neural.NumericalAbort:
                for arr, snap in zip(arrays, snapshot):
                    arr[...] = snap
                aborted = True
                save(epoch, aborted=True)
                raise
            episodes += cfg.batch_episodes
            wallclock += time.perf_counter() - t0
            stopped_epoch = epoch + 1

            do_eval = ((epoch + 1) % cfg.eval_interval == 0
                       or epoch + 1 == cfg.epochs)
            if do_eval:
                last_metric = float(eval_fn(agent))
                best_metric = max(best_metric, last_metric)
                save(epoch + 1)
            writer.writerow([epoch + 1, episodes,
                             f"{metrics['mean_return']:.6f}",
                             f"{metrics['entropy']:.6f}",
                             "" if last_metric is None else f"{last_metric:.8f}",
                             f"{wallclock:.3f}"])
            csv_fh.flush()
            if log is not None and do_eval:
                log(f"{cfg.name} seed{seed} epoch {epoch + 1}: "
                    f"metric={last_metric:.4f} return={metrics['mean_return']:+.3f}")
            if (stop_threshold is not None and last_metric is not None
                    and do_eval and last_metric >= stop_threshold):
                break
    finally:
        csv_fh.close()
        if not aborted:
            save(stopped_epoch)

    report = {"experiment": cfg.name, "seed": seed, "kind": cfg.kind,
              "epochs_run": stopped_epoch, "episodes": episodes,
              "best_metric": None if best_metric == -math.inf else best_metric,
              "final_metric": last_metric, "wallclock_s": wallclock,
              "aborted": aborted}
    report_path = _write_report(run_dir, report)
    return RunArtifacts(run_dir, metrics_path, ckpt_path, report_path, report)


# --- baselines ---------------------------------------------------------------

def run_baseline(cfg: ExperimentConfig, method: str, seed: int = 0,
                 out_root=None) -> RunArtifacts:
    """Optimize open-loop controls with NM or SA under an episode budget.

    Uses the experiment's own env and reward code; the trace CSV shares the
    training schema with a leading ``method`` column, and the report carries
    the exact episode ledger plus the noise-free fidelity of the best point.
    """
    if method not in ("nm", "sa"):
        raise ConfigError(f"unknown baseline method {method!r}")
    if cfg.kind != "state":
        raise ConfigError("baselines optimize fixed-target state experiments")
    env_cfg = experiments.env_config(cfg)
    if env_cfg.uses_feedback:
        raise ConfigError("baselines require an open-loop circuit")

    run_dir = _run_dir(cfg, seed, out_root) / method
    run_dir.mkdir(parents=True, exist_ok=True)
    fs = cached_fock_space(cfg.N)
    target = states.make_target(fs, experiments.target_spec(cfg))
    reward_fn = build_state_reward(cfg, fs, target)
    shots = cfg.nm_shots if method == "nm" else cfg.sa_shots
    oracle = baselines.CostOracle(env_cfg, mode=cfg.baseline_mode, target=target,
                                  reward_fn=reward_fn, shots=shots,
                                  budget=cfg.baseline_budget, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence((seed, _INIT_SALT)))
    x0 = cfg.baseline_init_scale * rng.standard_normal(
        env_cfg.T * env_cfg.action_dim)

    t0 = time.perf_counter()
    if method == "nm":
        result = baselines.nelder_mead(oracle, x0, budget=cfg.baseline_budget,
                                       simplex_scale=cfg.baseline_init_scale)
    else:
        result = baselines.simulated_annealing(
            oracle, x0, budget=cfg.baseline_budget, t_visit=cfg.sa_t_visit,
            t_accept=cfg.sa_t_accept,
            restart_interval=cfg.sa_restart_interval, seed=seed)
    wallclock = time.perf_counter() - t0
    final_fidelity = oracle.exact_fidelity(result["x_best"])

    metrics_path = run_dir / "metrics.csv"
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("method",) + METRICS_COLUMNS)
        for i, (consumed, best_cost) in enumerate(result["trace"]):
            is_last = i == len(result["trace"]) - 1
            writer.writerow([method, i + 1, consumed, f"{-best_cost:.6f}", "",
                             f"{final_fidelity:.8f}" if is_last else "",
                             f"{wallclock:.3f}"])
    np.savez(run_dir / "best_params.npz", x_best=result["x_best"],
             raw_actions=result["x_best"].reshape(env_cfg.T, env_cfg.action_dim))

    report = {"experiment": cfg.name, "seed": seed, "method": method,
              "mode": cfg.baseline_mode, "shots": shots,
              "budget": cfg.baseline_budget,
              "episodes_used": oracle.episodes_used,
              "n_evals": oracle.n_evals, "n_iter": result["n_iter"],
              "best_cost": result["cost_best"],
              "final_fidelity": final_fidelity, "wallclock_s": wallclock}
    report_path = _write_report(run_dir, report)
    return RunArtifacts(run_dir, metrics_path, None, report_path, report)


# --- checkpoint-driven reports -------------------------------------------------

def _restore(checkpoint_path):
    """(cfg, agent, env_cfg, fs, meta) rebuilt from a checkpoint file."""
    ck = neural.load_checkpoint(checkpoint_path)
    meta = ck["meta"]
    if meta is None or "config" not in meta:
        raise ConfigError("checkpoint lacks an embedded config")
    cfg = experiments.from_text(meta["config"])
    agent = build_agent(cfg, np.random.default_rng(0))
    names, arrays = neural.collect_params(agent.nets())
    neural.assign_params(names, arrays, ck["params"])
    env_cfg = experiments.env_config(cfg) if cfg.kind != "demo" else None
    fs = cached_fock_space(cfg.N) if cfg.kind != "demo" else None
    return cfg, agent, env_cfg, fs, meta


def evaluate_checkpoint(checkpoint_path) -> dict:
    """Re-run the deterministic evaluation metric of a saved policy."""
    cfg, agent, env_cfg, fs, meta = _restore(checkpoint_path)
    target = None
    gate_task = None
    if cfg.kind == "state":
        target = states.make_target(fs, experiments.target_spec(cfg))
    elif cfg.kind == "gate":
        gate_task = GateTask(cfg, fs)
    metric = _make_eval_fn(cfg, env_cfg, fs, target, gate_task)(agent)
    return {"experiment": cfg.name, "seed": meta.get("seed"),
            "epoch": meta.get("epoch_next"), "episodes": meta.get("episodes"),
            "metric": float(metric)}


def report_histories(checkpoint_path, out_path=None) -> dict:
    """Per-measurement-history table for a trained feedback policy.

    Enumerates all 2^T outcome branches of the deterministic policy, sorts
    them by probability, and reports each branch's fidelity together with
    cumulative (post-selected) probability and fidelity curves.
    """
    cfg, agent, env_cfg, fs, _ = _restore(checkpoint_path)
    if cfg.kind != "state" or not env_cfg.uses_feedback:
        raise ConfigError("history reports need a feedback state experiment")
    target = states.make_target(fs, experiments.target_spec(cfg))
    branches = env.enumerate_branches(agent, env_cfg)
    total = env.branch_total_probability(branches)
    if abs(total - 1.0) > 1e-8:
        raise ConfigError(f"branch probabilities sum to {total!r}")

    entries = []
    for b in branches:
        fid = float(sum(abs(np.vdot(target, b.state[q])) ** 2 for q in (0, 1)))
        label = "".join("+" if o > 0 else "-" for o in b.outcomes)
        entries.append({"outcomes": label, "probability": float(b.prob),
                        "fidelity": fid})
    entries.sort(key=lambda e: e["probability"], reverse=True)
    cum_p = 0.0
    cum_pf = 0.0
    for e in entries:
        cum_p += e["probability"]
        cum_pf += e["probability"] * e["fidelity"]
        e["cum_probability"] = cum_p
        e["cum_fidelity"] = cum_pf / cum_p if cum_p > 0 else 0.0

    summary = {
        "experiment": cfg.name,
        "n_histories": len(entries),
        "total_probability": total,
        "weighted_fidelity": cum_pf,
        "best_history": max(entries, key=lambda e: e["fidelity"])["outcomes"],
        "best_history_fidelity": max(e["fidelity"] for e in entries),
    }
    if out_path is not None:
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("outcomes", "probability", "fidelity",
                             "cum_probability", "cum_fidelity"))
            for e in entries:
                writer.writerow([e["outcomes"], f"{e['probability']:.10f}",
                                 f"{e['fidelity']:.10f}",
                                 f"{e['cum_probability']:.10f}",
                                 f"{e['cum_fidelity']:.10f}"])
    return {"histories": entries, "summary": summary}
