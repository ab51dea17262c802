"""Named experiment registry and flat-file configuration handling.

Each experiment is a fully populated ExperimentConfig whose defaults pin the
reference training runs (state preparation, adaptive feedback, logical
gates, and the two-level warmup demo).  Configs serialize to a flat
``key = value`` text format that round-trips exactly, and every key can be
overridden from the process environment as ``QRL_<KEY>`` or from
``key=value`` strings (CLI ``--set``).
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field

import numpy as np

ENV_PREFIX = "QRL_"


class ConfigError(ValueError):
    """Malformed configuration input (unknown key, bad value, bad name)."""


@dataclass
class ExperimentConfig:
    """Flat, serializable description of one run.

    kind selects the harness path: "state" trains toward a fixed target,
    "gate" samples a fresh logical cardinal state each epoch, "demo" is the
    network-free two-level warmup.
    """

    name: str = "fock1"
    kind: str = "state"
    # oscillator + circuit
    N: int = 100
    T: int = 5
    n_phases: int = 15
    circuit: str = "openloop_ideal"
    chi_tau: float = 0.0
    alpha_scale: float = 2.0
    phase_scale: float = math.pi
    # target
    target_kind: str = "fock"
    target_n: int = 1
    target_beta: complex = 2.0 + 0.0j
    target_amplitudes: tuple = ()
    target_delta: float = 0.35
    gate: str = ""
    encoding: str = ""
    # reward
    reward_kind: str = "fock"
    reward_points: int = 1
    reward_extent: float = 0.0
    reward_resolution: int = 101
    # optimization
    batch_episodes: int = 1000
    epochs: int = 4000
    lr: float = 1e-3
    lr_late: float = 0.0
    lr_drop_epoch: int = 0
    clip_ratio: float = 0.1
    value_weight: float = 5e-3
    opt_passes: int = 5
    gamma: float = 1.0
    grad_clip: float = 1.0
    # networks
    lstm_units: int = 16
    dense_units: tuple = (100, 50)
    # run bookkeeping
    seeds: tuple = (0, 1, 2)
    eval_interval: int = 20
    out_dir: str = "runs"
    # baselines
    baseline_mode: str = "averaged"
    nm_shots: int = 2000
    sa_shots: int = 1000
    baseline_budget: int = 4_000_000
    baseline_init_scale: float = 0.1
    sa_t_visit: float = 2.0
    sa_t_accept: float = 1.0
    sa_restart_interval: int = 50


def _fock(n: int) -> ExperimentConfig:
    return ExperimentConfig(
        name=f"fock{n}", target_kind="fock", target_n=n, reward_kind="fock",
        N=100, T=5, n_phases=15, batch_episodes=1000, epochs=4000,
        lr=1e-3, lr_late=1e-4, lr_drop_epoch=500, clip_ratio=0.1,
        lstm_units=16, dense_units=(100, 50))


def _registry() -> dict[str, ExperimentConfig]:
    reg: dict[str, ExperimentConfig] = {}
    for n in range(1, 11):
        reg[f"fock{n}"] = _fock(n)
    reg["cat2"] = ExperimentConfig(
        name="cat2", target_kind="cat", target_beta=2.0 + 0.0j,
        reward_kind="wigner", reward_points=1,
        N=100, T=5, n_phases=10, batch_episodes=1000, epochs=20000,
        lr=1e-3, clip_ratio=0.1, lstm_units=12, dense_units=())
    reg["bin1"] = ExperimentConfig(
        name="bin1", target_kind="binomial",
        target_amplitudes=(3, math.sqrt(3.0) / 2.0, 9, 0.5),
        reward_kind="wigner", reward_points=1,
        N=100, T=8, n_phases=15, batch_episodes=500, epochs=20000,
        lr=1e-3, clip_ratio=0.2, lstm_units=12, dense_units=(50,))
    reg["gkp"] = ExperimentConfig(
        name="gkp", target_kind="gkp1d", target_delta=0.35,
        reward_kind="stabilizer", alpha_scale=4.0,
        N=200, T=9, n_phases=30, batch_episodes=1000, epochs=10000,
        lr=1e-3, clip_ratio=0.25, lstm_units=12, dense_units=())
    reg["fock3-adaptive"] = ExperimentConfig(
        name="fock3-adaptive", target_kind="fock", target_n=3,
        reward_kind="fock", circuit="feedback_finite", chi_tau=0.4,
        N=100, T=5, n_phases=7, batch_episodes=1000, epochs=25000,
        lr=1e-3, lr_late=1e-4, lr_drop_epoch=1000, clip_ratio=0.1,
        lstm_units=16, dense_units=(100, 50))
    for gate, encoding, epochs, n_size, phi, horizon, delta in (
            ("H", "fock", 2000, 100, 15, 4, 0.0),
            ("X", "fock", 4000, 100, 15, 4, 0.0),
            ("sqrtH", "gkp", 8000, 150, 80, 1, 0.3)):
        reg[f"gate-{gate}"] = ExperimentConfig(
            name=f"gate-{gate}", kind="gate", gate=gate, encoding=encoding,
            target_delta=delta, reward_kind="wigner", reward_points=1,
            alpha_scale=4.0 if encoding == "gkp" else 2.0,
            N=n_size, T=horizon, n_phases=phi, batch_episodes=500,
            epochs=epochs, lr=1e-3, clip_ratio=0.1,
            lstm_units=12, dense_units=(50,))
    reg["qubit-flip"] = ExperimentConfig(
        name="qubit-flip", kind="demo", N=2, T=1, n_phases=0,
        reward_kind="demo", batch_episodes=30, epochs=50, lr=0.03,
        clip_ratio=0.1, lstm_units=0, dense_units=(), eval_interval=5,
        seeds=(0, 1, 2, 3, 4, 5))
    return reg


REGISTRY = _registry()


def experiment_names() -> list[str]:
    return sorted(REGISTRY)


def registry_lookup(name: str) -> ExperimentConfig:
    """Fresh copy of a named experiment's full configuration."""
    if name not in REGISTRY:
        known = ", ".join(experiment_names())
        raise ConfigError(f"unknown experiment {name!r}; available: {known}")
    return dataclasses.replace(REGISTRY[name])


def scaled(cfg: ExperimentConfig, scale: float) -> ExperimentConfig:
    """Desk-scale variant: shrink N, batch size, and epochs by `scale`.

    The oscillator keeps at least 40 levels (2 for the demo kind), batches
    at least 30 episodes, and runs at least 50 epochs so scaled configs stay
    trainable.  scale=1 returns the config unchanged.
    """
    if not 0.0 < scale <= 1.0:
        raise ConfigError(f"scale must be in (0, 1], got {scale}")
    if scale == 1.0 or cfg.kind == "demo":
        return dataclasses.replace(cfg)
    return dataclasses.replace(
        cfg,
        N=max(40, math.ceil(cfg.N * scale)),
        batch_episodes=max(30, math.ceil(cfg.batch_episodes * scale)),
        epochs=max(50, math.ceil(cfg.epochs * scale)),
        baseline_budget=max(10_000, math.ceil(cfg.baseline_budget * scale)))


# --- flat text serialization ------------------------------------------------

def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, complex):
        return repr(value)[1:-1] if repr(value).startswith("(") else repr(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def _parse_scalar(text: str):
    low = text.strip()
    try:
        return int(low)
    except ValueError:
        pass
    try:
        return float(low)
    except ValueError:
        pass
    return complex(low.replace(" ", ""))


def _coerce(name: str, ftype, text: str):
    text = text.strip()
    try:
        if ftype is str:
            return text
        if ftype is int:
            return int(text)
        if ftype is float:
            return float(text)
        if ftype is complex:
            return complex(text.replace(" ", ""))
        if ftype is tuple:
            if not text:
                return ()
            return tuple(_parse_scalar(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {text!r} ({exc})") from exc
    raise ConfigError(f"unsupported field type for {name!r}")


_FIELDS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
_TYPES = {"str": str, "int": int, "float": float, "complex": complex, "tuple": tuple}


def _field_type(name: str):
    ftype = _FIELDS[name]
    return _TYPES[ftype] if isinstance(ftype, str) else ftype


def to_text(cfg: ExperimentConfig) -> str:
    """Canonical flat key = value rendering, one field per line."""
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}"
             for f in dataclasses.fields(cfg)]
    return "\n".join(lines) + "\n"


def from_text(text: str) -> ExperimentConfig:
    """Parse the flat format; unknown keys and bad values raise ConfigError."""
    values: dict = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {rawline!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, _field_type(key), val)
    return ExperimentConfig(**values)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_text(cfg))


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return from_text(fh.read())


def apply_overrides(cfg: ExperimentConfig, pairs) -> ExperimentConfig:
    """Apply "key=value" strings (highest-precedence CLI overrides)."""
    updates: dict = {}
    for pair in pairs:
        key, sep, val = pair.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        updates[key] = _coerce(key, _field_type(key), val)
    return dataclasses.replace(cfg, **updates)


def apply_env_overrides(cfg: ExperimentConfig, environ=None) -> ExperimentConfig:
    """Apply QRL_<KEY> process-environment overrides (upper-cased keys)."""
    environ = os.environ if environ is None else environ
    updates: dict = {}
    for fname in _FIELDS:
        key = ENV_PREFIX + fname.upper()
        if key in environ:
            updates[fname] = _coerce(fname, _field_type(fname), environ[key])
    return dataclasses.replace(cfg, **updates) if updates else cfg


def env_config(cfg: ExperimentConfig):
    """The env.EnvConfig slice of an experiment configuration."""
    from . import env

    return env.EnvConfig(N=cfg.N, T=cfg.T, n_phases=cfg.n_phases,
                         circuit=cfg.circuit, chi_tau=cfg.chi_tau,
                         alpha_scale=cfg.alpha_scale, phase_scale=cfg.phase_scale)


def ppo_config(cfg: ExperimentConfig):
    """The ppo.PPOConfig slice of an experiment configuration."""
    from . import ppo

    return ppo.PPOConfig(
        batch_episodes=cfg.batch_episodes, epochs=cfg.epochs, lr=cfg.lr,
        lr_late=cfg.lr_late or None,
        lr_drop_epoch=cfg.lr_drop_epoch or None,
        clip_ratio=cfg.clip_ratio, value_weight=cfg.value_weight,
        opt_passes=cfg.opt_passes, gamma=cfg.gamma, grad_clip=cfg.grad_clip)


def target_spec(cfg: ExperimentConfig):
    """The states.TargetSpec slice for state-preparation experiments."""
    from . import states

    kind = cfg.target_kind
    if kind == "fock":
        params = {"n": cfg.target_n}
    elif kind == "cat":
        params = {"beta": cfg.target_beta}
    elif kind == "coherent":
        params = {"alpha": cfg.target_beta}
    elif kind == "binomial":
        pairs = cfg.target_amplitudes
        if len(pairs) % 2:
            raise ConfigError("binomial amplitudes must be (level, amp) pairs")
        params = {"amplitudes": {int(pairs[i]): complex(pairs[i + 1])
                                 for i in range(0, len(pairs), 2)}}
    elif kind == "gkp1d":
        params = {"delta": cfg.target_delta}
    else:
        raise ConfigError(f"unknown target kind {kind!r}")
    return states.TargetSpec(kind, params)
