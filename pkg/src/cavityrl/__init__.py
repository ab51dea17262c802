"""Model-free reinforcement learning for oscillator-qubit quantum control.

The package simulates an episodic control process on a truncated harmonic
oscillator coupled to an ancilla qubit, trains recurrent Gaussian policies
with clipped-surrogate policy optimization from single-shot binary reward
measurements, and ships direct-search baselines plus an experiment harness.
"""

from . import (
    baselines,
    env,
    experiments,
    fock,
    gates,
    harness,
    neural,
    ppo,
    rewards,
    states,
    tomography,
)

__all__ = [
    "baselines",
    "env",
    "experiments",
    "fock",
    "gates",
    "harness",
    "neural",
    "ppo",
    "rewards",
    "states",
    "tomography",
]
