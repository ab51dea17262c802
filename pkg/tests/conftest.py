"""Shared fixtures: small Fock spaces and reference states reused across files."""

import numpy as np
import pytest

from cavityrl import fock, states


@pytest.fixture(scope="session")
def fs24():
    return fock.cached_fock_space(24)


@pytest.fixture(scope="session")
def fs40():
    return fock.cached_fock_space(40)


@pytest.fixture(scope="session")
def fs60():
    return fock.cached_fock_space(60)


@pytest.fixture(scope="session")
def cat2_state(fs40):
    return states.cat(fs40, 2.0 + 0.0j)


def random_osc_state(rng: np.random.Generator, N: int, n_max: int) -> np.ndarray:
    """Normalized random oscillator state supported on levels [0, n_max]."""
    psi = np.zeros(N, dtype=complex)
    psi[: n_max + 1] = rng.standard_normal(n_max + 1) + 1j * rng.standard_normal(n_max + 1)
    return psi / np.linalg.norm(psi)


def random_joint_state(rng: np.random.Generator, N: int, n_max: int) -> np.ndarray:
    """Normalized random joint (2, N) state supported on levels [0, n_max]."""
    psi = np.zeros((2, N), dtype=complex)
    block = rng.standard_normal((2, n_max + 1)) + 1j * rng.standard_normal((2, n_max + 1))
    psi[:, : n_max + 1] = block
    return psi / np.linalg.norm(psi)
