"""Phase-space tomography utilities.

Wigner function convention W(alpha) = (2/pi) <D(alpha) Pi D^dag(alpha)> so
that the function integrates to 1 over the complex plane for a normalized
state.  Characteristic function C(alpha) = <D(alpha)>.  Overlap fidelities
cross-check against pi * integral(W_psi W_phi).

Displacing a state by alpha needs roughly (|alpha| + sqrt(n)) ** 2 Fock
levels; anything less aliases because the truncated displacement stays
exactly unitary.  Evaluations therefore zero-pad the state into a large
enough cached Fock space before displacing, and tables are masked to the
disk |alpha| <= extent (the square's corners carry no signal and would
inflate the required dimension by sqrt(2)).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .fock import FockSpace, cached_fock_space

DEFAULT_RESOLUTION = 241

_EVAL_DIM_CAP = 420


_cached_space = cached_fock_space


def _effective_levels(psi: np.ndarray, tail_tol: float = 1e-13) -> int:
    """Smallest support size whose excluded tail weight is below tail_tol."""
    w = np.abs(psi) ** 2
    rev = np.cumsum(w[::-1])
    keep = np.nonzero(rev > tail_tol)[0]
    return int(psi.size - keep[0]) if keep.size else 1


def _lift(fs: FockSpace, psi: np.ndarray, radius: float) -> tuple[FockSpace, np.ndarray]:
    """Zero-pad psi so displacements up to radius stay faithful."""
    n_eff = _effective_levels(psi)
    need = int(np.ceil((radius + np.sqrt(n_eff + 1.0) + 4.0) ** 2))
    if need <= fs.N:
        return fs, psi
    if need > _EVAL_DIM_CAP:
        raise ValueError(
            f"phase-space evaluation needs {need} Fock levels (cap {_EVAL_DIM_CAP}); "
            "shrink the grid extent or the state support"
        )
    big = _cached_space(need)
    padded = np.zeros(need, dtype=complex)
    padded[: psi.size] = psi
    return big, padded


@dataclass(frozen=True)
class PhaseSpaceTable:
    """Values of a real phase-space function on a square grid.

    Grid nodes are alpha = x + i y for x, y in linspace(-extent, extent,
    resolution); cell is the node spacing squared (Riemann weight).
    """

    kind: str
    extent: float
    resolution: int
    axis: np.ndarray
    values: np.ndarray

    @property
    def cell(self) -> float:
        return float(self.axis[1] - self.axis[0]) ** 2

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def norm_abs(self) -> float:
        """integral |f| d^2alpha by the grid rule."""
        return float(np.sum(np.abs(self.values)) * self.cell)

    @property
    def delta_excess(self) -> float:
        """integral |W| - 1: the negativity excess of a Wigner table."""
        return self.norm_abs - 1.0

    def interp_abs(self, alphas: np.ndarray) -> np.ndarray:
        """Bilinear interpolation of |values| at complex points inside the box."""
        x = np.clip(np.real(alphas), self.axis[0], self.axis[-1])
        y = np.clip(np.imag(alphas), self.axis[0], self.axis[-1])
        h = self.axis[1] - self.axis[0]
        fx = (x - self.axis[0]) / h
        fy = (y - self.axis[0]) / h
        ix = np.clip(fx.astype(int), 0, self.resolution - 2)
        iy = np.clip(fy.astype(int), 0, self.resolution - 2)
        tx, ty = fx - ix, fy - iy
        v = np.abs(self.values)
        return (
            v[ix, iy] * (1 - tx) * (1 - ty)
            + v[ix + 1, iy] * tx * (1 - ty)
            + v[ix, iy + 1] * (1 - tx) * ty
            + v[ix + 1, iy + 1] * tx * ty
        )

    def sign_at(self, alphas: np.ndarray) -> np.ndarray:
        """Sign of the table value at the nearest grid node."""
        h = self.axis[1] - self.axis[0]
        ix = np.clip(np.round((np.real(alphas) - self.axis[0]) / h).astype(int), 0, self.resolution - 1)
        iy = np.clip(np.round((np.imag(alphas) - self.axis[0]) / h).astype(int), 0, self.resolution - 1)
        s = np.sign(self.values[ix, iy])
        return np.where(s == 0.0, 1.0, s)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["alpha_re", "alpha_im", "value"])
            for i, xr in enumerate(self.axis):
                for j, xi in enumerate(self.axis):
                    w.writerow([f"{xr:.8g}", f"{xi:.8g}", f"{self.values[i, j]:.10g}"])


def _displaced_states(fs: FockSpace, psi: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """Rows D(-alpha_k) psi for a batch of displacement amplitudes.

    Shares the quadrature-basis matrix products across the batch; only the
    diagonal phases differ per point.  Includes the scalar phase of the
    split-operator identity, so the rows are exact up to truncation.
    """
    alphas = np.asarray(alphas, dtype=complex).ravel()
    re, im = alphas.real, alphas.imag
    # D(-alpha) = e^{...} U_x diag(e^{-i sqrt2 im x}) U_x^+ U_p diag(e^{+i sqrt2 re p}) U_p^+
    v0 = fs.p_vecs.conj().T @ psi
    ph_p = np.exp(1j * np.sqrt(2.0) * re[:, None] * fs.p_vals[None, :])
    v1 = (ph_p * v0[None, :]) @ fs.p_vecs.T
    v2 = v1 @ fs.x_vecs.conj()
    ph_x = np.exp(-1j * np.sqrt(2.0) * im[:, None] * fs.x_vals[None, :])
    v3 = (ph_x * v2) @ fs.x_vecs.T
    phase = np.exp(-1j * im * re)
    return phase[:, None] * v3


def wigner(fs: FockSpace, psi: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """W(alpha) = (2/pi) <psi| D(alpha) Pi D^dag(alpha) |psi> at given points."""
    shape = np.shape(alphas)
    flat = np.ravel(np.asarray(alphas, dtype=complex))
    radius = float(np.max(np.abs(flat))) if flat.size else 0.0
    big, padded = _lift(fs, psi, radius)
    disp = _displaced_states(big, padded, flat)
    par = ((-1.0) ** np.arange(big.N))[None, :]
    w = (2.0 / np.pi) * np.sum(par * np.abs(disp) ** 2, axis=1)
    return w.reshape(shape) if shape else float(w[0])


def char_fn(fs: FockSpace, psi: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """C(alpha) = <psi| D(alpha) |psi> at given points."""
    shape = np.shape(alphas)
    flat = np.ravel(np.asarray(alphas, dtype=complex))
    radius = float(np.max(np.abs(flat))) if flat.size else 0.0
    big, padded = _lift(fs, psi, radius)
    disp = _displaced_states(big, padded, -flat)  # rows D(alpha) psi
    c = disp @ np.conj(padded)
    return c.reshape(shape) if shape else complex(c[0])


def default_extent(fs: FockSpace, psi: np.ndarray) -> float:
    """Box half-width max(4, sqrt(2 <n>) + 3) covering the state support."""
    nbar = float(np.real(np.vdot(psi, fs.n_op @ psi)))
    return max(4.0, np.sqrt(2.0 * nbar) + 3.0)


def wigner_table(
    fs: FockSpace,
    psi: np.ndarray,
    extent: float | None = None,
    resolution: int = DEFAULT_RESOLUTION,
    norm_tol: float = 0.01,
) -> PhaseSpaceTable:
    """Tabulate W on a square grid and verify it integrates to 1.

    Raises ValueError when the grid misses support (norm check beyond
    norm_tol), which catches both too-small extents and too-coarse grids.
    """
    L = default_extent(fs, psi) if extent is None else float(extent)
    axis = np.linspace(-L, L, resolution)
    pts = axis[:, None] + 1j * axis[None, :]
    mask = np.abs(pts) <= L
    vals = np.zeros_like(pts, dtype=float)
    vals[mask] = wigner(fs, psi, pts[mask])
    table = PhaseSpaceTable("wigner", L, resolution, axis, vals)
    total = float(np.sum(vals) * table.cell)
    if abs(total - 1.0) > norm_tol:
        raise ValueError(f"Wigner grid integral {total:.4f} deviates from 1; enlarge the box")
    return table


def char_table(
    fs: FockSpace,
    psi: np.ndarray,
    extent: float | None = None,
    resolution: int = DEFAULT_RESOLUTION,
    imag_tol: float = 1e-8,
) -> PhaseSpaceTable:
    """Tabulate a real characteristic function on a square grid.

    Restricted to targets with real C (states with a real Fock expansion up
    to global phase); raises otherwise since the sign-weighted reward needs
    a real table.
    """
    L = default_extent(fs, psi) if extent is None else float(extent)
    axis = np.linspace(-L, L, resolution)
    pts = axis[:, None] + 1j * axis[None, :]
    mask = np.abs(pts) <= L
    cvals = char_fn(fs, psi, pts[mask])
    if float(np.max(np.abs(cvals.imag))) > imag_tol:
        raise ValueError("target characteristic function is complex-valued; "
                         "sign-weighted sampling undefined")
    vals = np.zeros_like(pts, dtype=float)
    vals[mask] = cvals.real
    return PhaseSpaceTable("char", L, resolution, axis, vals)


def fidelity(psi: np.ndarray, phi: np.ndarray) -> float:
    """Pure-state overlap fidelity |<psi|phi>|^2."""
    return float(np.abs(np.vdot(psi, phi)) ** 2)


def fidelity_wigner_overlap(fs: FockSpace, psi: np.ndarray, phi: np.ndarray,
                            extent: float | None = None,
                            resolution: int = DEFAULT_RESOLUTION) -> float:
    """pi * integral(W_psi W_phi) by the grid rule (cross-validation route)."""
    L = max(default_extent(fs, psi), default_extent(fs, phi)) if extent is None else extent
    t1 = wigner_table(fs, psi, L, resolution)
    t2 = wigner_table(fs, phi, L, resolution)
    return float(np.pi * np.sum(t1.values * t2.values) * t1.cell)


def estimator_variance(delta_excess: float, fidelity_value: float) -> float:
    """Variance 4 (1+delta)^2 - F^2 of the single-shot unbiased fidelity estimator."""
    return 4.0 * (1.0 + delta_excess) ** 2 - fidelity_value**2


def sample_bound(delta_excess: float, fidelity_value: float) -> float:
    """Shots needed to resolve 1 - F at unit signal-to-noise with the Wigner reward."""
    if not 0.0 <= fidelity_value < 1.0:
        raise ValueError("fidelity must lie in [0, 1)")
    return estimator_variance(delta_excess, fidelity_value) / (1.0 - fidelity_value) ** 2


def sample_bound_projector(fidelity_value: float) -> float:
    """Same bound for the exact target-projector reward: F / (1 - F)."""
    if not 0.0 <= fidelity_value < 1.0:
        raise ValueError("fidelity must lie in [0, 1)")
    return fidelity_value / (1.0 - fidelity_value)


def avg_state_fidelity(targets: list[np.ndarray], finals: list[tuple[float, np.ndarray]] | list[np.ndarray]) -> float:
    """Mean branch-weighted overlap fidelity over a list of target states.

    finals[i] is either a bare state or a list of (probability, state)
    branches for target i.
    """
    if len(targets) != len(finals):
        raise ValueError("targets and finals must pair up")
    total = 0.0
    for tgt, fin in zip(targets, finals):
        if isinstance(fin, np.ndarray):
            total += fidelity(tgt, fin)
        else:
            total += sum(p * fidelity(tgt, st) for p, st in fin)
    return total / len(targets)


class PhaseSpaceSampler:
    """Rejection sampler for alpha distributed proportional to |table values|."""

    def __init__(self, table: PhaseSpaceTable, max_tries: int = 10_000):
        if table.max_abs <= 0:
            raise ValueError("cannot sample from an all-zero table")
        self.table = table
        self.max_tries = max_tries

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n accepted points (complex array)."""
        out = np.empty(n, dtype=complex)
        filled = 0
        L, m = self.table.extent, self.table.max_abs
        for _ in range(self.max_tries):
            need = n - filled
            batch = max(4 * need, 64)
            pts = (rng.uniform(-L, L, batch) + 1j * rng.uniform(-L, L, batch))
            keep = rng.uniform(0.0, m, batch) < self.table.interp_abs(pts)
            acc = pts[keep][:need]
            out[filled: filled + acc.size] = acc
            filled += acc.size
            if filled == n:
                return out
        raise RuntimeError("rejection sampler failed to fill the request; table nearly empty")
