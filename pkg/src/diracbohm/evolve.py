"""Time evolution under H = p^2/2m + V(q) and basic expectation values."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import UnstableStep
from .fields import PhysicalParams, Potential, WaveField
from .numerics import spectral_derivative, wavenumbers

log = logging.getLogger(__name__)

METHODS = ("split", "crank-nicolson")
BOUNDARIES = ("periodic", "hardwall")
NORM_DRIFT_LIMIT = 1e-4


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float = 1e-3
    n_steps: int = 1000
    method: str = "split"
    boundary: str = "periodic"
    save_every: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0 or self.save_every < 1:
            raise ValueError("n_steps must be >= 0 and save_every >= 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")


class _SplitStepper:
    """Strang splitting: half potential kick, exact kinetic drift, half kick."""

    def __init__(self, grid, v, dt, params, boundary):
        hbar, m = params.hbar, params.mass
        self.half_kick = np.exp(-0.5j * dt * v / hbar)
        n, dq = grid.n_points, grid.dq
        self.boundary = boundary
        if boundary == "periodic":
            k = wavenumbers(n, dq)
        else:
            # DST-I modes vanish one spacing outside both ends of the grid
            k = np.pi * np.arange(1, n + 1) / ((n + 1) * dq)
        self.drift = np.exp(-0.5j * dt * hbar * k**2 / m)

    def __call__(self, psi):
        psi = self.half_kick * psi
        if self.boundary == "periodic":
            psi = np.fft.ifft(self.drift * np.fft.fft(psi))
        else:
            psi = scipy.fft.idst(self.drift * scipy.fft.dst(psi, type=1), type=1)
        return self.half_kick * psi


class _CrankNicolsonStepper:
    """Second-order implicit stepper with a three-point Laplacian."""

    def __init__(self, grid, v, dt, params, boundary):
        hbar, m = params.hbar, params.mass
        n, dq = grid.n_points, grid.dq
        main = np.full(n, -2.0)
        off = np.ones(n - 1)
        lap = sp.diags([off, main, off], [-1, 0, 1], format="lil")
        if boundary == "periodic":
            lap[0, n - 1] = 1.0
            lap[n - 1, 0] = 1.0
        lap = lap.tocsc() / dq**2
        h = -(hbar**2) / (2 * m) * lap + sp.diags(v)
        eye = sp.identity(n, format="csc")
        self.lhs = splu((eye + 0.5j * dt / hbar * h).tocsc())
        self.rhs = (eye - 0.5j * dt / hbar * h).tocsr()

    def __call__(self, psi):
        return self.lhs.solve(self.rhs @ psi)


def evolve(psi: WaveField, pot: Potential, cfg: EvolutionConfig,
           params: PhysicalParams | None = None) -> list[WaveField]:
    """Propagate ``psi`` for ``cfg.n_steps`` steps.

    Returns the initial state followed by every ``cfg.save_every``-th state.
    Raises UnstableStep if the norm drifts by more than 1e-4.
    """
    params = params or psi.params
    grid = psi.grid
    v = pot.on_grid(grid)
    if cfg.dt * np.max(np.abs(v)) / params.hbar >= 0.5:
        warnings.warn("dt*max|V|/hbar >= 0.5; phase per step is large", RuntimeWarning, stacklevel=2)

    stepper_cls = _SplitStepper if cfg.method == "split" else _CrankNicolsonStepper
    step = stepper_cls(grid, v, cfg.dt, params, cfg.boundary)

    values = np.array(psi.values, dtype=complex)
    norm0 = psi.norm()
    out = [WaveField(grid, psi.time, values, params)]
    for i in range(1, cfg.n_steps + 1):
        values = step(values)
        if i % cfg.save_every == 0 or i == cfg.n_steps:
            t = psi.time + i * cfg.dt
            state = WaveField(grid, t, values, params)
            drift = abs(state.norm() - norm0)
            if drift > NORM_DRIFT_LIMIT:
                raise UnstableStep(f"norm drifted by {drift:.3e} at t={t:g}")
            if i % cfg.save_every == 0:
                out.append(state)
    _check_boundary(out)
    return out


def _check_boundary(states, edge_fraction=0.02, limit=1e-10):
    n = states[0].grid.n_points
    w = max(1, int(edge_fraction * n))
    dq = states[0].grid.dq
    worst = max(float((s.density[:w].sum() + s.density[-w:].sum()) * dq) for s in states)
    if worst > limit:
        warnings.warn(f"probability {worst:.2e} reached the grid edges", RuntimeWarning, stacklevel=3)
    return worst


# ------------------------------------------------------------- diagnostics

def expectation_q(psi: WaveField) -> float:
    return float(np.sum(psi.grid.q * psi.density) * psi.grid.dq)


def expectation_p(psi: WaveField, params: PhysicalParams | None = None) -> float:
    hbar = (params or psi.params).hbar
    dpsi = spectral_derivative(psi.values, psi.grid.dq)
    return float(np.real(np.sum(np.conj(psi.values) * (-1j * hbar) * dpsi)) * psi.grid.dq)


def kinetic_energy(psi: WaveField, params: PhysicalParams | None = None) -> float:
    params = params or psi.params
    d2 = spectral_derivative(psi.values, psi.grid.dq, order=2)
    t = -(params.hbar**2) / (2 * params.mass) * np.sum(np.conj(psi.values) * d2) * psi.grid.dq
    return float(t.real)


def energy(psi: WaveField, pot: Potential, params: PhysicalParams | None = None) -> float:
    v = pot.on_grid(psi.grid)
    return kinetic_energy(psi, params) + float(np.sum(v * psi.density) * psi.grid.dq)


def run_summary(states: list[WaveField], pot: Potential) -> dict:
    n0 = states[0].norm()
    e0 = energy(states[0], pot)
    norms = np.array([s.norm() for s in states])
    energies = np.array([energy(s, pot) for s in states])
    return {
        "n_snapshots": len(states),
        "t_final": states[-1].time,
        "norm_drift": float(np.max(np.abs(norms - n0))),
        "energy_initial": e0,
        "energy_drift": float(np.max(np.abs(energies - e0))),
    }
