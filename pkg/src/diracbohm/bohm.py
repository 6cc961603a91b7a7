"""Bohm momentum, quantum potential, residuals of the real/imaginary split, trajectories."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InconsistentGrids, SeedOutOfRange
from .fields import (
    DEFAULT_NODE_THRESHOLD,
    PhysicalParams,
    PolarField,
    Potential,
    SpatialGrid,
    WaveField,
    polar_decompose,
)
from .numerics import cubic_interp, cubic_stencil, fd_derivative, fill_gaps_linear, spectral_derivative


@dataclass(frozen=True, eq=False)
class MomentumField:
    grid: SpatialGrid
    time: float
    P_B: np.ndarray
    valid_mask: np.ndarray


@dataclass(frozen=True, eq=False)
class QuantumPotentialField:
    grid: SpatialGrid
    time: float
    Q_pot: np.ndarray
    valid_mask: np.ndarray


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """Positions ``[n_traj, n_times]``; ``frozen`` marks seeds stopped near a node or edge."""

    times: np.ndarray
    positions: np.ndarray
    seeds: np.ndarray
    frozen: np.ndarray = field(default=None)
    momenta: np.ndarray | None = None

    def __post_init__(self):
        if self.frozen is None:
            object.__setattr__(self, "frozen", np.zeros(len(self.seeds), bool))
        t = np.asarray(self.times)
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")

    @property
    def n_traj(self) -> int:
        return self.positions.shape[0]

    def crossings(self) -> int:
        """Number of (time, adjacent-pair) order inversions relative to the seed order."""
        order = np.argsort(self.seeds, kind="stable")
        p = self.positions[order]
        return int(np.sum(np.diff(p, axis=0) < 0))


def _valid(psi: WaveField, threshold: float) -> np.ndarray:
    r = np.abs(psi.values)
    return r >= threshold * r.max()


def probability_current(psi: WaveField) -> np.ndarray:
    """``hbar * Im(psi^* dpsi/dq)`` with a spectral derivative."""
    dpsi = spectral_derivative(psi.values, psi.grid.dq)
    return psi.params.hbar * np.imag(np.conj(psi.values) * dpsi)


def local_momentum(psi: WaveField, params: PhysicalParams | None = None,
                   node_threshold: float = DEFAULT_NODE_THRESHOLD) -> MomentumField:
    """Bohm momentum from the current: ``P_B = hbar Im(psi^* psi') / |psi|^2``."""
    if params is not None and params != psi.params:
        psi = WaveField(psi.grid, psi.time, psi.values, params)
    valid = _valid(psi, node_threshold)
    rho = psi.density
    p = np.zeros(psi.grid.n_points)
    p[valid] = probability_current(psi)[valid] / rho[valid]
    return MomentumField(psi.grid, psi.time, p, valid)


def phase_gradient(polar: PolarField, tol: float | None = None) -> MomentumField:
    """``dS/dq`` from the unwrapped action alone, by 12th-order finite differences.

    Valid only where the whole stencil is off the node mask and, when ``tol``
    is set, where a 10th-order estimate agrees to ``tol``. Elsewhere the
    phase is not resolved by the grid and the value is set to zero.
    """
    ds, ok = fd_derivative(polar.S, polar.grid.dq, valid=polar.valid, tol=tol)
    return MomentumField(polar.grid, polar.time, np.where(ok, ds, 0.0), ok)


def quantum_potential(polar: PolarField, params: PhysicalParams | None = None) -> QuantumPotentialField:
    """``Q = -(hbar^2 / 2m) R'' / R`` off the node mask, spectral second derivative."""
    params = params or polar.params
    d2r = spectral_derivative(polar.R, polar.grid.dq, order=2)
    valid = polar.valid
    qp = np.zeros(polar.grid.n_points)
    qp[valid] = -(params.hbar**2) / (2 * params.mass) * d2r[valid] / polar.R[valid]
    return QuantumPotentialField(polar.grid, polar.time, qp, valid)


# ------------------------------------------------------------------ residuals

@dataclass(frozen=True, eq=False)
class Residual:
    grid: SpatialGrid
    time: float
    values: np.ndarray
    valid_mask: np.ndarray

    @property
    def max_abs(self) -> float:
        v = self.values[self.valid_mask]
        return float(np.max(np.abs(v))) if v.size else 0.0

    @property
    def l2(self) -> float:
        """Discrete L2 norm ``sqrt(sum r^2 dq)`` over valid points."""
        v = self.values[self.valid_mask]
        return float(np.sqrt(np.sum(v**2) * self.grid.dq))

    def summary(self) -> dict:
        return {"max_abs": self.max_abs, "l2": self.l2}


def _pair_grid(a, b):
    if a.grid != b.grid:
        raise InconsistentGrids("snapshots live on different grids")
    dt = b.time - a.time
    if not dt > 0:
        raise InconsistentGrids("second snapshot must be later than the first")
    return a.grid, dt


def align_action(S0: np.ndarray, S1: np.ndarray, valid: np.ndarray, hbar: float) -> np.ndarray:
    """Shift ``S1`` by the multiple of ``2 pi hbar`` minimising ``sum |S1 - S0|`` over ``valid``."""
    d = (S1 - S0)[valid]
    period = 2 * np.pi * hbar
    k0 = np.median(d) / period
    best = min((np.floor(k0), np.ceil(k0)), key=lambda k: np.sum(np.abs(d - k * period)))
    return S1 - best * period


def _hj_terms(polar: PolarField, v: np.ndarray, params: PhysicalParams) -> np.ndarray:
    psi_vals = polar.R * np.exp(1j * polar.S / params.hbar)
    psi_vals = np.where(polar.node_mask, polar.residual, psi_vals)
    psi = WaveField(polar.grid, polar.time, psi_vals, params)
    grad_s = np.zeros(polar.grid.n_points)
    ok = polar.valid
    grad_s[ok] = probability_current(psi)[ok] / polar.R[ok] ** 2
    q_pot = quantum_potential(polar, params).Q_pot
    return grad_s**2 / (2 * params.mass) + q_pot + v


def qhj_residual(polar_t0: PolarField, polar_t1: PolarField, pot: Potential,
                 params: PhysicalParams | None = None) -> Residual:
    """Quantum Hamilton-Jacobi residual ``dS/dt + (S')^2/2m + Q + V`` at the mid-time.

    ``dS/dt`` is the centred difference of the two snapshots, the other
    terms are averaged over them; both are second order in the spacing.
    """
    grid, dt = _pair_grid(polar_t0, polar_t1)
    params = params or polar_t0.params
    valid = polar_t0.valid & polar_t1.valid
    S1 = align_action(polar_t0.S, polar_t1.S, valid, params.hbar)
    v = pot.on_grid(grid)
    rest = 0.5 * (_hj_terms(polar_t0, v, params) + _hj_terms(polar_t1, v, params))
    r = (S1 - polar_t0.S) / dt + rest
    return Residual(grid, 0.5 * (polar_t0.time + polar_t1.time), np.where(valid, r, 0.0), valid)


def continuity_residual(psi_t0: WaveField, psi_t1: WaveField, params: PhysicalParams | None = None,
                        node_threshold: float = DEFAULT_NODE_THRESHOLD) -> Residual:
    """Continuity residual ``d rho/dt + (1/m) dJ/dq`` at the mid-time, ``J = hbar Im(psi^* psi')``."""
    grid, dt = _pair_grid(psi_t0, psi_t1)
    params = params or psi_t0.params
    current = 0.5 * (probability_current(psi_t0) + probability_current(psi_t1))
    r = (psi_t1.density - psi_t0.density) / dt + spectral_derivative(current, grid.dq) / params.mass
    valid = _valid(psi_t0, node_threshold) & _valid(psi_t1, node_threshold)
    return Residual(grid, 0.5 * (psi_t0.time + psi_t1.time), np.where(valid, r, 0.0), valid)


def residual_series(states: list[WaveField], pot: Potential, node_threshold=DEFAULT_NODE_THRESHOLD) -> dict:
    """Worst-case residual summaries over consecutive snapshot pairs."""
    polars = [polar_decompose(s, node_threshold) for s in states]
    qhj = [qhj_residual(a, b, pot) for a, b in zip(polars, polars[1:])]
    cont = [continuity_residual(a, b, node_threshold=node_threshold) for a, b in zip(states, states[1:])]
    return {
        "qhj": {"l2": max(r.l2 for r in qhj), "max_abs": max(r.max_abs for r in qhj)},
        "continuity": {"l2": max(r.l2 for r in cont), "max_abs": max(r.max_abs for r in cont)},
    }


# -------------------------------------------------------------- trajectories

class _VelocityTable:
    """Velocity snapshots with local cubic interpolation in space and linear in time."""

    def __init__(self, states, params, node_threshold):
        self.grid = states[0].grid
        self.times = np.array([s.time for s in states])
        self.v = np.empty((len(states), self.grid.n_points))
        self.bad = np.empty((len(states), self.grid.n_points), bool)
        for i, s in enumerate(states):
            mf = local_momentum(s, params, node_threshold)
            self.v[i] = mf.P_B / params.mass
            self.bad[i] = ~mf.valid_mask

    def __call__(self, x, i, frac):
        g = self.grid
        j0, w = cubic_stencil(x, g.q_min, g.dq, g.n_points)
        cols = j0[:, None] + np.arange(4)
        if frac == 0.0:
            v = np.sum(self.v[i][cols] * w, axis=1)
            bad = self.bad[i][cols].any(axis=1)
        else:
            v = (1 - frac) * np.sum(self.v[i][cols] * w, axis=1) + frac * np.sum(self.v[i + 1][cols] * w, axis=1)
            bad = self.bad[i][cols].any(axis=1) | self.bad[i + 1][cols].any(axis=1)
        # leaving the interpolable part of the grid counts as hitting an edge
        s = (x - g.q_min) / g.dq
        bad |= (s < 1) | (s > g.n_points - 3)
        return v, bad


def _check_mesh(states):
    t = np.array([s.time for s in states])
    if len(t) < 2:
        raise ValueError("need at least two snapshots")
    h = np.diff(t)
    if not np.all(h > 0) or np.ptp(h) > 1e-9 * h.mean():
        raise ValueError("states must lie on a uniform increasing time mesh")
    return t


def integrate_trajectories(states: list[WaveField], seeds, params: PhysicalParams | None = None,
                           node_threshold: float = DEFAULT_NODE_THRESHOLD, substeps: int = 1,
                           workers: int = 1) -> TrajectorySet:
    """Integrate ``dq/dt = P_B(q, t)/m`` with classical RK4 through the snapshot sequence.

    Seeds whose interpolation stencil touches a node-masked point (within
    two spacings) are frozen in place and flagged.
    """
    params = params or states[0].params
    times = _check_mesh(states)
    grid = states[0].grid
    seeds = np.atleast_1d(np.asarray(seeds, dtype=float))
    if not np.all(grid.contains(seeds)):
        raise SeedOutOfRange("seed outside the grid")
    table = _VelocityTable(states, params, node_threshold)

    def run(chunk):
        return _rk4_first_order(table, times, chunk, substeps)

    chunks = np.array_split(np.arange(seeds.size), max(1, min(workers, seeds.size)))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        parts = list(ex.map(lambda idx: run(seeds[idx]), chunks))
    positions = np.concatenate([p for p, _ in parts], axis=0)
    frozen = np.concatenate([f for _, f in parts])
    return TrajectorySet(times, positions, seeds, frozen)


def _rk4_first_order(table, times, x0, substeps):
    n_t = len(times)
    pos = np.empty((x0.size, n_t))
    x = x0.copy()
    frozen = np.zeros(x0.size, bool)
    pos[:, 0] = x
    for i in range(n_t - 1):
        h = (times[i + 1] - times[i]) / substeps
        for s in range(substeps):
            f0 = s / substeps
            fm = (s + 0.5) / substeps
            f1 = (s + 1) / substeps
            k1, b1 = table(x, i, f0)
            k2, b2 = table(x + 0.5 * h * k1, i, fm)
            k3, b3 = table(x + 0.5 * h * k2, i, fm)
            k4, b4 = table(x + h * k3, i, f1) if f1 < 1 else table(x + h * k3, i + 1, 0.0)
            stop = frozen | b1 | b2 | b3 | b4
            frozen = stop
            x = np.where(stop, x, x + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6)
        pos[:, i + 1] = x
    return pos, frozen


def quantile_seeds(psi: WaveField, n: int) -> np.ndarray:
    """Deterministic seeds distributed as ``|psi|^2``: inverse CDF at ``(i + 1/2)/n``."""
    g = psi.grid
    rho = psi.density
    edges = g.q_min - 0.5 * g.dq + g.dq * np.arange(g.n_points + 1)
    cdf = np.concatenate([[0.0], np.cumsum(rho)])
    cdf /= cdf[-1]
    u = (np.arange(n) + 0.5) / n
    seeds = np.interp(u, cdf, edges)
    return np.clip(seeds, g.q_min, g.q_max - g.dq)


def density_l1(traj_positions: np.ndarray, psi: WaveField, bin_width: float) -> float:
    """L1 distance between a position histogram and ``|psi|^2`` integrated over the same bins."""
    g = psi.grid
    n_sub = max(1, int(round(bin_width / g.dq)))
    n_bins = g.n_points // n_sub
    edges = g.q_min - 0.5 * g.dq + n_sub * g.dq * np.arange(n_bins + 1)
    x = traj_positions[np.isfinite(traj_positions)]
    hist = np.histogram(x, bins=edges)[0] / x.size
    prob = psi.density[: n_bins * n_sub].reshape(n_bins, n_sub).sum(axis=1) * g.dq
    return float(np.sum(np.abs(hist - prob / prob.sum())))


# ------------------------------------------- second-order (Newtonian) form

def integrate_newton(states: list[WaveField], pot: Potential, seeds, params: PhysicalParams | None = None,
                     quantum_force: bool = True, node_threshold: float = DEFAULT_NODE_THRESHOLD) -> TrajectorySet:
    """Integrate ``m q'' = -d(V + Q)/dq`` with initial momentum ``P_B(q0)``.

    With ``quantum_force=False`` the quantum-potential force is dropped and
    the motion is purely classical (analytic ``dV/dq``), which is the
    classical limit of the guidance equation.
    """
    params = params or states[0].params
    times = _check_mesh(states)
    grid = states[0].grid
    seeds = np.atleast_1d(np.asarray(seeds, dtype=float))
    if not np.all(grid.contains(seeds)):
        raise SeedOutOfRange("seed outside the grid")
    m = params.mass
    p0 = local_momentum(states[0], params, node_threshold).P_B
    j0, w = cubic_stencil(seeds, grid.q_min, grid.dq, grid.n_points)
    p = cubic_interp(p0, j0, w)

    if quantum_force:
        qforce = np.empty((len(states), grid.n_points))
        for i, s in enumerate(states):
            qp = quantum_potential(polar_decompose(s, node_threshold), params)
            # Q is zeroed on the mask, so a global spectral derivative would ring
            dq_pot, ok = fd_derivative(qp.Q_pot, grid.dq, valid=qp.valid_mask, accuracy=8)
            qforce[i] = -fill_gaps_linear(np.nan_to_num(dq_pot), ok)

    def force(x, i, frac):
        f = -pot.gradient(x)
        if quantum_force:
            jj, ww = cubic_stencil(x, grid.q_min, grid.dq, grid.n_points)
            fq = cubic_interp(qforce[i], jj, ww)
            if frac:
                fq = (1 - frac) * fq + frac * cubic_interp(qforce[i + 1], jj, ww)
            f = f + fq
        return f

    x = seeds.copy()
    pos = np.empty((seeds.size, len(times)))
    mom = np.empty_like(pos)
    pos[:, 0], mom[:, 0] = x, p
    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        k1x, k1p = p / m, force(x, i, 0.0)
        k2x, k2p = (p + 0.5 * h * k1p) / m, force(x + 0.5 * h * k1x, i, 0.5)
        k3x, k3p = (p + 0.5 * h * k2p) / m, force(x + 0.5 * h * k2x, i, 0.5)
        k4x, k4p = (p + h * k3p) / m, force(x + h * k3x, i + 1, 0.0)
        x = x + h * (k1x + 2 * k2x + 2 * k3x + k4x) / 6
        p = p + h * (k1p + 2 * k2p + 2 * k3p + k4p) / 6
        pos[:, i + 1], mom[:, i + 1] = x, p
    return TrajectorySet(times, pos, seeds, momenta=mom)
