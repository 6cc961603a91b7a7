"""Momentum sprays, the mean-momentum double integral and Nelson path ensembles.

The stochastic paths follow the forward diffusion

    X_{k+1} = X_k + b(X_k, t_k) dt + sqrt(hbar dt / m) xi_k,
    b = (P + hbar rho' / (2 rho)) / m,

whose density stays ``|psi|^2`` and whose current velocity is ``P / m``.
Conditional averages of the symmetric difference velocity are compared
with the mean momentum of the wave function.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bohm import MomentumField, _check_mesh, probability_current
from .errors import EmptyBin
from .fields import DEFAULT_NODE_THRESHOLD, PhysicalParams, SpatialGrid, WaveField
from .numerics import spectral_derivative

BLOCK_SIZE = 8192
FORBIDDEN_DENSITY = 1e-12


# ------------------------------------------------------- momentum sprays

@dataclass(frozen=True, eq=False)
class MomentumRepresentation:
    """``phi(p)`` on the momentum grid conjugate to the spatial grid (ascending ``p``)."""

    p_grid: np.ndarray
    phi: np.ndarray
    time: float
    q_min: float
    hbar: float

    @property
    def dp(self) -> float:
        return float(self.p_grid[1] - self.p_grid[0])

    def norm(self) -> float:
        return float(np.sum(np.abs(self.phi) ** 2) * self.dp)


def to_momentum_rep(psi: WaveField) -> MomentumRepresentation:
    """``phi(p) = (2 pi hbar)^(-1/2) sum_j psi(q_j) exp(-i p q_j / hbar) dq``."""
    g, hbar = psi.grid, psi.params.hbar
    p = 2 * np.pi * hbar * np.fft.fftfreq(g.n_points, d=g.dq)
    phi = g.dq / np.sqrt(2 * np.pi * hbar) * np.exp(-1j * p * g.q_min / hbar) * np.fft.fft(psi.values)
    order = np.argsort(p)
    return MomentumRepresentation(p[order], phi[order], psi.time, g.q_min, hbar)


def from_momentum_rep(rep: MomentumRepresentation, grid: SpatialGrid,
                      params: PhysicalParams | None = None) -> WaveField:
    params = params or PhysicalParams(hbar=rep.hbar)
    p = 2 * np.pi * rep.hbar * np.fft.fftfreq(grid.n_points, d=grid.dq)
    phi = np.empty(grid.n_points, complex)
    phi[np.argsort(p)] = rep.phi
    vals = np.fft.ifft(phi * np.exp(1j * p * grid.q_min / rep.hbar)) * grid.n_points * rep.dp / np.sqrt(2 * np.pi * rep.hbar)
    return WaveField(grid, rep.time, vals, params)


def _valid(psi, threshold):
    r = np.abs(psi.values)
    return r >= threshold * r.max()


def moyal_mean_momentum(psi: WaveField, params: PhysicalParams | None = None,
                        node_threshold: float = DEFAULT_NODE_THRESHOLD, chunk: int = 256) -> MomentumField:
    """Mean momentum from the incoming/outgoing momentum sprays.

    For each point ``Q`` off the node mask, evaluates the double sum over
    ``(p, p')`` of ``(p + p')/2 * conj(phi(p') e^{i p' Q}) * phi(p) e^{i p Q}``
    (the delta constraint fixes ``P = (p + p')/2``), then divides by ``rho(Q)``.
    Cost is O(n^2) per point.
    """
    if params is not None and params != psi.params:
        psi = WaveField(psi.grid, psi.time, psi.values, params)
    rep = to_momentum_rep(psi)
    hbar, p, dp = rep.hbar, rep.p_grid, rep.dp
    weights = 0.5 * (p[:, None] + p[None, :])
    valid = _valid(psi, node_threshold)
    pts = np.flatnonzero(valid)
    q = psi.grid.q
    amp = rep.phi * dp / np.sqrt(2 * np.pi * hbar)
    flux = np.zeros(psi.grid.n_points)
    for start in range(0, pts.size, chunk):
        idx = pts[start:start + chunk]
        waves = amp[None, :] * np.exp(1j * np.outer(q[idx], p) / hbar)
        flux[idx] = np.real(np.sum((waves.conj() @ weights) * waves, axis=1))
    out = np.zeros_like(flux)
    out[valid] = flux[valid] / psi.density[valid]
    return MomentumField(psi.grid, psi.time, out, valid)


def moyal_point_form(psi: WaveField, node_threshold: float = DEFAULT_NODE_THRESHOLD) -> MomentumField:
    """``(hbar/2i) [(d/dq1 - d/dq2) psi(q1) psi*(q2)]_{q1=q2=Q} / rho(Q)``."""
    dq, hbar = psi.grid.dq, psi.params.hbar
    d1 = spectral_derivative(psi.values, dq)
    d2 = spectral_derivative(np.conj(psi.values), dq)
    flux = (hbar / 2j) * (d1 * np.conj(psi.values) - psi.values * d2)
    valid = _valid(psi, node_threshold)
    out = np.zeros(psi.grid.n_points)
    out[valid] = flux.real[valid] / psi.density[valid]
    return MomentumField(psi.grid, psi.time, out, valid)


def relative_momentum_error(a: MomentumField, b: MomentumField, psi: WaveField) -> float:
    """``max |a - b|`` over points valid in both, relative to the rms momentum of ``psi``."""
    both = a.valid_mask & b.valid_mask
    if not both.any():
        return float("nan")
    dpsi = spectral_derivative(psi.values, psi.grid.dq)
    p_rms = psi.params.hbar * np.sqrt(np.sum(np.abs(dpsi) ** 2) * psi.grid.dq / psi.norm())
    return float(np.max(np.abs(a.P_B[both] - b.P_B[both])) / p_rms)


# ------------------------------------------------------------ path ensembles

@dataclass(frozen=True, eq=False)
class StreamedStats:
    """Per-step, per-bin sums of the symmetric/forward/backward velocities.

    Row ``k`` refers to time index ``k``; rows 0 and the last stay empty.
    """

    edges: np.ndarray
    counts: np.ndarray
    sum_v: np.ndarray
    sum_v2: np.ndarray
    sum_forward: np.ndarray
    sum_backward: np.ndarray


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    n_paths: int
    dt: float
    times: np.ndarray
    positions: np.ndarray
    rng_seed: int
    record_indices: np.ndarray
    escaped: np.ndarray
    drift_kind: str = "nelson-forward"
    stats: StreamedStats | None = None
    history: np.ndarray | None = None
    history_indices: np.ndarray | None = None

    def column(self, t_index: int) -> np.ndarray | None:
        hit = np.flatnonzero(self.record_indices == t_index)
        return None if hit.size == 0 else self.positions[:, hit[0]]


def make_bins(grid: SpatialGrid, width_in_dq: int = 4) -> np.ndarray:
    """Bin edges aligned with grid cells, each bin holding ``width_in_dq`` grid points."""
    n_bins = grid.n_points // width_in_dq
    return grid.q_min - 0.5 * grid.dq + width_in_dq * grid.dq * np.arange(n_bins + 1)


def forward_drift(psi: WaveField) -> tuple[np.ndarray, np.ndarray]:
    """Nelson forward drift on the grid and the mask of forbidden (near-empty) points."""
    hbar, m = psi.params.hbar, psi.params.mass
    rho = psi.density
    forbidden = rho < FORBIDDEN_DENSITY * rho.max()
    safe = np.where(forbidden, 1.0, rho)
    current = probability_current(psi)
    drho = spectral_derivative(rho, psi.grid.dq)
    b = (current + 0.5 * hbar * drho) / (m * safe)
    return np.where(forbidden, 0.0, b), forbidden


def _block_seeds(rng_seed: int, n_paths: int):
    n_blocks = -(-n_paths // BLOCK_SIZE)
    children = np.random.SeedSequence(rng_seed).spawn(n_blocks)
    sizes = [min(BLOCK_SIZE, n_paths - i * BLOCK_SIZE) for i in range(n_blocks)]
    return list(zip(children, sizes))


def _run_block(seed_seq, size, offset, grid, drifts, forbidden, cdf, edges_cells, dt, noise, record, edges,
               history_paths, history_steps):
    rng = np.random.default_rng(seed_seq)
    n_t = drifts.shape[0]
    x = np.interp(rng.random(size), cdf, edges_cells)
    alive = np.ones(size, bool)
    rec = np.full((size, len(record)), np.nan)
    slot = {k: i for i, k in enumerate(record)}
    if 0 in slot:
        rec[:, slot[0]] = x
    n_hist = int(np.clip(history_paths - offset, 0, size))
    hslot = {k: i for i, k in enumerate(history_steps)}
    hist = np.full((n_hist, len(history_steps)), np.nan)
    if n_hist and 0 in hslot:
        hist[:, hslot[0]] = x[:n_hist]
    q = grid.q
    lo, hi = grid.q_min, grid.q_max - grid.dq
    n_bins = 0 if edges is None else len(edges) - 1
    if n_bins:
        acc = np.zeros((5, n_t, n_bins))
    prev = None
    for k in range(n_t - 1):
        xi = rng.standard_normal(size)
        b = np.interp(x, q, drifts[k])
        new = x + b * dt + noise * xi
        j = np.clip(np.rint(np.nan_to_num((new - lo) / grid.dq)).astype(int), 0, grid.n_points - 1)
        escaped = (new < lo) | (new > hi) | forbidden[k + 1][j]
        alive &= ~escaped
        new = np.where(alive, new, np.nan)
        if n_bins and prev is not None:
            ok = np.isfinite(prev) & np.isfinite(new)
            xc, xp, xn = x[ok], prev[ok], new[ok]
            ib = np.searchsorted(edges, xc, side="right") - 1
            keep = (ib >= 0) & (ib < n_bins)
            ib = ib[keep]
            vs = (xn[keep] - xp[keep]) / (2 * dt)
            vf = (xn[keep] - xc[keep]) / dt
            vb = (xc[keep] - xp[keep]) / dt
            acc[0, k] += np.bincount(ib, minlength=n_bins)
            acc[1, k] += np.bincount(ib, vs, minlength=n_bins)
            acc[2, k] += np.bincount(ib, vs * vs, minlength=n_bins)
            acc[3, k] += np.bincount(ib, vf, minlength=n_bins)
            acc[4, k] += np.bincount(ib, vb, minlength=n_bins)
        prev, x = x, new
        if k + 1 in slot:
            rec[:, slot[k + 1]] = x
        if n_hist and k + 1 in hslot:
            hist[:, hslot[k + 1]] = x[:n_hist]
    return rec, ~alive, (acc if n_bins else None), hist


def sample_paths(states: list[WaveField], n_paths: int, rng_seed: int, params: PhysicalParams | None = None,
                 record_every: int | None = 1, bins: np.ndarray | None = None, workers: int = 1,
                 history_paths: int = 0, history_every: int = 1) -> PathEnsemble:
    """Sample Nelson forward-diffusion paths through the snapshot sequence.

    Initial points are drawn from ``|psi_0|^2``. Paths are split into
    fixed-size blocks, each with its own child seed, so the result does not
    depend on ``workers``. Paths that leave the grid or enter a region of
    negligible density are terminated (NaN afterwards) and flagged in
    ``escaped``. ``record_every=None`` stores only the initial and final
    positions; ``bins`` enables streamed conditional statistics at every step.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    times = _check_mesh(states)
    if params is not None:
        states = [WaveField(s.grid, s.time, s.values, params) for s in states]
    params = states[0].params
    grid = states[0].grid
    dt = float(times[1] - times[0])
    drifts = np.empty((len(states), grid.n_points))
    forbidden = np.empty_like(drifts, dtype=bool)
    for i, s in enumerate(states):
        drifts[i], forbidden[i] = forward_drift(s)
    rho0 = states[0].density
    cdf = np.concatenate([[0.0], np.cumsum(rho0)])
    cdf /= cdf[-1]
    edges_cells = grid.q_min - 0.5 * grid.dq + grid.dq * np.arange(grid.n_points + 1)
    noise = np.sqrt(params.hbar * dt / params.mass)
    n_t = len(times)
    if record_every is None:
        record = [0, n_t - 1]
    else:
        record = sorted(set(range(0, n_t, record_every)) | {n_t - 1})
    edges = None if bins is None else np.asarray(bins, float)
    history_steps = sorted(set(range(0, n_t, history_every)) | {n_t - 1})

    def job(arg):
        seq, size, offset = arg
        return _run_block(seq, size, offset, grid, drifts, forbidden, cdf, edges_cells, dt, noise, record, edges,
                          history_paths, history_steps)

    blocks = [(seq, size, i * BLOCK_SIZE) for i, (seq, size) in enumerate(_block_seeds(rng_seed, n_paths))]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        parts = list(ex.map(job, blocks))
    positions = np.concatenate([p[0] for p in parts], axis=0)
    escaped = np.concatenate([p[1] for p in parts])
    stats = None
    if edges is not None:
        acc = parts[0][2].copy()
        for p in parts[1:]:
            acc += p[2]
        stats = StreamedStats(edges, acc[0].astype(np.int64), acc[1], acc[2], acc[3], acc[4])
    history = np.concatenate([p[3] for p in parts], axis=0)
    return PathEnsemble(n_paths, dt, times[record], positions, rng_seed, np.array(record), escaped, stats=stats,
                        history=history, history_indices=np.array(history_steps))


# --------------------------------------------------------- conditional stats

@dataclass(frozen=True, eq=False)
class ConditionalStats:
    bin_centers: np.ndarray
    bin_width: float
    mean_velocity: np.ndarray
    std_error: np.ndarray
    counts: np.ndarray
    forward_mean: np.ndarray = field(default=None)
    backward_mean: np.ndarray = field(default=None)
    time: float = 0.0


def _finish(edges, counts, s, s2, sf, sb, time):
    counts = np.asarray(counts, dtype=np.int64)
    if counts.sum() == 0:
        raise EmptyBin("no path-step falls inside any bin")
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, s / np.maximum(counts, 1), np.nan)
        var = np.where(counts > 1, (s2 - counts * mean**2) / np.maximum(counts - 1, 1), np.nan)
        se = np.sqrt(np.maximum(var, 0.0)) / np.sqrt(np.maximum(counts, 1))
        se = np.where(counts > 1, se, np.nan)
        fm = np.where(counts > 0, sf / np.maximum(counts, 1), np.nan)
        bm = np.where(counts > 0, sb / np.maximum(counts, 1), np.nan)
    centers = 0.5 * (edges[1:] + edges[:-1])
    return ConditionalStats(centers, float(edges[1] - edges[0]), mean, se, counts, fm, bm, time)


def conditional_mean_velocity(ens: PathEnsemble, t_index: int, bins: np.ndarray | None = None) -> ConditionalStats:
    """Bin paths by ``X_k`` and average ``(X_{k+1} - X_{k-1}) / 2dt`` in each bin.

    Uses recorded positions when ``k-1, k, k+1`` are all stored, otherwise
    the streamed sums (which fix the bins). Empty bins carry count 0 and NaN.
    """
    n_t = int(round((ens.times[-1] - ens.times[0]) / ens.dt)) + 1
    if not 1 <= t_index <= n_t - 2:
        raise IndexError("t_index must have a neighbour on each side")
    cols = [ens.column(t_index + d) for d in (-1, 0, 1)]
    time = ens.times[0] + t_index * ens.dt
    if all(c is not None for c in cols) and (bins is not None or ens.stats is None):
        edges = np.asarray(bins if bins is not None else ens.stats.edges, float)
        xp, xc, xn = cols
        ok = np.isfinite(xp) & np.isfinite(xc) & np.isfinite(xn)
        xp, xc, xn = xp[ok], xc[ok], xn[ok]
        nb = len(edges) - 1
        ib = np.searchsorted(edges, xc, side="right") - 1
        keep = (ib >= 0) & (ib < nb)
        ib = ib[keep]
        vs = (xn[keep] - xp[keep]) / (2 * ens.dt)
        vf = (xn[keep] - xc[keep]) / ens.dt
        vb = (xc[keep] - xp[keep]) / ens.dt
        return _finish(edges, np.bincount(ib, minlength=nb), np.bincount(ib, vs, minlength=nb),
                       np.bincount(ib, vs * vs, minlength=nb), np.bincount(ib, vf, minlength=nb),
                       np.bincount(ib, vb, minlength=nb), time)
    st = ens.stats
    if st is None:
        raise ValueError("positions around t_index were not recorded and no streamed stats exist")
    if bins is not None and not np.array_equal(np.asarray(bins, float), st.edges):
        raise ValueError("streamed stats were collected with different bins")
    k = t_index
    return _finish(st.edges, st.counts[k], st.sum_v[k], st.sum_v2[k], st.sum_forward[k], st.sum_backward[k], time)


def binned_current_velocity(psi: WaveField, edges: np.ndarray) -> np.ndarray:
    """Exact conditional mean of ``P/m`` per bin: ``sum J / (m sum rho)`` over the bin's grid points."""
    q = psi.grid.q
    nb = len(edges) - 1
    ib = np.searchsorted(edges, q, side="right") - 1
    keep = (ib >= 0) & (ib < nb)
    j = np.bincount(ib[keep], probability_current(psi)[keep], minlength=nb)
    r = np.bincount(ib[keep], psi.density[keep], minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(r > 0, j / (psi.params.mass * r), np.nan)


def compare_with_wavefunction(stats: ConditionalStats, psi: WaveField, edges: np.ndarray,
                              min_count: int = 200, n_sigma: float = 3.0) -> dict:
    """z-scores of the binned ensemble velocity against the wave function's current velocity."""
    ref = binned_current_velocity(psi, edges)
    use = (stats.counts >= min_count) & np.isfinite(ref) & (stats.std_error > 0)
    z = (stats.mean_velocity[use] - ref[use]) / stats.std_error[use]
    return {
        "time": stats.time,
        "bins_compared": int(use.sum()),
        "max_abs_z": float(np.max(np.abs(z))) if z.size else float("nan"),
        "mean_abs_z": float(np.mean(np.abs(z))) if z.size else float("nan"),
        "pass": bool(z.size > 0 and np.all(np.abs(z) <= n_sigma)),
    }


def reintegrate_from_bins(ens: PathEnsemble, seed: float, min_count: int = 200) -> np.ndarray:
    """Follow the binned mean velocity field from ``seed``; returns the position at every step."""
    st = ens.stats
    if st is None:
        raise ValueError("reintegration needs streamed stats (sample_paths(..., bins=...))")
    n_t = st.counts.shape[0]
    centers = 0.5 * (st.edges[1:] + st.edges[:-1])
    x = np.empty(n_t)
    x[0] = seed
    for k in range(n_t - 1):
        row = min(max(k, 1), n_t - 2)
        c = st.counts[row]
        use = c >= min_count
        if not use.any():
            raise ValueError(f"no bin reaches {min_count} counts at step {row}")
        v = st.sum_v[row][use] / c[use]
        x[k + 1] = x[k] + ens.dt * np.interp(x[k], centers[use], v)
    return x
