"""Grids, wave functions, potentials and the amplitude/action (polar) split."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    AllPointsMasked,
    GridMismatch,
    InvertedBounds,
    NotPowerOfTwo,
    PacketEscapesGrid,
)

DEFAULT_NODE_THRESHOLD = 1e-6


def _frozen(a, dtype=None) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic 1D grid ``q_j = q_min + j*dq``, ``j < n_points``."""

    q_min: float
    q_max: float
    n_points: int

    def __post_init__(self):
        if not self.q_max > self.q_min:
            raise InvertedBounds(f"q_max ({self.q_max}) must exceed q_min ({self.q_min})")
        n = self.n_points
        if int(n) != n or n < 8 or (int(n) & (int(n) - 1)):
            raise NotPowerOfTwo(f"n_points must be a power of two >= 8, got {n}")
        object.__setattr__(self, "n_points", int(n))
        object.__setattr__(self, "q_min", float(self.q_min))
        object.__setattr__(self, "q_max", float(self.q_max))

    @property
    def dq(self) -> float:
        return (self.q_max - self.q_min) / self.n_points

    @property
    def length(self) -> float:
        return self.q_max - self.q_min

    @property
    def q(self) -> np.ndarray:
        return self.q_min + self.dq * np.arange(self.n_points)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return (x >= self.q_min) & (x <= self.q_max - self.dq)


def make_grid(q_min: float, q_max: float, n_points: int) -> SpatialGrid:
    return SpatialGrid(q_min, q_max, n_points)


@dataclass(frozen=True)
class PhysicalParams:
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if not (self.hbar > 0 and self.mass > 0):
            raise ValueError("hbar and mass must be strictly positive")


@dataclass(frozen=True, eq=False)
class WaveField:
    """Complex wave function samples on a grid at one instant."""

    grid: SpatialGrid
    time: float
    values: np.ndarray
    params: PhysicalParams = field(default_factory=PhysicalParams)

    def __post_init__(self):
        v = _frozen(self.values, complex)
        if v.shape != (self.grid.n_points,):
            raise GridMismatch(f"values has shape {v.shape}, grid has {self.grid.n_points} points")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "time", float(self.time))

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def norm(self) -> float:
        return float(np.sum(self.density) * self.grid.dq)

    def normalize(self) -> WaveField:
        return self.with_values(self.values / np.sqrt(self.norm()))

    def with_values(self, values, time=None) -> WaveField:
        return replace(self, values=values, time=self.time if time is None else time)


@dataclass(frozen=True, eq=False)
class PolarField:
    """Amplitude ``R`` and action ``S`` with ``psi = R exp(iS/hbar)``.

    ``residual`` keeps the original complex samples at node-masked points so
    that recomposition is exact there as well.
    """

    grid: SpatialGrid
    time: float
    R: np.ndarray
    S: np.ndarray
    node_mask: np.ndarray
    params: PhysicalParams = field(default_factory=PhysicalParams)
    residual: np.ndarray | None = None
    node_threshold: float = DEFAULT_NODE_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "R", _frozen(self.R, float))
        object.__setattr__(self, "S", _frozen(self.S, float))
        object.__setattr__(self, "node_mask", _frozen(self.node_mask, bool))
        res = self.residual
        if res is None:
            res = np.zeros(self.grid.n_points, complex)
        object.__setattr__(self, "residual", _frozen(res, complex))

    @property
    def valid(self) -> np.ndarray:
        return ~self.node_mask


# ---------------------------------------------------------------- potentials

POTENTIAL_KINDS = ("free", "harmonic", "barrier", "custom")


@dataclass(frozen=True, eq=False)
class Potential:
    """External potential ``V(q)``; evaluable anywhere, not only on a grid."""

    kind: str = "free"
    omega: float = 1.0
    mass: float = 1.0
    height: float = 0.0
    width: float = 1.0
    center: float = 0.0
    table_q: np.ndarray | None = None
    table_v: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "custom":
            if self.table_q is None or self.table_v is None:
                raise ValueError("custom potential needs table_q and table_v")
            tq = _frozen(self.table_q, float)
            tv = _frozen(self.table_v, float)
            if tq.shape != tv.shape or not np.all(np.isfinite(tv)):
                raise ValueError("custom potential table must be finite and consistent")
            object.__setattr__(self, "table_q", tq)
            object.__setattr__(self, "table_v", tv)
            object.__setattr__(self, "_spline", CubicSpline(tq, tv))

    @classmethod
    def free(cls) -> Potential:
        return cls("free")

    @classmethod
    def harmonic(cls, omega: float, mass: float = 1.0, center: float = 0.0) -> Potential:
        return cls("harmonic", omega=omega, mass=mass, center=center)

    @classmethod
    def barrier(cls, height: float, width: float, center: float = 0.0) -> Potential:
        return cls("barrier", height=height, width=width, center=center)

    @classmethod
    def custom(cls, q, values) -> Potential:
        return cls("custom", table_q=np.asarray(q), table_v=np.asarray(values))

    def __call__(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.kind == "free":
            return np.zeros_like(q)
        if self.kind == "harmonic":
            return 0.5 * self.mass * self.omega**2 * (q - self.center) ** 2
        if self.kind == "barrier":
            return np.where(np.abs(q - self.center) < 0.5 * self.width, self.height, 0.0)
        return self._spline(q)

    def gradient(self, q) -> np.ndarray:
        """dV/dq. The rectangular barrier's edge impulses are ignored."""
        q = np.asarray(q, dtype=float)
        if self.kind == "harmonic":
            return self.mass * self.omega**2 * (q - self.center)
        if self.kind == "custom":
            return self._spline(q, 1)
        return np.zeros_like(q)

    def on_grid(self, grid: SpatialGrid) -> np.ndarray:
        v = self(grid.q)
        if not np.all(np.isfinite(v)):
            raise ValueError("potential is not finite on the grid")
        return v

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "harmonic":
            d.update(omega=self.omega, mass=self.mass, center=self.center)
        elif self.kind == "barrier":
            d.update(height=self.height, width=self.width, center=self.center)
        elif self.kind == "custom":
            d.update(n_table=len(self.table_q))
        return d


# ------------------------------------------------------------ initial states

def _check_support(grid: SpatialGrid, center: float, width: float):
    if width <= 0:
        raise ValueError("width must be positive")
    lo, hi = center - 6 * width, center + 6 * width
    if lo < grid.q_min or hi > grid.q_max:
        raise PacketEscapesGrid(
            f"packet support [{lo:g}, {hi:g}] does not fit in [{grid.q_min:g}, {grid.q_max:g}]"
        )


def _gaussian(q, center, width, p0, hbar):
    return np.exp(-((q - center) ** 2) / (4.0 * width**2) + 1j * p0 * q / hbar)


def gaussian_packet(grid: SpatialGrid, params: PhysicalParams, center: float = 0.0,
                    width: float = 1.0, p0: float = 0.0, time: float = 0.0) -> WaveField:
    """Normalized ``exp(-(q-center)^2/(4 width^2) + i p0 q / hbar)``; ``width`` is the rms of |psi|^2."""
    _check_support(grid, center, width)
    psi = WaveField(grid, time, _gaussian(grid.q, center, width, p0, params.hbar), params)
    return psi.normalize()


def free_gaussian(grid: SpatialGrid, params: PhysicalParams, center: float = 0.0,
                  width: float = 1.0, p0: float = 0.0, time: float = 0.0) -> WaveField:
    """Closed-form free evolution of ``gaussian_packet`` to ``time`` (no periodic images)."""
    hbar, m = params.hbar, params.mass
    spread = 1 + 1j * hbar * time / (2 * m * width**2)
    q = grid.q
    shift = q - center - p0 * time / m
    values = ((2 * np.pi * width**2) ** -0.25 / np.sqrt(spread)
              * np.exp(-shift**2 / (4 * width**2 * spread) + 1j * p0 * (q - 0.5 * p0 * time / m) / hbar))
    return WaveField(grid, time, values, params)


def two_packet_superposition(grid: SpatialGrid, params: PhysicalParams, sep: float,
                             width: float = 1.0, p0a: float = 0.0, p0b: float = 0.0,
                             time: float = 0.0) -> WaveField:
    """Equal-weight sum of packets at ``-sep/2`` (momentum ``p0a``) and ``+sep/2`` (``p0b``)."""
    if sep <= 0:
        raise ValueError("sep must be positive")
    _check_support(grid, -sep / 2, width)
    _check_support(grid, sep / 2, width)
    q = grid.q
    values = _gaussian(q, -sep / 2, width, p0a, params.hbar) + _gaussian(q, sep / 2, width, p0b, params.hbar)
    return WaveField(grid, time, values, params).normalize()


def coherent_state(grid: SpatialGrid, params: PhysicalParams, omega: float,
                   displacement: float, time: float = 0.0) -> WaveField:
    """Harmonic-oscillator coherent state released from rest at ``displacement``, at ``time``.

    ``displacement=0`` gives the ground state with its stationary phase ``-hbar*omega*t/2``.
    """
    hbar, m = params.hbar, params.mass
    width = np.sqrt(hbar / (2 * m * omega))
    _check_support(grid, displacement, width)
    _check_support(grid, -displacement, width)
    qc = displacement * np.cos(omega * time)
    pc = -m * omega * displacement * np.sin(omega * time)
    q = grid.q
    action = pc * (q - qc / 2) - hbar * omega * time / 2
    values = (m * omega / (np.pi * hbar)) ** 0.25 * np.exp(
        -m * omega * (q - qc) ** 2 / (2 * hbar) + 1j * action / hbar
    )
    return WaveField(grid, time, values, params)


# ------------------------------------------------------------ polar split

def _unwrap_from(phase: np.ndarray, valid: np.ndarray, anchor: int) -> np.ndarray:
    """Unwrap outward from ``anchor``; masked points never serve as references."""
    out = np.empty(phase.size)
    for side in (slice(anchor, None), slice(anchor, None, -1) if anchor > 0 else slice(0, 1)):
        ph = phase[side]
        ok = valid[side].copy()
        ok[0] = True
        good = np.flatnonzero(ok)
        unwrapped = np.unwrap(ph[good])
        # nearest preceding valid point (toward the anchor) is the reference
        ref_idx = np.maximum.accumulate(np.where(ok, np.arange(ph.size), 0))
        ref = np.empty(ph.size)
        ref[good] = unwrapped
        ref = ref[ref_idx]
        res = ph + 2 * np.pi * np.round((ref - ph) / (2 * np.pi))
        res[good] = unwrapped
        out[side] = res
    return out


def polar_decompose(psi: WaveField, node_threshold: float = DEFAULT_NODE_THRESHOLD) -> PolarField:
    """Split ``psi`` into amplitude and unwrapped action.

    The phase is unwrapped outward from the density maximum. Points with
    ``R < node_threshold * max(R)`` are node-masked; they never anchor the
    unwrapping and their original samples are stored for recomposition.
    """
    R = np.abs(psi.values)
    rmax = R.max()
    if not rmax > 0:
        raise AllPointsMasked("wave function vanishes identically")
    mask = R < node_threshold * rmax
    if mask.all():
        raise AllPointsMasked(f"node_threshold={node_threshold} masks every point")
    anchor = int(np.argmax(R))
    S = psi.params.hbar * _unwrap_from(np.angle(psi.values), ~mask, anchor)
    residual = np.where(mask, psi.values, 0.0)
    return PolarField(psi.grid, psi.time, R, S, mask, psi.params, residual, node_threshold)


def polar_recompose(polar: PolarField) -> WaveField:
    values = polar.R * np.exp(1j * polar.S / polar.params.hbar)
    values = np.where(polar.node_mask, polar.residual, values)
    return WaveField(polar.grid, polar.time, values, polar.params)


def check_same_grid(*objs):
    g = objs[0].grid
    for o in objs[1:]:
        if o.grid != g:
            raise GridMismatch("objects live on different grids")
    return g
