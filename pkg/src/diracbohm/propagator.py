"""Short-time transition amplitudes, their time-ordered composition and momentum TAs."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from scipy.special import erfc

from .errors import GridMismatch, UnresolvableKernel
from .fields import PhysicalParams, Potential, SpatialGrid, WaveField

WINDOWS = ("taper", "band", "none")


def short_time_action(q, q_final, epsilon: float, pot: Potential | None = None,
                      params: PhysicalParams | None = None):
    """``m (q'-q)^2 / 2 eps - eps V((q+q')/2)``."""
    if not np.all(np.asarray(epsilon) > 0):
        raise ValueError("epsilon must be positive")
    m = (params or PhysicalParams()).mass
    q, q_final = np.asarray(q, float), np.asarray(q_final, float)
    s = m * (q_final - q) ** 2 / (2 * epsilon)
    if pot is not None and pot.kind != "free":
        s = s - epsilon * pot(0.5 * (q + q_final))
    return s


def momentum_TAs(q, q_final, epsilon: float, pot: Potential | None = None,
                 params: PhysicalParams | None = None):
    """``(p, p') = (-dS_eps/dq, +dS_eps/dq')``, analytic derivatives of the short-time action."""
    if not np.all(np.asarray(epsilon) > 0):
        raise ValueError("epsilon must be positive")
    m = (params or PhysicalParams()).mass
    q, q_final = np.asarray(q, float), np.asarray(q_final, float)
    slope = m * (q_final - q) / epsilon
    if pot is None or pot.kind == "free":
        return slope, slope.copy()
    # the midpoint potential contributes eps/2 * V'(mid) to each derivative
    g = 0.5 * epsilon * pot.gradient(0.5 * (q + q_final))
    return slope + g, slope - g


@dataclass(frozen=True)
class MidpointSample:
    q: float
    q_final: float
    Q: float
    epsilon: float
    p_backward: float
    p_forward: float
    current_momentum: float
    slope_sum: float
    slope_difference: float


def midpoint_momentum(q, q_final, epsilon: float, params: PhysicalParams | None = None) -> MidpointSample:
    """One-sided slopes at the midpoint ``Q`` of a short free step, and their mean.

    ``slope_sum = p_forward + p_backward`` and
    ``slope_difference = p_forward - p_backward`` are both kept because the
    two natural sign conventions for the midpoint momentum differ.
    """
    if not np.all(np.asarray(epsilon) > 0):
        raise ValueError("epsilon must be positive")
    m = (params or PhysicalParams()).mass
    mid = 0.5 * (q + q_final)
    pb = m * (mid - q) / epsilon
    pf = m * (q_final - mid) / epsilon
    return MidpointSample(q, q_final, mid, epsilon, pb, pf, 0.5 * (pb + pf), pb + pf, pf - pb)


# -------------------------------------------------------------------- kernels

@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Entry ``(j, k)`` is ``<q_j | q_k>_eps * dq``; acting on samples gives samples."""

    grid: SpatialGrid
    epsilon: float
    values: np.ndarray
    n_slices: int = 1
    window: str = "taper"

    def apply(self, psi: WaveField) -> WaveField:
        if psi.grid != self.grid:
            raise GridMismatch("kernel and state live on different grids")
        return psi.with_values(self.values @ psi.values, time=psi.time + self.epsilon)

    def unitarity_defect(self) -> float:
        """Largest deviation of a singular value from one."""
        s = scipy.linalg.svdvals(self.values)
        return float(np.max(np.abs(s - 1.0)))


def alias_distance(grid: SpatialGrid, epsilon: float, params: PhysicalParams) -> float:
    """Separation at which the sampled chirp's local wavenumber reaches ``2 pi / dq``."""
    return 2 * np.pi * params.hbar * epsilon / (params.mass * grid.dq)


def kernel_window(x: np.ndarray, grid: SpatialGrid, epsilon: float, params: PhysicalParams,
                  window: str) -> np.ndarray | None:
    if window == "none":
        return None
    if window == "band":
        return (np.abs(x) <= 8 * np.sqrt(params.hbar * epsilon / params.mass)).astype(float)
    if window == "taper":
        xa = alias_distance(grid, epsilon, params)
        # smooth roll-off between a quarter and three quarters of the alias distance
        return 0.5 * erfc((np.abs(x) - 0.5 * xa) / (xa / 12))
    raise ValueError(f"window must be one of {WINDOWS}")


def build_kernel(grid: SpatialGrid, epsilon: float, pot: Potential | None = None,
                 params: PhysicalParams | None = None, window: str = "taper") -> KernelMatrix:
    """Dense short-time kernel ``N(eps) exp(i S_eps(q_j, q_k)/hbar) dq``.

    ``N(eps) = sqrt(m / (2 pi i hbar eps))`` with ``sqrt(i) = exp(i pi/4)``.
    The sampled chirp aliases beyond ``2 pi hbar eps / (m dq)``; the default
    ``taper`` window rolls the kernel off smoothly before that distance.
    ``band`` zeroes entries beyond ``8 sqrt(hbar eps/m)``; ``none`` keeps the
    raw samples.
    """
    params = params or PhysicalParams()
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    width = np.sqrt(params.hbar * epsilon / params.mass)
    if width < 0.5 * grid.dq:
        raise UnresolvableKernel(f"kernel width {width:.3g} is below dq/2 = {0.5 * grid.dq:.3g}")
    if width < grid.dq:
        warnings.warn("kernel width is below the grid spacing", RuntimeWarning, stacklevel=2)
    q = grid.q
    x = q[:, None] - q[None, :]
    norm = np.sqrt(params.mass / (2 * np.pi * params.hbar * epsilon)) * np.exp(-0.25j * np.pi)
    action = short_time_action(q[None, :], q[:, None], epsilon, pot, params)
    k = norm * grid.dq * np.exp(1j * action / params.hbar)
    w = kernel_window(x, grid, epsilon, params, window)
    if w is not None:
        k *= w
    return KernelMatrix(grid, epsilon, k, 1, window)


def compose_chain(kernels: list[KernelMatrix]) -> KernelMatrix:
    """Time-ordered product ``K_n ... K_2 K_1`` (the first kernel acts first)."""
    if not kernels:
        raise ValueError("empty chain")
    grid = kernels[0].grid
    for k in kernels[1:]:
        if k.grid != grid:
            raise GridMismatch("kernels live on different grids")
    total_eps = float(sum(k.epsilon for k in kernels))
    n_slices = sum(k.n_slices for k in kernels)
    if all(k is kernels[0] for k in kernels):
        values = np.linalg.matrix_power(kernels[0].values, len(kernels))
    else:
        values = kernels[0].values
        for k in kernels[1:]:
            values = k.values @ values
    return replace(kernels[0], epsilon=total_eps, values=values, n_slices=n_slices)


def propagate(psi: WaveField, kernels: list[KernelMatrix], save_every: int = 1) -> list[WaveField]:
    """Apply the chain slice by slice, keeping every ``save_every``-th state."""
    out = [psi]
    cur = psi
    for i, k in enumerate(kernels, start=1):
        cur = k.apply(cur)
        if i % save_every == 0 or i == len(kernels):
            out.append(cur)
    return out
