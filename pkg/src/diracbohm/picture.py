"""The action-generated unitary V = exp(iS/hbar), transformed operators and the classical limit."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .bohm import residual_series
from .errors import GridMismatch, SolverDiverged
from .fields import PhysicalParams, PolarField, Potential, SpatialGrid, WaveField
from .numerics import fill_gaps_linear, spectral_derivative


@dataclass(frozen=True, eq=False)
class ActionPhase:
    """Multiplier phase ``S_c(q)`` together with its gradient."""

    grid: SpatialGrid
    time: float
    S_c: np.ndarray
    gradient: np.ndarray
    source: str
    hbar: float = 1.0

    def __post_init__(self):
        if not (np.all(np.isfinite(self.S_c)) and np.all(np.isfinite(self.gradient))):
            raise ValueError("action phase must be finite everywhere")

    @classmethod
    def from_state(cls, polar: PolarField) -> ActionPhase:
        """Phase of a state with gradient ``J / rho``, interpolated linearly across masked gaps.

        Taking the gradient from the current rather than from ``S`` keeps
        ``<p_D>`` consistent with the spectral momentum operator.
        """
        hbar = polar.params.hbar
        psi = polar.R * np.exp(1j * polar.S / hbar)
        dpsi = spectral_derivative(psi, polar.grid.dq)
        ok = polar.valid
        grad = np.zeros(polar.grid.n_points)
        grad[ok] = hbar * np.imag(np.conj(psi[ok]) * dpsi[ok]) / polar.R[ok] ** 2
        grad = fill_gaps_linear(grad, ok)
        return cls(polar.grid, polar.time, polar.S, grad, "state", polar.params.hbar)

    @classmethod
    def linear(cls, grid: SpatialGrid, momentum: float, hbar: float = 1.0) -> ActionPhase:
        """Plane-wave action ``p q``."""
        q = grid.q
        return cls(grid, 0.0, momentum * q, np.full_like(q, momentum), "classical", hbar)

    @classmethod
    def classical(cls, grid: SpatialGrid, pot: Potential, q0: float, t: float,
                  params: PhysicalParams) -> ActionPhase:
        """Two-point classical action ``S(q, t; q0, 0)`` for free or harmonic motion."""
        q, m = grid.q, params.mass
        if pot.kind == "free":
            s = m * (q - q0) ** 2 / (2 * t)
            grad = m * (q - q0) / t
        elif pot.kind == "harmonic":
            w = pot.omega
            x, x0 = q - pot.center, q0 - pot.center
            sn, cs = np.sin(w * t), np.cos(w * t)
            s = m * w / (2 * sn) * ((x**2 + x0**2) * cs - 2 * x * x0)
            grad = m * w / sn * (x * cs - x0)
        else:
            raise ValueError("closed-form action only for free and harmonic potentials")
        return cls(grid, t, s, grad, "classical", params.hbar)


def _match(psi: WaveField, phase: ActionPhase):
    if psi.grid != phase.grid:
        raise GridMismatch("wave field and phase live on different grids")


def apply_V(psi: WaveField, phase: ActionPhase, direction: str = "forward") -> WaveField:
    """Multiply by ``exp(+iS/hbar)`` (forward) or ``exp(-iS/hbar)`` (adjoint)."""
    _match(psi, phase)
    if direction not in ("forward", "adjoint"):
        raise ValueError("direction must be 'forward' or 'adjoint'")
    sign = 1.0 if direction == "forward" else -1.0
    return psi.with_values(psi.values * np.exp(sign * 1j * phase.S_c / phase.hbar))


def transformed_momentum(psi: WaveField, phase: ActionPhase, params: PhysicalParams | None = None) -> WaveField:
    """Apply ``p_D = -i hbar d/dq + dS_c/dq``."""
    _match(psi, phase)
    hbar = (params or psi.params).hbar
    dpsi = spectral_derivative(psi.values, psi.grid.dq)
    return psi.with_values(-1j * hbar * dpsi + phase.gradient * psi.values)


def _expect(psi_vals, op_vals, dq):
    return complex(np.sum(np.conj(psi_vals) * op_vals) * dq)


def _momentum(vals, dq, hbar):
    return -1j * hbar * spectral_derivative(vals, dq)


def conjugation_report(psi: WaveField, phase: ActionPhase) -> dict:
    """Compare Schrödinger-picture expectations with their transformed counterparts.

    For each observable A the reference is ``<psi|A|psi>``; the check is
    ``<V^dag psi| A_D |V^dag psi>`` with ``A_D`` built from ``q_D = q`` and
    ``p_D = p + dS_c/dq``. Errors are absolute.
    """
    _match(psi, phase)
    dq, hbar, q = psi.grid.dq, psi.params.hbar, psi.grid.q
    v = psi.values
    vd = apply_V(psi, phase, "adjoint")
    w = vd.values

    def p_d(vals):
        return _momentum(vals, dq, hbar) + phase.gradient * vals

    pv = _momentum(v, dq, hbar)
    ref = {
        "q": _expect(v, q * v, dq),
        "p": _expect(v, pv, dq),
        "q2": _expect(v, q**2 * v, dq),
        "p2": _expect(v, _momentum(pv, dq, hbar), dq),
    }
    pw = p_d(w)
    got = {
        "q": _expect(w, q * w, dq),
        "p": _expect(w, pw, dq),
        "q2": _expect(w, q**2 * w, dq),
        "p2": _expect(w, p_d(pw), dq),
    }
    out = {name: {"schrodinger": ref[name].real, "dirac_bohm": got[name].real,
                  "error": abs(got[name] - ref[name])} for name in ref}
    back = apply_V(vd, phase, "forward").values
    out["unitarity"] = {
        "norm_error": abs(vd.norm() - psi.norm()),
        "roundtrip_error": float(np.max(np.abs(back - v))),
    }
    return out


def split_real_imaginary(psi_seq: list[WaveField], pot: Potential, params: PhysicalParams | None = None,
                         node_threshold: float = 1e-6) -> dict:
    """Residuals of the real part (quantum Hamilton-Jacobi) and imaginary part (continuity)."""
    if len(psi_seq) < 2:
        raise ValueError("need at least two snapshots")
    if params is not None:
        psi_seq = [WaveField(s.grid, s.time, s.values, params) for s in psi_seq]
    return residual_series(psi_seq, pot, node_threshold)


# ------------------------------------------------------------ classical limit

@dataclass(frozen=True)
class ClassicalEndpointData:
    q: float
    p: float
    q_final: float
    p_final: float
    S: float
    t: float
    energy: float
    dS_dq: float
    dS_dq_final: float
    dS_dt0: float
    dS_dt: float

    def relation_errors(self) -> dict:
        """Deviations from ``p = -dS/dq``, ``p' = dS/dq'``, ``dS/dt0 = H``, ``-dS/dt = H``."""
        return {
            "p_initial": abs(self.p + self.dS_dq),
            "p_final": abs(self.p_final - self.dS_dq_final),
            "energy_initial": abs(self.dS_dt0 - self.energy),
            "energy_final": abs(-self.dS_dt - self.energy),
        }


def classical_flow(pot: Potential, q: float, p: float, t: float, params: PhysicalParams,
                   rk4_steps: int = 2000):
    """Final ``(q', p', S)`` after time ``t``; closed form for free/harmonic, RK4 otherwise."""
    m = params.mass
    if pot.kind == "free":
        return q + p * t / m, p, p * p * t / (2 * m)
    if pot.kind == "harmonic":
        w, c = pot.omega, pot.center
        x = q - c
        cs, sn = np.cos(w * t), np.sin(w * t)
        xf = x * cs + p / (m * w) * sn
        pf = p * cs - m * w * x * sn
        # d(px)/dt = 2L for the oscillator
        return xf + c, pf, (pf * xf - p * x) / 2
    return _rk4_flow(pot, q, p, t, m, rk4_steps)


def _rk4_flow(pot, q, p, t, m, steps, tol=1e-11, max_steps=2**22):
    def run(n):
        h = t / n
        x, y, s = float(q), float(p), 0.0

        def rhs(x, y):
            return y / m, -float(pot.gradient(x)), y * y / (2 * m) - float(pot(x))

        for _ in range(n):
            a = rhs(x, y)
            b = rhs(x + 0.5 * h * a[0], y + 0.5 * h * a[1])
            c = rhs(x + 0.5 * h * b[0], y + 0.5 * h * b[1])
            d = rhs(x + h * c[0], y + h * c[1])
            x += h * (a[0] + 2 * b[0] + 2 * c[0] + d[0]) / 6
            y += h * (a[1] + 2 * b[1] + 2 * c[1] + d[1]) / 6
            s += h * (a[2] + 2 * b[2] + 2 * c[2] + d[2]) / 6
        return x, y, s

    prev = run(steps)
    while steps < max_steps:
        steps *= 2
        cur = run(steps)
        if not np.all(np.isfinite(cur)):
            break
        if max(abs(a - b) for a, b in zip(cur, prev)) < tol:
            return cur
        prev = cur
    raise SolverDiverged("RK4 classical trajectory did not converge")


def two_point_action(pot: Potential, q: float, q_final: float, t: float, params: PhysicalParams,
                     p_guess: float, rk4_steps: int = 2000) -> tuple[float, float]:
    """Re-solve the boundary-value problem ``q -> q_final`` in time ``t`` by shooting.

    Returns ``(S, p_initial)``.
    """
    def miss(p):
        return classical_flow(pot, q, p, t, params, rk4_steps)[0] - q_final

    scale = max(1.0, abs(p_guess))
    lo, hi = p_guess - 0.1 * scale, p_guess + 0.1 * scale
    f_lo, f_hi = miss(lo), miss(hi)
    grow = 0
    while f_lo * f_hi > 0:
        grow += 1
        if grow > 40:
            raise SolverDiverged("shooting could not bracket the initial momentum")
        lo, hi = lo - 0.2 * scale * grow, hi + 0.2 * scale * grow
        f_lo, f_hi = miss(lo), miss(hi)
    p = brentq(miss, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return classical_flow(pot, q, p, t, params, rk4_steps)[2], p


def classical_endpoints(pot: Potential, q: float, p: float, t: float,
                        params: PhysicalParams | None = None, delta: float = 1e-5) -> ClassicalEndpointData:
    """Endpoint data of the classical trajectory from ``(q, p)`` after ``t``.

    The partial derivatives of the two-point action are obtained by
    central differences over re-solved trajectories with the other endpoint
    held fixed.
    """
    params = params or PhysicalParams()
    if not t > 0:
        raise ValueError("duration must be positive")
    qf, pf, s = classical_flow(pot, q, p, t, params)
    if not np.all(np.isfinite([qf, pf, s])):
        raise SolverDiverged("classical trajectory is not finite")
    m = params.mass
    energy = p * p / (2 * m) + float(pot(q))

    dq_ = delta * max(1.0, abs(q))
    s_plus, _ = two_point_action(pot, q + dq_, qf, t, params, p)
    s_minus, _ = two_point_action(pot, q - dq_, qf, t, params, p)
    ds_dq = (s_plus - s_minus) / (2 * dq_)

    dqf = delta * max(1.0, abs(qf))
    s_plus, _ = two_point_action(pot, q, qf + dqf, t, params, p)
    s_minus, _ = two_point_action(pot, q, qf - dqf, t, params, p)
    ds_dqf = (s_plus - s_minus) / (2 * dqf)

    dt = delta * max(1.0, t)
    s_plus, _ = two_point_action(pot, q, qf, t + dt, params, p)
    s_minus, _ = two_point_action(pot, q, qf, t - dt, params, p)
    ds_dt = (s_plus - s_minus) / (2 * dt)
    # S depends on the start time only through t - t0
    return ClassicalEndpointData(q, p, qf, pf, s, t, energy, ds_dq, ds_dqf, -ds_dt, ds_dt)
