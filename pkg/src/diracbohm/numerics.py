"""Low-level discrete operators shared by the physics modules."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def wavenumbers(n: int, dq: float) -> np.ndarray:
    """Angular wavenumbers of the periodic grid in FFT order."""
    return 2.0 * np.pi * np.fft.fftfreq(n, d=dq)


def spectral_derivative(f: np.ndarray, dq: float, order: int = 1) -> np.ndarray:
    """Periodic Fourier derivative of ``f``.

    Real input returns real output. For odd orders the Nyquist mode is
    zeroed, which keeps the operator anti-symmetric.
    """
    n = f.shape[-1]
    k = wavenumbers(n, dq)
    factor = (1j * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        factor[n // 2] = 0.0
    out = np.fft.ifft(factor * np.fft.fft(f))
    if np.isrealobj(f):
        return out.real
    return out


def central_weights(accuracy: int) -> np.ndarray:
    """First-derivative central stencil weights of the given (even) accuracy order."""
    if accuracy < 2 or accuracy % 2:
        raise ValueError("accuracy must be an even integer >= 2")
    half = accuracy // 2
    offsets = np.arange(-half, half + 1, dtype=float)
    # Vandermonde system: sum_k w_k * offset_k**p = delta_{p,1}
    a = np.vander(offsets, increasing=True).T
    rhs = np.zeros(len(offsets))
    rhs[1] = 1.0
    return np.linalg.solve(a, rhs)


def fd_derivative(f: np.ndarray, dq: float, valid: np.ndarray | None = None,
                  accuracy: int = 12, check_accuracy: int | None = None, tol: float | None = None):
    """High-order central finite-difference derivative with an error estimate.

    Returns ``(df, ok)``. A point is ``ok`` when its whole stencil lies in
    ``valid`` and, if ``tol`` is given, the lower-order stencil agrees with
    the main one to within ``tol`` (a standard truncation-error estimate).
    ``check_accuracy`` defaults to ``accuracy - 2``.
    Points that are not ``ok`` hold NaN.
    """
    n = f.shape[-1]
    half = accuracy // 2
    w_hi = central_weights(accuracy)
    w_lo = np.zeros_like(w_hi)
    if check_accuracy is None:
        check_accuracy = accuracy - 2
    h_lo = check_accuracy // 2
    w_lo[half - h_lo: half + h_lo + 1] = central_weights(check_accuracy)

    windows = sliding_window_view(f, 2 * half + 1)
    d_hi = windows @ w_hi / dq
    d_lo = windows @ w_lo / dq

    ok_inner = np.ones(n - 2 * half, dtype=bool)
    if valid is not None:
        ok_inner &= sliding_window_view(valid, 2 * half + 1).all(axis=1)
    if tol is not None:
        ok_inner &= np.abs(d_hi - d_lo) <= tol

    df = np.full(n, np.nan)
    ok = np.zeros(n, dtype=bool)
    df[half:n - half] = np.where(ok_inner, d_hi, np.nan)
    ok[half:n - half] = ok_inner
    return df, ok


def fill_gaps_linear(values: np.ndarray, ok: np.ndarray) -> np.ndarray:
    """Linearly interpolate across points where ``ok`` is False (constant beyond the ends)."""
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return np.zeros_like(values)
    x = np.arange(values.shape[-1])
    return np.interp(x, idx, values[idx])


def cubic_stencil(x: np.ndarray, q0: float, dq: float, n: int):
    """Four-point Lagrange stencil for local cubic interpolation at ``x``.

    Returns ``(j0, weights)`` with ``j0`` the leftmost node index (clipped
    into the grid) and ``weights`` of shape ``(len(x), 4)``.
    """
    s = (np.asarray(x, dtype=float) - q0) / dq
    j = np.floor(s).astype(int)
    j0 = np.clip(j - 1, 0, n - 4)
    t = s - j0  # position relative to node j0, nominally in [1, 2)
    w = np.empty(t.shape + (4,))
    w[..., 0] = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0
    w[..., 1] = t * (t - 2.0) * (t - 3.0) / 2.0
    w[..., 2] = -t * (t - 1.0) * (t - 3.0) / 2.0
    w[..., 3] = t * (t - 1.0) * (t - 2.0) / 6.0
    return j0, w


def cubic_interp(values: np.ndarray, j0: np.ndarray, w: np.ndarray) -> np.ndarray:
    cols = j0[..., None] + np.arange(4)
    return np.sum(values[cols] * w, axis=-1)
