import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diracbohm.numerics import (
    central_weights,
    cubic_interp,
    cubic_stencil,
    fd_derivative,
    fill_gaps_linear,
    spectral_derivative,
)


def test_spectral_derivative_of_periodic_sine():
    n, length = 128, 2 * np.pi
    q = np.arange(n) * length / n
    np.testing.assert_allclose(spectral_derivative(np.sin(3 * q), length / n), 3 * np.cos(3 * q), atol=1e-12)
    np.testing.assert_allclose(spectral_derivative(np.sin(3 * q), length / n, order=2), -9 * np.sin(3 * q),
                               atol=1e-10)


def test_spectral_derivative_keeps_real_input_real():
    f = np.random.default_rng(0).normal(size=64)
    assert np.isrealobj(spectral_derivative(f, 0.1))


@pytest.mark.parametrize("acc", [2, 4, 10, 12])
def test_central_weights_are_exact_on_polynomials(acc):
    w = central_weights(acc)
    offsets = np.arange(-(acc // 2), acc // 2 + 1)
    for power in range(acc + 1):
        exact = 1.0 if power == 1 else 0.0
        assert np.dot(w, offsets.astype(float) ** power) == pytest.approx(exact, abs=1e-9)


def test_fd_derivative_flags_stencils_touching_invalid_points():
    q = np.linspace(0, 1, 64, endpoint=False)
    valid = np.ones(64, bool)
    valid[30] = False
    df, ok = fd_derivative(q**2, q[1] - q[0], valid=valid)
    assert not ok[30] and not ok[24] and not ok[36]
    assert ok[40]
    np.testing.assert_allclose(df[ok], 2 * q[ok], atol=1e-9)


def test_fill_gaps_linear_bridges_interior_gaps():
    v = np.array([0.0, 1.0, np.nan, np.nan, 4.0, 5.0])
    ok = np.isfinite(v)
    np.testing.assert_allclose(fill_gaps_linear(np.nan_to_num(v), ok), [0, 1, 2, 3, 4, 5])


@given(st.floats(min_value=0.0, max_value=10.0 - 1e-9))
def test_cubic_interpolation_reproduces_cubics(x):
    q0, dq, n = 0.0, 0.25, 41
    grid = q0 + dq * np.arange(n)
    f = 0.3 * grid**3 - grid**2 + 2 * grid - 1
    j0, w = cubic_stencil(np.array([x]), q0, dq, n)
    assert np.isclose(w.sum(), 1.0)
    got = cubic_interp(f, j0, w)[0]
    assert got == pytest.approx(0.3 * x**3 - x**2 + 2 * x - 1, abs=1e-9)
