import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diracbohm import (
    ActionPhase,
    PhysicalParams,
    Potential,
    WaveField,
    apply_V,
    classical_endpoints,
    gaussian_packet,
    make_grid,
    polar_decompose,
    split_real_imaginary,
    transformed_momentum,
)
from diracbohm.bohm import integrate_newton, probability_current
from diracbohm.errors import GridMismatch, SolverDiverged
from diracbohm.evolve import EvolutionConfig, evolve, expectation_p
from diracbohm.fields import coherent_state
from diracbohm.picture import classical_flow, conjugation_report

import oracles


def _zero_phase(grid):
    return ActionPhase(grid, 0.0, np.zeros(grid.n_points), np.zeros(grid.n_points), "classical")


def test_zero_phase_is_identity(grid, params):
    psi = gaussian_packet(grid, params, 0, 1, 1)
    assert np.array_equal(apply_V(psi, _zero_phase(grid)).values, psi.values)


@given(st.integers(0, 2**32 - 1))
def test_forward_then_adjoint_is_identity(seed):
    g = make_grid(-20, 20, 256)
    rng = np.random.default_rng(seed)
    psi = WaveField(g, 0.0, oracles.random_superposition(rng, g.q))
    s = rng.normal(scale=30.0, size=g.n_points)
    phase = ActionPhase(g, 0.0, s, np.zeros_like(s), "classical")
    fwd = apply_V(psi, phase, "forward")
    assert abs(fwd.norm() - psi.norm()) < 1e-14
    back = apply_V(fwd, phase, "adjoint")
    assert np.max(np.abs(back.values - psi.values)) < 1e-14


def test_state_phase_removes_the_phase(grid, params):
    psi = gaussian_packet(grid, params, 1, 1, 2.5)
    polar = polar_decompose(psi)
    out = apply_V(psi, ActionPhase.from_state(polar), "adjoint").values
    off = polar.valid
    assert np.max(np.abs(out.imag[off])) < 1e-14
    np.testing.assert_allclose(out.real[off], polar.R[off], rtol=1e-14, atol=1e-300)


def test_bad_direction_and_grid(grid, params):
    psi = gaussian_packet(grid, params)
    with pytest.raises(ValueError):
        apply_V(psi, _zero_phase(grid), "sideways")
    with pytest.raises(GridMismatch):
        apply_V(psi, _zero_phase(make_grid(-20, 20, 512)))


def test_action_phase_must_be_finite(grid):
    with pytest.raises(ValueError):
        ActionPhase(grid, 0.0, np.full(grid.n_points, np.nan), np.zeros(grid.n_points), "classical")


def test_transformed_momentum_expectation_unchanged(grid, params):
    psi = gaussian_packet(grid, params, 0.5, 0.8, 1.2)
    phase = ActionPhase.from_state(polar_decompose(psi))
    psi_d = apply_V(psi, phase, "adjoint")
    p_d = transformed_momentum(psi_d, phase)
    value = np.sum(np.conj(psi_d.values) * p_d.values) * grid.dq
    assert value.real == pytest.approx(expectation_p(psi), abs=1e-10)


def test_linear_phase_shifts_momentum_operator(grid, params):
    c = 0.7
    psi = gaussian_packet(grid, params, 0, 1, 1.0)
    phase = ActionPhase.linear(grid, c)
    # acting on the untransformed state, p_D = p + c
    shifted = transformed_momentum(psi, phase)
    value = np.sum(np.conj(psi.values) * shifted.values).real * grid.dq
    assert value == pytest.approx(expectation_p(psi) + c, abs=1e-10)
    # on V^dag psi the expectation is the original one
    psi_d = apply_V(psi, phase, "adjoint")
    value_d = np.sum(np.conj(psi_d.values) * transformed_momentum(psi_d, phase).values).real * grid.dq
    assert value_d == pytest.approx(expectation_p(psi), abs=1e-10)


def test_p_d_on_amplitude_gives_bohm_momentum_density(grid, params):
    psi = gaussian_packet(grid, params, 0.0, 1.0, 0.0)
    psi = psi.with_values(psi.values * np.exp(1j * 0.3 * grid.q**2))
    polar = polar_decompose(psi)
    phase = ActionPhase.from_state(polar)
    out = transformed_momentum(WaveField(grid, 0.0, polar.R, params), phase)
    core = np.abs(grid.q) < 5
    expected = probability_current(psi) / polar.R
    np.testing.assert_allclose(out.values.real[core], expected[core], atol=1e-9)


@pytest.mark.parametrize("source", ["state", "linear", "classical"])
def test_conjugation_identities(grid, params, source):
    psi = gaussian_packet(grid, params, 0.4, 0.9, 1.1)
    if source == "state":
        phase = ActionPhase.from_state(polar_decompose(psi))
    elif source == "linear":
        phase = ActionPhase.linear(grid, -0.8)
    else:
        phase = ActionPhase.classical(grid, Potential.harmonic(1.0), 0.3, 0.7, params)
    report = conjugation_report(psi, phase)
    for name in ("q", "p", "q2", "p2"):
        assert report[name]["error"] < 1e-10, name
    assert report["unitarity"]["norm_error"] < 1e-14
    assert report["unitarity"]["roundtrip_error"] < 1e-14


def test_classical_phase_matches_harmonic_generating_function(grid, params):
    phase = ActionPhase.classical(grid, Potential.harmonic(1.0), 0.3, 0.7, params)
    np.testing.assert_allclose(phase.S_c, oracles.harmonic_action(0.3, grid.q, 0.7), rtol=1e-12, atol=1e-12)


# ----------------------------------------------------- real/imaginary split

def test_split_on_coherent_run(grid, params):
    pot = Potential.harmonic(1.0)
    states = evolve(coherent_state(grid, params, 1.0, 2.0), pot, EvolutionConfig(dt=1e-3, n_steps=50))
    out = split_real_imaginary(states, pot)
    assert out["qhj"]["l2"] < 1e-4
    assert out["continuity"]["l2"] < 1e-4


def test_split_stationary(grid, params):
    pot = Potential.harmonic(1.0)
    states = [coherent_state(grid, params, 1.0, 0.0, t) for t in (0.0, 1e-3, 2e-3)]
    assert split_real_imaginary(states, pot)["continuity"]["max_abs"] < 1e-8


def test_split_converges():
    pot = Potential.harmonic(1.0)
    out = []
    for n, dt in ((1024, 1e-3), (2048, 5e-4)):
        g = make_grid(-20, 20, n)
        p = PhysicalParams()
        states = [coherent_state(g, p, 1.0, 2.0, t) for t in (1.0, 1.0 + dt)]
        out.append(split_real_imaginary(states, pot))
    for key in ("qhj", "continuity"):
        assert 3.5 <= out[0][key]["l2"] / out[1][key]["l2"] <= 4.5


def test_split_needs_two_snapshots(grid, params):
    with pytest.raises(ValueError):
        split_real_imaginary([gaussian_packet(grid, params)], Potential.free())


# ---------------------------------------------------------- classical limit

def test_free_endpoints():
    ep = classical_endpoints(Potential.free(), 0.0, 2.0, 1.0)
    assert ep.q_final == 2.0 and ep.p_final == 2.0
    assert ep.S == pytest.approx(2.0, abs=1e-15)


def test_harmonic_quarter_period():
    ep = classical_endpoints(Potential.harmonic(1.0), 1.0, 0.0, np.pi / 2)
    assert ep.q_final == pytest.approx(0.0, abs=1e-15)
    assert ep.p_final == pytest.approx(-1.0, abs=1e-15)


@pytest.mark.parametrize("pot", [Potential.free(), Potential.harmonic(1.0), Potential.harmonic(1.7, center=0.4)])
@pytest.mark.parametrize("q, p, t", [(0.0, 2.0, 1.0), (1.0, 0.0, np.pi / 2), (-0.7, 1.3, 0.9)])
def test_variational_relations(pot, q, p, t):
    ep = classical_endpoints(pot, q, p, t)
    for name, err in ep.relation_errors().items():
        assert err < 1e-6, name


def test_harmonic_action_against_generating_function():
    ep = classical_endpoints(Potential.harmonic(1.0), 0.8, -0.4, 1.1)
    assert ep.S == pytest.approx(oracles.harmonic_action(0.8, ep.q_final, 1.1), abs=1e-12)


def test_custom_potential_endpoints():
    q = np.linspace(-6, 6, 241)
    pot = Potential.custom(q, 0.25 * q**4 - q**2)
    ep = classical_endpoints(pot, 0.3, 0.9, 1.2)
    for name, err in ep.relation_errors().items():
        assert err < 1e-6, name
    energy_final = ep.p_final**2 / 2 + float(pot(ep.q_final))
    assert energy_final == pytest.approx(ep.energy, abs=1e-9)


def test_custom_potential_blowup():
    q = np.linspace(-3, 3, 61)
    with pytest.raises(SolverDiverged):
        classical_endpoints(Potential.custom(q, -(q**4)), 2.0, 5.0, 10.0)


def test_duration_must_be_positive():
    with pytest.raises(ValueError):
        classical_endpoints(Potential.free(), 0.0, 1.0, 0.0)


@pytest.mark.parametrize("pot", [Potential.free(), Potential.harmonic(1.0)])
def test_guidance_without_quantum_force_is_classical(grid, params, pot):
    psi = gaussian_packet(grid, params, 0.5, 0.8, 0.7)
    states = evolve(psi, pot, EvolutionConfig(dt=1e-3, n_steps=1500))
    seeds = np.array([-0.5, 0.2, 0.5, 1.4])
    traj = integrate_newton(states, pot, seeds, quantum_force=False)
    for i, s in enumerate(seeds):
        ep = classical_endpoints(pot, s, traj.momenta[i, 0], traj.times[-1])
        assert abs(traj.positions[i, -1] - ep.q_final) < 1e-6
        assert abs(traj.momenta[i, -1] - ep.p_final) < 1e-6
        qf, _, _ = classical_flow(pot, s, traj.momenta[i, 0], traj.times[700], PhysicalParams())
        assert abs(traj.positions[i, 700] - qf) < 1e-6
