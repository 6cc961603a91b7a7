import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diracbohm import PhysicalParams, Potential, WaveField, gaussian_packet, make_grid
from diracbohm.bohm import local_momentum
from diracbohm.errors import EmptyBin
from diracbohm.evolve import EvolutionConfig, evolve
from diracbohm.fields import coherent_state, free_gaussian, two_packet_superposition
from diracbohm.ensemble import (
    binned_current_velocity,
    compare_with_wavefunction,
    conditional_mean_velocity,
    from_momentum_rep,
    make_bins,
    moyal_mean_momentum,
    moyal_point_form,
    relative_momentum_error,
    sample_paths,
    to_momentum_rep,
)

import oracles

SMALL = make_grid(-16, 16, 256)
P = PhysicalParams()


def _free_run(p0, t_end, n_steps, grid=SMALL, width=1.0):
    return [free_gaussian(grid, P, 0.0, width, p0, t) for t in np.linspace(0.0, t_end, n_steps + 1)]


# -------------------------------------------------- momentum representation

def test_momentum_peak_follows_boost(grid, params):
    rep = to_momentum_rep(gaussian_packet(grid, params, 1.0, 1.0, 2.0))
    assert rep.p_grid[np.argmax(np.abs(rep.phi))] == pytest.approx(2.0, abs=rep.dp)


def test_real_symmetric_packet_has_symmetric_spectrum(grid, params):
    rep = to_momentum_rep(gaussian_packet(grid, params, 0.0, 1.0, 0.0))
    d = np.abs(rep.phi) ** 2
    # ascending grid holds -p_max once; the rest pairs up
    np.testing.assert_allclose(d[1:], d[1:][::-1], atol=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_momentum_round_trip_and_parseval(seed):
    g = make_grid(-20, 20, 256)
    psi = WaveField(g, 0.0, oracles.random_superposition(np.random.default_rng(seed), g.q))
    rep = to_momentum_rep(psi)
    assert abs(rep.norm() - psi.norm()) < 1e-10
    back = from_momentum_rep(rep, g)
    assert np.max(np.abs(back.values - psi.values)) < 1e-12


def test_spectrum_matches_analytic_gaussian(grid, params):
    sigma, p0 = 1.0, 1.5
    rep = to_momentum_rep(gaussian_packet(grid, params, 0.0, sigma, p0))
    exact = (2 * sigma**2 / np.pi) ** 0.25 * np.exp(-sigma**2 * (rep.p_grid - p0) ** 2)
    assert np.max(np.abs(np.abs(rep.phi) - exact)) < 1e-12


# ------------------------------------------------------ mean momentum (spray)

G2 = make_grid(-16, 16, 2048)


@settings(max_examples=5)
@given(st.integers(0, 2**32 - 1))
def test_three_routes_to_mean_momentum_agree(seed):
    psi = WaveField(G2, 0.0, oracles.random_superposition(np.random.default_rng(seed), G2.q))
    spray = moyal_mean_momentum(psi, node_threshold=1e-3)
    point = moyal_point_form(psi, node_threshold=1e-3)
    local = local_momentum(psi, node_threshold=1e-3)
    assert relative_momentum_error(spray, local, psi) < 1e-6
    assert relative_momentum_error(point, local, psi) < 1e-6


def test_boosted_packet_has_uniform_mean_momentum():
    psi = gaussian_packet(G2, P, 0.0, 1.0, 2.0)
    spray = moyal_mean_momentum(psi, node_threshold=1e-3)
    assert np.max(np.abs(spray.P_B[spray.valid_mask] - 2.0)) < 1e-8


def test_counter_moving_packets_give_antisymmetric_momentum():
    psi = two_packet_superposition(G2, P, 4.0, 1.0, 1.5, -1.5)
    spray = moyal_mean_momentum(psi, node_threshold=1e-3)
    # q -> -q maps index i to n - i on this grid
    i = np.arange(1, G2.n_points)
    mirror = G2.n_points - i
    both = spray.valid_mask[i] & spray.valid_mask[mirror]
    assert both.sum() > 100
    np.testing.assert_allclose(spray.P_B[i][both], -spray.P_B[mirror][both], atol=1e-8)


# ------------------------------------------------------------ path sampling

def test_ground_state_is_stationary():
    g = make_grid(-8, 8, 256)
    dt, n = 0.01, 800
    states = [coherent_state(g, P, 1.0, 0.0, k * dt) for k in range(n + 1)]
    ens = sample_paths(states, 2000, rng_seed=7, record_every=20)
    edges = make_bins(g, 8)
    x = ens.positions[:, 10:].ravel()
    hist, _ = np.histogram(x[np.isfinite(x)], bins=edges, density=True)
    centers = 0.5 * (edges[1:] + edges[:-1])
    exact = np.exp(-centers**2) / np.sqrt(np.pi)
    assert np.sum(np.abs(hist - exact)) * (edges[1] - edges[0]) < 0.05
    assert not ens.escaped.any()


def test_free_packet_mean_position_follows_ehrenfest():
    states = _free_run(3.0, 1.0, 200, make_grid(-16, 16, 512))
    ens = sample_paths(states, 20000, rng_seed=3, record_every=None)
    x = ens.positions[:, -1]
    se = np.std(x) / np.sqrt(x.size)
    assert abs(np.mean(x) - 3.0) < 3 * se


def test_same_seed_same_paths():
    states = _free_run(1.0, 0.5, 50)
    a = sample_paths(states, 500, rng_seed=11)
    b = sample_paths(states, 500, rng_seed=11)
    c = sample_paths(states, 500, rng_seed=12)
    assert np.array_equal(a.positions, b.positions, equal_nan=True)
    assert not np.array_equal(a.positions, c.positions)


def test_worker_count_does_not_change_paths():
    states = _free_run(1.0, 0.2, 20)
    bins = make_bins(SMALL)
    a = sample_paths(states, 20000, rng_seed=5, bins=bins, workers=1)
    b = sample_paths(states, 20000, rng_seed=5, bins=bins, workers=3)
    assert np.array_equal(a.positions, b.positions, equal_nan=True)
    assert np.array_equal(a.stats.sum_v, b.stats.sum_v)


def test_escaped_paths_are_flagged():
    g = make_grid(-8, 8, 256)
    states = [free_gaussian(g, P, 0.0, 1.0, 4.0, t) for t in np.linspace(0.0, 1.5, 61)]
    ens = sample_paths(states, 400, rng_seed=1)
    # the packet drifts to q = 6, so its leading edge leaves the grid
    dead = ens.escaped
    assert dead.any()
    assert np.isnan(ens.positions[dead, -1]).all()
    assert np.isfinite(ens.positions[~dead, -1]).all()


def test_rejects_empty_ensemble():
    with pytest.raises(ValueError):
        sample_paths(_free_run(1.0, 0.1, 2), 0, rng_seed=0)


# --------------------------------------------------- conditional statistics

def test_uniform_flow_bins():
    states = _free_run(2.0, 0.4, 40, width=2.0)
    bins = make_bins(SMALL, 8)
    ens = sample_paths(states, 100000, rng_seed=21, bins=bins, record_every=None)
    stats = conditional_mean_velocity(ens, 20)
    use = stats.counts >= 200
    z = (stats.mean_velocity[use] - 2.0) / stats.std_error[use]
    assert use.sum() > 10
    assert np.all(np.abs(z) < 3.5)
    # spreading adds a small linear term to the flow
    t, sigma = 0.2, 2.0
    exact = 2.0 + (stats.bin_centers - 2.0 * t) * t / (4 * sigma**4 + t**2)
    ref = binned_current_velocity(states[20], bins)
    assert np.max(np.abs(ref[use] - exact[use])) < 1e-3


def test_recorded_and_streamed_stats_agree():
    states = _free_run(1.0, 0.1, 10)
    bins = make_bins(SMALL)
    ens = sample_paths(states, 3000, rng_seed=2, bins=bins)
    a = conditional_mean_velocity(ens, 5)
    b = conditional_mean_velocity(ens, 5, bins=bins)
    assert np.array_equal(a.counts, b.counts)
    np.testing.assert_allclose(a.mean_velocity, b.mean_velocity, rtol=1e-12, equal_nan=True)


def test_counts_and_standard_error_formula():
    states = _free_run(0.5, 0.1, 10)
    bins = make_bins(SMALL, 16)
    ens = sample_paths(states, 5000, rng_seed=9, record_every=1)
    stats = conditional_mean_velocity(ens, 4, bins=bins)
    xp, xc, xn = (ens.column(k) for k in (3, 4, 5))
    ok = np.isfinite(xp) & np.isfinite(xn)
    assert stats.counts.sum() == ok.sum()
    k = int(np.argmax(stats.counts))
    sel = ok & (xc >= bins[k]) & (xc < bins[k + 1])
    v = (xn[sel] - xp[sel]) / (2 * ens.dt)
    assert stats.counts[k] == sel.sum()
    assert stats.mean_velocity[k] == pytest.approx(v.mean(), rel=1e-12)
    assert stats.std_error[k] == pytest.approx(v.std(ddof=1) / np.sqrt(v.size), rel=1e-9)
    empty = stats.counts == 0
    assert empty.any() and np.isnan(stats.mean_velocity[empty]).all()


def test_forward_and_backward_velocities_bracket_the_mean():
    states = _free_run(2.0, 0.2, 20)
    ens = sample_paths(states, 20000, rng_seed=4, record_every=1)
    stats = conditional_mean_velocity(ens, 10, bins=make_bins(SMALL, 8))
    use = stats.counts > 500
    np.testing.assert_allclose(0.5 * (stats.forward_mean[use] + stats.backward_mean[use]),
                               stats.mean_velocity[use], rtol=1e-12)


def test_bins_outside_support_raise_empty():
    states = _free_run(0.0, 0.1, 10)
    ens = sample_paths(states, 200, rng_seed=0)
    with pytest.raises(EmptyBin):
        conditional_mean_velocity(ens, 5, bins=np.array([12.0, 13.0, 14.0]))


def test_t_index_needs_neighbours():
    ens = sample_paths(_free_run(0.0, 0.1, 10), 50, rng_seed=0)
    with pytest.raises(IndexError):
        conditional_mean_velocity(ens, 0)


def test_standard_error_shrinks_as_inverse_root_n():
    states = _free_run(1.0, 0.1, 10, width=1.5)
    bins = make_bins(SMALL, 8)
    se = {}
    for n in (1000, 10000, 100000):
        stats = conditional_mean_velocity(sample_paths(states, n, rng_seed=8, bins=bins, record_every=None), 5)
        core = np.abs(stats.bin_centers) < 1.0
        se[n] = np.mean(stats.std_error[core])
    for small, big in ((1000, 10000), (10000, 100000)):
        assert 2.6 < se[small] / se[big] < 3.8


def test_compare_with_wavefunction_reports_z():
    states = _free_run(2.0, 0.4, 40, width=2.0)
    bins = make_bins(SMALL, 8)
    ens = sample_paths(states, 50000, rng_seed=6, bins=bins, record_every=None)
    out = compare_with_wavefunction(conditional_mean_velocity(ens, 20), states[20], bins, n_sigma=4)
    assert out["bins_compared"] > 5 and out["pass"]
    assert out["time"] == pytest.approx(0.2)
