"""Numerical laboratory for the Dirac-Bohm picture of one-dimensional quantum mechanics."""
from .bohm import (
    MomentumField,
    QuantumPotentialField,
    Residual,
    TrajectorySet,
    continuity_residual,
    integrate_newton,
    integrate_trajectories,
    local_momentum,
    phase_gradient,
    qhj_residual,
    quantile_seeds,
    quantum_potential,
)
from .ensemble import (
    ConditionalStats,
    MomentumRepresentation,
    PathEnsemble,
    conditional_mean_velocity,
    from_momentum_rep,
    moyal_mean_momentum,
    moyal_point_form,
    sample_paths,
    to_momentum_rep,
)
from .errors import DiracBohmError
from .evolve import EvolutionConfig, energy, evolve, expectation_p, expectation_q
from .fields import (
    PhysicalParams,
    PolarField,
    Potential,
    SpatialGrid,
    WaveField,
    coherent_state,
    gaussian_packet,
    make_grid,
    polar_decompose,
    polar_recompose,
    two_packet_superposition,
)
from .picture import ActionPhase, ClassicalEndpointData, apply_V, classical_endpoints, split_real_imaginary, transformed_momentum
from .propagator import KernelMatrix, MidpointSample, build_kernel, compose_chain, midpoint_momentum, momentum_TAs, short_time_action

__version__ = "0.1.0"
