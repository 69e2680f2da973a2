"""Doppler cooling of trapped Ca+ on the S1/2-D5/2 quadrupole transition."""
from .atomic_model import (
    LaserBeam,
    Level,
    LevelScheme,
    Transition,
    ZeemanLine,
    build_ca40_scheme,
    quadrupole_geometry_factor,
    rabi_from_power,
    zeeman_lines,
    zeeman_shift,
)
from .internal_dynamics import (
    EffectiveTwoLevel,
    PopulationVector,
    RateMatrix,
    build_rate_matrix,
    effective_decay_rate,
    evolve_populations,
    scattering_rates,
    steady_state,
)
from .mechanics import (
    BeamGeometry,
    ForceProfile,
    capture_range,
    doppler_limit_temperature,
    force_profile,
    friction_and_diffusion,
    mean_force,
    momentum_kick_ratio,
)
from .trap_md import (
    IonState,
    NoiseModel,
    TrapConfig,
    Trajectory,
    detect_jumps,
    equilibrium_positions,
    integrate,
    temperature_estimate,
    thermal_ions,
)
from .experiments import (
    ScanConfig,
    ScanResult,
    bfield_scan,
    detuning_scan,
    doppler_regime_check,
    force_estimate,
    jump_fraction_scan,
)

__version__ = "0.1.0"
