"""Exact stochastic simulation and analysis of SIR/SEIR epidemics spreading
in an exponentially growing birth-death population."""

__version__ = "0.1.0"

from .model import (
    Event,
    EVENT_DELTAS,
    EVENT_ORDER,
    InvalidStateError,
    ModelParams,
    PopulationState,
    SEIR_ONLY_EVENTS,
    apply_event,
    default_initial_state,
    event_delta,
    event_rates,
    total_rate,
)
from .theory import (
    BreakdownDiagnostics,
    Scenario,
    TheorySummary,
    basic_reproduction_number,
    breakdown_diagnostics,
    classify_scenario,
    endemic_equilibrium,
    extinction_prob_pgf_oracle,
    malthusian_closed_form,
    malthusian_euler_lotka,
    minor_outbreak_probability,
    perfect_coupling_condition,
    theory_summary,
)
from .ssa import (
    AgeSample,
    BirthDeathResult,
    CoupledTrajectory,
    GrowthWindowError,
    SimConfig,
    Terminal,
    Trajectory,
    derive_seed,
    estimate_growth_rate,
    rng_from_seed,
    simulate_coupled_sandwich,
    simulate_epidemic,
    simulate_linear_birth_death,
    simulate_population_with_ages,
    uniform_grid,
)
from .fluid import (
    EquilibriumKind,
    GridMismatchError,
    OdeSolution,
    ScaledState,
    StepSizeError,
    compare_scaled,
    damped_oscillation_report,
    integrate,
    ode_rhs,
    proportions_to_counts,
    scale_trajectory,
    scaled_deviation,
)
from .ensemble import (
    CoupledEnsembleStats,
    DiscriminationReport,
    EndemicLevelReport,
    EnsembleConfig,
    EnsembleStats,
    InsufficientSurvivorsError,
    endemic_level_check,
    run_coupled_ensemble,
    run_ensemble,
    scenario_discrimination,
    wilson_interval,
)
