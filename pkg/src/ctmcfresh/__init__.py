"""Binary freshness of structured estimators for query-based CTMC monitoring.

Closed-form and simulated mean binary freshness (MBF) for estimators of a
continuous-time Markov chain observed through Poisson queries, optimal
state-dependent sampling rates, and budget allocation across sources.
"""
from .ctmc import (
    Chain,
    MapStructure,
    SpectralDecomposition,
    build_chain,
    certified_horizon,
    chain_from_rates,
    deviation_matrix,
    discounted_integral,
    map_estimate,
    map_structure,
    spectral_decomposition,
    transition_matrix,
)
from .errors import *  # noqa: F401,F403
from .estimators import (
    Erlang,
    EstimatorSpec,
    Exponential,
    Martingale,
    PMap,
    PMapSchedule,
    TauMap,
    evaluate_estimate,
    map_thresholds,
    pmap_from_map,
    pmap_schedule,
)
from .freshness import (
    FreshnessReport,
    expected_fresh_time,
    expected_fresh_times,
    mbf,
    mbf_erlang,
    mbf_exponential,
    mbf_general,
    mbf_martingale,
    mbf_pmap,
    mbf_tau_map,
    verify_martingale_vs_taustar,
)
from .multisource import (
    Allocation,
    Source,
    SourceSet,
    lagrangian_bisection,
    per_source_maximizer,
    project_bounded_simplex,
    projected_gradient_descent,
    random_bdc,
    random_bdc_sources,
    uniform_allocation,
    weighted_allocation,
)
from .presets import PRESETS, TABLE_PRESETS, preset
from .sim import SimConfig, SimResult, Trace, empirical_sweep, recompute_from_trace, simulate
from .smdp import (
    PolicySolution,
    SmdpInstance,
    absorption_probs,
    default_action_grid,
    policy_iteration,
    solve_constrained,
)
from .statedep import (
    Fixed,
    JointStationary,
    PerState,
    SemiSimple,
    build_joint_generator,
    joint_stationary,
    mbf_statedep,
    omega,
    ssp_metrics,
)

__version__ = "0.1.0"
