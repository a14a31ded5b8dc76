"""Catalytic branching random walk laboratory.

Simulation and numerics for branching random walks with finitely many
catalyst sites and semi-exponential (discrete Weibull) jump tails:
calibrating and sampling the jump law, estimating taboo hitting-time
transforms, solving for the Malthusian growth rate, running the particle
system, and checking the almost-sure limiting shape of the population
front.
"""

from .jump_laws import (
    AxisTailLaw,
    JumpLaw,
    TableJumpLaw,
    inverse_norm,
    mean_axis,
    sample_jump,
    solve_mean_zero_weights,
    tail_prob,
)
from .walk_engine import (
    EmpiricalCdf,
    HittingOutcome,
    WalkConfig,
    empirical_hitting_cdf,
    escape_probability,
    hitting_time_taboo,
    laplace_taboo_mc,
    simulate_walk,
)
from .malthusian import (
    CatalystSpec,
    DMatrix,
    OffspringLaw,
    RegimeReport,
    build_D,
    classify_regime,
    perron_root,
    solve_malthusian,
)
from .cbrw_sim import (
    PopulationSnapshot,
    RunResult,
    SimConfig,
    max_h_statistic,
    run,
    run_ensemble,
    visits_catalysts_indicator,
)
from .front_analysis import (
    BoxTarget,
    FrontShape,
    ShellReport,
    classify_point,
    directional_limit_check,
    nonconvexity_witness,
    sample_shape_surface,
    shape_value,
    shell_containment,
    volterra_hit_probability,
)

__version__ = "0.1.0"
