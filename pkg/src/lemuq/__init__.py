"""Local electricity market clearing under uncertainty on radial grids.

Pipeline: build a radial network, expand uncertain injections in a
polynomial-chaos basis, solve a chance-constrained OPF per timestep as a
second-order cone program, read probabilistic nodal prices off the duals,
simulate storage agents against realized delta prices, and validate the
linearized dispatch with an exact AC load flow.
"""

from .errors import (
    CycleDetected,
    DimensionMismatch,
    Disconnected,
    IndexOutOfRange,
    InconsistentDimensions,
    Infeasible,
    InfeasibleBoundary,
    InvalidRisk,
    LemuqError,
    MissingDuals,
    NotConverged,
    OutOfSupport,
    ParseError,
    PathMismatch,
    SingularIncidence,
    SolverFailure,
    UnsupportedDistribution,
    ValidationError,
)
from .netmodel import (
    Branch,
    Bus,
    RadialNetwork,
    branch_flows,
    build_network,
    power_limit_from_ampacity,
    slack_injection,
    voltage_map,
)
from .pce import (
    GermComponent,
    GermSpec,
    PceBasis,
    PceSeries,
    beta_component,
    build_basis,
    default_germ,
    eval_basis,
    evaluate_series,
    expand_affine_input,
    gamma,
    gaussian_component,
    mean,
    sample_germ,
    std,
    variance,
)
from .ccopf import (
    CcOpfProblem,
    CcOpfSolution,
    ConstraintSlack,
    FlexGen,
    UncertainInjection,
    assemble,
    binding,
    feasibility_report,
    solve,
)
from .market import (
    MarketSolution,
    Plmp,
    PriceDistribution,
    day_ahead_price,
    delta_price,
    delta_price_paths,
    extract_plmps,
    price_distribution,
    realtime_price,
    sample_germ_paths,
    write_price_quantiles,
    write_prices_da,
    write_rt_samples,
)
from .agents import (
    AgentRun,
    DpTables,
    PricePath,
    StorageSpec,
    build_dp_tables,
    dp_policy,
    hindsight_policy,
    regret_curves,
    rule_based_policy,
    write_agent_runs,
    write_regret,
)
from .acflow import (
    AcState,
    ViolationStats,
    backward_forward_sweep,
    validate_solution,
    write_ac_validation,
)
from .scenario import (
    AgentConfig,
    RunReport,
    ScenarioConfig,
    bundled_path,
    emit_scenario,
    generate_synthetic_grid,
    load_bundled,
    load_scenario,
    run,
    synthetic_scenario,
)

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
