"""Residential demand-response auction toolkit.

Models household consumption with three-parameter lognormal laws, solves
each user's participation threshold in closed form, allocates rewards
through a truthful reduction auction, and measures outcomes against
settlement-style counterfactual baselines.
"""
from .analytic import (
    ThresholdSolveConfig,
    expected_reduction,
    expected_reduction_parts,
    expected_utility,
    max_feasible_target,
    threshold_reward,
)
from .baseline import (
    BaselineEstimate,
    BaselineMethod,
    Calendar,
    baseline_error_stats,
    caiso_baseline,
    synthetic_baseline,
)
from .dist import (
    CauchyPrior,
    CompoundPrior,
    DEFAULT_SYNTHETIC_PRIOR,
    ExponentialPrior,
    NormalPrior,
    UniformPrior,
    fit_compound_prior,
    fit_lognormal3,
    lognorm_moments,
    sample_base_consumption,
    sample_user_types,
)
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    DRMechError,
    FitError,
    InfeasibleTargetError,
    InsufficientHistoryError,
    IntegrityError,
    ParseError,
    PriorError,
    SolverError,
    UnboundedThresholdError,
)
from .ingest import MeterSeries, Reading, hour_slice, read_holidays, read_meter_csv
from .mechanism import (
    Allocation,
    AuditReport,
    Bidder,
    audit_incentives,
    expected_payments,
    feasible_target_bound,
    run_dr_mechanism,
    run_omniscient,
)
from .model import (
    ConsumptionParams,
    MarketParams,
    ReductionDecomposition,
    UserType,
    decompose_reduction,
    demand,
    realized_profit,
    realized_utility,
)
from .scenario import ScenarioConfig, SweepResult, SweepRow, emit_results, run_scenario

__version__ = "0.1.0"
