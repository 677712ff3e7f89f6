"""Distributed primal-dual SGD simulator.

Simulates a network of agents minimizing the average of local smooth
objectives over a connected undirected graph with a primal-dual
stochastic-gradient recursion, alongside centralized SGD, decentralized
SGD, and gradient-tracking baselines. Includes a parameter tuner that
derives step-size constants from the graph spectrum and objective
smoothness, validates schedules against convergence guarantees, and a
CLI for runs, sweeps, and plot-ready reports.
"""

from .algorithms import (
    BASELINES,
    SCHEDULE_FAMILIES,
    AlgState,
    DivergenceError,
    Schedule,
    eval_schedule,
    init_state,
    pd_step,
    run,
)
from .graphs import (
    Graph,
    LaplacianSpectrum,
    MixingMatrix,
    build_named,
    laplacian,
    metropolis_weights,
    random_connected,
    read_edge_list,
    spectrum,
    write_edge_list,
)
from .metrics import (
    AggregateTrace,
    Trace,
    aggregate,
    consensus_error,
    fit_loglog_slope,
    optimality_gap,
    speedup_ratio,
    stationarity,
    time_average,
    trace_from_csv,
    trace_to_csv,
)
from .problems import (
    NoiseModel,
    Problem,
    full_gradient,
    make_logistic,
    make_pl_composition,
    make_quadratic,
    problem_from_text,
    problem_to_text,
    sample_stochastic_gradient,
    two_agent_fixture,
)
from .tuner import (
    MissingInputError,
    TheoremConstants,
    ValidationReport,
    constants_thm1,
    constants_thm3,
    report_to_json_lines,
    suggest,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateTrace",
    "AlgState",
    "BASELINES",
    "DivergenceError",
    "Graph",
    "LaplacianSpectrum",
    "MissingInputError",
    "MixingMatrix",
    "NoiseModel",
    "Problem",
    "SCHEDULE_FAMILIES",
    "Schedule",
    "TheoremConstants",
    "Trace",
    "ValidationReport",
    "aggregate",
    "build_named",
    "consensus_error",
    "constants_thm1",
    "constants_thm3",
    "eval_schedule",
    "fit_loglog_slope",
    "full_gradient",
    "init_state",
    "laplacian",
    "make_logistic",
    "make_pl_composition",
    "make_quadratic",
    "metropolis_weights",
    "optimality_gap",
    "pd_step",
    "problem_from_text",
    "problem_to_text",
    "random_connected",
    "read_edge_list",
    "report_to_json_lines",
    "run",
    "sample_stochastic_gradient",
    "spectrum",
    "speedup_ratio",
    "stationarity",
    "suggest",
    "time_average",
    "trace_from_csv",
    "trace_to_csv",
    "two_agent_fixture",
    "validate",
    "write_edge_list",
    "__version__",
]
