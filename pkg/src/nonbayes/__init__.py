"""Distributed non-Bayesian hypothesis learning over time-varying directed graphs.

Simulates the aggregate-then-reweight belief dynamics, computes closed-form
convergence-rate certificates, and verifies them with seeded Monte Carlo
experiments. The hot trial kernel is compiled (Cython) with a pure-numpy
fallback selected at import; see nonbayes.kernels.backend().
"""

from .graph import (
    DirectedGraphSnapshot,
    GraphSchedule,
    LimitVector,
    WeightMatrix,
    backward_product,
    build_weight_matrix,
    compute_delta,
    estimate_limit_vector,
    validate_assumption_graph,
)
from .kernels import backend
from .learning import (
    BeliefState,
    LogRatioState,
    SignalDraw,
    TrajectoryRecord,
    log_ratio,
    run_trial,
    sample_signals,
    update_beliefs,
)
from .scenario import Scenario, parse_scenario, paper_fig1_scenario
from .theory import (
    LikelihoodModel,
    RateCertificate,
    bound_curve,
    build_certificate,
    divergence_gap,
    kl_divergence,
    optimal_hypothesis_sets,
    rate_constants,
)

__version__ = "0.1.0"

__all__ = [
    "BeliefState",
    "DirectedGraphSnapshot",
    "GraphSchedule",
    "LikelihoodModel",
    "LimitVector",
    "LogRatioState",
    "RateCertificate",
    "Scenario",
    "SignalDraw",
    "TrajectoryRecord",
    "WeightMatrix",
    "backend",
    "backward_product",
    "bound_curve",
    "build_certificate",
    "build_weight_matrix",
    "compute_delta",
    "divergence_gap",
    "estimate_limit_vector",
    "kl_divergence",
    "log_ratio",
    "optimal_hypothesis_sets",
    "paper_fig1_scenario",
    "parse_scenario",
    "rate_constants",
    "run_trial",
    "sample_signals",
    "update_beliefs",
    "validate_assumption_graph",
]
