"""Distributionally-constrained policy optimization on tabular MDPs.

Policies are optimized over occupancy measures with KL Dykstra iterations
that combine closed-form marginal proxes with a dual projection onto the
occupancy polytope.
"""

from ._validation import DegenerateInputError
from .dykstra import DykstraProxError, DykstraState, StopRule, dykstra_kl, sinkhorn
from .estimator import DistributionalPolicyOptimizer, IterativePolicyOptimizer, check_mdp
from .gridworld import ACTIONS, ARROWS, GridSpec, build_gridworld, render_policy, risk_averse_spec
from .mdp import (
    Mdp,
    OccupancyMeasure,
    SupportError,
    expected_return,
    flow_residual,
    greedy_actions,
    kl_decomposition,
    kl_divergence,
    occupancy_from_policy,
    policy_evaluation,
    policy_from_occupancy,
    soft_value_iteration_oracle,
    state_distribution,
    value_iteration,
)
from .projection import (
    DualState,
    OccupancyConstraint,
    dual_gradient,
    dual_objective,
    feasible_support,
    project_onto_delta,
)
from .prox import (
    InfeasibleProjectionError,
    MarginalPenalty,
    prox_hard_action,
    prox_hard_state,
    prox_kl_action,
    prox_kl_state,
)
from .solver import (
    E_MINUS_10,
    DcpoProblem,
    OuterLoopError,
    SolveError,
    SolveReport,
    iterate_outer,
    solve,
)

__version__ = "0.1.0"
