"""Distributionally-constrained policy optimization on a tabular MDP.

``solve`` maximizes::

    -KL(mu | xi) - eps1 KL(mu 1 | rho') - eps2 KL(mu^T 1 | eta')   over occupancy measures mu

with ``xi = exp(r / epsilon)`` (times a baseline ``mu'`` when given) by KL
Dykstra over the constraint list [state marginal, action marginal,
occupancy polytope].  Either marginal term may be a hard constraint or
absent.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive, safe_log
from .dykstra import DykstraProxError, StopRule, dykstra_kl
from .mdp import (
    Mdp,
    OccupancyMeasure,
    expected_return,
    flow_residual,
    occupancy_from_policy,
    policy_from_occupancy,
)
from .projection import OccupancyConstraint
from .prox import MarginalPenalty

__all__ = [
    "DcpoProblem",
    "SolveReport",
    "SolveError",
    "OuterLoopError",
    "solve",
    "iterate_outer",
    "E_MINUS_10",
]

E_MINUS_10 = float(np.exp(-10.0))


@dataclass
class DcpoProblem:
    """Inputs of one constrained solve.

    ``epsilon`` is the reward temperature in ``xi = exp(r / epsilon)``; it is
    independent of the penalty weights stored on the marginal constraints.
    """

    mdp: Mdp
    epsilon: float = 0.01
    state_constraint: MarginalPenalty = None
    action_constraint: MarginalPenalty = None
    baseline: OccupancyMeasure = None
    stop: StopRule = field(default_factory=StopRule)
    projection_tol: float = 1e-9
    projection_max_iter: int = 50_000

    def __post_init__(self):
        self.epsilon = check_positive(self.epsilon, "epsilon")
        for attr, axis in (("state_constraint", "state"), ("action_constraint", "action")):
            c = getattr(self, attr)
            if c is not None and c.axis != axis:
                raise ValueError(f"{attr} must constrain the {axis} axis, got {c.axis!r}")
        n = {"state": self.mdp.n_states, "action": self.mdp.n_actions}
        for c in (self.state_constraint, self.action_constraint):
            if c is not None and c.target.shape[0] != n[c.axis]:
                raise ValueError(f"{c.axis} target must have length {n[c.axis]}")

    def log_xi(self):
        log_xi = self.mdp.reward / self.epsilon
        if self.baseline is not None:
            base = self.baseline
            log_base = base.log_mu if isinstance(base, OccupancyMeasure) else safe_log(base)
            log_xi = log_xi + np.asarray(log_base)
        return log_xi

    def constraints(self):
        cs = [c for c in (self.state_constraint, self.action_constraint) if c is not None]
        cs.append(OccupancyConstraint(self.mdp, tol=self.projection_tol,
                                      max_iter=self.projection_max_iter))
        return cs


@dataclass
class SolveReport:
    mu: OccupancyMeasure
    policy: np.ndarray
    expected_return: float
    iterations: int
    converged: bool
    residual_curves: dict
    sweep_deltas: list
    dual_stats: dict
    flow_residual: float
    metadata: dict = field(default_factory=lambda: {"residual_norm": "euclidean"})

    def final_residuals(self):
        return {k: (v[-1] if v else None) for k, v in self.residual_curves.items()}

    def summary(self):
        return {
            "converged": bool(self.converged),
            "sweeps": int(self.iterations),
            "expected_return": float(self.expected_return),
            "flow_residual": float(self.flow_residual),
            "final_residuals": self.final_residuals(),
            "dual_stats": dict(self.dual_stats),
        }


class SolveError(RuntimeError):
    """A constrained solve failed; ``report`` holds whatever was computed."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class OuterLoopError(SolveError):
    def __init__(self, message, trajectory):
        super().__init__(message, trajectory[-1] if trajectory else None)
        self.trajectory = trajectory


def _report(mdp, occ, state, delta_constraint):
    mu = occ.mu
    return SolveReport(
        mu=occ,
        policy=policy_from_occupancy(mu),
        expected_return=expected_return(mu, mdp),
        iterations=state.sweeps,
        converged=state.converged,
        residual_curves={k: list(v) for k, v in state.residuals.items()},
        sweep_deltas=list(state.deltas),
        dual_stats=dict(delta_constraint.stats),
        flow_residual=float(np.abs(flow_residual(mu, mdp)).max()),
    )


def solve(problem):
    """Solve a ``DcpoProblem`` with KL Dykstra and package a ``SolveReport``.

    Non-convergence within the sweep cap is reported through
    ``report.converged``; a failing prox raises ``SolveError`` carrying a
    partial report.
    """
    constraints = problem.constraints()
    delta = constraints[-1]
    try:
        occ, state = dykstra_kl(problem.log_xi(), constraints, stop=problem.stop)
    except DykstraProxError as exc:
        partial = None
        st = exc.state
        if st is not None and np.isfinite(st.log_mu).any():
            occ = OccupancyMeasure(st.log_mu)
            partial = _report(problem.mdp, occ, st, delta)
        raise SolveError(str(exc), partial) from exc
    return _report(problem.mdp, occ, state, delta)


def iterate_outer(mdp, epsilons=(1.0, 1.0), k_max=20, tol=1e-9, epsilon=0.1,
                  mu0=None, max_sweeps=5000):
    """Iterative improvement with marginals of the previous iterate as targets.

    Step ``k`` solves the constrained problem with baseline
    ``xi = mu_{k-1} exp(r / epsilon)`` and KL penalties
    ``eps1 KL(mu 1 | mu_{k-1} 1)`` and ``eps2 KL(mu^T 1 | mu_{k-1}^T 1)``
    (a zero weight drops that term).  Since ``mu_{k-1}`` is feasible for its
    own step, the expected return never decreases.

    Parameters
    ----------
    mdp : Mdp
    epsilons : (float, float)
        Penalty weights on the state and action marginals.
    k_max : int
        Number of outer steps.
    tol : float
        Frobenius stopping tolerance of each inner Dykstra solve.
    epsilon : float
        Reward temperature of each step.
    mu0 : OccupancyMeasure or array, optional
        Starting point; defaults to the uniform policy's occupancy measure.

    Returns
    -------
    list of SolveReport, one per outer step.
    """
    eps1, eps2 = (float(e) for e in epsilons)
    if eps1 < 0 or eps2 < 0:
        raise ValueError("marginal penalty weights must be >= 0")
    if mu0 is None:
        uniform = np.full(mdp.shape, 1.0 / mdp.n_actions)
        mu0 = occupancy_from_policy(mdp, uniform)
    elif not isinstance(mu0, OccupancyMeasure):
        mu0 = OccupancyMeasure.from_mu(mu0)
    stop = StopRule(frobenius_tol=tol, max_sweeps=max_sweeps)
    prev = mu0
    trajectory = []
    for k in range(1, k_max + 1):
        mu_prev = prev.mu
        problem = DcpoProblem(
            mdp,
            epsilon=epsilon,
            state_constraint=MarginalPenalty("state", mu_prev.sum(axis=1), eps1) if eps1 > 0 else None,
            action_constraint=MarginalPenalty("action", mu_prev.sum(axis=0), eps2) if eps2 > 0 else None,
            baseline=prev,
            stop=stop,
            projection_tol=min(1e-9, tol),
        )
        try:
            report = solve(problem)
        except SolveError as exc:
            raise OuterLoopError(f"outer step {k} failed: {exc}", trajectory) from exc
        trajectory.append(report)
        prev = report.mu
    return trajectory
