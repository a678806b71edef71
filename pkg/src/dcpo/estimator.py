"""scikit-learn style front end.

``DistributionalPolicyOptimizer`` takes an MDP as its training input and
learns an occupancy measure and policy; ``predict`` maps state indices to
greedy actions so the fitted object can be dropped into code that expects a
classifier-like interface.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dykstra import StopRule
from .mdp import Mdp, greedy_actions, policy_evaluation
from .prox import MarginalPenalty
from .solver import DcpoProblem, iterate_outer, solve

__all__ = ["DistributionalPolicyOptimizer", "IterativePolicyOptimizer", "check_mdp"]


def check_mdp(X):
    """Accept an ``Mdp``, its dict form, or a JSON string."""
    if isinstance(X, Mdp):
        return X
    if isinstance(X, dict):
        return Mdp.from_dict(X)
    if isinstance(X, str):
        return Mdp.from_json(X)
    raise TypeError(f"expected an Mdp, a dict or a JSON string, got {type(X).__name__}")


def _check_states(states, n_states):
    states = np.asarray(states)
    if states.ndim == 0:
        states = states[None]
    if states.ndim != 1 or not np.issubdtype(states.dtype, np.integer):
        raise ValueError("states must be a 1-d array of integer state indices")
    if ((states < 0) | (states >= n_states)).any():
        raise ValueError(f"state indices must lie in [0, {n_states})")
    return states


class _PolicyMixin:

    def predict_proba(self, states):
        check_is_fitted(self, "policy_")
        return self.policy_[_check_states(states, self.policy_.shape[0])]

    def predict(self, states):
        """Greedy action per state (ties to the lowest index)."""
        return greedy_actions(self.predict_proba(states))

    def score(self, X, y=None):
        """Normalized discounted return ``(1 - gamma) <p0, V_pi>`` of the fitted policy on ``X``."""
        check_is_fitted(self, "policy_")
        mdp = check_mdp(X)
        V, _ = policy_evaluation(mdp, self.policy_)
        return float((1.0 - mdp.gamma) * mdp.p0 @ V)


class DistributionalPolicyOptimizer(_PolicyMixin, BaseEstimator):
    """Entropy-regularized policy optimization under marginal constraints.

    Parameters
    ----------
    epsilon : float, default=0.01
        Reward temperature.
    state_target, action_target : array-like or None
        Target state visitation / action frequency.  ``None`` leaves that
        marginal free.
    epsilon1, epsilon2 : float or None
        KL penalty weights on the state / action marginal; ``None`` makes the
        corresponding target a hard constraint.
    frobenius_tol, marginal_tol, max_sweeps :
        Dykstra stopping rule.
    projection_tol : float, default=1e-9
        Dual gradient tolerance of each occupancy-polytope projection.

    Attributes
    ----------
    occupancy_ : ndarray of shape (n_states, n_actions)
    policy_ : ndarray of shape (n_states, n_actions)
    report_ : SolveReport
    n_sweeps_ : int
    converged_ : bool
    expected_return_ : float
    """

    def __init__(self, epsilon=0.01, state_target=None, epsilon1=None,
                 action_target=None, epsilon2=None, frobenius_tol=1e-5,
                 marginal_tol=1e-5, max_sweeps=5000, projection_tol=1e-9):
        self.epsilon = epsilon
        self.state_target = state_target
        self.epsilon1 = epsilon1
        self.action_target = action_target
        self.epsilon2 = epsilon2
        self.frobenius_tol = frobenius_tol
        self.marginal_tol = marginal_tol
        self.max_sweeps = max_sweeps
        self.projection_tol = projection_tol

    def _problem(self, mdp):
        state = action = None
        if self.state_target is not None:
            state = MarginalPenalty("state", self.state_target, self.epsilon1)
        if self.action_target is not None:
            action = MarginalPenalty("action", self.action_target, self.epsilon2)
        stop = StopRule(frobenius_tol=self.frobenius_tol, max_sweeps=self.max_sweeps,
                        marginal_tol=self.marginal_tol)
        return DcpoProblem(mdp, epsilon=self.epsilon, state_constraint=state,
                           action_constraint=action, stop=stop,
                           projection_tol=self.projection_tol)

    def fit(self, X, y=None):
        mdp = check_mdp(X)
        report = solve(self._problem(mdp))
        self.report_ = report
        self.occupancy_ = report.mu.mu
        self.policy_ = report.policy
        self.n_sweeps_ = report.iterations
        self.converged_ = report.converged
        self.expected_return_ = report.expected_return
        return self


class IterativePolicyOptimizer(_PolicyMixin, BaseEstimator):
    """Outer improvement loop anchored at the previous iterate's marginals.

    Each step reweights the previous occupancy measure by ``exp(r / epsilon)``
    and penalizes drift of its state and action marginals with weights
    ``epsilon1`` and ``epsilon2``.  ``returns_`` is non-decreasing.
    """

    def __init__(self, epsilon=0.1, epsilon1=1.0, epsilon2=1.0, n_iter=20, tol=1e-9):
        self.epsilon = epsilon
        self.epsilon1 = epsilon1
        self.epsilon2 = epsilon2
        self.n_iter = n_iter
        self.tol = tol

    def fit(self, X, y=None):
        mdp = check_mdp(X)
        trajectory = iterate_outer(mdp, (self.epsilon1, self.epsilon2), self.n_iter,
                                   tol=self.tol, epsilon=self.epsilon)
        self.trajectory_ = trajectory
        self.returns_ = np.array([r.expected_return for r in trajectory])
        self.occupancy_ = trajectory[-1].mu.mu
        self.policy_ = trajectory[-1].policy
        return self
