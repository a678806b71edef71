"""Finite discounted MDPs and the occupancy-measure / policy algebra.

An occupancy measure ``mu`` is an ``(n_states, n_actions)`` matrix holding the
normalized discounted visitation frequency of each state-action pair.  The
set of valid occupancy measures is cut out by the Bellman flow equations::

    sum_a mu(s, a) = (1 - gamma) p0(s) + gamma sum_{s', a'} P(s | s', a') mu(s', a')

and is in bijection with the stationary policies through
``pi(a | s) = mu(s, a) / sum_a mu(s, a)``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    PROB_ATOL,
    check_array,
    check_log_matrix,
    check_nonnegative_matrix,
    check_policy,
    check_probability_vector,
    safe_log,
)

__all__ = [
    "Mdp",
    "OccupancyMeasure",
    "occupancy_from_policy",
    "policy_from_occupancy",
    "state_distribution",
    "expected_return",
    "flow_residual",
    "kl_divergence",
    "kl_decomposition",
    "policy_evaluation",
    "value_iteration",
    "soft_value_iteration_oracle",
    "greedy_actions",
]


class SupportError(ValueError):
    """A KL divergence was requested where the reference measure has no mass."""


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Mdp:
    """A finite discounted MDP.

    Parameters
    ----------
    transition : array-like of shape (n_states, n_actions, n_states)
        ``transition[s, a, s2]`` is the probability of moving to ``s2``.
    reward : array-like of shape (n_states, n_actions)
    gamma : float in [0, 1)
    p0 : array-like of shape (n_states,)
        Initial state distribution.
    state_labels, action_labels : sequence of str, optional
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    p0: np.ndarray
    state_labels: tuple = field(default=None)
    action_labels: tuple = field(default=None)

    def __post_init__(self):
        P = check_array(self.transition, ndim=3, name="transition")
        n_states, n_actions, n_next = P.shape
        if n_states < 1 or n_actions < 1 or n_next != n_states:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if (P < 0).any():
            raise ValueError("transition has negative entries")
        if np.abs(P.sum(axis=2) - 1.0).max() > PROB_ATOL:
            raise ValueError("every transition row P[s, a, :] must sum to 1")
        r = check_array(self.reward, ndim=2, name="reward")
        if r.shape != (n_states, n_actions):
            raise ValueError(f"reward must have shape {(n_states, n_actions)}, got {r.shape}")
        gamma = float(self.gamma)
        if not 0.0 <= gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {gamma!r}")
        p0 = check_probability_vector(self.p0, size=n_states, name="p0")

        object.__setattr__(self, "transition", _frozen(P))
        object.__setattr__(self, "reward", _frozen(r))
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "p0", _frozen(p0))
        for attr, n in (("state_labels", n_states), ("action_labels", n_actions)):
            labels = getattr(self, attr)
            if labels is not None:
                labels = tuple(str(x) for x in labels)
                if len(labels) != n:
                    raise ValueError(f"{attr} must have {n} entries")
                object.__setattr__(self, attr, labels)

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    @property
    def shape(self):
        return (self.n_states, self.n_actions)

    def with_reward(self, reward):
        return Mdp(self.transition, reward, self.gamma, self.p0,
                   self.state_labels, self.action_labels)

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "p0": self.p0.tolist(),
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "state_labels": None if self.state_labels is None else list(self.state_labels),
            "action_labels": None if self.action_labels is None else list(self.action_labels),
        }

    @classmethod
    def from_dict(cls, d):
        mdp = cls(
            transition=d["transition"],
            reward=d["reward"],
            gamma=d["gamma"],
            p0=d["p0"],
            state_labels=d.get("state_labels"),
            action_labels=d.get("action_labels"),
        )
        for key, value in (("n_states", mdp.n_states), ("n_actions", mdp.n_actions)):
            if key in d and int(d[key]) != value:
                raise ValueError(f"{key}={d[key]} does not match the transition tensor ({value})")
        return mdp

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, Mdp):
            return NotImplemented
        return (self.gamma == other.gamma
                and np.array_equal(self.transition, other.transition)
                and np.array_equal(self.reward, other.reward)
                and np.array_equal(self.p0, other.p0)
                and self.state_labels == other.state_labels
                and self.action_labels == other.action_labels)

    __hash__ = None


@dataclass(frozen=True)
class OccupancyMeasure:
    """A nonnegative state-action measure kept in both linear and log form.

    ``normalized`` records whether the measure is a probability distribution;
    intermediate Dykstra iterates generally carry arbitrary positive mass.
    """

    log_mu: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        log_mu = check_log_matrix(self.log_mu)
        object.__setattr__(self, "log_mu", _frozen(log_mu))
        if self.normalized and abs(self.mu.sum() - 1.0) > 1e-9:
            raise ValueError(f"normalized occupancy sums to {self.mu.sum()!r}")

    @classmethod
    def from_mu(cls, mu, normalized=False):
        mu = check_nonnegative_matrix(mu)
        return cls(safe_log(mu), normalized=normalized)

    @property
    def mu(self):
        return np.exp(self.log_mu)

    @property
    def shape(self):
        return self.log_mu.shape

    @property
    def state_marginal(self):
        return self.mu.sum(axis=1)

    @property
    def action_marginal(self):
        return self.mu.sum(axis=0)

    def __array__(self, dtype=None, copy=None):
        mu = self.mu
        return mu if dtype is None else mu.astype(dtype)


def _as_mu(mu, shape=None):
    if isinstance(mu, OccupancyMeasure):
        mu = mu.mu
    return check_nonnegative_matrix(mu, shape=shape)


def policy_matrix(mdp, pi):
    """State-to-state transition matrix ``P_pi[s, s2]`` induced by ``pi``."""
    return np.einsum("sa,sat->st", pi, mdp.transition)


def state_distribution(mdp, pi):
    """Discounted stationary state distribution of ``pi`` by a dense solve."""
    pi = check_policy(pi, *mdp.shape)
    P_pi = policy_matrix(mdp, pi)
    A = np.eye(mdp.n_states) - mdp.gamma * P_pi.T
    try:
        rho = np.linalg.solve(A, (1.0 - mdp.gamma) * mdp.p0)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "flow system I - gamma P_pi^T is singular") from exc
    return np.clip(rho, 0.0, None)


def occupancy_from_policy(mdp, pi):
    """Occupancy measure ``mu(s, a) = rho_pi(s) pi(a | s)`` of a stationary policy."""
    pi = check_policy(pi, *mdp.shape)
    rho = state_distribution(mdp, pi)
    return OccupancyMeasure.from_mu(rho[:, None] * pi, normalized=True)


def policy_from_occupancy(mu):
    """Conditional ``pi(a | s)``; states carrying no mass get a uniform row."""
    mu = _as_mu(mu)
    rho = mu.sum(axis=1, keepdims=True)
    n_actions = mu.shape[1]
    pi = np.full(mu.shape, 1.0 / n_actions)
    np.divide(mu, rho, out=pi, where=rho > 0)
    return pi


def expected_return(mu, mdp):
    """``sum_{s,a} mu(s, a) r(s, a)``, the normalized discounted return."""
    mu = _as_mu(mu, shape=mdp.shape)
    return float(np.sum(mu * mdp.reward))


def flow_residual(mu, mdp):
    """Violation of the Bellman flow equations, one entry per state.

    Zero (up to round-off) exactly when ``mu`` is a valid occupancy measure.
    """
    mu = _as_mu(mu, shape=mdp.shape)
    inflow = np.einsum("sat,sa->t", mdp.transition, mu)
    return mu.sum(axis=1) - (1.0 - mdp.gamma) * mdp.p0 - mdp.gamma * inflow


def kl_divergence(p, q):
    """Generalized KL ``sum p log(p/q) - p + q`` for nonnegative arrays."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if ((q <= 0) & (p > 0)).any():
        raise SupportError("KL(p|q) is infinite: q vanishes where p is positive")
    pos = p > 0
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])) - p.sum() + q.sum())


def kl_decomposition(mu, mu_prime):
    """Split ``KL(mu | mu')`` into a state-marginal and a conditional-policy term.

    Returns ``(KL(rho | rho'), E_rho[KL(pi | pi')])``; the two add up to the
    joint divergence.
    """
    mu = _as_mu(mu)
    mu_prime = _as_mu(mu_prime, shape=mu.shape)
    if ((mu_prime <= 0) & (mu > 0)).any():
        raise SupportError("mu' vanishes where mu is positive")
    rho, rho_prime = mu.sum(axis=1), mu_prime.sum(axis=1)
    state_term = kl_divergence(rho, rho_prime)
    pi, pi_prime = policy_from_occupancy(mu), policy_from_occupancy(mu_prime)
    pos = mu > 0
    log_ratio = np.zeros(mu.shape)
    log_ratio[pos] = np.log(pi[pos] / pi_prime[pos])
    conditional_term = float(np.sum(rho[:, None] * pi * log_ratio))
    return state_term, conditional_term


def policy_evaluation(mdp, pi):
    """Exact ``(V, Q)`` of ``pi`` for the unnormalized discounted return."""
    pi = check_policy(pi, *mdp.shape)
    P_pi = policy_matrix(mdp, pi)
    r_pi = np.sum(pi * mdp.reward, axis=1)
    V = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, r_pi)
    Q = mdp.reward + mdp.gamma * mdp.transition @ V
    return V, Q


def value_iteration(mdp, tol=1e-12, max_iter=100_000):
    """Hard-max value iteration; returns ``(V, Q)`` at the fixed point."""
    V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        Q = mdp.reward + mdp.gamma * mdp.transition @ V
        V_new = Q.max(axis=1)
        done = np.max(np.abs(V_new - V)) <= tol
        V = V_new
        if done:
            break
    Q = mdp.reward + mdp.gamma * mdp.transition @ V
    return V, Q


def greedy_actions(values, atol=1e-9):
    """Row-wise argmax that breaks near-ties (within ``atol``) to the lowest index."""
    values = np.asarray(values, dtype=float)
    best = values.max(axis=1, keepdims=True)
    return np.argmax(values >= best - atol, axis=1)


def soft_value_iteration_oracle(mdp, tol=1e-12):
    """Deterministic greedy policy of hard-max value iteration.

    Used as the small-temperature reference for the entropy-regularized
    solvers.  Ties go to the lowest action index.
    """
    _, Q = value_iteration(mdp, tol=tol)
    a = greedy_actions(Q, atol=1e-10)
    pi = np.zeros(mdp.shape)
    pi[np.arange(mdp.n_states), a] = 1.0
    return pi
