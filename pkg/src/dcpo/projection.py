"""KL projection of a positive matrix onto the occupancy polytope.

The projection ``argmin_{m in Delta} KL(m | mu)`` has the closed form::

    m(s, a) = mu(s, a) exp(gamma P V(s, a) - V(s)) / Z

where ``V`` minimizes the smooth convex dual over state values::

    g(V) = log sum_{s,a} mu(s, a) exp(gamma P V(s, a) - V(s)) + (1 - gamma) <p0, V>

and ``log Z`` plays the role of the normalization multiplier.  ``g`` is
invariant to adding a constant to ``V`` and its gradient is minus the flow
residual of the softmax weights, so a zero gradient means ``m`` is feasible.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._validation import check_array, check_log_matrix
from .mdp import OccupancyMeasure
from .prox import InfeasibleProjectionError

__all__ = [
    "DualState",
    "dual_objective",
    "dual_gradient",
    "project_onto_delta",
    "feasible_support",
    "OccupancyConstraint",
]

ARMIJO_C = 1e-4
STEP_INIT = 1.0
STEP_SHRINK = 0.5
MAX_HALVINGS = 60


@dataclass
class DualState:
    v: np.ndarray
    lambda_: float
    objective: float
    grad_norm: float
    iterations: int
    converged: bool = True
    objective_trace: list = None


def _exponents(mdp, log_mu, v):
    # gamma * E[V(s')|s,a] - V(s), added to log mu
    return log_mu + mdp.gamma * (mdp.transition @ v) - v[:, None]


def dual_objective(mdp, log_mu, v):
    """Dual function ``g(V)`` evaluated with a log-sum-exp reduction."""
    log_mu = check_log_matrix(log_mu, shape=mdp.shape)
    v = check_array(v, ndim=1, name="v")
    with np.errstate(divide="ignore"):
        lse = logsumexp(_exponents(mdp, log_mu, v))
    return float(lse + (1.0 - mdp.gamma) * mdp.p0 @ v)


def _weights(mdp, log_mu, v):
    x = _exponents(mdp, log_mu, v)
    with np.errstate(divide="ignore"):
        lse = logsumexp(x)
    return np.exp(x - lse), x - lse, float(lse)


def _gradient_from_weights(mdp, w):
    inflow = np.einsum("sat,sa->t", mdp.transition, w)
    return mdp.gamma * inflow - w.sum(axis=1) + (1.0 - mdp.gamma) * mdp.p0


def dual_gradient(mdp, log_mu, v):
    """Gradient of ``g``: ``gamma P^T w - w 1 + (1 - gamma) p0`` for softmax weights ``w``."""
    log_mu = check_log_matrix(log_mu, shape=mdp.shape)
    v = check_array(v, ndim=1, name="v")
    w, _, _ = _weights(mdp, log_mu, v)
    return _gradient_from_weights(mdp, w)


def feasible_support(mdp, support):
    """Restrict a boolean support mask to entries usable by some occupancy measure.

    Repeatedly drops states without an allowed action and actions that can
    lead to such states, then keeps only states reachable from ``p0``.
    Raises ``InfeasibleProjectionError`` when part of ``p0`` is lost.
    """
    allowed = np.array(support, dtype=bool)
    reach = mdp.transition > 0
    while True:
        dead = ~allowed.any(axis=1)
        leaks = (reach & dead[None, None, :]).any(axis=2) & allowed
        if not leaks.any():
            break
        allowed &= ~leaks
    dead = ~allowed.any(axis=1)
    if (dead & (mdp.p0 > 0)).any():
        raise InfeasibleProjectionError(
            "no occupancy measure is supported on the given entries: states "
            f"{np.flatnonzero(dead & (mdp.p0 > 0)).tolist()} of p0 have no usable action")
    reached = mdp.p0 > 0
    frontier = reached.copy()
    while frontier.any():
        nxt = (reach & allowed[:, :, None] & frontier[:, None, None]).any(axis=(0, 1))
        frontier = nxt & ~reached
        reached |= nxt
    return allowed & reached[:, None]


def _lse(x):
    m = x.max()
    if not np.isfinite(m):
        return m
    return m + np.log(np.exp(x - m).sum())


def project_onto_delta(mdp, log_mu, tol=1e-9, max_iter=50_000, v0=None,
                       method="newton", trace=False):
    """KL-project ``exp(log_mu)`` onto the set of occupancy measures.

    Minimizes the dual over ``V`` from ``V = 0`` (or ``v0``) with a descent
    method and Armijo backtracking (initial step 1, halving, sufficient
    decrease 1e-4), re-centering ``V`` to mean zero after each step, until
    ``||grad||_inf <= tol``.

    Parameters
    ----------
    mdp : Mdp
    log_mu : array of shape (n_states, n_actions)
        Log of the point to project; ``-inf`` marks exact zeros.
    tol : float
        Gradient sup-norm at which to stop.  The returned measure has flow
        residual equal to minus the final gradient.
    max_iter : int
    v0 : array, optional
        Warm start for the dual values.
    method : {"newton", "gradient"}
        Search direction.  ``"gradient"`` is plain steepest descent and can
        need tens of thousands of steps on badly scaled inputs; ``"newton"``
        solves with the (shift-regularized) dual Hessian.
    trace : bool
        Record the dual objective after every accepted step.

    Returns
    -------
    occupancy : OccupancyMeasure
        Normalized projection.
    state : DualState
        ``converged`` is False when ``max_iter`` was reached.
    """
    if method not in ("newton", "gradient"):
        raise ValueError(f"unknown method {method!r}")
    log_mu = check_log_matrix(log_mu, shape=mdp.shape)
    support = feasible_support(mdp, np.isfinite(log_mu))
    n_states, n_actions = mdp.shape
    gamma = mdp.gamma
    # flattened (s, a) rows; dead entries dropped from the inner loop
    idx = np.flatnonzero(support.ravel())
    lm = log_mu.ravel()[idx]
    src = idx // n_actions
    # phi[k] = gamma P(.|s, a) - e_s: the exponent is lm + phi @ V
    phi = gamma * mdp.transition.reshape(-1, n_states)[idx]
    phi[np.arange(idx.size), src] -= 1.0
    b = (1.0 - gamma) * mdp.p0
    shift = np.full((n_states, n_states), 1.0 / n_states)

    v = np.zeros(n_states) if v0 is None else check_array(v0, ndim=1, name="v0").copy()
    v -= v.mean()
    x = lm + phi @ v
    lse = _lse(x)
    w = np.exp(x - lse)
    grad = w @ phi + b
    history = [lse + b @ v] if trace else None

    it = 0
    while np.abs(grad).max() > tol and it < max_iter:
        if method == "newton":
            mean = w @ phi
            hess = (phi * w[:, None]).T @ phi - np.outer(mean, mean)
            try:
                d = np.linalg.solve(hess + shift, -grad)
            except np.linalg.LinAlgError:
                d = -grad
            slope = grad @ d
            if not slope < 0:
                d, slope = -grad, -(grad @ grad)
        else:
            d = -grad
            slope = -(grad @ grad)
        # change of the exponent along d, per unit step
        dx = phi @ d
        lin = b @ d
        t = STEP_INIT
        for _ in range(MAX_HALVINGS):
            # g(V + t d) - g(V), computed without cancellation against g(V)
            with np.errstate(over="ignore", invalid="ignore"):
                delta = np.log1p(np.dot(w, np.expm1(t * dx))) + t * lin
            if delta <= ARMIJO_C * t * slope:
                break
            t *= STEP_SHRINK
        else:
            # no measurable decrease left at machine precision
            break
        v += t * d
        v -= v.mean()
        x = lm + phi @ v
        lse = _lse(x)
        w = np.exp(x - lse)
        grad = w @ phi + b
        if trace:
            history.append(lse + b @ v)
        it += 1

    log_w = np.full(n_states * n_actions, -np.inf)
    log_w[idx] = x - lse
    grad_norm = float(np.abs(grad).max())
    state = DualState(
        v=v,
        lambda_=float(lse),
        objective=float(lse + b @ v),
        grad_norm=grad_norm,
        iterations=it,
        converged=grad_norm <= tol,
        objective_trace=history,
    )
    return OccupancyMeasure(log_w.reshape(n_states, n_actions), normalized=True), state


class OccupancyConstraint:
    """Dykstra constraint set for membership in the occupancy polytope.

    Keeps the last dual solution to warm-start the next projection.
    """

    kind = "delta"
    axis = None
    name = "delta"

    def __init__(self, mdp, tol=1e-9, max_iter=50_000, warm_start=True,
                 method="newton"):
        self.mdp = mdp
        self.method = method
        self.tol = tol
        self.max_iter = max_iter
        self.warm_start = warm_start
        self.last_state = None
        self.stats = {"calls": 0, "iterations": 0, "max_grad_norm": 0.0,
                      "unconverged": 0}

    def reset(self):
        self.last_state = None
        self.stats = {"calls": 0, "iterations": 0, "max_grad_norm": 0.0,
                      "unconverged": 0}

    def log_prox(self, log_mu):
        v0 = None
        if self.warm_start and self.last_state is not None:
            v0 = self.last_state.v
        occ, state = project_onto_delta(self.mdp, log_mu, tol=self.tol,
                                        max_iter=self.max_iter, v0=v0,
                                        method=self.method)
        self.last_state = state
        self.stats["calls"] += 1
        self.stats["iterations"] += state.iterations
        self.stats["max_grad_norm"] = max(self.stats["max_grad_norm"], state.grad_norm)
        self.stats["unconverged"] += int(not state.converged)
        return np.array(occ.log_mu)
